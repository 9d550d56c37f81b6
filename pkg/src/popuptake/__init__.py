"""Bayesian small-area platform-uptake estimation toolkit."""

__version__ = "0.1.0"

from .geo import Rect, overlap_fraction
from .ingest import (
    AdminUnit,
    GridTile,
    RasterGrid,
    TileObservation,
    UptakeDataset,
    apportion_tile_counts,
    assign_duc,
    build_dataset,
    zonal_mean_radiance,
)
from .inference.diagnostics import ess, split_rhat, summarize
from .inference.nuts import PosteriorDraws, SamplerConfig, sample
from .inference.targets import TargetDensity, check_gradient
from .imputation import (
    ImputationModelSpec,
    ImputedCounts,
    TileHistory,
    build_imputation_target,
    censored_poisson_loglik,
    impute,
    imputation_ppc,
    make_model_spec,
)
from .hsgp import HsgpSpec, hsgp_basis, hsgp_effect, matern32_kernel
from .models import (
    betabin_target,
    binomial_target,
    full_target,
    linpred,
    posterior_predict,
)
from .evaluation import MetricReport, aemed, basis_sweep, crps, report, semean
from .loo import LooResult, psis_loo
from .simulate import SimConfig, SimTruth, simulate_tiles, simulate_units

__all__ = [name for name in dir() if not name.startswith("_")]
