"""Synthetic data generation with known ground truth.

Units are drawn from a simple causal layout: urbanisation class drives the
working-age share, population density and radiance (density also feeds
radiance), and uptake depends on class, working-age share, radiance and a
smooth spatial field. Density is emitted for exploration but never enters
the uptake link. Tile histories follow the censored-count process directly.

Everything is a deterministic function of the config and its seed.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .hsgp import matern32_kernel
from .imputation import TileHistory
from .ingest import GridTile, UptakeDataset, stratified_split
from .geo import Rect

# posterior means reported for the spatial model on the real data; used as
# default simulation truth so synthetic data lives in a realistic regime
DEFAULT_A = (-4.123, -4.054, -3.694)
DEFAULT_B_W = (0.306, 0.376, 0.125)
DEFAULT_B_L = (0.511, 0.286, 0.126)
DEFAULT_RHO = (0.006, 0.004, 0.007)
DEFAULT_SIGMA = 0.352
DEFAULT_DELTA = 0.839
DEFAULT_MEAN_POP = (26658.0, 42748.0, 203762.0)

REFERENCE_DATE = "2020-05-04"


class SimulationError(RuntimeError):
    pass


@dataclass
class SimConfig:
    n_units: int = 300
    duc_proportions: tuple = (0.55, 0.30, 0.15)
    a: tuple = DEFAULT_A
    b_w: tuple = DEFAULT_B_W
    b_l: tuple = DEFAULT_B_L
    rho: tuple = DEFAULT_RHO
    sigma: float = DEFAULT_SIGMA
    delta: float = DEFAULT_DELTA
    mean_pop: tuple = DEFAULT_MEAN_POP
    n_tiles: int = 200
    tile_rate_scale: float = 5.0
    censor_threshold: int = 10
    n_days: int = 151
    entry_spectrum: bool = False
    train_fraction: float = 0.8
    field_seed: int | None = None
    seed: int = 0

    def __post_init__(self):
        if abs(sum(self.duc_proportions) - 1.0) > 1e-9:
            raise SimulationError("DUC proportions must sum to 1")
        if self.censor_threshold < 1:
            raise SimulationError("censor threshold must be >= 1")
        if self.n_units < 3 or self.n_days < 1:
            raise SimulationError("need at least 3 units and 1 day")


@dataclass
class SimTruth:
    """Latent values behind an emitted dataset."""

    config: SimConfig
    p_bar: np.ndarray = None
    eta: np.ndarray = None
    spatial_effect: np.ndarray = None
    centroids: np.ndarray = None
    raw_w: np.ndarray = None
    raw_radiance: np.ndarray = None
    raw_density: np.ndarray = None
    lam: np.ndarray = None  # tile rates, when tiles were simulated
    constants: dict = field(default_factory=dict)


def _standardize(col: np.ndarray) -> tuple[np.ndarray, dict]:
    mean, sd = float(np.mean(col)), float(np.std(col))
    if sd <= 0:
        raise SimulationError("degenerate covariate draw")
    return (col - mean) / sd, {"mean": mean, "sd": sd}


def simulate_units(cfg: SimConfig, centroids: np.ndarray | None = None) -> tuple[UptakeDataset, SimTruth]:
    """Draw a synthetic unit-level dataset and its latent truth.

    Covariates are standardized over the full unit set (the scale on which
    the truth coefficients act); the train/test flag uses the stratified
    80/20 rule. Pass explicit centroids to pin the geography.
    """
    root = np.random.SeedSequence(cfg.seed)
    ss_units, ss_field, ss_split = root.spawn(3)
    rng = np.random.default_rng(ss_units)
    n = cfg.n_units

    duc = rng.choice([1, 2, 3], size=n, p=np.asarray(cfg.duc_proportions))
    duc0 = duc - 1

    pop_mu = np.log(np.asarray(cfg.mean_pop)) - 0.5 * 0.5 ** 2
    n_pop = np.maximum(np.rint(np.exp(rng.normal(pop_mu[duc0], 0.5))), 200).astype(np.int64)

    w_raw = expit(rng.normal(logit(np.array([0.58, 0.61, 0.64]))[duc0], 0.15))
    log_dens = rng.normal(np.array([4.0, 5.7, 7.5])[duc0], 0.6)
    log_lum = (
        np.array([-1.2, 0.3, 1.8])[duc0]
        + 0.5 * (log_dens - np.array([4.0, 5.7, 7.5])[duc0])
        + rng.normal(0.0, 0.5, size=n)
    )
    radiance = np.exp(log_lum)

    if centroids is None:
        width = 2.0
        centroids = np.column_stack([
            120.0 + rng.uniform(0.0, width, size=n),
            12.0 + rng.uniform(0.0, 3.0 * width, size=n),
        ])
    else:
        centroids = np.asarray(centroids, dtype=float)
        if centroids.shape != (n, 2):
            raise SimulationError("centroids must be (n_units, 2)")

    w_std, c_w = _standardize(w_raw)
    logl_std, c_l = _standardize(log_lum)
    x_std, c_x = _standardize(centroids[:, 0])
    y_std, c_y = _standardize(centroids[:, 1])

    if cfg.sigma > 0.0:
        pts = np.column_stack([x_std, y_std])
        cov = matern32_kernel(pts, cfg.sigma, cfg.delta)
        field_rng = np.random.default_rng(cfg.field_seed if cfg.field_seed is not None else ss_field)
        try:
            chol = np.linalg.cholesky(cov + 1e-8 * np.eye(n))
        except np.linalg.LinAlgError as err:
            raise SimulationError("spatial covariance not positive definite") from err
        spatial = chol @ field_rng.standard_normal(n)
    else:
        spatial = np.zeros(n)

    a = np.asarray(cfg.a)
    b_w = np.asarray(cfg.b_w)
    b_l = np.asarray(cfg.b_l)
    eta = a[duc0] + b_w[duc0] * w_std + b_l[duc0] * logl_std + spatial
    p_bar = expit(eta)

    rho = np.asarray(cfg.rho)[duc0]
    fb = np.empty(n, dtype=np.int64)
    plain = rho <= 1e-12
    if plain.any():
        fb[plain] = rng.binomial(n_pop[plain], p_bar[plain])
    if (~plain).any():
        kappa = (1.0 - rho[~plain]) / rho[~plain]
        p = rng.beta(p_bar[~plain] * kappa, (1.0 - p_bar[~plain]) * kappa)
        fb[~plain] = rng.binomial(n_pop[~plain], p)

    unit_ids = [f"U{i:04d}" for i in range(n)]
    is_train = stratified_split(duc, unit_ids, int(ss_split.generate_state(1)[0]), cfg.train_fraction)
    constants = {"w": c_w, "logl": c_l, "lon": c_x, "lat": c_y}

    data = UptakeDataset(
        unit_ids=unit_ids,
        duc=duc,
        n=n_pop,
        fb=fb,
        w=w_std,
        logl=logl_std,
        x=x_std,
        y=y_std,
        is_train=is_train,
        constants=constants,
    )
    truth = SimTruth(
        config=cfg,
        p_bar=p_bar,
        eta=eta,
        spatial_effect=spatial,
        centroids=centroids,
        raw_w=w_raw,
        raw_radiance=radiance,
        raw_density=np.exp(log_dens),
        constants=constants,
    )
    return data, truth


def simulate_tiles(cfg: SimConfig) -> tuple[list[TileHistory], np.ndarray]:
    """Draw tile count histories under the censoring process.

    Rates are exponential with the configured scale; each history holds
    n_days Poisson draws with sub-threshold values censored. With
    entry_spectrum on, a minority of tiles keep only roughly 75/50/25% of
    their days, mimicking patchy collection.
    """
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(4)[3])
    lam = rng.exponential(cfg.tile_rate_scale, size=cfg.n_tiles)
    histories = []
    for t in range(cfg.n_tiles):
        n_entries = cfg.n_days
        if cfg.entry_spectrum and rng.uniform() < 0.13:
            n_entries = int(rng.choice([
                round(0.75 * cfg.n_days), round(0.5 * cfg.n_days), round(0.25 * cfg.n_days),
            ]))
        counts = rng.poisson(lam[t], size=n_entries)
        entries = tuple(int(c) if c >= cfg.censor_threshold else None for c in counts)
        histories.append(TileHistory(tile_id=f"T{t:04d}", counts=entries))
    return histories, lam


def weekday_dates(n_days: int, start: str = "2020-03-02") -> list[str]:
    """The first n_days weekdays from start (inclusive), as ISO dates."""
    day = dt.date.fromisoformat(start)
    out = []
    while len(out) < n_days:
        if day.weekday() < 5:
            out.append(day.isoformat())
        day += dt.timedelta(days=1)
    return out


@dataclass
class SimulatedWorld:
    """Everything the file-based pipeline consumes, plus the truth."""

    units: list  # AdminUnit-like dicts written by the CLI
    unit_polygons: dict
    tiles: list[GridTile]
    observations: list  # (tile_id, date, window, count-or-None)
    duc_raster: "np.ndarray"
    pop_raster: np.ndarray
    radiance_raster: np.ndarray
    raster_origin: tuple
    raster_cellsize: float
    dataset: UptakeDataset
    truth: SimTruth
    tile_mu: dict


def simulate_world(cfg: SimConfig) -> SimulatedWorld:
    """Build a gridded synthetic country whose files exercise every stage.

    Units are rectangles in a 1:3 box; rasters nest inside units so the
    class assignment is exactly recoverable; tiles are offset half a cell so
    they straddle unit boundaries, with edge tiles partially off-land.
    """
    ncols = max(1, int(round(np.sqrt(cfg.n_units / 3.0))))
    nrows = int(np.ceil(cfg.n_units / ncols))
    n_units = ncols * nrows
    cfg = SimConfig(**{**cfg.__dict__, "n_units": n_units})

    cell = 0.2
    lon0, lat0 = 120.0, 12.0
    centroids = np.array([
        (lon0 + (c + 0.5) * cell, lat0 + (r + 0.5) * cell)
        for r in range(nrows) for c in range(ncols)
    ])
    data, truth = simulate_units(cfg, centroids=centroids)

    unit_rects = [
        Rect(lon0 + c * cell, lat0 + r * cell, lon0 + (c + 1) * cell, lat0 + (r + 1) * cell)
        for r in range(nrows) for c in range(ncols)
    ]
    unit_polygons = {
        uid: rect.corners() for uid, rect in zip(data.unit_ids, unit_rects)
    }
    units = [
        {
            "unit_id": uid,
            "pop": int(data.n[i]),
            "working_age_prop": float(truth.raw_w[i]),
            "duc": int(data.duc[i]),
            "radiance": float(truth.raw_radiance[i]),
        }
        for i, uid in enumerate(data.unit_ids)
    ]

    # rasters: 4x4 cells per unit, nested exactly inside the unit rectangles
    rcell = cell / 4.0
    rrows, rcols = nrows * 4, ncols * 4
    duc_vals = np.zeros((rrows, rcols))
    pop_vals = np.zeros((rrows, rcols))
    rad_vals = np.zeros((rrows, rcols))
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(5)[4])
    for i in range(n_units):
        r_u, c_u = divmod(i, ncols)
        rows = slice((nrows - 1 - r_u) * 4, (nrows - r_u) * 4)  # raster rows run north->south
        cols = slice(c_u * 4, (c_u + 1) * 4)
        duc_vals[rows, cols] = data.duc[i]
        pop_vals[rows, cols] = data.n[i] / 16.0
        rad_vals[rows, cols] = truth.raw_radiance[i] * np.exp(rng.normal(0.0, 0.3, (4, 4)))

    # tile grid, offset half a tile and extended one ring beyond the land box
    tsize = cell / 2.0
    width, height = ncols * cell, nrows * cell
    tx0, ty0 = lon0 - tsize / 2.0, lat0 - tsize / 2.0
    n_tx = int(np.ceil((width + tsize) / tsize))
    n_ty = int(np.ceil((height + tsize) / tsize))
    land = Rect(lon0, lat0, lon0 + width, lat0 + height)

    tiles, tile_mu = [], {}
    fb_density = data.fb / np.array([r.area for r in unit_rects])
    for ty in range(n_ty):
        for tx in range(n_tx):
            rect = Rect(
                tx0 + tx * tsize, ty0 + ty * tsize,
                tx0 + (tx + 1) * tsize, ty0 + (ty + 1) * tsize,
            )
            ox = max(0.0, min(rect.max_x, land.max_x) - max(rect.min_x, land.min_x))
            oy = max(0.0, min(rect.max_y, land.max_y) - max(rect.min_y, land.min_y))
            land_frac = (ox * oy) / rect.area
            tid = f"T{ty:03d}{tx:03d}"
            tiles.append(GridTile(tid, rect, land_frac, land_frac))
            mu = 0.0
            if land_frac > 0.0:
                for i, urect in enumerate(unit_rects):
                    ux = max(0.0, min(rect.max_x, urect.max_x) - max(rect.min_x, urect.min_x))
                    uy = max(0.0, min(rect.max_y, urect.max_y) - max(rect.min_y, urect.min_y))
                    mu += fb_density[i] * ux * uy
            tile_mu[tid] = mu

    dates = weekday_dates(cfg.n_days)
    if REFERENCE_DATE not in dates:
        raise SimulationError("reference date not covered by the simulated days")
    observations = []
    obs_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(6)[5])
    for tile in tiles:
        counts = obs_rng.poisson(tile_mu[tile.tile_id], size=len(dates))
        for date, c in zip(dates, counts):
            observations.append(
                (tile.tile_id, date, 0, int(c) if c >= cfg.censor_threshold else None)
            )

    truth.lam = np.array([tile_mu[t.tile_id] for t in tiles])
    return SimulatedWorld(
        units=units,
        unit_polygons=unit_polygons,
        tiles=tiles,
        observations=observations,
        duc_raster=duc_vals,
        pop_raster=pop_vals,
        radiance_raster=rad_vals,
        raster_origin=(lon0, lat0),
        raster_cellsize=rcell,
        dataset=data,
        truth=truth,
        tile_mu=tile_mu,
    )
