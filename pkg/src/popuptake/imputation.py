"""Censored-count recovery for grid tiles.

Counts below the privacy threshold arrive censored; each tile's history of
weekday nighttime entries identifies a Poisson rate through a mix of exact
and cumulative terms. Tiles with no observed entry at all carry no
distinguishing information beyond how often they appear, so they share one
rate per entry-count group.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaln, logsumexp

from .inference.diagnostics import split_rhat
from .inference.nuts import PosteriorDraws
from .inference.targets import TargetDensity
from .ingest import GridTile

log = logging.getLogger(__name__)


class ImputationError(ValueError):
    pass


@dataclass(frozen=True)
class TileHistory:
    """Weekday nighttime count record for one tile; None marks censored."""

    tile_id: str
    counts: tuple

    def __post_init__(self):
        if len(self.counts) < 1:
            raise ImputationError(f"tile {self.tile_id}: empty history")

    @property
    def n_entries(self) -> int:
        return len(self.counts)

    @property
    def observed(self) -> list[int]:
        return [c for c in self.counts if c is not None]

    @property
    def n_censored(self) -> int:
        return sum(1 for c in self.counts if c is None)

    @property
    def all_censored(self) -> bool:
        return self.n_censored == self.n_entries


@dataclass
class ImputationModelSpec:
    """Parameter layout: individual tiles first, then all-censored groups."""

    censor_threshold: int = 10
    hyperprior_scale: float = 5.0
    tile_params: dict[str, int] = field(default_factory=dict)
    group_params: dict[int, int] = field(default_factory=dict)
    group_members: dict[int, list[str]] = field(default_factory=dict)

    @property
    def n_lambdas(self) -> int:
        return len(self.tile_params) + len(self.group_params)

    def param_of(self, tile_id: str) -> int:
        if tile_id in self.tile_params:
            return self.tile_params[tile_id]
        for n_entries, members in self.group_members.items():
            if tile_id in members:
                return self.group_params[n_entries]
        raise ImputationError(f"unmatched tile {tile_id!r}")

    def provenance_of(self, tile_id: str) -> str:
        return "individual-posterior" if tile_id in self.tile_params else "group-posterior"

    def parameter_names(self) -> list[str]:
        names = [""] * self.n_lambdas
        for tid, i in self.tile_params.items():
            names[i] = f"lambda[{tid}]"
        for n_entries, i in self.group_params.items():
            names[i] = f"lambda[group:{n_entries}]"
        return names


def make_model_spec(
    histories: list[TileHistory],
    censor_threshold: int = 10,
    hyperprior_scale: float = 5.0,
) -> ImputationModelSpec:
    if not histories:
        raise ImputationError("no tile histories")
    if censor_threshold < 1:
        raise ImputationError("censor threshold must be >= 1")
    spec = ImputationModelSpec(censor_threshold, hyperprior_scale)
    individual = sorted(h.tile_id for h in histories if not h.all_censored)
    for h in histories:
        for c in h.observed:
            if c < censor_threshold:
                raise ImputationError(
                    f"tile {h.tile_id}: observed count {c} below threshold"
                )
    spec.tile_params = {tid: i for i, tid in enumerate(individual)}
    grouped = sorted({h.n_entries for h in histories if h.all_censored})
    base = len(individual)
    spec.group_params = {n: base + i for i, n in enumerate(grouped)}
    spec.group_members = {
        n: sorted(h.tile_id for h in histories if h.all_censored and h.n_entries == n)
        for n in grouped
    }
    return spec


def _log_censored_cdf(log_lam: np.ndarray, lam: np.ndarray, threshold: int) -> np.ndarray:
    """log P(X < threshold | lam) elementwise, stable for any rate."""
    j = np.arange(threshold)[:, None]
    terms = j * log_lam[None, :] - lam[None, :] - gammaln(j + 1.0)
    return logsumexp(terms, axis=0)


def censored_poisson_loglik(history: TileHistory, lam: float, threshold: int = 10) -> float:
    """Log likelihood of one tile history under a single Poisson rate."""
    if lam <= 0.0 or not np.isfinite(lam):
        return -np.inf
    obs = np.array(history.observed, dtype=float)
    ll = 0.0
    if obs.size:
        ll += float(np.sum(obs * np.log(lam) - lam - gammaln(obs + 1.0)))
    n_cens = history.n_censored
    if n_cens:
        log_lam = np.array([np.log(lam)])
        ll += n_cens * float(_log_censored_cdf(log_lam, np.array([lam]), threshold)[0])
    return ll


def build_imputation_target(
    histories: list[TileHistory],
    spec: ImputationModelSpec,
    hierarchical: bool = True,
) -> TargetDensity:
    """Joint log density over per-tile log rates (and the shared log scale).

    Likelihood terms enter through per-tile sufficient statistics; each
    all-censored group contributes exactly one reference history. Setting
    hierarchical=False fixes the scale at its hyperprior value and drops it
    from the parameter vector (used for the pooling comparison).
    """
    if not histories:
        raise ImputationError("no tile histories")
    k = spec.censor_threshold
    n_lam = spec.n_lambdas

    n_obs = np.zeros(n_lam)
    sum_obs = np.zeros(n_lam)
    const = np.zeros(n_lam)
    n_cens = np.zeros(n_lam)
    seen_groups = set()
    for h in histories:
        if h.all_censored:
            idx = spec.group_params[h.n_entries]
            if idx in seen_groups:
                continue  # one reference history per group
            seen_groups.add(idx)
            n_cens[idx] = h.n_entries
        else:
            idx = spec.tile_params[h.tile_id]
            obs = np.array(h.observed, dtype=float)
            n_obs[idx] = obs.size
            sum_obs[idx] = obs.sum()
            const[idx] = float(np.sum(gammaln(obs + 1.0)))
            n_cens[idx] = h.n_censored

    has_cens = n_cens > 0
    j_grid = np.arange(k)[:, None]
    lgamma_j = gammaln(np.arange(k) + 1.0)[:, None]
    log_pmf_top = gammaln(float(k))  # log (k-1)! for the CDF derivative
    scale0 = spec.hyperprior_scale

    names = spec.parameter_names()
    if hierarchical:
        names = names + ["s"]
    dim = len(names)

    def logp_and_grad(x):
        with np.errstate(all="ignore"):
            u = x[:n_lam]
            lam = np.exp(u)
            if not np.all(np.isfinite(lam)):
                return -np.inf, np.zeros(dim)
            if hierarchical:
                s = np.exp(x[n_lam])
                if not np.isfinite(s) or s <= 0.0:
                    return -np.inf, np.zeros(dim)
            else:
                s = scale0

            logp = float(np.sum(-n_obs * lam + sum_obs * u - const))
            grad_lam = -n_obs  # d/d lam of the observed part

            if has_cens.any():
                uc, lc = u[has_cens], lam[has_cens]
                terms = j_grid * uc[None, :] - lc[None, :] - lgamma_j
                log_cdf = logsumexp(terms, axis=0)
                logp += float(np.sum(n_cens[has_cens] * log_cdf))
                dlog_cdf = -np.exp((k - 1) * uc - lc - log_pmf_top - log_cdf)
                grad_lam[has_cens] += n_cens[has_cens] * dlog_cdf

            # lambda ~ Exp(scale s), plus log-Jacobians of the log transforms
            logp += float(np.sum(-np.log(s) - lam / s) + np.sum(u))
            grad_u = (grad_lam - 1.0 / s) * lam + sum_obs + 1.0

            if hierarchical:
                logp += -np.log(scale0) - s / scale0 + x[n_lam]
                grad_s = -n_lam + float(np.sum(lam)) / s - s / scale0 + 1.0
                grad = np.append(grad_u, grad_s)
            else:
                grad = grad_u
        if not np.isfinite(logp):
            return -np.inf, np.zeros(dim)
        if not np.all(np.isfinite(grad)):
            return -np.inf, np.zeros(dim)
        return logp, grad

    return TargetDensity(
        dim=dim,
        parameter_names=names,
        logp_and_grad=logp_and_grad,
        constrain=np.exp,
    )


@dataclass
class ImputedCounts:
    """Imputed user counts for the reference timestamp."""

    values: dict[str, float]
    provenance: dict[str, str]
    draw_index: tuple[int, int]  # (chain, iteration) of the joint draw used


def impute(
    draws: PosteriorDraws,
    tiles: list[GridTile],
    spec: ImputationModelSpec,
    seed: int,
) -> ImputedCounts:
    """Impute one count per censored tile from a single joint posterior draw.

    A posterior predictive count is drawn from the tile's rate and scaled by
    the inhabited-land share, so unsettled portions of a tile contribute
    nothing. Deterministic for a fixed seed.
    """
    lam_names = spec.parameter_names()
    bad = [
        name for name in lam_names
        if split_rhat(draws.get(name)) >= 1.01
    ] if draws.n_chains >= 2 else []
    if bad:
        log.warning("imputation draws look unconverged for %d rates (rhat >= 1.01)", len(bad))

    rng = np.random.default_rng(seed)
    chain = int(rng.integers(draws.n_chains))
    iteration = int(rng.integers(draws.n_iterations))
    lam_draw = draws.draws[chain, iteration]

    values, provenance = {}, {}
    for tile in tiles:
        idx = spec.param_of(tile.tile_id)
        weight = tile.inhabited_fraction
        count = int(rng.poisson(lam_draw[idx])) if weight > 0.0 else 0
        values[tile.tile_id] = count * weight
        provenance[tile.tile_id] = spec.provenance_of(tile.tile_id)
    return ImputedCounts(values=values, provenance=provenance, draw_index=(chain, iteration))


@dataclass(frozen=True)
class PpcRow:
    tile_id: str
    n_entries: int
    n_observed: int
    predictive_median: float
    observed_median: float | None

    @property
    def median_difference(self) -> float | None:
        if self.observed_median is None:
            return None
        return self.predictive_median - self.observed_median


def imputation_ppc(
    draws: PosteriorDraws,
    histories: list[TileHistory],
    spec: ImputationModelSpec,
    seed: int = 0,
) -> list[PpcRow]:
    """Posterior-predictive medians against medians of the observed entries."""
    rng = np.random.default_rng(seed)
    rows = []
    flat = draws.draws.reshape(-1, draws.draws.shape[2])
    for h in histories:
        lam = flat[:, spec.param_of(h.tile_id)]
        predictive = rng.poisson(lam)
        obs = h.observed
        rows.append(PpcRow(
            tile_id=h.tile_id,
            n_entries=h.n_entries,
            n_observed=len(obs),
            predictive_median=float(np.median(predictive)),
            observed_median=float(np.median(obs)) if obs else None,
        ))
    return rows
