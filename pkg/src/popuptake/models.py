"""Hierarchical uptake regressions linking user counts to population.

Three nested likelihoods over per-unit counts: binomial, beta-binomial
(class-dependent overdispersion), and beta-binomial plus a low-rank spatial
field. All share DUC-varying intercepts and slopes with a non-centered
parameterization; densities are evaluated on the train split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, expit, gammaln

from .hsgp import HsgpSpec, hsgp_basis, matern32_spectral_density, spectral_weights
from .inference.nuts import PosteriorDraws
from .inference.targets import TargetDensity
from .ingest import UptakeDataset

MODEL_KINDS = ("bin", "betabin", "full")


class ModelError(ValueError):
    pass


@dataclass
class BinParams:
    a: np.ndarray
    b_w: np.ndarray
    b_l: np.ndarray
    a_mu: float = -4.0
    a_sigma: float = 1.0
    b_w_sigma: float = 1.0
    b_l_sigma: float = 1.0

    def __post_init__(self):
        for name in ("a_sigma", "b_w_sigma", "b_l_sigma"):
            if getattr(self, name) <= 0:
                raise ModelError(f"{name} must be positive")


@dataclass
class BetaBinParams(BinParams):
    rho: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        if self.rho is None or np.any((self.rho <= 0) | (self.rho >= 1)):
            raise ModelError("rho must lie strictly inside (0, 1)")


@dataclass
class FullParams(BetaBinParams):
    sigma: float = 0.35
    delta: float = 0.8
    z: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        if self.sigma <= 0 or self.delta <= 0:
            raise ModelError("sigma and delta must be positive")


def linpred(params: BinParams, duc: int, w: float, logl: float, spatial: float = 0.0) -> float:
    """Uptake probability for one unit: inverse-logit of the linear predictor."""
    eta = params.a[duc - 1] + params.b_w[duc - 1] * w + params.b_l[duc - 1] * logl + spatial
    return float(expit(eta))


# unconstrained layout shared by all three models
_A_MU = 0
_LOG_SCALES = slice(1, 4)
_A_RAW = slice(4, 7)
_BW_RAW = slice(7, 10)
_BL_RAW = slice(10, 13)
_BASE_DIM = 13
_RHO = slice(13, 16)
_BETABIN_DIM = 16
_LOG_SIGMA, _LOG_DELTA = 16, 17
_Z0 = 18

_BASE_NAMES = (
    ["a_mu", "a_sigma", "b_w_sigma", "b_l_sigma"]
    + [f"a[{u}]" for u in (1, 2, 3)]
    + [f"b_w[{u}]" for u in (1, 2, 3)]
    + [f"b_l[{u}]" for u in (1, 2, 3)]
)
_RHO_NAMES = [f"rho[{u}]" for u in (1, 2, 3)]


@dataclass
class _TrainData:
    duc0: np.ndarray  # zero-based class index
    n: np.ndarray
    fb: np.ndarray
    w: np.ndarray
    logl: np.ndarray
    log_choose: np.ndarray


def _train_arrays(data: UptakeDataset) -> _TrainData:
    train = data.train()
    if len(train) == 0:
        raise ModelError("empty train split")
    for u in sorted(set(data.duc.tolist())):
        if not np.any(train.duc == u):
            raise ModelError(f"train split has no units with DUC {u}")
    n = train.n.astype(float)
    fb = train.fb.astype(float)
    if np.any(fb > n):
        raise ModelError("fb exceeds population")
    return _TrainData(
        duc0=train.duc - 1,
        n=n,
        fb=fb,
        w=train.w,
        logl=train.logl,
        log_choose=gammaln(n + 1) - gammaln(fb + 1) - gammaln(n - fb + 1),
    )


def _hier_unpack(x):
    a_mu = x[_A_MU]
    scales = np.exp(x[_LOG_SCALES])
    a = a_mu + scales[0] * x[_A_RAW]
    b_w = scales[1] * x[_BW_RAW]
    b_l = scales[2] * x[_BL_RAW]
    return a_mu, scales, a, b_w, b_l


def _hier_prior(x, a_mu, scales):
    raw = np.concatenate([x[_A_RAW], x[_BW_RAW], x[_BL_RAW]])
    logp = -0.5 * (a_mu + 4.0) ** 2 - 0.5 * np.sum(raw ** 2)
    logp += np.sum(-scales + x[_LOG_SCALES])  # Exp(1) scales + log-Jacobians
    return float(logp)


def _hier_grad(x, grad, scales, grad_a, grad_bw, grad_bl):
    """Fold per-class natural gradients back onto the unconstrained block."""
    a_mu = x[_A_MU]
    grad[_A_MU] = grad_a.sum() - (a_mu + 4.0)
    grad[_A_RAW] = grad_a * scales[0] - x[_A_RAW]
    grad[_BW_RAW] = grad_bw * scales[1] - x[_BW_RAW]
    grad[_BL_RAW] = grad_bl * scales[2] - x[_BL_RAW]
    grad[1] = np.dot(grad_a, x[_A_RAW]) * scales[0] - scales[0] + 1.0
    grad[2] = np.dot(grad_bw, x[_BW_RAW]) * scales[1] - scales[1] + 1.0
    grad[3] = np.dot(grad_bl, x[_BL_RAW]) * scales[2] - scales[2] + 1.0


def _constrain_base(x):
    a_mu, scales, a, b_w, b_l = _hier_unpack(x)
    return np.concatenate([[a_mu], scales, a, b_w, b_l])


def binomial_target(data: UptakeDataset) -> TargetDensity:
    """Binomial uptake model with DUC-varying intercepts and slopes."""
    td = _train_arrays(data)

    def logp_and_grad(x):
        with np.errstate(all="ignore"):
            a_mu, scales, a, b_w, b_l = _hier_unpack(x)
            eta = a[td.duc0] + b_w[td.duc0] * td.w + b_l[td.duc0] * td.logl
            p = expit(eta)
            loglik = np.sum(
                td.log_choose
                - td.fb * np.logaddexp(0.0, -eta)
                - (td.n - td.fb) * np.logaddexp(0.0, eta)
            )
        if not np.isfinite(loglik):
            return -np.inf, np.zeros(_BASE_DIM)
        g_eta = td.fb - td.n * p
        grad = np.empty(_BASE_DIM)
        _hier_grad(
            x, grad, scales,
            np.bincount(td.duc0, weights=g_eta, minlength=3),
            np.bincount(td.duc0, weights=g_eta * td.w, minlength=3),
            np.bincount(td.duc0, weights=g_eta * td.logl, minlength=3),
        )
        return float(loglik) + _hier_prior(x, a_mu, scales), grad

    return TargetDensity(
        dim=_BASE_DIM,
        parameter_names=list(_BASE_NAMES),
        logp_and_grad=logp_and_grad,
        constrain=_constrain_base,
    )


def _betabin_loglik_grads(td, eta, rho):
    """Beta-binomial log likelihood plus gradients wrt eta and kappa.

    Off-support and overflowed states surface as a non-finite loglik, which
    the caller maps to an outright rejection; warnings are suppressed here.
    """
    with np.errstate(all="ignore"):
        p = expit(eta)
        kappa_u = (1.0 - rho) / rho
        kappa = kappa_u[td.duc0]
        alpha = p * kappa
        beta = (1.0 - p) * kappa
        nfb = td.n - td.fb
        loglik = np.sum(
            td.log_choose
            + gammaln(td.fb + alpha) + gammaln(nfb + beta) - gammaln(td.n + kappa)
            - gammaln(alpha) - gammaln(beta) + gammaln(kappa)
        )
        if not np.isfinite(loglik):
            return -np.inf, None, None, kappa_u
        d_fa = digamma(td.fb + alpha) - digamma(alpha)
        d_nb = digamma(nfb + beta) - digamma(beta)
        g_eta = kappa * (d_fa - d_nb) * p * (1.0 - p)
        g_kappa = p * d_fa + (1.0 - p) * d_nb - digamma(td.n + kappa) + digamma(kappa)
    if not (np.all(np.isfinite(g_eta)) and np.all(np.isfinite(g_kappa))):
        return -np.inf, None, None, kappa_u
    return float(loglik), g_eta, g_kappa, kappa_u


def _rho_prior(rho):
    # Beta(1, 3) on the natural scale plus the logit-transform Jacobian
    logp = np.sum(np.log(3.0) + 3.0 * np.log1p(-rho) + np.log(rho))
    return float(logp), 1.0 - 4.0 * rho


def betabin_target(data: UptakeDataset) -> TargetDensity:
    """Beta-binomial uptake model: class-dependent overdispersion rho."""
    td = _train_arrays(data)

    def logp_and_grad(x):
        with np.errstate(all="ignore"):
            a_mu, scales, a, b_w, b_l = _hier_unpack(x)
            rho = expit(x[_RHO])
            eta = a[td.duc0] + b_w[td.duc0] * td.w + b_l[td.duc0] * td.logl
        loglik, g_eta, g_kappa, kappa_u = _betabin_loglik_grads(td, eta, rho)
        if not np.isfinite(loglik):
            return -np.inf, np.zeros(_BETABIN_DIM)
        rho_logp, rho_grad = _rho_prior(rho)
        grad = np.empty(_BETABIN_DIM)
        _hier_grad(
            x, grad, scales,
            np.bincount(td.duc0, weights=g_eta, minlength=3),
            np.bincount(td.duc0, weights=g_eta * td.w, minlength=3),
            np.bincount(td.duc0, weights=g_eta * td.logl, minlength=3),
        )
        grad[_RHO] = -kappa_u * np.bincount(td.duc0, weights=g_kappa, minlength=3) + rho_grad
        return loglik + _hier_prior(x, a_mu, scales) + rho_logp, grad

    def constrain(x):
        return np.concatenate([_constrain_base(x), expit(x[_RHO])])

    return TargetDensity(
        dim=_BETABIN_DIM,
        parameter_names=list(_BASE_NAMES) + _RHO_NAMES,
        logp_and_grad=logp_and_grad,
        constrain=constrain,
    )


def fixed_hsgp_spec(data: UptakeDataset, spec: HsgpSpec | None = None) -> HsgpSpec:
    """Pin the approximation box using every unit's standardized centroid."""
    spec = spec or HsgpSpec()
    if spec.l_x is not None:
        return spec
    return spec.with_box_for(np.column_stack([data.x, data.y]))


def full_target(data: UptakeDataset, spec: HsgpSpec | None = None) -> TargetDensity:
    """Beta-binomial model with an additive low-rank spatial field."""
    td = _train_arrays(data)
    spec = fixed_hsgp_spec(data, spec)
    train = data.train()
    phi, roots_x, roots_y = hsgp_basis(np.column_stack([train.x, train.y]), spec)
    n_z = spec.n_b ** 2
    dim = _Z0 + n_z
    omega_sq = (roots_x[:, None] ** 2 + roots_y[None, :] ** 2).reshape(-1)

    def logp_and_grad(x):
        with np.errstate(all="ignore"):
            a_mu, scales, a, b_w, b_l = _hier_unpack(x)
            rho = expit(x[_RHO])
            sigma = np.exp(x[_LOG_SIGMA])
            delta = np.exp(x[_LOG_DELTA])
            z = x[_Z0:]
            if not (np.isfinite(sigma) and np.isfinite(delta) and sigma > 0 and delta > 0):
                return -np.inf, np.zeros(dim)
            s = spectral_weights(roots_x, roots_y, sigma, delta)
            field = phi @ (s * z)
            eta = a[td.duc0] + b_w[td.duc0] * td.w + b_l[td.duc0] * td.logl + field
        loglik, g_eta, g_kappa, kappa_u = _betabin_loglik_grads(td, eta, rho)
        if not np.isfinite(loglik):
            return -np.inf, np.zeros(dim)
        rho_logp, rho_grad = _rho_prior(rho)

        logp = loglik + _hier_prior(x, a_mu, scales) + rho_logp
        # half-Normal(0,1) sigma, LogNormal(0,1) delta, N(0,1) weights
        logp += -0.5 * sigma ** 2 + x[_LOG_SIGMA]
        logp += -0.5 * x[_LOG_DELTA] ** 2
        logp += -0.5 * np.sum(z ** 2)

        grad = np.empty(dim)
        _hier_grad(
            x, grad, scales,
            np.bincount(td.duc0, weights=g_eta, minlength=3),
            np.bincount(td.duc0, weights=g_eta * td.w, minlength=3),
            np.bincount(td.duc0, weights=g_eta * td.logl, minlength=3),
        )
        grad[_RHO] = -kappa_u * np.bincount(td.duc0, weights=g_kappa, minlength=3) + rho_grad
        t = phi.T @ g_eta
        grad[_Z0:] = s * t - z
        grad[_LOG_SIGMA] = np.dot(s * z, t) - sigma ** 2 + 1.0
        dlog_s_ddelta = 0.5 * (-3.0 / delta + 15.0 / (3.0 * delta + omega_sq * delta ** 3))
        grad[_LOG_DELTA] = delta * np.dot(s * dlog_s_ddelta * z, t) - x[_LOG_DELTA]
        return float(logp), grad

    def constrain(x):
        return np.concatenate([
            _constrain_base(x),
            expit(x[_RHO]),
            [np.exp(x[_LOG_SIGMA]), np.exp(x[_LOG_DELTA])],
            x[_Z0:],
        ])

    names = (
        list(_BASE_NAMES) + _RHO_NAMES + ["sigma", "delta"]
        + [f"z[{i}]" for i in range(1, n_z + 1)]
    )
    return TargetDensity(dim=dim, parameter_names=names, logp_and_grad=logp_and_grad, constrain=constrain)


def _columns(draws: PosteriorDraws, names: list[str]) -> np.ndarray:
    flat = draws.draws.reshape(-1, draws.draws.shape[2])
    idx = [draws.index_of(n) for n in names]
    return flat[:, idx]


def _eta_draws(kind: str, draws: PosteriorDraws, data: UptakeDataset, hsgp_spec: HsgpSpec | None):
    """Linear predictor per (draw, unit); returns (eta, rho_draws or None)."""
    a = _columns(draws, [f"a[{u}]" for u in (1, 2, 3)])
    b_w = _columns(draws, [f"b_w[{u}]" for u in (1, 2, 3)])
    b_l = _columns(draws, [f"b_l[{u}]" for u in (1, 2, 3)])
    duc0 = data.duc - 1
    eta = a[:, duc0] + b_w[:, duc0] * data.w[None, :] + b_l[:, duc0] * data.logl[None, :]
    rho = None
    if kind in ("betabin", "full"):
        rho = _columns(draws, _RHO_NAMES)[:, duc0]
    if kind == "full":
        if hsgp_spec is None or hsgp_spec.l_x is None:
            raise ModelError("full model needs the fitted HsgpSpec with a fixed box")
        phi, roots_x, roots_y = hsgp_basis(np.column_stack([data.x, data.y]), hsgp_spec)
        z = _columns(draws, [f"z[{i}]" for i in range(1, hsgp_spec.n_b ** 2 + 1)])
        sigma = _columns(draws, ["sigma"])[:, 0]
        delta = _columns(draws, ["delta"])[:, 0]
        omega_sq = (roots_x[:, None] ** 2 + roots_y[None, :] ** 2).reshape(-1)
        dens = matern32_spectral_density(
            omega_sq[None, :], sigma[:, None], delta[:, None])
        eta = eta + (np.sqrt(dens) * z) @ phi.T
    return eta, rho


@dataclass
class PredictiveSummary:
    """Per-unit posterior predictive counts and rates."""

    unit_ids: list[str]
    counts: np.ndarray  # (draws, units)
    rates: np.ndarray
    mean: np.ndarray
    median: np.ndarray
    hdi_low: np.ndarray
    hdi_high: np.ndarray


def hdi(samples: np.ndarray, prob: float = 0.87) -> tuple[float, float]:
    """Shortest interval containing `prob` of the sorted samples."""
    s = np.sort(np.asarray(samples, dtype=float))
    n = len(s)
    m = max(int(np.ceil(prob * n)), 1)
    if m >= n:
        return float(s[0]), float(s[-1])
    widths = s[m - 1 + np.arange(n - m + 1)] - s[: n - m + 1]
    i = int(np.argmin(widths))
    return float(s[i]), float(s[i + m - 1])


def posterior_predict(
    model_kind: str,
    draws: PosteriorDraws,
    units: UptakeDataset,
    seed: int,
    hsgp_spec: HsgpSpec | None = None,
) -> PredictiveSummary:
    """Sample predictive counts/rates for each unit under the fitted model."""
    if model_kind not in MODEL_KINDS:
        raise ModelError(f"unknown model kind {model_kind!r}")
    eta, rho = _eta_draws(model_kind, draws, units, hsgp_spec)
    p_bar = expit(eta)
    rng = np.random.default_rng(seed)
    n = units.n[None, :].astype(np.int64)
    if model_kind == "bin":
        counts = rng.binomial(n, p_bar)
    else:
        kappa = (1.0 - rho) / rho
        alpha = np.clip(p_bar * kappa, 1e-12, None)
        beta = np.clip((1.0 - p_bar) * kappa, 1e-12, None)
        p = rng.beta(alpha, beta)
        counts = rng.binomial(n, p)
    rates = counts / units.n[None, :]
    intervals = np.array([hdi(rates[:, j]) for j in range(rates.shape[1])])
    return PredictiveSummary(
        unit_ids=list(units.unit_ids),
        counts=counts,
        rates=rates,
        mean=rates.mean(axis=0),
        median=np.median(rates, axis=0),
        hdi_low=intervals[:, 0],
        hdi_high=intervals[:, 1],
    )


def pointwise_loglik(
    model_kind: str,
    draws: PosteriorDraws,
    units: UptakeDataset,
    hsgp_spec: HsgpSpec | None = None,
) -> np.ndarray:
    """Log likelihood of each unit's observed count per draw, (draws, units)."""
    if model_kind not in MODEL_KINDS:
        raise ModelError(f"unknown model kind {model_kind!r}")
    eta, rho = _eta_draws(model_kind, draws, units, hsgp_spec)
    n = units.n[None, :].astype(float)
    fb = units.fb[None, :].astype(float)
    log_choose = gammaln(n + 1) - gammaln(fb + 1) - gammaln(n - fb + 1)
    if model_kind == "bin":
        return log_choose - fb * np.logaddexp(0.0, -eta) - (n - fb) * np.logaddexp(0.0, eta)
    p = expit(eta)
    kappa = (1.0 - rho) / rho
    alpha = p * kappa
    beta = (1.0 - p) * kappa
    return (
        log_choose
        + gammaln(fb + alpha) + gammaln(n - fb + beta) - gammaln(n + kappa)
        - gammaln(alpha) - gammaln(beta) + gammaln(kappa)
    )
