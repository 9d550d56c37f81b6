"""Accuracy metrics for held-out units and model comparison scores.

Per-unit scores are computed from posterior predictive rate samples, then
averaged within each urbanisation class; SEMean is root-mean aggregated so
every reported value lives on the rate scale. Percentages are relative to
the class's mean observed rate.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .hsgp import HsgpSpec
from .inference.nuts import SamplerConfig, sample
from .ingest import DUC_NAMES, UptakeDataset
from .loo import psis_loo
from .models import fixed_hsgp_spec, full_target, pointwise_loglik, posterior_predict

log = logging.getLogger(__name__)


class MetricError(ValueError):
    pass


def aemed(samples: np.ndarray, observed: float) -> float:
    """Absolute error of the predictive median (midpoint rule when even)."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise MetricError("no predictive samples")
    return float(abs(observed - np.median(samples)))


def semean(samples: np.ndarray, observed: float) -> float:
    """Squared error of the predictive mean."""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise MetricError("no predictive samples")
    return float((observed - samples.mean()) ** 2)


def crps(samples: np.ndarray, observed: float) -> float:
    """Empirical CRPS: mean |X - y| - 0.5 * mean |X - X'| over ordered pairs."""
    x = np.sort(np.asarray(samples, dtype=float))
    n = len(x)
    if n < 2:
        raise MetricError("CRPS needs at least 2 predictive samples")
    term1 = float(np.mean(np.abs(x - observed)))
    # sum of |x_i - x_j| over unordered pairs via sorted gaps: each gap d_k
    # separates (k+1) lower from (n-1-k) upper samples
    gaps = np.diff(x)
    k = np.arange(n - 1)
    pair_sum = float(np.dot(gaps, (k + 1.0) * (n - 1.0 - k)))
    return term1 - pair_sum / (n * n)


@dataclass
class MetricReport:
    """Per-class metric table plus model comparison diagnostics."""

    metrics: dict = field(default_factory=dict)  # (duc, model) -> name -> value
    mean_rate: dict = field(default_factory=dict)  # duc -> mean observed rate
    loo_elpd: dict = field(default_factory=dict)  # model -> total elpd
    loo_differences: dict = field(default_factory=dict)  # "a-b" -> elpd gap
    pareto_k_counts: dict = field(default_factory=dict)  # model -> bucket counts
    loo: dict = field(default_factory=dict)  # model -> LooResult

    def rows(self) -> list[dict]:
        """Tidy rows matching the metrics CSV schema."""
        out = []
        for (duc, model), vals in sorted(self.metrics.items()):
            for name in ("aemed", "semean", "crps"):
                out.append({
                    "duc": duc,
                    "metric": name,
                    "model": model,
                    "value": vals[name],
                    "value_pct": vals[f"{name}_pct"],
                })
        return out


def _per_duc_metrics(rates: np.ndarray, observed: np.ndarray, duc: np.ndarray) -> dict:
    out = {}
    for u in sorted(set(duc.tolist())):
        sel = duc == u
        if not sel.any():
            continue
        a = np.mean([aemed(rates[:, j], observed[j]) for j in np.flatnonzero(sel)])
        s = np.sqrt(np.mean([semean(rates[:, j], observed[j]) for j in np.flatnonzero(sel)]))
        c = np.mean([crps(rates[:, j], observed[j]) for j in np.flatnonzero(sel)])
        out[u] = {"aemed": float(a), "semean": float(s), "crps": float(c)}
    return out


def report(
    rate_samples: dict[str, np.ndarray],
    observed: np.ndarray,
    duc: np.ndarray,
    loglik: dict[str, np.ndarray] | None = None,
) -> MetricReport:
    """Score each model's predictive rate samples against the held-out rates.

    rate_samples maps model name to a (draws, units) matrix over the same
    units as `observed`/`duc`; loglik optionally maps model name to the
    pointwise (draws, units) train log likelihood for the LOO comparison.
    """
    observed = np.asarray(observed, dtype=float)
    duc = np.asarray(duc)
    rep = MetricReport()
    present = sorted(set(duc.tolist()))
    for u in present:
        sel = duc == u
        if not sel.any():
            log.warning("no test units with DUC %s; stratum omitted", DUC_NAMES.get(u, u))
            continue
        rep.mean_rate[u] = float(observed[sel].mean())
    for model, rates in rate_samples.items():
        if rates.shape[1] != len(observed):
            raise MetricError(f"model {model}: predictive sample count mismatch")
        for u, vals in _per_duc_metrics(rates, observed, duc).items():
            denom = rep.mean_rate[u]
            entry = dict(vals)
            for name in ("aemed", "semean", "crps"):
                entry[f"{name}_pct"] = 100.0 * vals[name] / denom
            rep.metrics[(u, model)] = entry
    if loglik:
        for model, ll in loglik.items():
            res = psis_loo(ll)
            rep.loo[model] = res
            rep.loo_elpd[model] = res.elpd
            rep.pareto_k_counts[model] = res.k_buckets()
        names = sorted(rep.loo_elpd)
        for i, m1 in enumerate(names):
            for m2 in names[i + 1:]:
                rep.loo_differences[f"{m1}-{m2}"] = rep.loo_elpd[m1] - rep.loo_elpd[m2]
    return rep


def basis_sweep(
    data: UptakeDataset,
    n_b_list: list[int],
    sampler: SamplerConfig,
    predict_seed: int = 0,
) -> dict:
    """Fit the spatial model per basis count; tabulate test metrics and ELPD.

    Returns {"rows": tidy metric rows, "elpd": {n_b: loo_elpd},
    "loo": {n_b: LooResult}}.
    """
    if not n_b_list:
        raise MetricError("empty basis list")
    test = data.test()
    rows, elpd, loos = [], {}, {}
    for n_b in n_b_list:
        spec = fixed_hsgp_spec(data, HsgpSpec(n_b=n_b))
        draws = sample(full_target(data, spec), sampler)
        pred = posterior_predict("full", draws, test, seed=predict_seed, hsgp_spec=spec)
        rep = report(
            {f"full-nb{n_b}": pred.rates}, test.rate, test.duc,
            loglik={f"full-nb{n_b}": pointwise_loglik("full", draws, data.train(), spec)},
        )
        rows.extend(rep.rows())
        elpd[n_b] = rep.loo_elpd[f"full-nb{n_b}"]
        loos[n_b] = rep.loo[f"full-nb{n_b}"]
    return {"rows": rows, "elpd": elpd, "loo": loos}
