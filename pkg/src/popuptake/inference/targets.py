"""Target densities on an unconstrained parameter space.

Models expose a joint log density and its gradient over a flat unconstrained
vector; constrained parameters (positives, unit-interval) are handled inside
each model via log/logit transforms with the Jacobian folded into the density.
The `constrain` map recovers the natural parameter values for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


@dataclass
class TargetDensity:
    dim: int
    parameter_names: list[str]
    logp_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]]
    constrain: Callable[[np.ndarray], np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("target dimension must be >= 1")
        if len(self.parameter_names) != len(set(self.parameter_names)):
            raise ValueError("duplicate parameter names")
        if self.constrain is None:
            self.constrain = lambda x: np.asarray(x, dtype=float).copy()

    def log_density(self, x: np.ndarray) -> float:
        return self.logp_and_grad(np.asarray(x, dtype=float))[0]

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.logp_and_grad(np.asarray(x, dtype=float))[1]


def finite_diff_gradient(target: TargetDensity, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the log density."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(len(x)):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (target.log_density(xp) - target.log_density(xm)) / (2.0 * step)
    return g


def max_gradient_error(target: TargetDensity, x: np.ndarray, h: float = 1e-5) -> float:
    """Worst elementwise gradient error relative to max(1, |g|) at x."""
    g = target.gradient(x)
    g_num = finite_diff_gradient(target, x, h=h)
    denom = np.maximum(1.0, np.maximum(np.abs(g), np.abs(g_num)))
    return float(np.max(np.abs(g - g_num) / denom))


def check_gradient(
    target: TargetDensity,
    rng: np.random.Generator,
    n_points: int = 20,
    scale: float = 0.5,
    tol: float = 1e-4,
    h: float = 1e-5,
) -> float:
    """Verify the analytic gradient against finite differences at random points.

    Returns the worst relative error seen; raises if it exceeds tol. Pick h
    to balance truncation against the density's own evaluation noise: count
    likelihoods summing gammaln terms of magnitude ~1e7 need h near 1e-3.
    """
    worst = 0.0
    for _ in range(n_points):
        x = rng.normal(scale=scale, size=target.dim)
        worst = max(worst, max_gradient_error(target, x, h=h))
    if worst > tol:
        raise AssertionError(f"gradient check failed: max relative error {worst:.3e}")
    return worst
