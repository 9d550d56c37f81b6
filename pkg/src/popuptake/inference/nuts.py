"""Gradient-based MCMC: multinomial no-U-turn sampling with adaptation.

Warmup runs dual-averaging step-size adaptation throughout, with a diagonal
mass matrix re-estimated over expanding memory windows (25/50/100/...),
after which both are frozen. Chains are independent given their spawned
seeds, so results are reproducible bit-for-bit for a fixed config.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .targets import TargetDensity

log = logging.getLogger(__name__)

ENERGY_DIVERGENCE = 1000.0  # drop in joint log density that flags a divergence


class SamplingError(RuntimeError):
    pass


@dataclass
class SamplerConfig:
    chains: int = 4
    warmup_iters: int = 1000
    sampling_iters: int = 1000
    seed: int = 0
    target_accept: float = 0.8
    max_tree_depth: int = 10
    init_radius: float = 2.0
    threads: int = 1

    def __post_init__(self):
        if min(self.chains, self.warmup_iters, self.sampling_iters) < 1:
            raise ValueError("chains and iteration counts must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass
class PosteriorDraws:
    """Constrained draws indexed [chain][iteration][param]."""

    draws: np.ndarray
    parameter_names: list[str]
    divergences: np.ndarray  # bool [chain][iteration]
    step_sizes: np.ndarray = None
    accept_rates: np.ndarray = None

    def __post_init__(self):
        if self.draws.ndim != 3:
            raise ValueError("draws must be a [chain][iteration][param] array")
        if self.draws.shape[2] != len(self.parameter_names):
            raise ValueError("parameter_names length does not match draws")
        if self.divergences.shape != self.draws.shape[:2]:
            raise ValueError("divergence flags must be [chain][iteration]")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_iterations(self) -> int:
        return self.draws.shape[1]

    def index_of(self, name: str) -> int:
        return self.parameter_names.index(name)

    def get(self, name: str) -> np.ndarray:
        """Draws of one parameter, shape (chains, iterations)."""
        return self.draws[:, :, self.index_of(name)]

    def flat(self, name: str) -> np.ndarray:
        return self.get(name).reshape(-1)

    def n_divergent(self) -> int:
        return int(self.divergences.sum())


class _Hamiltonian:
    """Bundles the target with a diagonal mass matrix."""

    def __init__(self, target: TargetDensity, inv_mass: np.ndarray):
        self.target = target
        self.inv_mass = inv_mass
        self.n_evals = 0

    def logp_grad(self, q):
        self.n_evals += 1
        return self.target.logp_and_grad(q)

    def kinetic(self, r) -> float:
        return 0.5 * float(np.dot(r, self.inv_mass * r))

    def sample_momentum(self, rng) -> np.ndarray:
        return rng.standard_normal(len(self.inv_mass)) / np.sqrt(self.inv_mass)

    def leapfrog(self, q, r, grad, eps):
        r1 = r + 0.5 * eps * grad
        q1 = q + eps * self.inv_mass * r1
        logp1, grad1 = self.logp_grad(q1)
        r1 = r1 + 0.5 * eps * grad1
        return q1, r1, logp1, grad1


class _Tree:
    """One subtree of the trajectory; endpoints ordered by trajectory time."""

    __slots__ = (
        "q_left", "r_left", "grad_left", "q_right", "r_right", "grad_right",
        "q_prop", "grad_prop", "logp_prop", "log_weight", "r_sum",
        "turning", "diverging",
    )

    def __init__(self, q, r, grad, q_prop, grad_prop, logp_prop, log_weight):
        self.q_left = self.q_right = q
        self.r_left = self.r_right = r
        self.grad_left = self.grad_right = grad
        self.q_prop = q_prop
        self.grad_prop = grad_prop
        self.logp_prop = logp_prop
        self.log_weight = log_weight
        self.r_sum = r.copy()
        self.turning = False
        self.diverging = False


def _uturn(r_sum, r_a, r_b, inv_mass) -> bool:
    return (
        np.dot(r_sum, inv_mass * r_a) <= 0.0
        or np.dot(r_sum, inv_mass * r_b) <= 0.0
    )


class _Nuts:
    def __init__(self, ham: _Hamiltonian, cfg: SamplerConfig, rng: np.random.Generator):
        self.ham = ham
        self.cfg = cfg
        self.rng = rng
        self.sum_accept = 0.0
        self.n_leaves = 0

    def _leaf(self, q, r, grad, eps, joint0):
        q1, r1, logp1, grad1 = self.ham.leapfrog(q, r, grad, eps)
        joint1 = logp1 - self.ham.kinetic(r1) if np.isfinite(logp1) else -np.inf
        lw = joint1 - joint0
        tree = _Tree(q1, r1, grad1, q1, grad1, logp1, lw)
        tree.diverging = not np.isfinite(lw) or lw < -ENERGY_DIVERGENCE
        self.sum_accept += min(1.0, np.exp(min(lw, 0.0)))
        self.n_leaves += 1
        return tree

    def _merge_checks(self, first: _Tree, second: _Tree) -> bool:
        """Generalized U-turn checks for two time-adjacent subtrees."""
        im = self.ham.inv_mass
        rho = first.r_sum + second.r_sum
        if _uturn(rho, first.r_left, second.r_right, im):
            return True
        if _uturn(first.r_sum + second.r_left, first.r_left, second.r_left, im):
            return True
        if _uturn(second.r_sum + first.r_right, first.r_right, second.r_right, im):
            return True
        return False

    def _build(self, depth, q, r, grad, direction, eps, joint0) -> _Tree:
        """Build a subtree of 2^depth leaves starting one step from (q, r)."""
        if depth == 0:
            return self._leaf(q, r, grad, direction * eps, joint0)
        inner = self._build(depth - 1, q, r, grad, direction, eps, joint0)
        if inner.turning or inner.diverging:
            return inner
        if direction > 0:
            q2, r2, g2 = inner.q_right, inner.r_right, inner.grad_right
        else:
            q2, r2, g2 = inner.q_left, inner.r_left, inner.grad_left
        outer = self._build(depth - 1, q2, r2, g2, direction, eps, joint0)
        if outer.diverging:
            inner.diverging = True
            return inner
        first, second = (inner, outer) if direction > 0 else (outer, inner)
        # multinomial choice between the two halves
        total = np.logaddexp(inner.log_weight, outer.log_weight)
        if np.log(self.rng.uniform()) < outer.log_weight - total:
            inner.q_prop = outer.q_prop
            inner.grad_prop = outer.grad_prop
            inner.logp_prop = outer.logp_prop
        inner.log_weight = total
        inner.turning = outer.turning or self._merge_checks(first, second)
        inner.r_sum = first.r_sum + second.r_sum
        inner.q_left, inner.r_left, inner.grad_left = (
            first.q_left, first.r_left, first.grad_left)
        inner.q_right, inner.r_right, inner.grad_right = (
            second.q_right, second.r_right, second.grad_right)
        return inner

    def step(self, q, logp, grad, eps):
        """One transition; returns (q, logp, grad, accept_stat, divergent)."""
        self.sum_accept = 0.0
        self.n_leaves = 0
        r0 = self.ham.sample_momentum(self.rng)
        joint0 = logp - self.ham.kinetic(r0)
        tree = _Tree(q, r0, grad, q, grad, logp, 0.0)
        divergent = False
        for depth in range(self.cfg.max_tree_depth):
            direction = 1 if self.rng.uniform() < 0.5 else -1
            if direction > 0:
                q2, r2, g2 = tree.q_right, tree.r_right, tree.grad_right
            else:
                q2, r2, g2 = tree.q_left, tree.r_left, tree.grad_left
            sub = self._build(depth, q2, r2, g2, direction, eps, joint0)
            if sub.diverging:
                divergent = True
                break
            if sub.turning:
                break
            # biased progressive sampling favours the fresh subtree
            if np.log(self.rng.uniform()) < sub.log_weight - tree.log_weight:
                tree.q_prop = sub.q_prop
                tree.grad_prop = sub.grad_prop
                tree.logp_prop = sub.logp_prop
            tree.log_weight = np.logaddexp(tree.log_weight, sub.log_weight)
            first, second = (tree, sub) if direction > 0 else (sub, tree)
            turning = self._merge_checks(first, second)
            tree.r_sum = first.r_sum + second.r_sum
            tree.q_left, tree.r_left, tree.grad_left = (
                first.q_left, first.r_left, first.grad_left)
            tree.q_right, tree.r_right, tree.grad_right = (
                second.q_right, second.r_right, second.grad_right)
            if turning:
                break
        accept_stat = self.sum_accept / max(self.n_leaves, 1)
        return tree.q_prop, tree.logp_prop, tree.grad_prop, accept_stat, divergent


def _find_reasonable_epsilon(ham, q, logp, grad, rng) -> float:
    """Double/halve the step size until one leapfrog's accept prob crosses 1/2."""
    eps = 1.0
    r = ham.sample_momentum(rng)
    joint0 = logp - ham.kinetic(r)

    def joint_delta(eps):
        q1, r1, logp1, _ = ham.leapfrog(q, r, grad, eps)
        if not np.isfinite(logp1):
            return -np.inf
        return (logp1 - ham.kinetic(r1)) - joint0

    delta = joint_delta(eps)
    direction = 1 if delta > np.log(0.5) else -1
    for _ in range(100):
        eps *= 2.0 ** direction
        if not 1e-10 < eps < 1e7:
            break
        delta = joint_delta(eps)
        if (direction == 1) != (delta > np.log(0.5)):
            break
    return eps


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target accept rate."""

    gamma, t0, kappa = 0.05, 10.0, 0.75

    def __init__(self, eps0, target):
        self.mu = np.log(10.0 * eps0)
        self.target = target
        self.log_eps = np.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0

    def update(self, accept_stat) -> float:
        self.m += 1
        eta = 1.0 / (self.m + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept_stat)
        self.log_eps = self.mu - np.sqrt(self.m) / self.gamma * self.h_bar
        w = self.m ** (-self.kappa)
        self.log_eps_bar = w * self.log_eps + (1 - w) * self.log_eps_bar
        return np.exp(self.log_eps)

    @property
    def adapted(self) -> float:
        return float(np.exp(self.log_eps_bar))


def _warmup_windows(warmup: int) -> tuple[int, int, list[int]]:
    """Stan-style schedule: (init_buffer, term_buffer, slow window ends)."""
    init_buf, term_buf, base = 75, 50, 25
    if warmup < init_buf + term_buf + base:
        init_buf = max(1, int(0.15 * warmup))
        term_buf = max(1, int(0.10 * warmup))
        base = max(1, warmup - init_buf - term_buf)
    ends = []
    start, size = init_buf, base
    while start < warmup - term_buf:
        end = start + size
        if end + 2 * size > warmup - term_buf:  # absorb the remainder
            end = warmup - term_buf
        ends.append(end)
        start, size = end, size * 2
    return init_buf, term_buf, ends


class _Welford:
    def __init__(self, dim):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def regularized_variance(self) -> np.ndarray:
        var = self.m2 / max(self.n - 1, 1)
        shrink = self.n / (self.n + 5.0)
        return shrink * var + 1e-3 * (1 - shrink) * np.ones_like(var)


def _init_point(target, rng, radius, tries=100):
    for _ in range(tries):
        q = rng.uniform(-radius, radius, size=target.dim)
        logp, grad = target.logp_and_grad(q)
        if np.isfinite(logp) and np.all(np.isfinite(grad)):
            return q, logp, grad
    raise SamplingError("initialization failed")


def _run_chain(target: TargetDensity, cfg: SamplerConfig, seed_seq) -> dict:
    rng = np.random.default_rng(seed_seq)
    ham = _Hamiltonian(target, np.ones(target.dim))
    q, logp, grad = _init_point(target, rng, cfg.init_radius)

    nuts = _Nuts(ham, cfg, rng)
    eps = _find_reasonable_epsilon(ham, q, logp, grad, rng)
    da = _DualAveraging(eps, cfg.target_accept)
    init_buf, term_buf, window_ends = _warmup_windows(cfg.warmup_iters)
    welford = _Welford(target.dim)

    for it in range(cfg.warmup_iters):
        q, logp, grad, accept, _ = nuts.step(q, logp, grad, eps)
        eps = da.update(accept)
        if it >= init_buf:
            welford.push(q)
        if it + 1 in window_ends:
            ham.inv_mass = welford.regularized_variance()
            welford = _Welford(target.dim)
            eps = _find_reasonable_epsilon(ham, q, logp, grad, rng)
            da = _DualAveraging(eps, cfg.target_accept)
    eps = da.adapted

    draws = np.empty((cfg.sampling_iters, target.dim))
    divergent = np.zeros(cfg.sampling_iters, dtype=bool)
    accepts = np.empty(cfg.sampling_iters)
    for it in range(cfg.sampling_iters):
        q, logp, grad, accept, div = nuts.step(q, logp, grad, eps)
        draws[it] = target.constrain(q)
        divergent[it] = div
        accepts[it] = accept
    return {
        "draws": draws,
        "divergent": divergent,
        "step_size": eps,
        "accept_rate": float(accepts.mean()),
        "n_evals": ham.n_evals,
    }


def sample(target: TargetDensity, cfg: SamplerConfig) -> PosteriorDraws:
    """Run the sampler and return constrained posterior draws.

    Seeds are spawned per chain from cfg.seed, so chains are independent and
    the result does not depend on whether they run serially or in threads.
    """
    if target.dim < 1:
        raise ValueError("target dimension must be >= 1")
    seed_seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.chains)
    if cfg.threads > 1 and cfg.chains > 1:
        with ThreadPoolExecutor(max_workers=min(cfg.threads, cfg.chains)) as pool:
            results = list(pool.map(
                lambda s: _run_chain(target, cfg, s), seed_seqs))
    else:
        results = [_run_chain(target, cfg, s) for s in seed_seqs]

    draws = np.stack([r["draws"] for r in results])
    divergences = np.stack([r["divergent"] for r in results])
    n_div = int(divergences.sum())
    if n_div:
        log.warning("%d divergent transitions after warmup", n_div)
    return PosteriorDraws(
        draws=draws,
        parameter_names=list(target.parameter_names),
        divergences=divergences,
        step_sizes=np.array([r["step_size"] for r in results]),
        accept_rates=np.array([r["accept_rate"] for r in results]),
    )
