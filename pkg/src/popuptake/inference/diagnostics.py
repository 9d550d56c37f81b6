"""Chain convergence diagnostics: split R-hat and effective sample size."""

from __future__ import annotations

import numpy as np

from .nuts import PosteriorDraws


def _split_chains(chains: np.ndarray) -> np.ndarray:
    """Halve each chain (dropping the middle draw when the length is odd)."""
    chains = np.asarray(chains, dtype=float)
    m, n = chains.shape
    half = n // 2
    return np.vstack([chains[:, :half], chains[:, n - half:]])


def split_rhat(chains: np.ndarray) -> float:
    """Classic split R-hat over a (chains, iterations) array.

    A globally constant array returns exactly 1.0 by convention; constant but
    unequal chains blow up to infinity, which correctly flags non-mixing.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2 or chains.shape[1] < 4:
        raise ValueError("need >= 2 chains with >= 4 iterations each")
    if np.all(chains == chains.flat[0]):
        return 1.0
    split = _split_chains(chains)
    n = split.shape[1]
    chain_means = split.mean(axis=1)
    w = float(split.var(axis=1, ddof=1).mean())
    b = n * float(np.var(chain_means, ddof=1))
    if w == 0.0:
        return float("inf")
    var_plus = (n - 1) / n * w + b / n
    return float(np.sqrt(var_plus / w))


def _chain_autocovariance(x: np.ndarray) -> np.ndarray:
    """Autocovariance at all lags via FFT, normalized by n."""
    n = len(x)
    x = x - x.mean()
    size = 2 ** int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, size)
    acov = np.fft.irfft(f * np.conjugate(f), size)[:n].real
    return acov / n


def ess(chains: np.ndarray) -> float:
    """Effective sample size via Geyer's initial monotone sequence.

    Autocorrelations are combined across chains the usual way (within
    variance vs. pooled variance). Constant draws return the total draw
    count by convention.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim != 2 or chains.shape[0] < 2 or chains.shape[1] < 4:
        raise ValueError("need >= 2 chains with >= 4 iterations each")
    m, n = chains.shape
    if np.all(chains == chains.flat[0]):
        return float(m * n)

    acov = np.stack([_chain_autocovariance(c) for c in chains])
    chain_var = acov[:, 0] * n / (n - 1)
    w = float(chain_var.mean())
    var_plus = w * (n - 1) / n + float(np.var(chains.mean(axis=1), ddof=1))
    if var_plus == 0.0 or w == 0.0:
        return float(m * n)

    rho = 1.0 - (w - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0

    # Geyer pairs: keep while sums stay positive, then force monotone decrease
    max_pairs = (n - 2) // 2
    pair_sums = []
    for k in range(max_pairs + 1):
        s = rho[2 * k] + rho[2 * k + 1]
        if k > 0 and s < 0.0:
            break
        pair_sums.append(s)
    running_min = np.inf
    tau = -rho[0]  # corrects for the lag-0 term counted inside the first pair
    for s in pair_sums:
        running_min = min(running_min, max(s, 0.0))
        tau += 2.0 * running_min
    tau = max(tau, 1.0 / np.log10(m * n + 10.0))
    return float(m * n / tau)


def summarize(draws: PosteriorDraws) -> dict:
    """Per-parameter posterior summary with convergence diagnostics."""
    out = {}
    for j, name in enumerate(draws.parameter_names):
        chains = draws.draws[:, :, j]
        if chains.shape[0] < 2:  # halve the single chain for the diagnostics
            half = chains.shape[1] // 2
            chains = np.vstack([chains[:, :half], chains[:, chains.shape[1] - half:]])
        out[name] = {
            "mean": float(draws.draws[:, :, j].mean()),
            "sd": float(draws.draws[:, :, j].std(ddof=1)),
            "rhat": split_rhat(chains),
            "ess": ess(chains),
        }
    return {
        "parameters": out,
        "n_chains": draws.n_chains,
        "n_iterations": draws.n_iterations,
        "divergences": draws.n_divergent(),
    }
