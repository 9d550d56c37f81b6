import numpy as np
import pytest

from popuptake.inference.diagnostics import ess, split_rhat


def test_rhat_iid_chains_near_one():
    rng = np.random.default_rng(0)
    chains = rng.standard_normal((2, 20000))
    assert 0.99 <= split_rhat(chains) <= 1.02


def test_rhat_separated_constant_chains_flagged():
    chains = np.vstack([np.zeros(100), np.full(100, 10.0)])
    assert split_rhat(chains) > 1.1  # infinite here: zero within, huge between


def test_rhat_globally_constant_is_one():
    assert split_rhat(np.full((3, 50), 2.5)) == 1.0


def test_rhat_detects_trend():
    # half-chains with different means: classic warmup drift
    drifting = np.vstack([np.linspace(0, 5, 1000), np.linspace(0, 5, 1000)])
    assert split_rhat(drifting) > 1.5


def test_rhat_input_validation():
    with pytest.raises(ValueError):
        split_rhat(np.zeros((1, 100)))
    with pytest.raises(ValueError):
        split_rhat(np.zeros((2, 3)))


def test_ess_iid():
    rng = np.random.default_rng(1)
    chains = rng.standard_normal((4, 1000))
    assert 3200 <= ess(chains) <= 4800


def test_ess_ar1():
    rho = 0.9
    rng = np.random.default_rng(2)
    n, m = 4000, 4
    chains = np.empty((m, n))
    for c in range(m):
        x = rng.standard_normal()
        innovations = rng.standard_normal(n) * np.sqrt(1 - rho ** 2)
        for i in range(n):
            x = rho * x + innovations[i]
            chains[c, i] = x
    expected = m * n * (1 - rho) / (1 + rho)
    measured = ess(chains)
    assert abs(measured - expected) / expected < 0.30


def test_ess_constant_series_returns_total():
    assert ess(np.full((4, 250), 7.0)) == 1000.0


def test_ess_input_validation():
    with pytest.raises(ValueError):
        ess(np.zeros(100))
    with pytest.raises(ValueError):
        ess(np.zeros((1, 100)))
