"""The brute-force oracles themselves are pinned by hand-checkable fixtures."""

import pytest

from oracles import (
    betabin_pmf,
    censored_history_loglik,
    crps_pairs,
    matern32_direct,
    poisson_cdf_below,
    poisson_pmf,
)


def test_poisson_cdf_fixture():
    assert poisson_cdf_below(10, 5.0) == pytest.approx(0.9681719, abs=1e-7)


def test_poisson_pmf_sums_to_one():
    assert sum(poisson_pmf(j, 3.7) for j in range(80)) == pytest.approx(1.0, abs=1e-12)


def test_betabin_uniform_fixture():
    for k in (0, 1, 2):
        assert betabin_pmf(k, 2, 1.0, 1.0) == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_betabin_pmf_sums_to_one():
    assert sum(betabin_pmf(k, 30, 2.5, 7.0) for k in range(31)) == pytest.approx(1.0, abs=1e-12)


def test_crps_pairs_fixture():
    assert crps_pairs([0.0, 2.0], 1.0) == pytest.approx(0.5, abs=1e-12)


def test_censored_history_decomposes():
    counts = (12, None, 15)
    lam = 7.0
    want = (
        poisson_pmf(12, lam) * poisson_cdf_below(10, lam) * poisson_pmf(15, lam)
    )
    import math
    assert censored_history_loglik(counts, lam, 10) == pytest.approx(math.log(want), abs=1e-12)


def test_matern_direct_at_zero_distance():
    assert matern32_direct((0.3, 0.4), (0.3, 0.4), 0.9, 1.1) == pytest.approx(0.81)
