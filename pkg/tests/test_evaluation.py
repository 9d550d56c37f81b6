import logging

import numpy as np
import pytest

from popuptake.evaluation import MetricError, aemed, crps, report, semean

from oracles import crps_integral, crps_pairs


# ---------------------------------------------------------------- fixtures

def test_aemed_fixtures():
    assert aemed([1.0, 2.0, 3.0], 2.0) == pytest.approx(0.0, abs=1e-12)
    assert aemed([0.01, 0.02, 0.03], 0.05) == pytest.approx(0.03, abs=1e-12)
    assert aemed([1.0, 2.0, 3.0, 4.0], 0.0) == pytest.approx(2.5, abs=1e-12)


def test_semean_fixtures():
    assert semean([2.0, 2.0, 2.0], 2.0) == pytest.approx(0.0, abs=1e-12)
    assert semean([0.0, 2.0], 2.0) == pytest.approx(1.0, abs=1e-12)


def test_crps_point_mass_at_observation():
    assert crps([1.5, 1.5, 1.5], 1.5) == pytest.approx(0.0, abs=1e-12)


def test_crps_two_sample_fixture():
    assert crps([0.0, 2.0], 1.0) == pytest.approx(0.5, abs=1e-12)


def test_crps_matches_pair_enumeration():
    rng = np.random.default_rng(0)
    for _ in range(30):
        samples = rng.normal(size=rng.integers(2, 12))
        y = rng.normal()
        assert crps(samples, y) == pytest.approx(crps_pairs(list(samples), y), abs=1e-12)


def test_crps_equals_integral_of_cdf_difference():
    rng = np.random.default_rng(1)
    for _ in range(5):
        samples = rng.normal(size=int(rng.integers(2, 7)))
        y = float(rng.normal())
        assert crps(samples, y) == pytest.approx(
            crps_integral(list(samples), y), abs=1e-4
        )


def test_crps_bounded_by_mae():
    rng = np.random.default_rng(2)
    for _ in range(30):
        samples = rng.normal(size=20)
        y = rng.normal()
        mae = np.mean(np.abs(samples - y))
        assert crps(samples, y) <= mae + 1e-12


def test_aemed_equals_root_semean_for_symmetric_pairs():
    rng = np.random.default_rng(3)
    for _ in range(20):
        a, b, y = rng.normal(size=3)
        assert aemed([a, b], y) == pytest.approx(np.sqrt(semean([a, b], y)), abs=1e-12)


def test_metric_input_validation():
    with pytest.raises(MetricError):
        aemed([], 0.0)
    with pytest.raises(MetricError):
        semean([], 0.0)
    with pytest.raises(MetricError):
        crps([1.0], 0.0)


# ------------------------------------------------------------------ report

def _toy_inputs(seed=0):
    rng = np.random.default_rng(seed)
    observed = np.array([0.01, 0.02, 0.03, 0.05, 0.04, 0.02])
    duc = np.array([1, 1, 2, 3, 3, 2])
    rates = {
        "m1": observed[None, :] + rng.normal(0, 0.005, size=(200, 6)),
        "m2": observed[None, :] + rng.normal(0, 0.02, size=(200, 6)),
    }
    return rates, observed, duc


def test_report_perfect_point_mass():
    observed = np.array([0.02])
    rates = {"m": np.full((50, 1), 0.02)}
    rep = report(rates, observed, np.array([1]))
    vals = rep.metrics[(1, "m")]
    assert vals["aemed"] == 0.0 and vals["semean"] == 0.0 and vals["crps"] == 0.0


def test_report_percentage_normalization():
    # two units with AEMed 0.001 and 0.003 against a mean rate of 0.02 -> 10%
    observed = np.array([0.019, 0.021])
    rates = {"m": np.vstack([np.full((1, 2), [0.020, 0.024])] * 100)}
    rep = report(rates, observed, np.array([1, 1]))
    assert rep.mean_rate[1] == pytest.approx(0.02)
    assert rep.metrics[(1, "m")]["aemed"] == pytest.approx(0.002)
    assert rep.metrics[(1, "m")]["aemed_pct"] == pytest.approx(10.0)


def test_report_root_mean_semean_aggregation():
    observed = np.array([0.02, 0.02])
    rates = {"m": np.vstack([np.full((1, 2), [0.021, 0.023])] * 10)}
    rep = report(rates, observed, np.array([1, 1]))
    # per-unit squared errors 1e-6 and 9e-6; root of their mean
    assert rep.metrics[(1, "m")]["semean"] == pytest.approx(np.sqrt(5e-6))


def test_report_permutation_invariance():
    rates, observed, duc = _toy_inputs()
    rep1 = report(rates, observed, duc)
    perm = np.random.default_rng(9).permutation(len(observed))
    rep2 = report({k: v[:, perm] for k, v in rates.items()}, observed[perm], duc[perm])
    for key, vals in rep1.metrics.items():
        for name, v in vals.items():
            assert rep2.metrics[key][name] == pytest.approx(v, abs=1e-12)


def test_report_empty_stratum_warns(caplog):
    rates, observed, duc = _toy_inputs()
    with caplog.at_level(logging.WARNING):
        rep = report(rates, observed, duc)
    assert set(rep.mean_rate) == {1, 2, 3}
    # no DUC 2 at all in this variant
    sel = duc != 2
    with caplog.at_level(logging.WARNING):
        rep2 = report({k: v[:, sel] for k, v in rates.items()}, observed[sel], duc[sel])
    assert set(rep2.mean_rate) == {1, 3}


def test_report_loo_comparison_keys():
    rates, observed, duc = _toy_inputs()
    rng = np.random.default_rng(5)
    loglik = {
        "m1": rng.normal(-3, 0.1, size=(400, 10)),
        "m2": rng.normal(-5, 0.1, size=(400, 10)),
    }
    rep = report(rates, observed, duc, loglik=loglik)
    assert rep.loo_elpd["m1"] > rep.loo_elpd["m2"]
    assert "m1-m2" in rep.loo_differences
    assert rep.loo_differences["m1-m2"] == pytest.approx(
        rep.loo_elpd["m1"] - rep.loo_elpd["m2"]
    )
    assert set(rep.pareto_k_counts["m1"]) == {"good", "ok", "bad"}


def test_report_rows_schema():
    rates, observed, duc = _toy_inputs()
    rep = report(rates, observed, duc)
    rows = rep.rows()
    assert {tuple(sorted(r)) for r in rows} == {("duc", "metric", "model", "value", "value_pct")}
    assert len(rows) == 3 * 2 * 3  # ducs x models x metrics


def test_basis_sweep_ordering_and_schema():
    # a rough spatial field (short length scale) needs more basis functions;
    # LOO-ELPD improves from 4 toward the resolution that captures it
    from popuptake.evaluation import basis_sweep
    from popuptake.inference.nuts import SamplerConfig
    from popuptake.simulate import SimConfig, simulate_units

    data, _ = simulate_units(SimConfig(n_units=150, seed=77, sigma=0.6, delta=0.45))
    out = basis_sweep(
        data, [4, 16],
        SamplerConfig(chains=2, warmup_iters=250, sampling_iters=250, seed=11, threads=2),
    )
    assert out["elpd"][16] >= out["elpd"][4]
    assert {tuple(sorted(r)) for r in out["rows"]} == {
        ("duc", "metric", "model", "value", "value_pct")
    }
    assert {r["model"] for r in out["rows"]} == {"full-nb4", "full-nb16"}


def test_basis_sweep_single_entry():
    from popuptake.evaluation import basis_sweep
    from popuptake.inference.nuts import SamplerConfig
    from popuptake.simulate import SimConfig, simulate_units

    data, _ = simulate_units(SimConfig(n_units=60, seed=3, sigma=0.2))
    out = basis_sweep(
        data, [4],
        SamplerConfig(chains=2, warmup_iters=120, sampling_iters=120, seed=2, threads=2),
    )
    assert set(out["elpd"]) == {4}
    ducs = sorted({r["duc"] for r in out["rows"]})
    assert len(out["rows"]) == 3 * len(ducs)


def test_basis_sweep_empty_list():
    from popuptake.evaluation import MetricError, basis_sweep
    from popuptake.inference.nuts import SamplerConfig
    from popuptake.simulate import SimConfig, simulate_units

    data, _ = simulate_units(SimConfig(n_units=30, seed=1))
    with pytest.raises(MetricError):
        basis_sweep(data, [], SamplerConfig(chains=2, warmup_iters=10, sampling_iters=10, seed=1))
