import numpy as np
import pandas as pd
import pytest
from scipy.special import expit

from pvscreen.baselines import drug_log_or
from pvscreen.sampler import SamplerConfig
from pvscreen.simulate import (DESK_M, SIM_BETA, MDistribution, ScenarioSpec, confusion,
                               expected_events, format_table, generate_dataset, run_benchmark,
                               scenario1_spec, scenario2_spec, scenario_sigma_d, simulate_replicate,
                               summarize_benchmark)


def test_scenario_layouts():
    assert scenario1_spec().n_signals == 90
    s300 = scenario1_spec(300)
    assert [c for c, _ in s300.effect_layout] == [3, 7, 10, 10]
    s2 = scenario2_spec()
    assert s2.n_drugs == 100 and s2.n_signals == 20
    assert s2.effect_layout == ((3, -0.75), (17, -0.50))


def test_scenario_spec_validation():
    with pytest.raises(ValueError):
        ScenarioSpec(5, ((6, 1.0),))
    with pytest.raises(ValueError):
        ScenarioSpec(5, ((1, 0.0),))
    with pytest.raises(ValueError):
        ScenarioSpec(5, (), sigma_d_spec=("block", 10, 0.2, 0.3))


def test_block_sigma_d(rng):
    s = scenario_sigma_d(rng, scenario2_spec())
    off = s[:30, :30][~np.eye(30, dtype=bool)]
    assert np.all(np.diag(s) == 1) and np.linalg.eigvalsh(s)[0] > 0
    assert off.min() > 0.2 and off.max() < 0.45
    np.testing.assert_array_equal(s[30:, 30:], np.eye(70))
    assert np.all(s[:30, 30:] == 0)


def test_null_rate_ratio_is_one():
    spec = ScenarioSpec(50, (), beta=SIM_BETA[:4] + (0.0,), m_distribution=DESK_M)
    ratios = []
    for rep in range(50):
        ds, _ = generate_dataset(np.random.default_rng(rep), spec)
        post = ds.X[:, 4] == 1
        ratios.append((ds.y[post].sum() / ds.m[post].sum()) / (ds.y[~post].sum() / ds.m[~post].sum()))
    assert np.mean(ratios) == pytest.approx(1.0, abs=0.02)


def test_baseline_rate():
    m = np.full((1, 8), 10**9)
    spec = ScenarioSpec(1, (), random_intercept_sd=0.0,
                        m_distribution=MDistribution("fixed", values=tuple(map(tuple, m))))
    ds, _ = generate_dataset(np.random.default_rng(0), spec)
    r = ds.y[0] / ds.m[0]
    assert expit(-9.36) == pytest.approx(8.6e-5, rel=0.01)
    assert r == pytest.approx(expit(-9.36), rel=0.01)


def test_strong_negative_effect_recovered():
    m = np.full((1, 8), 10**8)
    spec = ScenarioSpec(1, ((1, -1.0),), beta=SIM_BETA[:4] + (0.0,),
                        m_distribution=MDistribution("fixed", values=tuple(map(tuple, m))))
    ds, _ = generate_dataset(np.random.default_rng(1), spec)
    est, _ = drug_log_or(ds, 0)
    assert np.exp(est) == pytest.approx(np.exp(-1), rel=0.03)


def test_expected_events_band():
    spec = scenario2_spec(m_distribution=DESK_M)
    totals = [simulate_replicate(spec, r)[0].y.sum() for r in range(5)]
    assert 0.5 < np.mean(totals) / expected_events(spec) < 2.0


def test_paired_m_shares_windows(rng):
    m = DESK_M.draw(rng, 4)
    np.testing.assert_array_equal(m[:, 0::2], m[:, 1::2])


def test_tau_perturbs_only_signals(rng):
    spec = scenario2_spec(tau=0.2)
    sd = scenario_sigma_d(rng, spec)
    _, truth, theta = generate_dataset(rng, spec, sd, return_theta=True)
    assert np.all(theta[truth == 0] == 0)
    assert not np.allclose(theta[:20], spec.theta_x()[:20])


def test_replicates_deterministic():
    spec = scenario2_spec()
    a, b = simulate_replicate(spec, 3), simulate_replicate(spec, 3)
    np.testing.assert_array_equal(a[0].y, b[0].y)
    assert not np.array_equal(a[0].y, simulate_replicate(spec, 4)[0].y)


def test_confusion():
    truth = np.array([1, 1, 0, 0])
    assert confusion([0, 2], truth) == {"n_selected": 2, "power": 0.5, "fdr": 0.5}
    assert confusion([], truth)["fdr"] == 0


def oracle(ds, truth, alpha):
    return np.flatnonzero(truth)


def everything(ds, truth, alpha):
    return np.arange(ds.n_drugs)


def broken(ds, truth, alpha):
    raise RuntimeError("no fit")


def test_harness_self_test():
    table = run_benchmark(scenario2_spec(), methods=[oracle, everything], n_replicates=3)
    o = table[table.method == "oracle"]
    assert (o.power == 1).all() and (o.fdr == 0).all()
    e = table[table.method == "everything"]
    assert np.allclose(e.fdr, 1 - 20 / 100)


def test_failures_counted_and_excluded():
    with pytest.warns(UserWarning, match="failed"):
        table = run_benchmark(scenario2_spec(), methods=[oracle, broken], n_replicates=2)
    summ = summarize_benchmark(table)
    row = summ[summ.method == "broken"].iloc[0]
    assert row.n_failed == 2 and row.n_replicates == 0 and np.isnan(row.power_median)
    assert "no fit" in table[table.method == "broken"].error.iloc[0]


def test_benchmark_table_layout_and_determinism():
    cfg = SamplerConfig(n_chains=2, n_warmup=100, n_keep=100)
    spec = scenario2_spec(m_distribution=DESK_M)
    kw = dict(alpha=[0.05, 0.15], sampler_config=cfg, n_replicates=2)
    a = run_benchmark(spec, **kw)
    b = run_benchmark(spec, **kw)
    pd.testing.assert_frame_equal(a, b)
    summ = summarize_benchmark(a)
    assert list(summ.method[:4]) == ["eb_bonferroni", "eb_bh", "spike_slab", "spike_slab_copres"]
    text = format_table(summ)
    assert "Targeted FDR <= 0.05" in text and "Targeted FDR <= 0.15" in text
    assert text.count("| spike_slab_copres |") == 2


def test_unknown_method():
    with pytest.raises(ValueError):
        run_benchmark(scenario2_spec(), methods=["lasso"], n_replicates=1)
