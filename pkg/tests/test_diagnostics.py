from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from kinqsd.diagnostics import (FAIL, INCONCLUSIVE, PASS, StatTestReport, censored_rate,
                                chi2_independence, dobrushin_probe, exit_categories,
                                exit_law_battery, exit_time_battery, f2_lyapunov_probe,
                                harnack_ratio_scan, ks_exponential, memoryless_check,
                                moment_bound_scan, short_time_scan, sup_square_moments)
from kinqsd.domains import Ball, Box, FullSpace, Interval
from kinqsd.errors import InsufficientExitsError, ParameterError
from kinqsd.integrate import IntegratorConfig
from kinqsd.qsd import Binning
from kinqsd.model import (KineticState, PhaseBox, build_model, constant_coefficients,
                          free_transport, harmonic_langevin)

REPS = 200


def _null_pvalues(fn, reps=REPS, n=400, rate=0.7):
    gen = np.random.default_rng(12345)
    return np.array([fn(gen.exponential(1 / rate, n), gen) for _ in range(reps)])


def _assert_uniform(p):
    assert stats.kstest(p, "uniform").pvalue > 1e-3
    assert abs(np.mean(p < 0.05) - 0.05) < 4 * math.sqrt(0.05 * 0.95 / len(p))


@pytest.mark.parametrize("s,t", [(1, 1), (1, 2), (2, 2)])
def test_memoryless_pvalues_uniform_under_null(s, t):
    _assert_uniform(_null_pvalues(lambda x, g: memoryless_check(x, s, t).p_value))


def test_plugin_ks_pvalues_uniform_under_null():
    _assert_uniform(_null_pvalues(lambda x, g: ks_exponential(x, rate=0.7).p_value))


def test_refit_ks_pvalues_uniform_under_null():
    p = _null_pvalues(lambda x, g: ks_exponential(x, n_boot=199,
                                                  seed=int(g.integers(1 << 30))).p_value)
    _assert_uniform(p)


def test_chi2_pvalues_uniform_under_null():
    def fn(x, g):
        return chi2_independence(g.integers(0, 2, len(x)), x).p_value
    _assert_uniform(_null_pvalues(fn))


def test_refit_ks_rejects_non_exponential():
    x = np.random.default_rng(0).gamma(4.0, 0.25, 2000)
    assert not ks_exponential(x, n_boot=199).passed
    # a deterministic exit time is the extreme case
    assert not ks_exponential(np.full(2000, 0.5) + 1e-9 * np.arange(2000), n_boot=199).passed


def test_censored_rate_and_truncation():
    gen = np.random.default_rng(1)
    x = gen.exponential(1 / 0.5, 20000)
    x[x > 3.0] = np.inf
    assert censored_rate(x, 3.0) == pytest.approx(0.5, rel=0.03)
    rep = ks_exponential(x, horizon=3.0, n_boot=199)
    assert rep.passed and rep.details["n_exits"] == int(np.isfinite(x).sum())
    with pytest.raises(InsufficientExitsError):
        ks_exponential(np.array([1.0, np.inf, np.inf]))


def test_chi2_detects_dependence_and_degenerate_tables():
    gen = np.random.default_rng(2)
    x = gen.exponential(1.0, 2000)
    side = (x > np.median(x)).astype(int)
    assert not chi2_independence(side, x).passed
    rep = chi2_independence(np.zeros(100, int), x[:100])
    assert rep.passed and rep.details["degenerate"]


def test_memoryless_detects_ageing():
    x = np.random.default_rng(3).weibull(2.0, 5000) * 2
    assert not memoryless_check(x, 1, 1).passed


def test_p_values_validated():
    with pytest.raises(ValueError):
        StatTestReport("x", 0.0, 1.5, True, 1)


def test_exit_categories():
    assert list(exit_categories(Interval(-1, 1), [[-1.0], [1.0]])) == [0, 1]
    c = exit_categories(Ball((0.0, 0.0), 1.0), [[1.0, 0.01], [-1.0, 0.01], [0.0, -1.0]])
    assert len(set(c.tolist())) == 3 and c.max() <= 7
    with pytest.raises(ParameterError):
        exit_categories(Box((0, 0), (1, 1)), [[0.5, 1.0]])


def test_battery_bonferroni_and_negative_control():
    gen = np.random.default_rng(4)
    x = gen.exponential(1.0, 3000)
    res = exit_time_battery(x, gen.integers(0, 2, 3000), lambda0_hat=1.0, n_boot=99)
    assert res.passed
    assert res["ks_exponential_refit"].details["bonferroni_tests"] == 5
    assert res["ks_exponential_refit"].details["n_boot"] >= 2 / (0.01 / 5)
    assert res["ks_exponential_plugin"].informational
    det = np.full(3000, 0.5) + 1e-6 * gen.random(3000)
    neg = exit_time_battery(det, negative_control=True, n_boot=99)
    assert neg.passed and not neg["ks_exponential_refit"].passed
    assert not exit_time_battery(det, n_boot=99).passed


def test_exit_law_battery_negative_control_with_free_transport():
    sampler = KineticState([0.0], [2.0])
    res = exit_law_battery(sampler, free_transport(), Interval(-1.0, 1.0), 1000,
                           IntegratorConfig(dt=1e-2, max_time=2.0), negative_control=True,
                           n_boot=99)
    assert res.passed and res.exit_status == 0
    with pytest.raises(ParameterError):
        exit_law_battery(sampler, free_transport(), Interval(-1.0, 1.0), 10, IntegratorConfig())


def test_exit_law_battery_insufficient_exits():
    with pytest.raises(InsufficientExitsError) as exc:
        exit_law_battery(KineticState([0.0], [0.0]), free_transport(), Interval(-1.0, 1.0),
                         1000, IntegratorConfig(dt=0.1, max_time=1.0))
    assert exc.value.survival_fraction == 1.0


def test_harnack_ratio_is_one_without_absorption():
    rep = harnack_ratio_scan(None, PhaseBox([-1.0], [1.0], [-1.0], [1.0]), harmonic_langevin(),
                             FullSpace(1), [0.5, 1.0], 0.5, 50,
                             IntegratorConfig(dt=1e-2, max_time=5.0))
    assert rep.outcome == PASS
    assert rep.ratios() == [1.0, 1.0] and rep.spread == 1.0


def test_harnack_single_point_survival_ratio_at_least_one():
    K = (np.array([[0.0]]), np.array([[0.0]]))
    rep = harnack_ratio_scan(None, K, harmonic_langevin(), Interval(-1.0, 1.0), [0.5, 1.0], 1.0,
                             500, IntegratorConfig(dt=1e-2, max_time=5.0), spread_limit=None)
    assert rep.outcome == PASS
    assert all(R >= 1.0 for R in rep.ratios())
    for r in rep.rows:
        assert r["ratio_lo"] <= r["ratio"] <= r["ratio_hi"]


def test_harnack_inconclusive_when_denominator_vanishes():
    K = (np.array([[0.5]]), np.array([[1.0]]))
    rep = harnack_ratio_scan(None, K, free_transport(), Interval(-1.0, 1.0), [0.2], 1.0, 100,
                             IntegratorConfig(dt=1e-2, max_time=5.0))
    assert rep.outcome == INCONCLUSIVE and rep.rows[0]["ratio"] is None
    assert rep.exit_status == 3


def test_dobrushin_probe():
    K = PhaseBox([-0.5], [0.5], [-0.5], [0.5])
    cfg = IntegratorConfig(dt=1e-2, max_time=5.0)
    ref = Binning.window([-2.0], [2.0], [-2.0], [2.0], 4)
    rep = dobrushin_probe(K, build_model("brownian-momentum"), FullSpace(1), 1.0, 400, cfg,
                          reference=ref)
    assert rep.outcome == PASS and 0 < rep.C1 <= 1
    assert sum(rep.nu) == pytest.approx(1.0)
    one = dobrushin_probe((np.array([[0.0]]), np.array([[0.0]])),
                          build_model("brownian-momentum"), FullSpace(1), 1.0, 400, cfg,
                          reference=ref)
    # one start: C1 is just its mass in the window, and more starts can only lower it
    assert one.C1 == pytest.approx(sum(one.bin_minima)) and one.C1 >= rep.C1
    free = dobrushin_probe(K, free_transport(), FullSpace(1), 1.0, 10, cfg)
    assert free.outcome == INCONCLUSIVE and free.C1 == 0.0


def test_f2_probe_with_constant_psi_bounds_survival():
    K = PhaseBox([-1.0], [1.0], [-1.0], [1.0])
    starts = (np.array([[3.0], [0.0]]), np.array([[0.0], [3.0]]))
    cfg = IntegratorConfig(dt=1e-2, max_time=5.0)
    # with psi = 1 the estimate is a probability, bounded by exp(0) = 1
    rep = f2_lyapunov_probe(lambda q, p: np.ones(len(q)), K, harmonic_langevin(), FullSpace(1),
                            0.2, 0.0, starts, 200, cfg)
    assert rep.outcome == PASS
    assert all(0 <= r["estimate"] <= 1 for r in rep.rows)
    # a huge alpha1 makes the bound unattainable
    assert f2_lyapunov_probe(lambda q, p: np.ones(len(q)), K, harmonic_langevin(), FullSpace(1),
                             0.2, 50.0, starts, 200, cfg).outcome == FAIL
    with pytest.raises(ParameterError):
        f2_lyapunov_probe(lambda q, p: np.ones(len(q)), K, harmonic_langevin(), FullSpace(1),
                          0.2, 0.0, (np.array([[0.0]]), np.array([[0.0]])), 10, cfg)


def test_free_transport_sup_square_is_exact():
    cfg = IntegratorConfig(dt=1e-2, max_time=5.0)
    sup2, res = sup_square_moments(free_transport(), FullSpace(1), KineticState([0.5], [1.0]),
                                   2.0, 3, cfg)
    np.testing.assert_allclose(sup2, (0.5 + 2.0 * 1.0 + 1.0) ** 2, rtol=1e-12)
    np.testing.assert_allclose(res.q[:, 0], 2.5, rtol=1e-12)


def test_constant_coefficient_moments_match_closed_form():
    c, s, t, n = 0.8, 1.0, 1.0, 20000
    scan = moment_bound_scan({1: constant_coefficients([c], s)}, KineticState([0.0], [0.0]), t,
                             n, IntegratorConfig(dt=1e-3, max_time=5.0, seed=8))
    row = scan.rows[0]
    assert abs(row["terminal_p2"] - (c * c * t * t + s * s * t)) < 3 * row["terminal_p2_se"] + 5e-3
    assert abs(row["terminal_q2"] - (c * c * t**4 / 4 + s * s * t**3 / 3)) \
        < 3 * row["terminal_q2_se"] + 5e-3
    assert scan.outcome == PASS


def test_moment_band_fails_for_a_diverging_family():
    fam = {n: constant_coefficients([float(n)], 1.0) for n in (1, 4)}
    scan = moment_bound_scan(fam, KineticState([0.0], [0.0]), 1.0, 500,
                             IntegratorConfig(dt=1e-2, max_time=5.0))
    assert scan.outcome == FAIL


def test_short_time_scan():
    K = PhaseBox([-1.0], [1.0], [-1.0], [1.0])
    rep = short_time_scan(K, harmonic_langevin(), Interval(-2.0, 2.0), [0.02, 0.05, 0.2], 500,
                          IntegratorConfig(dt=1e-3, max_time=5.0), delta=0.5)
    assert rep.outcome == PASS
    probs = [r["max_exit_prob"] for r in rep.rows]
    assert probs == sorted(probs)
    # starting at distance 1 from the boundary with |p| <= 1, no exit before t = 0.05 is possible
    # without a large noise excursion
    assert rep.rows[1]["max_exit_prob"] < 0.01
