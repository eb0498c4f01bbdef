from __future__ import annotations

import math

import numpy as np
import pytest

from kinqsd import kernels
from kinqsd.domains import Ball, FullSpace, Interval
from kinqsd.errors import BlowUpError, DomainError, ParameterError
from kinqsd.integrate import (IntegratorConfig, SurvivalCurve, run_ensemble,
                              simulate_until_exit, step, survival_probability,
                              wilson_interval)
from kinqsd.model import (ForceField, KineticState, expression_model, free_transport,
                          harmonic_langevin, langevin_model)

needs_compiled = pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernels not built")


def test_free_transport_exit_time_is_exact():
    cfg = IntegratorConfig(dt=1e-3, max_time=2.0)
    summary, rec = simulate_until_exit(KineticState([0.5], [1.0]), free_transport(),
                                       Interval(-1.0, 1.0), cfg)
    assert rec is not None and rec.outgoing and rec.crossed_at_substep
    assert rec.exit_time == pytest.approx(0.5, abs=1e-12)
    assert rec.exit_state.q[0] == pytest.approx(1.0, abs=1e-12)
    assert not summary.survived


def test_free_transport_in_a_ball_and_tangential_survival():
    cfg = IntegratorConfig(dt=1e-2, max_time=3.0)
    O = Ball((0.0, 0.0), 1.0)
    _, rec = simulate_until_exit(KineticState([0.0, 0.0], [0.6, 0.8]), free_transport(2), O, cfg)
    assert rec.exit_time == pytest.approx(1.0, abs=1e-12)
    # a path that never reaches the boundary survives to the horizon
    summary, rec = simulate_until_exit(KineticState([0.0, 0.0], [0.0, 0.0]), free_transport(2),
                                       O, cfg)
    assert rec is None and summary.survived
    assert summary.final_state.t == pytest.approx(3.0)


def test_ou_momentum_moments_match_closed_form():
    # zero force: the splitting scheme samples the momentum OU process exactly
    gamma, noise, t = 1.3, 0.9, 1.0
    m = langevin_model(ForceField(0), gamma, noise, 1)
    cfg = IntegratorConfig(dt=0.01, seed=3)
    n = 20000
    res = run_ensemble(KineticState([0.0], [2.0]), m, FullSpace(1), cfg, n, horizon=t)
    p = res.p[:, 0]
    mean = 2.0 * math.exp(-gamma * t)
    var = noise**2 * (1 - math.exp(-2 * gamma * t)) / (2 * gamma)
    assert abs(p.mean() - mean) < 4 * math.sqrt(var / n)
    assert abs(p.var() - var) < 4 * var * math.sqrt(2.0 / n)


def test_step_uses_given_noise():
    m = langevin_model(ForceField(0), 0.0, 1.0, 1)
    cfg = IntegratorConfig(dt=0.25, scheme="euler-maruyama")
    s = step(KineticState([0.0], [1.0]), m, cfg, noise=[2.0])
    assert s.q[0] == pytest.approx(0.25)
    assert s.p[0] == pytest.approx(1.0 + 0.5 * 2.0)
    assert s.t == pytest.approx(0.25)
    with pytest.raises(ParameterError):
        step(KineticState([0.0], [1.0]), m, cfg, noise=[1.0, 2.0])


@needs_compiled
@pytest.mark.parametrize("scheme", ["langevin-splitting", "euler-maruyama"])
def test_compiled_and_numpy_backends_agree(scheme):
    m = harmonic_langevin()
    O = Interval(-2.0, 2.0)
    out = []
    for backend in ("compiled", "python"):
        cfg = IntegratorConfig(dt=1e-2, max_time=3.0, seed=9, scheme=scheme, backend=backend)
        out.append(run_ensemble(KineticState([0.0], [0.5]), m, O, cfg, 300, track=True))
    a, b = out
    np.testing.assert_array_equal(np.isfinite(a.exit_time), np.isfinite(b.exit_time))
    fin = np.isfinite(a.exit_time)
    np.testing.assert_allclose(a.exit_time[fin], b.exit_time[fin], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(a.q, b.q, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(a.p, b.p, rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(a.track, b.track, rtol=1e-9, atol=1e-9)


@needs_compiled
def test_results_do_not_depend_on_thread_count():
    m = harmonic_langevin()
    O = Interval(-2.0, 2.0)
    cfg = IntegratorConfig(dt=1e-3, max_time=2.0, seed=4)
    a = run_ensemble(KineticState([0.0], [0.0]), m, O, cfg, 2000, threads=1)
    b = run_ensemble(KineticState([0.0], [0.0]), m, O, cfg, 2000, threads=4)
    np.testing.assert_array_equal(a.exit_time, b.exit_time)
    np.testing.assert_array_equal(a.q, b.q)


def test_sample_paths_do_not_depend_on_ensemble_size():
    m = harmonic_langevin()
    O = Interval(-2.0, 2.0)
    cfg = IntegratorConfig(dt=1e-2, max_time=2.0, seed=4)
    a = run_ensemble(KineticState([0.0], [0.0]), m, O, cfg, 50)
    b = run_ensemble(KineticState([0.0], [0.0]), m, O, cfg, 10)
    np.testing.assert_array_equal(a.exit_time[:10], b.exit_time)


def test_blow_up_is_reported():
    m = expression_model(["p1 * p1 * p1"], [["1"]])
    cfg = IntegratorConfig(dt=0.1, max_time=50.0)
    with pytest.raises(BlowUpError) as exc:
        run_ensemble(KineticState([0.0], [3.0]), m, FullSpace(1), cfg, 4)
    assert exc.value.last_state is not None


def test_start_outside_domain_rejected():
    with pytest.raises(DomainError):
        run_ensemble(KineticState([3.0], [0.0]), harmonic_langevin(), Interval(-2, 2),
                     IntegratorConfig(), 2)


@pytest.mark.parametrize("kw", [{"dt": 0.0}, {"dt": -1e-3}, {"dt": float("nan")},
                                {"scheme": "rk4"}, {"crossing": "x"},
                                {"dt": 1.0, "max_time": 0.5}])
def test_bad_integrator_config(kw):
    with pytest.raises(ParameterError):
        IntegratorConfig(**kw)


def test_wilson_interval_contains_estimate():
    lo, hi = wilson_interval(np.array([0, 5, 10]), 10, 0.95)
    assert lo[0] == 0.0 and hi[2] == 1.0
    assert lo[1] < 0.5 < hi[1]


def test_survival_curve_is_nonincreasing():
    curve = survival_probability(KineticState([0.0], [0.0]), harmonic_langevin(),
                                 Interval(-1.0, 1.0), IntegratorConfig(dt=1e-2, max_time=4.0),
                                 2000, times=np.linspace(0, 4, 41))
    assert curve.p_hat[0] == 1.0
    assert np.all(np.diff(curve.p_hat) <= 0)
    assert np.all(curve.ci_lo <= curve.p_hat) and np.all(curve.p_hat <= curve.ci_hi)
    sc = SurvivalCurve.from_exit_times([0.5, 1.5, np.inf], [0.0, 1.0, 2.0])
    np.testing.assert_allclose(sc.p_hat, [1.0, 2 / 3, 1 / 3])
