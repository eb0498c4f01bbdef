from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kinqsd import kernels
from kinqsd.domains import FullSpace, Interval
from kinqsd.errors import ExtinctionError, InsufficientSurvivorsError, NonExponentialRegimeError, ParameterError
from kinqsd.integrate import IntegratorConfig, SurvivalCurve
from kinqsd.model import KineticState, free_transport, harmonic_langevin
from kinqsd.qsd import (Binning, QsdEstimate, block_bootstrap_se, conditioned_mc,
                        estimate_decay_rate, fleming_viot_run, normalise, start_from_estimate,
                        tv_distance)


def _estimate(binning, weights):
    return QsdEstimate(binning, np.asarray(weights, dtype=float), 0.0, 0.0, 0.0, 2, 1.0, 0.1)


def test_binning_counts_and_overflow():
    b = Binning.window([-1.0], [1.0], [-2.0], [2.0], nb=[2, 4])
    assert b.n_bins == 8
    c = b.counts(np.array([[-0.5], [0.5], [5.0]]), np.array([[-1.5], [1.5], [0.0]]))
    assert c.sum() == 3 and c[-1] == 1
    assert c[0 * 4 + 0] == 1 and c[1 * 4 + 3] == 1


def test_tv_distance_properties():
    w = normalise([1, 2, 3, 0])
    assert tv_distance(w, w) == 0.0
    assert tv_distance([1, 0], [0, 1]) == 1.0
    with pytest.raises(ParameterError):
        normalise([0, 0])


def test_fleming_viot_without_boundary_never_kills():
    est = fleming_viot_run(KineticState([0.0], [0.0]), harmonic_langevin(), FullSpace(1), 100,
                           IntegratorConfig(dt=1e-2, max_time=2.0), burn_in=1.0)
    assert est.kill_count == 0
    assert est.lambda0_hat == 0.0 and est.lambda0_se == 0.0
    assert est.weights.sum() == pytest.approx(1.0)


def test_fleming_viot_rebirth_bookkeeping():
    # particle 0 crosses q = 1 at t = 0.45 and is reborn on particle 1, which never moves
    initial = (np.array([[0.55], [0.0]]), np.array([[1.0], [0.0]]))
    est = fleming_viot_run(initial, free_transport(), Interval(-1.0, 1.0), 2,
                           IntegratorConfig(dt=0.1, max_time=2.0), burn_in=1.0,
                           keep_ensemble=True)
    assert est.kill_count == 1
    assert int(np.argmax(est.kill_series)) == 4  # the step (0.4, 0.5]
    np.testing.assert_array_equal(est.ensemble.q, [[0.0], [0.0]])
    np.testing.assert_array_equal(est.ensemble.p, [[0.0], [0.0]])
    assert est.lambda0_hat == 0.0


def test_fleming_viot_extinction():
    initial = (np.array([[0.55], [-0.55]]), np.array([[1.0], [-1.0]]))
    with pytest.raises(ExtinctionError) as exc:
        fleming_viot_run(initial, free_transport(), Interval(-1.0, 1.0), 2,
                         IntegratorConfig(dt=0.1, max_time=2.0))
    assert exc.value.time == pytest.approx(0.5)


def test_fleming_viot_mass_and_rate_sanity():
    est = fleming_viot_run(KineticState([0.0], [0.0]), harmonic_langevin(), Interval(-1.0, 1.0),
                           500, IntegratorConfig(dt=1e-2, max_time=6.0, seed=2), burn_in=2.0)
    assert est.weights.sum() == pytest.approx(1.0)
    assert est.series_counts.sum(axis=1).min() > 0
    assert 0 < est.lambda0_hat < 5 and est.lambda0_se > 0
    # every histogram row holds the N particles once per recorded step
    per_row = est.series_counts.sum(axis=1)
    assert np.all(per_row == per_row[0])


@pytest.mark.skipif(not kernels.HAVE_COMPILED, reason="compiled kernels not built")
def test_fleming_viot_backends_agree():
    out = []
    for backend in ("compiled", "python"):
        cfg = IntegratorConfig(dt=1e-2, max_time=2.0, seed=5, backend=backend)
        out.append(fleming_viot_run(KineticState([0.0], [0.0]), harmonic_langevin(),
                                    Interval(-1.0, 1.0), 64, cfg, burn_in=0.5,
                                    keep_ensemble=True))
    a, b = out
    assert a.kill_count == b.kill_count
    np.testing.assert_allclose(a.ensemble.q, b.ensemble.q, atol=1e-9)
    np.testing.assert_array_equal(a.weights, b.weights)


def test_conditioned_mc_at_time_zero_is_the_initial_law():
    b = Binning.window([-1.0], [1.0], [-1.0], [1.0], nb=2)
    law = conditioned_mc(KineticState([0.5], [0.5]), harmonic_langevin(), Interval(-1.0, 1.0),
                         0.0, 10, IntegratorConfig(), binning=b)
    assert law.survival_fraction == 1.0
    np.testing.assert_array_equal(law.weights, [0, 0, 0, 1, 0])


def test_conditioned_mc_refuses_hopeless_runs():
    with pytest.raises(InsufficientSurvivorsError) as exc:
        conditioned_mc(KineticState([0.5], [1.0]), free_transport(), Interval(-1.0, 1.0), 1.0,
                       5000, IntegratorConfig(dt=0.1, max_time=2.0))
    assert exc.value.survival_fraction == 0.0


def test_decay_rate_of_exact_exponential():
    t = np.linspace(0, 20, 201)
    est = estimate_decay_rate((t, np.exp(-0.7 * t)))
    assert est.lambda0_hat == pytest.approx(0.7, abs=1e-6)


def test_decay_rate_picks_the_slow_mode_after_burn_in():
    t = np.linspace(0, 20, 201)
    est = estimate_decay_rate((t, 0.5 * np.exp(-0.3 * t) + 0.5 * np.exp(-1.5 * t)))
    assert est.lambda0_hat == pytest.approx(0.3, rel=1e-3)
    assert est.burn_in > 0


def test_decay_rate_of_sampled_exponential_within_error():
    et = np.random.default_rng(0).exponential(1 / 0.8, size=20000)
    est = estimate_decay_rate(SurvivalCurve.from_exit_times(et, np.linspace(0, 6, 121)))
    assert abs(est.lambda0_hat - 0.8) < 4 * est.stderr
    assert 0 < est.stderr < 0.05


def test_decay_rate_needs_points():
    with pytest.raises(NonExponentialRegimeError):
        estimate_decay_rate((np.linspace(0, 1, 5), np.exp(-np.linspace(0, 1, 5))))


def test_start_from_estimate_single_bin_is_uniform():
    b = Binning.window([0.0], [2.0], [1.0], [3.0], nb=1)
    q, p = start_from_estimate(_estimate(b, [1.0, 0.0]), seed=1)(4000)
    assert q.min() >= 0 and q.max() < 2 and p.min() >= 1 and p.max() < 3
    assert abs(q.mean() - 1.0) < 0.05 and abs(p.mean() - 2.0) < 0.05


@given(w=st.floats(0.05, 0.95))
def test_start_from_estimate_bin_frequencies(w):
    b = Binning.window([0.0], [2.0], [0.0], [1.0], nb=[2, 1])
    q, _ = start_from_estimate(_estimate(b, [w, 1 - w, 0.0]), seed=3)(4000)
    frac = float((q[:, 0] < 1.0).mean())
    assert abs(frac - w) < 4 * np.sqrt(w * (1 - w) / 4000)


def test_start_from_estimate_respects_region_and_empty_histograms():
    b = Binning.window([-1.0], [1.0], [-1.0], [1.0], nb=1)
    q, _ = start_from_estimate(_estimate(b, [1.0, 0.0]), region=Interval(0.0, 1.0))(500)
    assert np.all(q > 0)
    with pytest.raises(ParameterError):
        start_from_estimate(_estimate(b, [0.0, 1.0]))


def test_block_bootstrap_se_scales():
    k = np.full(50, 10.0)
    e = np.full(50, 100.0)
    assert block_bootstrap_se(k, e) == pytest.approx(0.0, abs=1e-15)
    k2 = np.random.default_rng(0).poisson(10, 200).astype(float)
    se = block_bootstrap_se(k2, np.full(200, 100.0))
    assert se == pytest.approx(np.sqrt(10) / 100 / np.sqrt(200), rel=0.3)
