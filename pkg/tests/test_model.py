from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kinqsd.domains import Interval
from kinqsd.errors import EvaluationError, ParameterError
from kinqsd.model import (MODEL_CATALOG, ExhaustionSet, KineticState, PhaseBox, Regularity,
                          build_model, double_well_langevin, expression_model,
                          harmonic_langevin, nonconservative_langevin)

FORCES = [harmonic_langevin(omega=1.7, dim=2).langevin.force,
          double_well_langevin(h=0.8, q0=1.2).langevin.force,
          nonconservative_langevin(kappa=1.3, omega=0.4, ell_b=0.6, dim=2).langevin.force,
          build_model("constant-coefficients", force=[0.5, -1.0]).langevin.force]


@pytest.mark.parametrize("force", FORCES, ids=lambda f: f"code{f.code}")
@given(xs=st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_grad_potential_matches_finite_differences(force, xs):
    d = 1 if force.code == 2 else 2
    q = np.array(xs[:d])
    h = 1e-6
    fd = np.array([(force.potential(q + h * e) - force.potential(q - h * e)) / (2 * h)
                   for e in np.eye(d)])
    np.testing.assert_allclose(force.grad_potential(q), fd, rtol=1e-6, atol=1e-6)


@pytest.mark.parametrize("force", FORCES, ids=lambda f: f"code{f.code}")
def test_force_is_minus_gradient_minus_perturbation(force):
    d = 1 if force.code == 2 else 2
    q = np.random.default_rng(0).normal(size=(50, d))
    np.testing.assert_allclose(force(q), -force.grad_potential(q) - force.perturbation(q))


def test_langevin_drift_and_diffusion():
    m = harmonic_langevin(omega=2.0, gamma=0.5, kT=0.4)
    q, p = np.array([[0.3]]), np.array([[-1.0]])
    F, S = m.evaluate(q, p)
    assert F[0, 0] == pytest.approx(-4.0 * 0.3 + 0.5)
    assert S[0, 0, 0] ** 2 == pytest.approx(2 * 0.5 * 0.4)
    assert m.langevin.kT == pytest.approx(0.4)


def test_every_catalog_model_builds_with_defaults():
    for name, (builder, schema) in MODEL_CATALOG.items():
        m = build_model(name)
        assert m.name == name
        assert builder.__doc__
        assert all(len(v) == 2 for v in schema.values())
        x = np.zeros((3, m.dim))
        F, S = m.evaluate(x, x + 0.1)
        assert F.shape == (3, m.dim) and S.shape == (3, m.dim, m.dim)


def test_unknown_model_or_parameter_rejected():
    with pytest.raises(ParameterError):
        build_model("nope")
    with pytest.raises(ParameterError, match="colour"):
        build_model("harmonic-langevin", colour=1)


def test_expression_model_and_bad_points():
    m = expression_model(["-q1 + sin(p1)"], [["1 + 0*q1"]])
    F, S = m.evaluate(np.array([[1.0]]), np.array([[0.0]]))
    assert F[0, 0] == pytest.approx(-1.0) and S[0, 0, 0] == 1.0
    bad = expression_model(["log(q1)"], [["1"]])
    with pytest.raises(EvaluationError) as exc:
        bad.evaluate(np.array([[1.0], [-1.0]]), np.zeros((2, 1)))
    assert exc.value.point[0][0] == -1.0


def test_state_and_metadata_validation():
    with pytest.raises(ParameterError):
        KineticState([0.0], [0.0, 1.0])
    with pytest.raises(ParameterError):
        KineticState([np.nan], [0.0])
    with pytest.raises(ParameterError):
        Regularity(alpha=1.0)
    with pytest.raises(ParameterError):
        Regularity(c1=2.0, c2=1.0)


@given(k=st.floats(1, 6), dk=st.floats(0, 4))
def test_exhaustion_sets_are_nested(k, dk):
    O = Interval(-2.0, 3.0)
    small, big = ExhaustionSet(O, k), ExhaustionSet(O, k + dk)
    x = np.random.default_rng(1).uniform(-4, 4, size=(400, 2))
    inside_small = small.contains(x[:, :1], x[:, 1:])
    assert np.all(big.contains(x[:, :1], x[:, 1:])[inside_small])
    assert np.all(O.contains(x[inside_small, :1]))


def test_phase_box_grid_and_contains():
    box = PhaseBox([-1.0], [1.0], [-2.0], [2.0])
    q, p = box.grid(5)
    assert len(q) == 25 and box.contains(q, p).all()
    assert box.inside_domain(Interval(-2.0, 2.0))
    assert not box.inside_domain(Interval(-0.5, 2.0))
