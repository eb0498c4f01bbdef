"""Kinetic states, coefficient fields, compact sets and the built-in catalog.

Coefficient fields are vectorised: ``drift(q, p)`` maps arrays of shape
``(..., d)`` to ``(..., d)`` and ``diffusion(q, p)`` maps them to
``(..., d, d)``. Models of Langevin type (``F(q, p) = F0(q) - gamma p`` with
constant isotropic noise) additionally carry a :class:`LangevinForm`, which
enables the splitting scheme and the compiled kernels.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .domains import Region
from .errors import EvaluationError, ParameterError

# force codes shared with the compiled kernels
FORCE_ZERO = 0
FORCE_HARMONIC = 1
FORCE_DOUBLE_WELL = 2
FORCE_NONCONSERVATIVE = 3
FORCE_CONSTANT = 4


@dataclass(frozen=True)
class KineticState:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        q = np.atleast_1d(np.asarray(self.q, dtype=float)).copy()
        p = np.atleast_1d(np.asarray(self.p, dtype=float)).copy()
        if q.ndim != 1 or q.shape != p.shape:
            raise ParameterError("q and p must be vectors of the same dimension")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p)) and math.isfinite(self.t)):
            raise ParameterError("kinetic state must be finite")
        if self.t < 0:
            raise ParameterError("clock time must be nonnegative")
        q.setflags(write=False)
        p.setflags(write=False)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "t", float(self.t))

    @property
    def dim(self) -> int:
        return self.q.shape[0]

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.q, self.p])


@dataclass(frozen=True)
class Regularity:
    """Declared regularity and growth constants of a coefficient model.

    ``a`` and ``b`` may be ``None`` when only the local (bounded-in-position)
    assumptions are claimed, e.g. for super-linear confining forces.
    """

    alpha: float = 0.5
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 0.0
    a: float | None = 0.0
    b: float | None = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError("alpha must lie in (0, 1)")
        if not 0.0 < self.c1 <= self.c2:
            raise ParameterError("need 0 < c1 <= c2")
        if self.c3 < 0:
            raise ParameterError("c3 must be nonnegative")
        for name in ("a", "b"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise ParameterError(f"{name} must be nonnegative")

    def to_dict(self):
        return {k: getattr(self, k) for k in ("alpha", "c1", "c2", "c3", "a", "b")}


@dataclass(frozen=True)
class ForceField:
    """Position-only force F0(q) from a small closed family.

    ``potential``/``grad_potential``/``perturbation`` describe the
    decomposition F0 = -grad U - ell used by the Hamiltonian Lyapunov
    construction.
    """

    code: int
    params: tuple = ()

    def __call__(self, q):
        q = np.asarray(q, dtype=float)
        return -self.grad_potential(q) - self.perturbation(q)

    def potential(self, q):
        q = np.asarray(q, dtype=float)
        r2 = np.sum(q * q, axis=-1)
        if self.code == FORCE_HARMONIC:
            (omega,) = self.params
            return 0.5 * omega**2 * r2
        if self.code == FORCE_DOUBLE_WELL:
            h, q0 = self.params
            return h * (r2 - q0**2) ** 2
        if self.code == FORCE_NONCONSERVATIVE:
            kappa, omega, _ = self.params
            return 0.25 * kappa * r2**2 + 0.5 * omega**2 * r2
        if self.code == FORCE_CONSTANT:
            c = np.asarray(self.params)
            return -(q @ c)
        return np.zeros(q.shape[:-1])

    def grad_potential(self, q):
        q = np.asarray(q, dtype=float)
        r2 = np.sum(q * q, axis=-1, keepdims=True)
        if self.code == FORCE_HARMONIC:
            (omega,) = self.params
            return omega**2 * q
        if self.code == FORCE_DOUBLE_WELL:
            h, q0 = self.params
            return 4.0 * h * (r2 - q0**2) * q
        if self.code == FORCE_NONCONSERVATIVE:
            kappa, omega, _ = self.params
            return (kappa * r2 + omega**2) * q
        if self.code == FORCE_CONSTANT:
            return -np.broadcast_to(np.asarray(self.params, dtype=float), q.shape).copy()
        return np.zeros(q.shape)

    def perturbation(self, q):
        q = np.asarray(q, dtype=float)
        if self.code == FORCE_NONCONSERVATIVE:
            b = self.params[2]
            return b * q / (1.0 + np.linalg.norm(q, axis=-1, keepdims=True))
        return np.zeros(q.shape)

    def kernel_params(self):
        return np.asarray(self.params, dtype=float) if self.params else np.zeros(1)


@dataclass(frozen=True)
class LangevinForm:
    """F(q, p) = F0(q) - gamma p and sigma = noise * I."""

    force: ForceField
    gamma: float
    noise: float

    def __post_init__(self):
        if self.gamma < 0 or self.noise < 0:
            raise ParameterError("friction and noise must be nonnegative")

    @property
    def kT(self) -> float:
        if self.gamma == 0:
            raise ParameterError("temperature undefined without friction")
        return self.noise**2 / (2.0 * self.gamma)


@dataclass(frozen=True)
class CoefficientModel:
    drift: Callable
    diffusion: Callable
    dim: int
    metadata: Regularity = field(default_factory=Regularity)
    langevin: LangevinForm | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def evaluate(self, q, p):
        """Drift and diffusion with a finiteness check naming the first bad point."""
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        F = np.asarray(self.drift(q, p), dtype=float)
        S = np.asarray(self.diffusion(q, p), dtype=float)
        for arr, axes, label in ((F, 1, "drift"), (S, 2, "diffusion")):
            bad = ~np.all(np.isfinite(arr), axis=tuple(range(arr.ndim - axes, arr.ndim)))
            if np.any(bad):
                qb, pb = np.broadcast_arrays(q, p)
                i = int(np.flatnonzero(np.ravel(bad))[0])
                qq = qb.reshape(-1, self.dim)[i]
                pp = pb.reshape(-1, self.dim)[i]
                raise EvaluationError(
                    f"non-finite {label} at q={qq.tolist()}, p={pp.tolist()}",
                    point=(qq, pp))
        return F, S

    @property
    def kernel_ready(self) -> bool:
        return self.langevin is not None

    def describe(self) -> dict:
        return {"name": self.name, "params": dict(self.params), "dim": self.dim,
                "metadata": self.metadata.to_dict()}


def langevin_model(force: ForceField, gamma: float, noise: float, dim: int,
                   metadata: Regularity | None = None, name="langevin", params=None):
    form = LangevinForm(force, gamma, noise)

    def drift(q, p):
        return force(q) - gamma * np.asarray(p, dtype=float)

    eye = np.eye(dim)

    def diffusion(q, p):
        shape = np.broadcast_shapes(np.shape(q), np.shape(p))[:-1]
        return np.broadcast_to(noise * eye, shape + (dim, dim)).copy()

    if metadata is None:
        c = max(noise**2, 1e-300)
        metadata = Regularity(alpha=0.5, c1=c, c2=c, c3=0.0, a=None, b=None)
    return CoefficientModel(drift, diffusion, dim, metadata, form, name, dict(params or {}))


# --------------------------------------------------------------------------- catalog


def harmonic_langevin(omega=1.0, gamma=1.0, kT=0.5, dim=1):
    """Langevin dynamics in U(q) = omega^2 |q|^2 / 2 with friction gamma at temperature kT."""
    force = ForceField(FORCE_HARMONIC, (float(omega),))
    noise = math.sqrt(2.0 * gamma * kT)
    md = Regularity(alpha=0.5, c1=noise**2, c2=noise**2, c3=0.0, a=0.0,
                    b=max(omega**2, gamma))
    return langevin_model(force, gamma, noise, dim, md, "harmonic-langevin",
                          {"omega": omega, "gamma": gamma, "kT": kT, "dim": dim})


def double_well_langevin(h=1.0, q0=1.0, gamma=1.0, kT=0.3):
    """One-dimensional Langevin dynamics in U(q) = h (q^2 - q0^2)^2."""
    force = ForceField(FORCE_DOUBLE_WELL, (float(h), float(q0)))
    noise = math.sqrt(2.0 * gamma * kT)
    md = Regularity(alpha=0.5, c1=noise**2, c2=noise**2, c3=0.0, a=None, b=None)
    return langevin_model(force, gamma, noise, 1, md, "double-well-langevin",
                          {"h": h, "q0": q0, "gamma": gamma, "kT": kT})


def nonconservative_langevin(kappa=1.0, omega=0.0, ell_b=0.5, gamma=1.0, kT=0.5, dim=1,
                             alpha_drift=0.15, beta_drift=0.9):
    """U(q) = kappa |q|^4 / 4 + omega^2 |q|^2 / 2 and ell(q) = ell_b q / (1 + |q|).

    ``alpha_drift``/``beta_drift`` are the declared constants of the
    growth condition (grad U + ell) . q >= alpha (|q|^2 + U) + |ell|^2 / beta^2;
    they are checked, not trusted, by :func:`kinqsd.lyapunov.check_drift_condition`.
    """
    force = ForceField(FORCE_NONCONSERVATIVE, (float(kappa), float(omega), float(ell_b)))
    noise = math.sqrt(2.0 * gamma * kT)
    md = Regularity(alpha=0.5, c1=noise**2, c2=noise**2, c3=0.0, a=None, b=None)
    return langevin_model(force, gamma, noise, dim, md, "nonconservative-langevin",
                          {"kappa": kappa, "omega": omega, "ell_b": ell_b, "gamma": gamma,
                           "kT": kT, "dim": dim, "alpha_drift": alpha_drift,
                           "beta_drift": beta_drift})


def free_transport(dim=1):
    """F = 0 and sigma = 0: straight lines q(t) = q + t p."""
    md = Regularity(alpha=0.5, c1=1e-300, c2=1e-300, c3=0.0, a=0.0, b=0.0)
    return langevin_model(ForceField(FORCE_ZERO), 0.0, 0.0, dim, md, "free-transport",
                          {"dim": dim})


def brownian_momentum(noise=1.0, dim=1):
    """F = 0 and sigma = noise * I: integrated Brownian motion."""
    md = Regularity(alpha=0.5, c1=noise**2, c2=noise**2, c3=0.0, a=0.0, b=0.0)
    return langevin_model(ForceField(FORCE_ZERO), 0.0, noise, dim, md, "brownian-momentum",
                          {"noise": noise, "dim": dim})


def constant_coefficients(force=(0.0,), noise=1.0):
    """Constant drift vector and sigma = noise * I."""
    c = tuple(float(v) for v in np.atleast_1d(force))
    dim = len(c)
    md = Regularity(alpha=0.5, c1=max(noise**2, 1e-300), c2=max(noise**2, 1e-300), c3=0.0,
                    a=float(np.linalg.norm(c)), b=0.0)
    return langevin_model(ForceField(FORCE_CONSTANT, c), 0.0, noise, dim, md,
                          "constant-coefficients", {"force": list(c), "noise": noise})


def sign_drift(scale=1.0, noise=1.0, dim=1):
    """F(q, p) = scale * sign(p) componentwise: bounded, discontinuous at p = 0."""

    def drift(q, p):
        return scale * np.sign(np.asarray(p, dtype=float))

    eye = np.eye(dim)

    def diffusion(q, p):
        shape = np.broadcast_shapes(np.shape(q), np.shape(p))[:-1]
        return np.broadcast_to(noise * eye, shape + (dim, dim)).copy()

    md = Regularity(alpha=0.5, c1=noise**2, c2=noise**2, c3=0.0, a=abs(scale) * math.sqrt(dim),
                    b=0.0)
    return CoefficientModel(drift, diffusion, dim, md, None, "sign-drift",
                            {"scale": scale, "noise": noise, "dim": dim})


def holder_diffusion(exponent=0.5, dim=1, alpha=0.5, c3=1.0):
    """F = 0 and sigma = (1 + min(|p|, 1)^exponent) I."""

    eye = np.eye(dim)

    def drift(q, p):
        return np.zeros(np.broadcast_shapes(np.shape(q), np.shape(p)))

    def diffusion(q, p):
        r = np.minimum(np.linalg.norm(np.asarray(p, dtype=float), axis=-1), 1.0)
        s = 1.0 + r**exponent
        return s[..., None, None] * eye

    md = Regularity(alpha=alpha, c1=1.0, c2=4.0, c3=c3, a=0.0, b=0.0)
    return CoefficientModel(drift, diffusion, dim, md, None, "holder-diffusion",
                            {"exponent": exponent, "dim": dim, "alpha": alpha, "c3": c3})


_EXPR_NAMESPACE = {name: getattr(np, name) for name in (
    "sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sign", "tanh", "arctan",
    "minimum", "maximum", "where", "pi", "clip")}


def expression_model(drift, diffusion, metadata=None):
    """Model from string expressions in ``q1..qd`` and ``p1..pd``.

    ``drift`` is a list of d expressions and ``diffusion`` a d x d nested
    list. Expressions are evaluated with numpy functions only (no builtins);
    they come from trusted configuration files.
    """
    dim = len(drift)
    if len(diffusion) != dim or any(len(row) != dim for row in diffusion):
        raise ParameterError("diffusion must be a d x d list of expressions")
    code_f = [compile(str(e), "<drift>", "eval") for e in drift]
    code_s = [[compile(str(e), "<diffusion>", "eval") for e in row] for row in diffusion]

    def _ns(q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        ns = dict(_EXPR_NAMESPACE)
        for i in range(dim):
            ns[f"q{i + 1}"] = q[..., i]
            ns[f"p{i + 1}"] = p[..., i]
        return ns, np.broadcast_shapes(q.shape, p.shape)[:-1]

    def F(q, p):
        ns, shape = _ns(q, p)
        return np.stack([np.broadcast_to(eval(c, {"__builtins__": {}}, ns), shape)
                         for c in code_f], axis=-1).astype(float)

    def S(q, p):
        ns, shape = _ns(q, p)
        rows = [np.stack([np.broadcast_to(eval(c, {"__builtins__": {}}, ns), shape)
                          for c in row], axis=-1) for row in code_s]
        return np.stack(rows, axis=-2).astype(float)

    md = metadata if metadata is not None else Regularity(a=None, b=None)
    return CoefficientModel(F, S, dim, md, None, "expression",
                            {"drift": list(drift), "diffusion": [list(r) for r in diffusion]})


MODEL_CATALOG = {
    "harmonic-langevin": (harmonic_langevin, {
        "omega": (1.0, "harmonic frequency, U(q) = omega^2 |q|^2 / 2"),
        "gamma": (1.0, "friction"), "kT": (0.5, "temperature"), "dim": (1, "dimension")}),
    "double-well-langevin": (double_well_langevin, {
        "h": (1.0, "barrier height, U(q) = h (q^2 - q0^2)^2"), "q0": (1.0, "well position"),
        "gamma": (1.0, "friction"), "kT": (0.3, "temperature")}),
    "nonconservative-langevin": (nonconservative_langevin, {
        "kappa": (1.0, "quartic coefficient of U"), "omega": (0.0, "quadratic coefficient of U"),
        "ell_b": (0.5, "amplitude of ell(q) = ell_b q / (1 + |q|)"),
        "gamma": (1.0, "friction"), "kT": (0.5, "temperature"), "dim": (1, "dimension"),
        "alpha_drift": (0.15, "declared alpha of the growth condition on U and ell"),
        "beta_drift": (0.9, "declared beta of the growth condition (0 <= beta < gamma)")}),
    "free-transport": (free_transport, {"dim": (1, "dimension")}),
    "brownian-momentum": (brownian_momentum, {
        "noise": (1.0, "sigma = noise * I, F = 0"), "dim": (1, "dimension")}),
    "constant-coefficients": (constant_coefficients, {
        "force": ([0.0], "constant drift vector"), "noise": (1.0, "sigma = noise * I")}),
    "sign-drift": (sign_drift, {
        "scale": (1.0, "F(q,p) = scale * sign(p)"), "noise": (1.0, "sigma = noise * I"),
        "dim": (1, "dimension")}),
    "holder-diffusion": (holder_diffusion, {
        "exponent": (0.5, "sigma = (1 + min(|p|,1)^exponent) I"), "dim": (1, "dimension"),
        "alpha": (0.5, "declared Hoelder exponent"), "c3": (1.0, "declared Hoelder constant")}),
}


def build_model(name: str, **params) -> CoefficientModel:
    try:
        builder, schema = MODEL_CATALOG[name]
    except KeyError:
        raise ParameterError(f"unknown catalog model {name!r}") from None
    unknown = set(params) - set(schema)
    if unknown:
        raise ParameterError(f"unknown parameters for {name}: {sorted(unknown)}")
    return builder(**params)


# --------------------------------------------------------------------------- compact sets


@dataclass(frozen=True)
class ExhaustionSet:
    """K_k = {(q, p) in D : |q| <= k, d(q) >= 1/k, |p| <= k}."""

    region: Region
    k: float

    def __post_init__(self):
        if self.k < 1:
            raise ParameterError("exhaustion index must be >= 1")

    def contains(self, q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        return ((np.linalg.norm(q, axis=-1) <= self.k)
                & (self.region.signed_distance(q) >= 1.0 / self.k)
                & (np.linalg.norm(p, axis=-1) <= self.k))

    def grid(self, n_per_axis=5):
        d = self.region.dim
        side = np.linspace(-self.k, self.k, n_per_axis)
        pts = np.stack(np.meshgrid(*([side] * (2 * d)), indexing="ij"), -1).reshape(-1, 2 * d)
        keep = self.contains(pts[:, :d], pts[:, d:])
        return pts[keep, :d], pts[keep, d:]


@dataclass(frozen=True)
class PhaseBox:
    """Closed product of boxes [q_lo, q_hi] x [p_lo, p_hi]."""

    q_lo: tuple
    q_hi: tuple
    p_lo: tuple
    p_hi: tuple

    def __post_init__(self):
        for name in ("q_lo", "q_hi", "p_lo", "p_hi"):
            object.__setattr__(self, name, tuple(float(v) for v in np.atleast_1d(getattr(self, name))))
        if not (len(self.q_lo) == len(self.q_hi) == len(self.p_lo) == len(self.p_hi)):
            raise ParameterError("phase box bounds must share a dimension")

    @property
    def dim(self):
        return len(self.q_lo)

    @property
    def lo(self):
        return np.asarray(self.q_lo + self.p_lo)

    @property
    def hi(self):
        return np.asarray(self.q_hi + self.p_hi)

    def contains(self, q, p):
        x = np.concatenate([np.asarray(q, dtype=float), np.asarray(p, dtype=float)], axis=-1)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def inside_domain(self, region: Region) -> bool:
        d = self.dim
        corners = np.stack(np.meshgrid(*[[a, b] for a, b in zip(self.q_lo, self.q_hi)],
                                       indexing="ij"), -1).reshape(-1, d)
        return bool(np.all(region.contains(corners)))

    def grid(self, n_per_axis=5):
        axes = [np.linspace(a, b, n_per_axis) if b > a else np.array([a])
                for a, b in zip(self.lo, self.hi)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2 * self.dim)
        return pts[:, :self.dim], pts[:, self.dim:]

    def to_dict(self):
        return {"q_lo": list(self.q_lo), "q_hi": list(self.q_hi),
                "p_lo": list(self.p_lo), "p_hi": list(self.p_hi)}
