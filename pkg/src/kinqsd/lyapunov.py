"""Generator, Lyapunov constructions and grid verification of drift inequalities.

The generator of dq = p dt, dp = F dt + sigma dB acting on f(q, p) is

    L f = p . grad_q f + F . grad_p f + 1/2 (sigma sigma^T) : hess_p f.

Two constructions are provided:

* a bounded function on bounded position domains,
  phi = beta - (q . p / |p|) g(|p|) with beta = 1 + sup_O |q|;
* powers of a shifted Hamiltonian for Langevin forces
  F = -grad U - ell - gamma p.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import linalg

from .domains import Region, interior_grid
from .errors import ConstructionError, DomainError, EvaluationError, ParameterError
from .model import CoefficientModel, ForceField, KineticState, langevin_model

ANALYTIC_TOL = 1e-8
FD_TOL = 1e-4


# --------------------------------------------------------------------------- test functions


@dataclass(frozen=True)
class TestFunction:
    """Scalar field on phase space with momentum Hessian and gradients.

    All callables take ``q, p`` of shape ``(..., d)``. When only ``value`` is
    given, derivatives fall back to central finite differences.
    """

    __test__ = False  # keep pytest from collecting this class

    value: Callable
    grad_q: Callable | None = None
    grad_p: Callable | None = None
    hess_p: Callable | None = None
    name: str = "f"
    fd_step: float = 1e-4

    @property
    def analytic(self) -> bool:
        return None not in (self.grad_q, self.grad_p, self.hess_p)

    def __call__(self, q, p):
        return np.asarray(self.value(np.asarray(q, float), np.asarray(p, float)), dtype=float)

    def derivatives(self, q, p):
        """Return (grad_q, grad_p, hess_p), analytic when available."""
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        if self.analytic:
            return (np.asarray(self.grad_q(q, p), float), np.asarray(self.grad_p(q, p), float),
                    np.asarray(self.hess_p(q, p), float))
        return fd_derivatives(self.value, q, p, self.fd_step)

    def fd(self, step=None) -> "TestFunction":
        """Copy of this function with finite-difference derivatives."""
        return TestFunction(self.value, None, None, None, self.name + "[fd]",
                            self.fd_step if step is None else step)


def fd_derivatives(f, q, p, h=1e-4):
    """Central differences with step ``h * max(1, |coordinate|)``."""
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    d = q.shape[-1]
    gq = np.empty(q.shape)
    gp = np.empty(p.shape)
    hp = np.empty(p.shape + (d,))
    f0 = np.asarray(f(q, p), dtype=float)
    hq = h * np.maximum(1.0, np.abs(q))
    hh = h * np.maximum(1.0, np.abs(p))
    for i in range(d):
        e = np.zeros(d)
        e[i] = 1.0
        dq = hq[..., i:i + 1] * e
        gq[..., i] = (f(q + dq, p) - f(q - dq, p)) / (2 * hq[..., i])
        dp = hh[..., i:i + 1] * e
        fp, fm = f(q, p + dp), f(q, p - dp)
        gp[..., i] = (fp - fm) / (2 * hh[..., i])
        hp[..., i, i] = (fp - 2 * f0 + fm) / hh[..., i] ** 2
        for j in range(i):
            ej = np.zeros(d)
            ej[j] = 1.0
            dpj = hh[..., j:j + 1] * ej
            mixed = (f(q, p + dp + dpj) - f(q, p + dp - dpj) - f(q, p - dp + dpj)
                     + f(q, p - dp - dpj)) / (4 * hh[..., i] * hh[..., j])
            hp[..., i, j] = hp[..., j, i] = mixed
    return gq, gp, hp


def _points(x, p=None):
    if isinstance(x, KineticState):
        return x.q[None, :], x.p[None, :], True
    q = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float)
    scalar = q.ndim == 1
    return np.atleast_2d(q), np.atleast_2d(p), scalar


def generator_terms(model: CoefficientModel, f: TestFunction, q, p):
    """The three generator terms (transport, drift, diffusion) separately."""
    F, S = model.evaluate(q, p)
    gq, gp, hp = f.derivatives(q, p)
    a = np.einsum("...ik,...jk->...ij", S, S)
    t1 = np.sum(p * gq, axis=-1)
    t2 = np.sum(F * gp, axis=-1)
    t3 = 0.5 * np.sum(a * hp, axis=(-2, -1))
    for name, t in (("transport", t1), ("drift", t2), ("diffusion", t3)):
        if not np.all(np.isfinite(t)):
            i = int(np.flatnonzero(~np.isfinite(np.ravel(t)))[0])
            raise EvaluationError(f"non-finite {name} term of L f",
                                  point=(np.reshape(q, (-1, q.shape[-1]))[i],
                                         np.reshape(p, (-1, p.shape[-1]))[i]))
    return t1, t2, t3


def generator_apply(model: CoefficientModel, f: TestFunction, x, p=None,
                    region: Region | None = None):
    """L f at a KineticState or at arrays ``(q, p)`` of points.

    With ``region`` given, every position must lie strictly inside it.
    """
    q, p, scalar = _points(x, p)
    if region is not None and not np.all(region.contains(q)):
        raise DomainError("generator evaluated outside the open domain")
    t1, t2, t3 = generator_terms(model, f, q, p)
    out = t1 + t2 + t3
    return float(out[0]) if scalar else out


# --------------------------------------------------------------------------- reports


@dataclass
class DriftReport:
    inequality: str
    grid_spec: dict
    worst_slacks: list
    passed: bool
    tolerances: dict
    max_slack: float
    n_points: int
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"inequality": self.inequality, "grid_spec": self.grid_spec,
                "worst_slacks": self.worst_slacks, "passed": self.passed,
                "tolerances": self.tolerances, "max_slack": self.max_slack,
                "n_points": self.n_points, **self.extra}

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _worst(points, slack, scale, k=3):
    order = np.argsort(-(slack / scale), kind="stable")[:k]
    return [([float(v) for v in points[i]], float(slack[i])) for i in order]


def verify_drift_inequality(phi: TestFunction, model: CoefficientModel, lam: float, D_set,
                            c_const: float, grid, region: Region | None = None,
                            tol: float | None = None, label="L phi <= -lam phi + c 1_D",
                            grid_spec=None) -> DriftReport:
    """Pointwise slack L phi + lam phi - c 1_D on a grid of (q, p) points.

    ``D_set`` is a predicate ``(q, p) -> bool array`` or ``None`` for the empty
    set. Passes iff every slack is at most ``tol * (1 + |phi|)``; the default
    tolerance depends on whether phi has analytic derivatives.
    """
    q, p = (np.atleast_2d(np.asarray(a, dtype=float)) for a in grid)
    if tol is None:
        tol = ANALYTIC_TOL if phi.analytic else FD_TOL
    Lphi = generator_apply(model, phi, q, p, region=region)
    val = phi(q, p)
    ind = np.zeros(len(q)) if D_set is None else np.asarray(D_set(q, p), dtype=float)
    slack = Lphi + lam * val - c_const * ind
    scale = 1.0 + np.abs(val)
    passed = bool(np.all(slack <= tol * scale))
    pts = np.concatenate([q, p], axis=1)
    spec = {"n_points": int(len(q))} if grid_spec is None else dict(grid_spec)
    return DriftReport(label, spec, _worst(pts, slack, scale), passed,
                       {"relative": tol, "analytic": phi.analytic},
                       float(np.max(slack / scale)), int(len(q)),
                       {"lambda": lam, "c": c_const})


# --------------------------------------------------------------------------- bounded domains


def bridge(rho):
    """C^2 function equal to rho on (0, 1/2) and to 1 on [1, inf).

    On [1/2, 1] it is the quintic Hermite interpolant in u = 2 rho - 1.
    Returns (g, g', g'').
    """
    rho = np.asarray(rho, dtype=float)
    u = np.clip(2.0 * rho - 1.0, 0.0, 1.0)
    P = u + 4 * u**3 - 7 * u**4 + 3 * u**5
    dP = 1 + 12 * u**2 - 28 * u**3 + 15 * u**4
    d2P = 24 * u - 84 * u**2 + 60 * u**3
    low = rho < 0.5
    high = rho >= 1.0
    g = np.where(low, rho, np.where(high, 1.0, 0.5 + 0.5 * P))
    g1 = np.where(low, 1.0, np.where(high, 0.0, dP))
    g2 = np.where(low, 0.0, np.where(high, 0.0, 2.0 * d2P))
    return g, g1, g2


def _bridge_ratio(r):
    """s = g(r) / r and its first two derivatives, finite at r = 0."""
    g, g1, g2 = bridge(r)
    small = r < 0.5
    rr = np.where(small, 1.0, r)
    s = np.where(small, 1.0, g / rr)
    s1 = np.where(small, 0.0, g1 / rr - g / rr**2)
    s2 = np.where(small, 0.0, g2 / rr - 2 * g1 / rr**2 + 2 * g / rr**3)
    return s, s1, s2


def bounded_test_function(beta: float) -> TestFunction:
    """phi(q, p) = beta - (q . p) g(|p|) / |p| (and beta at p = 0), analytic derivatives."""

    def value(q, p):
        r = np.linalg.norm(p, axis=-1)
        s, _, _ = _bridge_ratio(r)
        return beta - np.sum(q * p, axis=-1) * s

    def grad_q(q, p):
        s, _, _ = _bridge_ratio(np.linalg.norm(p, axis=-1))
        return -s[..., None] * p

    def grad_p(q, p):
        r = np.linalg.norm(p, axis=-1)
        s, s1, _ = _bridge_ratio(r)
        qp = np.sum(q * p, axis=-1)
        rr = np.where(r >= 0.5, r, 1.0)  # s1 = s2 = 0 below 1/2; avoids |p|^3 underflow
        return -(s[..., None] * q + (qp * s1 / rr)[..., None] * p)

    def hess_p(q, p):
        d = p.shape[-1]
        r = np.linalg.norm(p, axis=-1)
        s, s1, s2 = _bridge_ratio(r)
        qp = np.sum(q * p, axis=-1)
        rr = np.where(r >= 0.5, r, 1.0)  # s1 = s2 = 0 below 1/2; avoids |p|^3 underflow
        eye = np.eye(d)
        qpT = q[..., :, None] * p[..., None, :]
        ppT = p[..., :, None] * p[..., None, :]
        a = (s1 / rr)[..., None, None]
        term1 = a * (qpT + np.swapaxes(qpT, -1, -2))
        term2 = qp[..., None, None] * ((s2 / rr**2)[..., None, None] * ppT
                                       + (s1[..., None, None]) * (eye / rr[..., None, None]
                                                                   - ppT / rr[..., None, None]**3))
        return -(term1 + term2)

    return TestFunction(value, grad_q, grad_p, hess_p, "bounded-phi")


def shell_grid(region: Region, radii, n_q=64, n_dirs=16):
    """Points (q, p) with q on an interior grid and |p| in ``radii``."""
    q = interior_grid(region, n_q)
    d = region.dim
    if d == 1:
        dirs = np.array([[1.0], [-1.0]])
    elif d == 2:
        a = 2 * np.pi * np.arange(n_dirs) / n_dirs
        dirs = np.stack([np.cos(a), np.sin(a)], axis=1)
    else:
        from .rng import StreamRNG
        z = StreamRNG(0, 0).standard_normal(n_dirs * d).reshape(n_dirs, d)
        dirs = np.concatenate([np.eye(d), -np.eye(d), z / np.linalg.norm(z, axis=1,
                                                                         keepdims=True)])
    pv = (np.asarray(radii, dtype=float)[:, None, None] * dirs[None]).reshape(-1, d)
    qq = np.repeat(q, len(pv), axis=0)
    pp = np.tile(pv, (len(q), 1))
    return qq, pp


@dataclass
class BoundedDomainLyapunov:
    region: Region
    beta: float
    p_a: float
    lam: float
    c_lambda: float
    margin: float = 1.1
    shell_report: dict = field(default_factory=dict)

    @property
    def p0(self) -> float:
        return p0_of(self.p_a, self.lam, self.beta)

    @property
    def phi(self) -> TestFunction:
        return bounded_test_function(self.beta)

    def in_D_lambda(self, q, p):
        return (np.linalg.norm(np.asarray(p, float), axis=-1) <= self.p0) & self.region.contains(q)

    def to_dict(self):
        return {"beta": self.beta, "p_a": self.p_a, "lambda": self.lam, "p0": self.p0,
                "c_lambda": self.c_lambda, "margin": self.margin,
                "region": self.region.to_dict(), "shell_report": self.shell_report}


def p0_of(p_a, lam, beta):
    return 1.0 + p_a + 4.0 * lam * beta


def bounded_lyapunov_build(domain: Region, model: CoefficientModel, lam: float,
                           p_scan_max: float = 1024.0, n_q: int = 64, n_dirs: int = 16,
                           n_radii: int = 12, n_p: int = 41, margin: float = 1.1):
    """Assemble the bounded-domain Lyapunov function for ``lam``.

    p_a is the smallest value of the geometric grid 1, 2, 4, ..., p_scan_max
    such that L phi <= -|p|/2 at every shell point with |p| >= p_a. The
    constant c_lambda is ``margin`` times the maximum of (L phi + lam phi)^+
    over a grid of D_lambda.
    """
    if not domain.bounded:
        raise ParameterError("bounded construction needs a bounded position domain")
    if lam <= 0:
        raise ParameterError("lambda must be positive")
    beta = 1.0 + float(domain.sup_norm())
    phi = bounded_test_function(beta)
    cands = 2.0 ** np.arange(0, int(math.log2(p_scan_max)) + 1)
    radii = np.unique(np.concatenate(
        [cands] + [np.geomspace(a, 2 * a, n_radii + 1)[:-1] for a in cands[:-1]]))
    q, p = shell_grid(domain, radii, n_q, n_dirs)
    r = np.linalg.norm(p, axis=1)
    Lphi = generator_apply(model, phi, q, p)
    bad = Lphi > -0.5 * r
    worst = float(np.max(Lphi + 0.5 * r))
    viol_r = float(r[bad].max()) if bad.any() else 0.0
    ok = cands[cands > viol_r]
    report = {"candidates": cands.tolist(), "largest_violating_radius": viol_r,
              "max_of_Lphi_plus_half_p": worst, "n_points": int(len(q))}
    if not len(ok) or viol_r >= p_scan_max:
        i = int(np.argmax(Lphi + 0.5 * r))
        report["witness"] = [float(v) for v in np.concatenate([q[i], p[i]])]
        raise ConstructionError("no admissible p_a below the scan limit", report=report)
    p_a = float(ok[0])
    p0 = p0_of(p_a, lam, beta)
    qd, pd = D_lambda_grid(domain, p0, n_q, n_p)
    s = generator_apply(model, phi, qd, pd) + lam * phi(qd, pd)
    c_lam = margin * float(max(np.max(s), 0.0))
    report["p_a"] = p_a
    return BoundedDomainLyapunov(domain, beta, p_a, float(lam), c_lam, margin, report)


def D_lambda_grid(region: Region, p0, n_q=64, n_p=41):
    q = interior_grid(region, n_q)
    d = region.dim
    side = np.linspace(-p0, p0, n_p)
    pv = np.stack(np.meshgrid(*([side] * d), indexing="ij"), -1).reshape(-1, d)
    pv = pv[np.linalg.norm(pv, axis=1) <= p0]
    return np.repeat(q, len(pv), axis=0), np.tile(pv, (len(q), 1))


# --------------------------------------------------------------------------- Hamiltonian


def delta_feasible(gamma: float, alpha_drift: float, beta_drift: float) -> float:
    """Largest delta in (0, gamma) with delta (gamma - delta) / 2 <= alpha,
    2 delta / (gamma - delta) <= alpha and beta^2 <= gamma (gamma - delta).
    """
    if not gamma > 0 or not alpha_drift > 0:
        raise ParameterError("need gamma > 0 and alpha > 0")
    if beta_drift < 0 or beta_drift >= gamma:
        raise ParameterError("need 0 <= beta < gamma")
    upper = min(alpha_drift * gamma / (2.0 + alpha_drift), gamma - beta_drift**2 / gamma)
    disc = gamma * gamma - 8.0 * alpha_drift
    if disc <= 0:
        return upper
    r1 = 0.5 * (gamma - math.sqrt(disc))
    r2 = 0.5 * (gamma + math.sqrt(disc))
    if upper <= r1 or upper >= r2:
        return upper
    return r1


def n_for_lambda(lam: float, delta: float) -> int:
    """Smallest integer n >= 1 with n delta / 2 >= lam."""
    n = max(1, math.ceil(2.0 * lam / delta))
    while n > 1 and (n - 1) * delta / 2.0 >= lam:
        n -= 1
    while n * delta / 2.0 < lam:
        n += 1
    return n


@dataclass
class DriftConditionReport:
    passed: bool
    worst_slack: float
    witness: list
    n_points: int
    slacks: np.ndarray

    def to_dict(self):
        return {"check": "(grad U + ell) . q >= alpha (|q|^2 + U) + |ell|^2 / beta^2",
                "worst_slack": self.worst_slack, "witness": self.witness,
                "passed": self.passed, "n_points": self.n_points}


def check_drift_condition(U, grad_U, ell, alpha_drift, beta_drift, grid, tol=1e-12):
    """Pointwise slack RHS - LHS of the growth condition on U and ell.

    Slack > tol * (1 + |LHS|) at any point is a failure. With beta = 0 the
    ell term is dropped, which is only admissible when ell vanishes on the grid.
    """
    q = np.atleast_2d(np.asarray(grid, dtype=float))
    gu = np.asarray(grad_U(q), dtype=float)
    el = np.asarray(ell(q), dtype=float)
    u = np.asarray(U(q), dtype=float)
    lhs = np.sum((gu + el) * q, axis=-1)
    l2 = np.sum(el * el, axis=-1)
    if beta_drift == 0:
        if np.any(l2 > 0):
            raise ParameterError("beta = 0 is only admissible when ell vanishes")
        ell_term = np.zeros_like(l2)
    else:
        ell_term = l2 / beta_drift**2
    rhs = alpha_drift * (np.sum(q * q, axis=-1) + u) + ell_term
    slack = rhs - lhs
    norm = slack / (1.0 + np.abs(lhs))
    i = int(np.argmax(norm))
    return DriftConditionReport(bool(np.all(norm <= tol)), float(slack[i]),
                                [float(v) for v in q[i]], len(q), slack)


def quadratic_constant(k: float) -> float:
    """Largest generalised eigenvalue of |p + k q|^2 against 1/2|p|^2 + k q.p + k^2|q|^2."""
    A = np.array([[k * k, k], [k, 1.0]])
    B = np.array([[k * k, 0.5 * k], [0.5 * k, 0.5]])
    return float(linalg.eigh(A, B, eigvals_only=True)[-1])


@dataclass
class HamiltonianLyapunov:
    force: ForceField
    gamma: float
    kT: float
    alpha_drift: float
    beta_drift: float
    delta: float
    n: int
    c: float
    lam: float
    dim: int = 1
    c_lambda: float = 0.0
    margin: float = 1.1
    drift_report: dict = field(default_factory=dict)

    @property
    def k(self):
        return 0.5 * (self.gamma - self.delta)

    @property
    def eps(self):
        return self.gamma * self.kT

    @property
    def R(self):
        """Sublevel threshold: B_n = {Hhat <= R}."""
        return 2.0 * (self.delta + self.dim * self.eps + self.c * self.eps * (self.n - 1)) / self.delta

    @property
    def model(self) -> CoefficientModel:
        return langevin_model(self.force, self.gamma, math.sqrt(2 * self.gamma * self.kT),
                              self.dim, name="hamiltonian-lyapunov-model")

    def H(self, q, p):
        q = np.asarray(q, float)
        p = np.asarray(p, float)
        k = self.k
        return (self.force.potential(q) + 0.5 * np.sum(p * p, -1) + k * np.sum(q * p, -1)
                + k * k * np.sum(q * q, -1))

    def Hhat(self, q, p):
        return 1.0 + self.H(q, p)

    def in_B(self, q, p):
        return self.Hhat(q, p) <= self.R

    def phi(self, n=None) -> TestFunction:
        n = self.n if n is None else n
        k = self.k
        force = self.force

        def value(q, p):
            return self.Hhat(q, p) ** n

        def gH(q, p):
            return force.grad_potential(q) + k * p + 2 * k * k * q, p + k * q

        def grad_q(q, p):
            hh = self.Hhat(q, p)
            return (n * hh ** (n - 1))[..., None] * gH(q, p)[0]

        def grad_p(q, p):
            hh = self.Hhat(q, p)
            return (n * hh ** (n - 1))[..., None] * gH(q, p)[1]

        def hess_p(q, p):
            hh = self.Hhat(q, p)
            g = gH(q, p)[1]
            d = g.shape[-1]
            outer = g[..., :, None] * g[..., None, :]
            a = (n * hh ** (n - 1))[..., None, None] * np.eye(d)
            if n > 1:
                a = a + (n * (n - 1) * hh ** (n - 2))[..., None, None] * outer
            return a

        return TestFunction(value, grad_q, grad_p, hess_p, f"Hhat^{n}")

    def to_dict(self):
        return {"gamma": self.gamma, "kT": self.kT, "alpha_drift": self.alpha_drift,
                "beta_drift": self.beta_drift, "delta": self.delta, "n": self.n, "c": self.c,
                "lambda": self.lam, "R_n": self.R, "c_lambda": self.c_lambda,
                "margin": self.margin, "dim": self.dim, "drift_report": self.drift_report}


def B_grid(lyap: HamiltonianLyapunov, n_per_axis=41):
    """Grid of the sublevel set {Hhat <= R} via the bounding box of its quadratic part."""
    k = lyap.k
    Bm = np.array([[k * k, 0.5 * k], [0.5 * k, 0.5]])
    inv = np.linalg.inv(Bm)
    R = lyap.R - 1.0
    qmax, pmax = math.sqrt(R * inv[0, 0]), math.sqrt(R * inv[1, 1])
    d = lyap.dim
    axes = [np.linspace(-qmax, qmax, n_per_axis)] * d + [np.linspace(-pmax, pmax, n_per_axis)] * d
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, 2 * d)
    keep = lyap.in_B(pts[:, :d], pts[:, d:])
    return pts[keep, :d], pts[keep, d:]


def hamiltonian_lyapunov_build(force: ForceField, gamma: float, kT: float, alpha_drift: float,
                               beta_drift: float, lam: float, dim: int = 1,
                               drift_grid=None, n_per_axis: int = 41, margin: float = 1.1):
    """Assemble Hhat^{n_lambda} for a Langevin force F0 = -grad U - ell.

    The growth condition on (U, ell) is checked on ``drift_grid`` (default: a
    grid of [-10, 10]^d) before anything else; failure raises
    ConstructionError carrying the report.
    """
    if gamma <= 0 or kT < 0:
        raise ParameterError("need gamma > 0 and kT >= 0")
    if drift_grid is None:
        side = np.linspace(-10.0, 10.0, 81 if dim == 1 else 21)
        drift_grid = np.stack(np.meshgrid(*([side] * dim), indexing="ij"), -1).reshape(-1, dim)
    rep = check_drift_condition(force.potential, force.grad_potential, force.perturbation,
                                alpha_drift, beta_drift, drift_grid)
    if not rep.passed:
        raise ConstructionError("growth condition on U and ell fails", report=rep.to_dict())
    try:
        delta = delta_feasible(gamma, alpha_drift, beta_drift)
    except ParameterError as exc:
        raise ConstructionError(f"no feasible delta: {exc}") from exc
    n = n_for_lambda(lam, delta)
    c = quadratic_constant(0.5 * (gamma - delta))
    ly = HamiltonianLyapunov(force, gamma, kT, alpha_drift, beta_drift, delta, n, c, float(lam),
                             dim, 0.0, margin, rep.to_dict())
    qb, pb = B_grid(ly, n_per_axis)
    phi = ly.phi()
    s = generator_apply(ly.model, phi, qb, pb) + lam * phi(qb, pb)
    ly.c_lambda = margin * float(max(np.max(s), 0.0)) if len(qb) else 0.0
    return ly


# --------------------------------------------------------------------------- verification runs


@dataclass
class LyapunovVerification:
    construction: dict
    checks: list
    passed: bool

    def to_dict(self):
        return {"construction": self.construction, "checks": self.checks, "passed": self.passed}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, default=float)


def _random_phase_points(region: Region, n: int, seed: int):
    """Positions uniform in O; momenta with log-uniform norms in [1e-3, 1e3]."""
    gen = np.random.default_rng([int(seed), 0x4C59])
    lo, hi = region.bounding_box()
    d = region.dim
    q = np.empty((0, d))
    while len(q) < n:
        c = lo + (hi - lo) * gen.random((2 * n, d))
        q = np.concatenate([q, c[region.contains(c)]])[:n]
    u = gen.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    r = 10.0 ** gen.uniform(-3.0, 3.0, n)
    return q, u * r[:, None]


def bounded_lyapunov_check(domain: Region, model: CoefficientModel, lam: float,
                           n_random: int = 100_000, n_shell: int = 13, seed: int = 0,
                           n_q: int = 64, n_dirs: int = 16) -> LyapunovVerification:
    """Build the bounded-domain function and check its two defining properties.

    * 1 <= phi <= 2 beta - 1 at ``n_random`` random points of D;
    * L phi + lam phi <= 0 on the shell p0 <= |p| <= 3 p0 (analytic derivatives).
    """
    L = bounded_lyapunov_build(domain, model, lam, n_q=n_q, n_dirs=n_dirs)
    phi = L.phi
    q, p = _random_phase_points(domain, n_random, seed)
    v = phi(q, p)
    lo_s, hi_s = float(np.min(v) - 1.0), float(2 * L.beta - 1.0 - np.max(v))
    bounds = {"check": "1 <= phi <= 2 beta - 1", "n_points": int(n_random),
              "min_phi": float(np.min(v)), "max_phi": float(np.max(v)),
              "lower_slack": lo_s, "upper_slack": hi_s,
              "passed": bool(lo_s >= 0 and hi_s >= 0)}
    radii = np.linspace(L.p0, 3 * L.p0, n_shell)
    sq, sp = shell_grid(domain, radii, n_q, n_dirs)
    shell = verify_drift_inequality(phi, model, lam, None, 0.0, (sq, sp),
                                    label="L phi + lam phi <= 0 on p0 <= |p| <= 3 p0",
                                    grid_spec={"radii": radii.tolist(), "n_q": n_q,
                                               "n_dirs": n_dirs, "n_points": int(len(sq))})
    checks = [bounds, {"check": "shell", **shell.to_dict()}]
    return LyapunovVerification(L.to_dict(), checks, bounds["passed"] and shell.passed)


def hamiltonian_lyapunov_check(force: ForceField, gamma: float, kT: float, alpha_drift: float,
                               beta_drift: float, lam: float, dim: int = 1,
                               half_width: float = 10.0, n_per_axis: int = 201
                               ) -> LyapunovVerification:
    """Build Hhat^{n_lambda} and check it on a grid of [-w, w]^{2d}.

    * L H <= -delta H + d eps everywhere on the grid;
    * L Hhat^n + lam Hhat^n <= 0 at grid points outside B_n.
    """
    ly = hamiltonian_lyapunov_build(force, gamma, kT, alpha_drift, beta_drift, lam, dim)
    side = np.linspace(-half_width, half_width, n_per_axis)
    pts = np.stack(np.meshgrid(*([side] * (2 * dim)), indexing="ij"), -1).reshape(-1, 2 * dim)
    q, p = pts[:, :dim], pts[:, dim:]
    spec = {"half_width": half_width, "n_per_axis": n_per_axis}
    h1 = verify_drift_inequality(ly.phi(1), ly.model, ly.delta, lambda a, b: np.ones(len(a)),
                                 ly.delta + dim * ly.eps, (q, p),
                                 label="L H <= -delta H + d eps", grid_spec=spec)
    out = ~ly.in_B(q, p)
    hn = verify_drift_inequality(ly.phi(), ly.model, lam, None, 0.0, (q[out], p[out]),
                                 label="L Hhat^n + lam Hhat^n <= 0 outside B_n",
                                 grid_spec={**spec, "outside_B": int(out.sum())})
    checks = [{"check": "hamiltonian drift", **h1.to_dict()},
              {"check": "power outside B", **hn.to_dict()}]
    return LyapunovVerification(ly.to_dict(), checks, h1.passed and hn.passed)


# --------------------------------------------------------------------------- smooth catalog


def _quad(a, b, c):
    """f = a|q|^2/2 + b q.p + c|p|^2/2."""
    return TestFunction(
        lambda q, p: 0.5 * a * np.sum(q * q, -1) + b * np.sum(q * p, -1) + 0.5 * c * np.sum(p * p, -1),
        lambda q, p: a * q + b * p,
        lambda q, p: b * q + c * p,
        lambda q, p: c * np.broadcast_to(np.eye(q.shape[-1]), q.shape + (q.shape[-1],)).copy(),
        f"quadratic({a},{b},{c})")


def _gauss(s):
    def v(q, p):
        return np.exp(-(np.sum(q * q, -1) + np.sum(p * p, -1)) / (2 * s * s))

    def hp(q, p):
        d = q.shape[-1]
        f = v(q, p)[..., None, None]
        return f * (p[..., :, None] * p[..., None, :] / s**4 - np.eye(d) / s**2)

    return TestFunction(v, lambda q, p: -v(q, p)[..., None] * q / s**2,
                        lambda q, p: -v(q, p)[..., None] * p / s**2, hp, f"gauss({s})")


def _trig(a, b):
    """f = sum_i sin(a q_i) cos(b p_i)."""

    def hp(q, p):
        diag = -b * b * np.sin(a * q) * np.cos(b * p)
        return diag[..., :, None] * np.eye(q.shape[-1])

    return TestFunction(lambda q, p: np.sum(np.sin(a * q) * np.cos(b * p), -1),
                        lambda q, p: a * np.cos(a * q) * np.cos(b * p),
                        lambda q, p: -b * np.sin(a * q) * np.sin(b * p), hp, f"trig({a},{b})")


def _logcosh(w):
    """f = log cosh(w . (q, p))."""
    w = np.asarray(w, dtype=float)

    def z(q, p):
        d = q.shape[-1]
        return q @ w[:d] + p @ w[d:]

    def hp(q, p):
        d = q.shape[-1]
        sech2 = 1.0 / np.cosh(z(q, p)) ** 2
        return sech2[..., None, None] * np.outer(w[d:], w[d:])

    return TestFunction(lambda q, p: np.log(np.cosh(z(q, p))),
                        lambda q, p: np.tanh(z(q, p))[..., None] * w[: q.shape[-1]],
                        lambda q, p: np.tanh(z(q, p))[..., None] * w[q.shape[-1]:],
                        hp, "logcosh")


def _quartic():
    """f = |p|^4 / 4 + |q|^2 |p|^2 / 2."""

    def hp(q, p):
        d = q.shape[-1]
        p2 = np.sum(p * p, -1)[..., None, None]
        q2 = np.sum(q * q, -1)[..., None, None]
        return (p2 + q2) * np.eye(d) + 2 * p[..., :, None] * p[..., None, :]

    return TestFunction(
        lambda q, p: 0.25 * np.sum(p * p, -1) ** 2 + 0.5 * np.sum(q * q, -1) * np.sum(p * p, -1),
        lambda q, p: np.sum(p * p, -1)[..., None] * q,
        lambda q, p: (np.sum(p * p, -1) + np.sum(q * q, -1))[..., None] * p,
        hp, "quartic")


def smooth_catalog(dim: int = 1):
    """Smooth test functions with closed-form derivatives."""
    w = np.linspace(0.3, 0.9, 2 * dim)
    return [
        TestFunction(lambda q, p: np.ones(q.shape[:-1]), lambda q, p: np.zeros(q.shape),
                     lambda q, p: np.zeros(p.shape),
                     lambda q, p: np.zeros(p.shape + (p.shape[-1],)), "one"),
        _quad(0.0, 0.0, 1.0), _quad(0.0, 1.0, 0.0), _quad(1.0, 0.4, 1.0),
        _gauss(1.5), _trig(1.3, 0.7), _logcosh(w), _quartic(),
    ]


__all__ = ["TestFunction", "generator_apply", "generator_terms", "fd_derivatives",
           "verify_drift_inequality", "DriftReport", "bridge", "bounded_test_function",
           "bounded_lyapunov_build", "BoundedDomainLyapunov", "delta_feasible", "n_for_lambda",
           "check_drift_condition", "hamiltonian_lyapunov_build", "HamiltonianLyapunov",
           "quadratic_constant", "smooth_catalog", "p0_of", "shell_grid", "D_lambda_grid",
           "B_grid", "LyapunovVerification", "bounded_lyapunov_check",
           "hamiltonian_lyapunov_check"]
