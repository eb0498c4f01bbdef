"""Mollified coefficients.

F_n(x) = int F(x - y) phi_n(y) dy with phi_n(y) = n^{2d} phi(n y), evaluated
with a tensor Gauss-Legendre rule. The base kernel is the normalised
tensor-product bump exp(-1/(1 - y^2)) on [-1, 1]^{2d}; it is even in every
coordinate, so linear fields are fixed points of the smoothing.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EvaluationError, ParameterError
from .model import CoefficientModel, PhaseBox, Regularity

CHUNK = 1 << 21


def bump(y):
    y = np.asarray(y, dtype=float)
    out = np.zeros_like(y)
    inside = np.abs(y) < 1
    out[inside] = np.exp(-1.0 / (1.0 - y[inside] ** 2))
    return out


@dataclass(frozen=True)
class MollifierKernel:
    """Discrete tensor bump kernel: nodes in [-1, 1]^{2d} and weights summing to one."""

    dim: int
    n: float = 1.0
    order: int = 16

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError("mollification index must be >= 1")
        if self.order < 2:
            raise ParameterError("quadrature order must be >= 2")

    def axis_rule(self):
        x, w = np.polynomial.legendre.leggauss(self.order)
        a = w * bump(x)
        return x, a / a.sum()

    def nodes(self):
        """(nodes, weights) of the tensor rule on [-1, 1]^{2d}."""
        x, a = self.axis_rule()
        m = 2 * self.dim
        grids = np.meshgrid(*([x] * m), indexing="ij")
        wg = np.meshgrid(*([a] * m), indexing="ij")
        nodes = np.stack([g.ravel() for g in grids], axis=1)
        weights = np.prod(np.stack([g.ravel() for g in wg], axis=1), axis=1)
        return nodes, weights / weights.sum()

    @property
    def weight_sum_error(self) -> float:
        return abs(float(self.nodes()[1].sum()) - 1.0)

    @property
    def support_radius(self) -> float:
        """Radius of the scaled support in the norm |q| + |p|."""
        return 2.0 * math.sqrt(self.dim) / self.n

    def with_n(self, n) -> "MollifierKernel":
        return replace(self, n=float(n))


def _convolve(field_fn, kernel: MollifierKernel, tail_shape):
    nodes, w = kernel.nodes()
    d = kernel.dim
    shift = nodes / kernel.n
    m = len(w)

    def conv(q, p):
        q = np.asarray(q, dtype=float)
        p = np.asarray(p, dtype=float)
        lead = np.broadcast_shapes(q.shape, p.shape)[:-1]
        qf = np.broadcast_to(q, lead + (d,)).reshape(-1, d)
        pf = np.broadcast_to(p, lead + (d,)).reshape(-1, d)
        out = np.empty((len(qf),) + tail_shape)
        step = max(1, CHUNK // m)
        for s in range(0, len(qf), step):
            qs = qf[s:s + step, None, :] - shift[None, :, :d]
            ps = pf[s:s + step, None, :] - shift[None, :, d:]
            vals = np.asarray(field_fn(qs, ps), dtype=float)
            if not np.all(np.isfinite(vals)):
                bad = np.argwhere(~np.isfinite(vals.reshape(vals.shape[0], m, -1)))[0]
                raise EvaluationError("non-finite integrand in mollifier quadrature",
                                      point=(qs[bad[0], bad[1]], ps[bad[0], bad[1]]))
            out[s:s + step] = np.tensordot(w, np.moveaxis(vals, 1, 0), axes=1)
        return out.reshape(lead + tail_shape)

    return conv


def mollify(model: CoefficientModel, kernel: MollifierKernel) -> CoefficientModel:
    """Model whose drift and diffusion are the quadrature convolutions with phi_n.

    Metadata: alpha, c1, c2, c3 and b are kept; a widens by b times the
    support radius of phi_n. The ellipticity constants are not guaranteed by
    the averaging and should be re-audited.
    """
    if kernel.dim != model.dim:
        raise ParameterError("kernel and model dimensions differ")
    d = model.dim
    drift = _convolve(model.drift, kernel, (d,))
    diffusion = _convolve(model.diffusion, kernel, (d, d))
    md = model.metadata
    a = md.a
    if a is not None and md.b is not None:
        a = a + md.b * kernel.support_radius
    meta = Regularity(md.alpha, md.c1, md.c2, md.c3, a, md.b)
    params = dict(model.params)
    params.update({"mollifier_n": kernel.n, "quadrature_order": kernel.order})
    return CoefficientModel(drift, diffusion, d, meta, None, f"{model.name}[n={kernel.n:g}]",
                            params)


# --------------------------------------------------------------------------- convergence


def midpoint_grid(box: PhaseBox, n_per_axis):
    """Cell midpoints and the common cell volume of a uniform grid of the box."""
    lo, hi = box.lo, box.hi
    npa = np.broadcast_to(np.asarray(n_per_axis), lo.shape)
    axes = [lo[i] + (np.arange(npa[i]) + 0.5) * (hi[i] - lo[i]) / npa[i] for i in range(len(lo))]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(lo))
    vol = float(np.prod((hi - lo) / npa))
    return pts, vol


@dataclass
class ConvergenceReport:
    ns: list
    sigma_sup: list
    drift_l1: list
    sigma_monotone: bool
    drift_monotone: bool
    quadrature_tol: float
    compact: dict = field(default_factory=dict)

    def to_dict(self):
        return {"check": "mollifier convergence", "n": self.ns, "sigma_sup": self.sigma_sup,
                "drift_l1": self.drift_l1, "sigma_non_increasing": self.sigma_monotone,
                "drift_non_increasing": self.drift_monotone,
                "quadrature_tol": self.quadrature_tol, "compact": self.compact,
                "passed": self.sigma_monotone and self.drift_monotone}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def mollifier_convergence_report(model: CoefficientModel, ns, grid, compact: PhaseBox,
                                 order: int = 16, l1_points=(16, 2000), tol: float = 1e-10):
    """Sup-norm error of sigma_n on ``grid`` and L1 error of F_n over ``compact``.

    ``grid`` is a ``(q, p)`` pair inside ``compact``. The L1 integral uses a
    midpoint rule with ``l1_points`` cells per axis (q axes first). A sequence
    counts as non-increasing when each term exceeds its predecessor by at
    most ``tol`` (absolute).
    """
    q, p = (np.atleast_2d(np.asarray(a, dtype=float)) for a in grid)
    if not np.all(compact.contains(q, p)):
        raise ParameterError("grid must lie inside the compact set")
    d = model.dim
    npa = np.concatenate([np.full(d, l1_points[0]), np.full(d, l1_points[1])])
    mid, vol = midpoint_grid(compact, npa)
    F_ref = np.asarray(model.drift(mid[:, :d], mid[:, d:]), dtype=float)
    S_ref = np.asarray(model.diffusion(q, p), dtype=float)
    sig, l1 = [], []
    ns = sorted(float(n) for n in ns)
    for n in ns:
        m = mollify(model, MollifierKernel(d, n, order))
        diff = m.diffusion(q, p) - S_ref
        sig.append(float(np.max(np.linalg.norm(diff, ord=2, axis=(-2, -1)))))
        Fn = m.drift(mid[:, :d], mid[:, d:])
        l1.append(float(np.sum(np.linalg.norm(Fn - F_ref, axis=-1)) * vol))

    def mono(xs):
        return all(b <= a + tol for a, b in zip(xs, xs[1:]))

    return ConvergenceReport(ns, sig, l1, mono(sig), mono(l1), tol, compact.to_dict())


__all__ = ["MollifierKernel", "mollify", "mollifier_convergence_report", "ConvergenceReport",
           "bump", "midpoint_grid"]
