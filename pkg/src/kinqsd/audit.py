"""Grid audits of declared coefficient metadata.

Each check reports the worst observed slack (bound minus observed value, so
negative means violated) together with the witnessing point(s).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .model import CoefficientModel, Regularity

REL_TOL = 1e-12


@dataclass
class CheckResult:
    check: str
    worst_slack: float
    witness: list
    passed: bool

    def to_dict(self):
        return {"check": self.check, "worst_slack": self.worst_slack, "witness": self.witness,
                "passed": self.passed}


@dataclass
class AuditReport:
    checks: list = field(default_factory=list)
    n_points: int = 0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name) -> CheckResult:
        for c in self.checks:
            if c.check == name:
                return c
        raise KeyError(name)

    def to_dict(self):
        return {"passed": self.passed, "n_points": self.n_points,
                "checks": [c.to_dict() for c in self.checks]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)


def _pt(q, p):
    return [float(v) for v in np.concatenate([np.ravel(q), np.ravel(p)])]


def _result(name, slack, scale, witness):
    ok = bool(slack >= -REL_TOL * scale)
    return CheckResult(name, float(slack), witness, ok)


def audit_coefficients(model: CoefficientModel, grid, declared: Regularity | None = None,
                       holder_grid=None, oscillation=True) -> AuditReport:
    """Check declared ellipticity, Hoelder and affine growth bounds on a grid.

    * ellipticity: exact extreme eigenvalues of sigma sigma^T at each point
      against c1 and c2;
    * Hoelder: all pairs of ``holder_grid`` (default: ``grid``),
      ||sigma(x) - sigma(x')||_F <= c3 (|q - q'|^{alpha/3} + |p - p'|^alpha);
    * growth: |F(x)| <= a + b (|q| + |p|), skipped when a or b is undeclared;
    * oscillation (informational): the largest |F(x) - F(x')| over grid
      pairs at distance at most one.
    """
    md = declared if declared is not None else model.metadata
    q, p = (np.atleast_2d(np.asarray(a, dtype=float)) for a in grid)
    if len(q) == 0:
        raise ValueError("audit grid is empty")
    F, S = model.evaluate(q, p)
    rep = AuditReport(n_points=len(q))

    ev = np.linalg.eigvalsh(np.einsum("nik,njk->nij", S, S))
    lo, hi = ev[:, 0], ev[:, -1]
    i = int(np.argmin(lo))
    rep.checks.append(_result("ellipticity_lower", lo[i] - md.c1, max(md.c1, 1.0),
                              _pt(q[i], p[i])))
    i = int(np.argmax(hi))
    rep.checks.append(_result("ellipticity_upper", md.c2 - hi[i], max(md.c2, 1.0),
                              _pt(q[i], p[i])))

    hq, hp = (q, p) if holder_grid is None else (
        np.atleast_2d(np.asarray(a, dtype=float)) for a in holder_grid)
    Sh = S if holder_grid is None else model.evaluate(hq, hp)[1]
    worst, wit = np.inf, []
    for j in range(len(hq)):
        num = np.linalg.norm(Sh[j + 1:] - Sh[j], axis=(-2, -1))
        den = (np.linalg.norm(hq[j + 1:] - hq[j], axis=-1) ** (md.alpha / 3.0)
               + np.linalg.norm(hp[j + 1:] - hp[j], axis=-1) ** md.alpha)
        with np.errstate(divide="ignore", invalid="ignore"):
            slack = np.where(den > 0, md.c3 * den - num, np.where(num > 0, -np.inf, 0.0))
        if len(slack) and slack.min() < worst:
            k = int(np.argmin(slack))
            worst = float(slack[k])
            wit = [_pt(hq[j], hp[j]), _pt(hq[j + 1 + k], hp[j + 1 + k])]
    if np.isfinite(worst) or wit:
        rep.checks.append(_result("holder", worst, max(md.c3, 1.0), wit))

    if md.a is not None and md.b is not None:
        x = np.linalg.norm(q, axis=-1) + np.linalg.norm(p, axis=-1)
        slack = md.a + md.b * x - np.linalg.norm(F, axis=-1)
        i = int(np.argmin(slack))
        rep.checks.append(_result("growth", slack[i], 1.0 + md.a + md.b * x[i], _pt(q[i], p[i])))

    if oscillation and len(q) > 1:
        X = np.concatenate([q, p], axis=1)
        best, wit = 0.0, []
        for j in range(len(X)):
            near = np.linalg.norm(X - X[j], axis=1) <= 1.0
            diff = np.linalg.norm(F[near] - F[j], axis=-1)
            k = int(np.argmax(diff))
            if diff[k] > best:
                best = float(diff[k])
                idx = np.flatnonzero(near)[k]
                wit = [_pt(q[j], p[j]), _pt(q[idx], p[idx])]
        rep.checks.append(CheckResult("oscillation_unit_scale", best, wit, True))
    return rep


__all__ = ["audit_coefficients", "AuditReport", "CheckResult"]
