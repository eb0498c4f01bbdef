"""Position-space regions O defining cylindrical domains D = O x R^d.

All geometry is vectorised over leading axes: ``q`` has shape ``(..., d)``.
Signed distances are positive inside, zero on the boundary and negative
outside. Each region also exposes a ``kernel_spec`` (integer code plus float
parameters) consumed by the compiled propagation kernels.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError

FULL, INTERVAL, BALL, BOX, HALFSPACE = 0, 1, 2, 3, 4


def _as_q(q, dim):
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != dim:
        raise ParameterError(f"expected positions of dimension {dim}, got shape {q.shape}")
    return q


class Region:
    """Base class; subclasses implement the vectorised geometry."""

    dim: int
    kind: str = "region"

    def signed_distance(self, q):
        raise NotImplementedError

    def contains(self, q):
        return self.signed_distance(q) > 0

    def outward_normal(self, q):
        raise NotImplementedError

    def project(self, q):
        """Closest point of the boundary."""
        raise NotImplementedError

    def project_with_normal(self, q):
        """Closest boundary point and the outward normal there."""
        qb = self.project(q)
        return qb, self.outward_normal(qb)

    def crossing_fraction(self, q0, q1):
        """Fraction s in [0, 1] where the segment q0 -> q1 first meets the boundary.

        ``q0`` must be inside and ``q1`` outside. Exact for these convex regions.
        """
        raise NotImplementedError

    @property
    def bounded(self) -> bool:
        return False

    def sup_norm(self) -> float:
        """sup over O of |q|."""
        return np.inf

    def bounding_box(self):
        raise ParameterError(f"{self.kind} has no bounding box")

    def kernel_spec(self):
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class FullSpace(Region):
    dim: int = 1
    kind: str = field(default="full", init=False)

    def signed_distance(self, q):
        q = _as_q(q, self.dim)
        return np.full(q.shape[:-1], np.inf)

    def outward_normal(self, q):
        raise ParameterError("full space has no boundary")

    def project(self, q):
        raise ParameterError("full space has no boundary")

    def crossing_fraction(self, q0, q1):
        raise ParameterError("full space has no boundary")

    def kernel_spec(self):
        return FULL, np.zeros(1)

    def to_dict(self):
        return {"type": "full", "dim": self.dim}


@dataclass(frozen=True)
class Interval(Region):
    """Open interval (left, right) in dimension one."""

    left: float = -1.0
    right: float = 1.0
    kind: str = field(default="interval", init=False)

    def __post_init__(self):
        if not self.left < self.right:
            raise ParameterError("interval needs left < right")

    @property
    def dim(self):
        return 1

    @property
    def bounded(self):
        return np.isfinite(self.left) and np.isfinite(self.right)

    def sup_norm(self):
        return max(abs(self.left), abs(self.right))

    def bounding_box(self):
        return np.array([self.left]), np.array([self.right])

    def signed_distance(self, q):
        x = _as_q(q, 1)[..., 0]
        return np.minimum(x - self.left, self.right - x)

    def outward_normal(self, q):
        x = _as_q(q, 1)[..., 0]
        mid = 0.5 * (self.left + self.right)
        return np.where(x >= mid, 1.0, -1.0)[..., None]

    def project(self, q):
        x = _as_q(q, 1)[..., 0]
        mid = 0.5 * (self.left + self.right)
        return np.where(x >= mid, self.right, self.left)[..., None]

    def crossing_fraction(self, q0, q1):
        x0 = _as_q(q0, 1)[..., 0]
        x1 = _as_q(q1, 1)[..., 0]
        target = np.where(x1 >= self.right, self.right, self.left)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (target - x0) / (x1 - x0)
        return np.clip(np.nan_to_num(s, nan=1.0), 0.0, 1.0)

    def kernel_spec(self):
        return INTERVAL, np.array([self.left, self.right])

    def to_dict(self):
        return {"type": "interval", "left": self.left, "right": self.right}


@dataclass(frozen=True)
class Ball(Region):
    center: tuple = (0.0,)
    radius: float = 1.0
    kind: str = field(default="ball", init=False)

    def __post_init__(self):
        if self.radius <= 0:
            raise ParameterError("ball radius must be positive")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def dim(self):
        return len(self.center)

    @property
    def bounded(self):
        return True

    def sup_norm(self):
        return float(np.linalg.norm(self.center)) + self.radius

    def bounding_box(self):
        c = np.asarray(self.center)
        return c - self.radius, c + self.radius

    def signed_distance(self, q):
        q = _as_q(q, self.dim)
        return self.radius - np.linalg.norm(q - np.asarray(self.center), axis=-1)

    def outward_normal(self, q):
        v = _as_q(q, self.dim) - np.asarray(self.center)
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        e1 = np.zeros(self.dim)
        e1[0] = 1.0
        return np.where(nrm > 0, v / np.where(nrm > 0, nrm, 1.0), e1)

    def project(self, q):
        return np.asarray(self.center) + self.radius * self.outward_normal(q)

    def crossing_fraction(self, q0, q1):
        c = np.asarray(self.center)
        x0 = _as_q(q0, self.dim) - c
        delta = _as_q(q1, self.dim) - _as_q(q0, self.dim)
        a = np.sum(delta * delta, axis=-1)
        b = 2.0 * np.sum(x0 * delta, axis=-1)
        cc = np.sum(x0 * x0, axis=-1) - self.radius**2
        disc = np.sqrt(np.maximum(b * b - 4.0 * a * cc, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(b > 0, -2.0 * cc / (b + disc), (disc - b) / (2.0 * a))
        return np.clip(np.nan_to_num(s, nan=1.0), 0.0, 1.0)

    def kernel_spec(self):
        return BALL, np.array(list(self.center) + [self.radius])

    def to_dict(self):
        return {"type": "ball", "center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class Box(Region):
    """Open box prod_i (lo_i, hi_i).

    Inside, the signed distance is the distance to the nearest face; outside
    it is minus the Euclidean distance to the box. At edges and corners the
    normal is the normalised gradient of the distance when the point is
    strictly outside, and otherwise the normal of the face with the smallest
    (most violated) per-face distance, lowest axis first.
    """

    lo: tuple = (-1.0,)
    hi: tuple = (1.0,)
    kind: str = field(default="box", init=False)

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi) or not all(a < b for a, b in zip(lo, hi)):
            raise ParameterError("box needs lo < hi componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return len(self.lo)

    @property
    def bounded(self):
        return bool(np.all(np.isfinite(self.lo)) and np.all(np.isfinite(self.hi)))

    def sup_norm(self):
        corner = np.maximum(np.abs(self.lo), np.abs(self.hi))
        return float(np.linalg.norm(corner))

    def bounding_box(self):
        return np.asarray(self.lo), np.asarray(self.hi)

    def _face_distances(self, q):
        q = _as_q(q, self.dim)
        return np.concatenate([q - np.asarray(self.lo), np.asarray(self.hi) - q], axis=-1)

    def signed_distance(self, q):
        q = _as_q(q, self.dim)
        inside = np.min(self._face_distances(q), axis=-1)
        clamped = np.clip(q, self.lo, self.hi)
        outside = -np.linalg.norm(q - clamped, axis=-1)
        return np.where(inside > 0, inside, outside)

    def outward_normal(self, q):
        q = _as_q(q, self.dim)
        clamped = np.clip(q, self.lo, self.hi)
        v = q - clamped
        nrm = np.linalg.norm(v, axis=-1, keepdims=True)
        fd = self._face_distances(q)
        face = np.argmin(fd, axis=-1)
        axis = face % self.dim
        sign = np.where(face < self.dim, -1.0, 1.0)
        face_normal = np.zeros(q.shape)
        np.put_along_axis(face_normal, axis[..., None], sign[..., None], axis=-1)
        return np.where(nrm > 0, v / np.where(nrm > 0, nrm, 1.0), face_normal)

    def project(self, q):
        q = _as_q(q, self.dim)
        clamped = np.clip(q, self.lo, self.hi)
        fd = self._face_distances(clamped)
        face = np.argmin(fd, axis=-1)
        axis = face % self.dim
        target = np.where(face < self.dim,
                          np.asarray(self.lo)[axis], np.asarray(self.hi)[axis])
        out = clamped.copy()
        np.put_along_axis(out, axis[..., None], target[..., None], axis=-1)
        return out

    def project_with_normal(self, q):
        q = _as_q(q, self.dim)
        clamped = np.clip(q, self.lo, self.hi)
        face = np.argmin(self._face_distances(clamped), axis=-1)
        axis = face % self.dim
        low = face < self.dim
        target = np.where(low, np.asarray(self.lo)[axis], np.asarray(self.hi)[axis])
        out = clamped.copy()
        np.put_along_axis(out, axis[..., None], target[..., None], axis=-1)
        normal = np.zeros(q.shape)
        np.put_along_axis(normal, axis[..., None], np.where(low, -1.0, 1.0)[..., None], axis=-1)
        return out, normal

    def crossing_fraction(self, q0, q1):
        q0 = _as_q(q0, self.dim)
        q1 = _as_q(q1, self.dim)
        delta = q1 - q0
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            s_hi = np.where(q1 >= hi, (hi - q0) / delta, np.inf)
            s_lo = np.where(q1 <= lo, (lo - q0) / delta, np.inf)
        s = np.min(np.minimum(s_hi, s_lo), axis=-1)
        return np.clip(np.where(np.isfinite(s), s, 1.0), 0.0, 1.0)

    def kernel_spec(self):
        return BOX, np.array(list(self.lo) + list(self.hi))

    def to_dict(self):
        return {"type": "box", "lo": list(self.lo), "hi": list(self.hi)}


@dataclass(frozen=True)
class HalfSpace(Region):
    """{q : normal . q < offset} with ``normal`` normalised on construction."""

    normal: tuple = (1.0,)
    offset: float = 0.0
    kind: str = field(default="halfspace", init=False)

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        nrm = np.linalg.norm(n)
        if nrm == 0:
            raise ParameterError("half-space normal must be nonzero")
        if abs(nrm - 1.0) < 1e-14:
            nrm = 1.0  # already unit: keep to_dict round trips exact
        object.__setattr__(self, "normal", tuple(float(v) for v in n / nrm))
        object.__setattr__(self, "offset", float(self.offset) / nrm)

    @property
    def dim(self):
        return len(self.normal)

    def signed_distance(self, q):
        q = _as_q(q, self.dim)
        return self.offset - q @ np.asarray(self.normal)

    def outward_normal(self, q):
        q = _as_q(q, self.dim)
        return np.broadcast_to(np.asarray(self.normal), q.shape).copy()

    def project(self, q):
        q = _as_q(q, self.dim)
        return q + self.signed_distance(q)[..., None] * np.asarray(self.normal)

    def crossing_fraction(self, q0, q1):
        g0 = self.signed_distance(q0)
        g1 = self.signed_distance(q1)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = g0 / (g0 - g1)
        return np.clip(np.nan_to_num(s, nan=1.0), 0.0, 1.0)

    def kernel_spec(self):
        return HALFSPACE, np.array(list(self.normal) + [self.offset])

    def to_dict(self):
        return {"type": "halfspace", "normal": list(self.normal), "offset": self.offset}


def region_from_dict(spec: dict) -> Region:
    spec = dict(spec)
    kind = spec.pop("type")
    if kind == "full":
        return FullSpace(dim=int(spec.get("dim", 1)))
    if kind == "interval":
        return Interval(float(spec["left"]), float(spec["right"]))
    if kind == "ball":
        return Ball(tuple(spec["center"]), float(spec["radius"]))
    if kind == "box":
        return Box(tuple(spec["lo"]), tuple(spec["hi"]))
    if kind == "halfspace":
        return HalfSpace(tuple(spec["normal"]), float(spec.get("offset", 0.0)))
    raise ParameterError(f"unknown region type {kind!r}")


def interior_grid(region: Region, n_per_axis: int) -> np.ndarray:
    """Cell-centred grid of the bounding box, filtered to points of O."""
    lo, hi = region.bounding_box()
    axes = [lo[i] + (np.arange(n_per_axis) + 0.5) * (hi[i] - lo[i]) / n_per_axis
            for i in range(region.dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, region.dim)
    return pts[region.contains(pts)]


def sample_interior(region: Region, n: int, rng) -> np.ndarray:
    """Uniform samples of O by rejection from the bounding box."""
    lo, hi = region.bounding_box()
    out = []
    count = 0
    while count < n:
        u = rng.random((2 * n, region.dim))
        pts = lo + u * (hi - lo)
        pts = pts[region.contains(pts)]
        out.append(pts)
        count += len(pts)
    return np.concatenate(out)[:n]
