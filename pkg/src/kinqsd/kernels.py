"""Backend selection for the propagation kernels.

The compiled extension handles Langevin-form models in up to 8 dimensions.
Everything else, or any run with ``KINQSD_BACKEND=python`` in the
environment, goes through the numpy fallback. Both backends share the
counter-based RNG so a trajectory does not depend on which one ran it.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np

from . import _fallback
from .domains import Region
from .errors import ParameterError

try:
    from . import _ckernels
except ImportError:  # pragma: no cover - depends on the build
    _ckernels = None

HAVE_COMPILED = _ckernels is not None
MAX_COMPILED_DIM = 8

SCHEMES = {"langevin-splitting": 0, "euler-maruyama": 1}
CROSSINGS = {"substep-interpolation": 0, "endpoint-only": 1}


def requested_backend() -> str:
    name = os.environ.get("KINQSD_BACKEND", "auto").lower()
    if name not in ("auto", "compiled", "python"):
        raise ParameterError(f"KINQSD_BACKEND must be auto, compiled or python, not {name!r}")
    return name


@dataclass(frozen=True)
class StepPlan:
    """Everything a kernel needs to advance particles: model, region, scheme, seed."""

    model: object
    region: Region
    dt: float
    scheme: str = "langevin-splitting"
    crossing: str = "substep-interpolation"
    seed: int = 0
    threshold: float = 1e-8
    backend: str = "auto"

    def __post_init__(self):
        if not self.dt > 0:
            raise ParameterError("dt must be positive")
        if self.scheme not in SCHEMES:
            raise ParameterError(f"unknown scheme {self.scheme!r}")
        if self.crossing not in CROSSINGS:
            raise ParameterError(f"unknown crossing mode {self.crossing!r}")
        if self.region.dim != self.model.dim:
            raise ParameterError("region and model dimensions differ")
        if self.scheme == "langevin-splitting" and self.model.langevin is None:
            raise ParameterError("langevin-splitting needs a model of Langevin form")
        backend = self.backend
        if backend == "auto":
            backend = requested_backend()
        if backend == "auto":
            backend = "compiled" if self.compilable else "python"
        if backend == "compiled" and not self.compilable:
            raise ParameterError("compiled backend unavailable for this model/build")
        object.__setattr__(self, "backend", backend)

    # ---------------------------------------------------------- derived numbers
    @property
    def dim(self):
        return self.model.dim

    @property
    def compilable(self):
        return (HAVE_COMPILED and self.model.langevin is not None
                and self.model.dim <= MAX_COMPILED_DIM)

    @property
    def scheme_code(self):
        return SCHEMES[self.scheme]

    @property
    def crossing_code(self):
        return CROSSINGS[self.crossing]

    @property
    def dom_code(self):
        return self.region.kernel_spec()[0]

    @property
    def gamma(self):
        return self.model.langevin.gamma if self.model.langevin else 0.0

    @property
    def force(self):
        return self.model.langevin.force if self.model.langevin else None

    @property
    def c_half(self):
        return math.exp(-0.5 * self.gamma * self.dt)

    @property
    def ou(self):
        """Std of the exact OU half-step noise."""
        if self.model.langevin is None:
            return 0.0
        noise = self.model.langevin.noise
        if self.gamma == 0:
            return noise * math.sqrt(0.5 * self.dt)
        return noise * math.sqrt((1.0 - self.c_half**2) / (2.0 * self.gamma))

    @property
    def sqrt_dt(self):
        return math.sqrt(self.dt)

    @property
    def em_noise(self):
        if self.model.langevin is None:
            return 0.0
        return self.model.langevin.noise * self.sqrt_dt

    def spec(self) -> tuple:
        """Parameter tuple consumed by the compiled kernels."""
        form = self.model.langevin
        dom, dom_params = self.region.kernel_spec()
        return (int(self.dim), int(form.force.code), [float(v) for v in form.force.kernel_params()],
                float(self.gamma), self.scheme_code, self.c_half, self.ou, float(self.dt),
                self.em_noise, int(dom), [float(v) for v in dom_params], self.crossing_code,
                int(self.seed) & 0xFFFFFFFFFFFFFFFF, float(self.threshold))

    def with_seed(self, seed):
        return StepPlan(self.model, self.region, self.dt, self.scheme, self.crossing, seed,
                        self.threshold, self.backend)

    def with_region(self, region):
        return StepPlan(self.model, region, self.dt, self.scheme, self.crossing, self.seed,
                        self.threshold, self.backend)


def _c(a, dtype):
    return np.ascontiguousarray(a, dtype=dtype)


def propagate(plan: StepPlan, q, p, streams, k_start, k_end, status, etime, outgoing,
              substep, track=None, x0=None, threads=1):
    """Advance alive particles in place over steps [k_start, k_end).

    ``status`` is 0 alive, 1 exited, 2 blown up. Arrays must be C-contiguous
    float64/int8/uint64 as allocated by :func:`alloc`.
    """
    if plan.backend == "compiled":
        _ckernels.propagate(q, p, streams, int(k_start), int(k_end), plan.spec(), status,
                            etime, outgoing, substep, track, x0, int(threads))
    else:
        _fallback.propagate(plan, q, p, streams, int(k_start), int(k_end), status, etime,
                            outgoing, substep, track, x0)


def fv_run(plan: StepPlan, q, p, streams, k_start, n_steps, record_block, lo, hi, nb, counts,
           kills, threads=1):
    if plan.backend == "compiled":
        return _ckernels.fv_run(q, p, streams, int(k_start), int(n_steps), plan.spec(),
                                record_block, lo, hi, nb, counts, kills, int(threads))
    return _fallback.fv_run(plan, q, p, streams, int(k_start), int(n_steps), record_block,
                            lo, hi, nb, counts, kills)


def histogram(q, p, lo, hi, nb, counts, compiled=None):
    if compiled is None:
        compiled = HAVE_COMPILED and requested_backend() != "python"
    if compiled:
        _ckernels.histogram(_c(q, float), _c(p, float), _c(lo, float), _c(hi, float),
                            _c(nb, np.int64), counts)
    else:
        _fallback.histogram(q, p, np.asarray(lo, float), np.asarray(hi, float),
                            np.asarray(nb, np.int64), counts)


@dataclass
class Batch:
    """Contiguous particle arrays in the layout the kernels expect."""

    q: np.ndarray
    p: np.ndarray
    streams: np.ndarray
    status: np.ndarray
    etime: np.ndarray
    outgoing: np.ndarray
    substep: np.ndarray
    track: np.ndarray | None = None
    x0: np.ndarray | None = None

    @property
    def n(self):
        return self.q.shape[0]


def alloc(q, p, streams, track=False) -> Batch:
    q = _c(np.atleast_2d(q), np.float64).copy()
    p = _c(np.atleast_2d(p), np.float64).copy()
    n = q.shape[0]
    streams = _c(np.broadcast_to(np.asarray(streams, dtype=np.uint64), (n,)), np.uint64)
    b = Batch(q, p, streams.copy(), np.zeros(n, np.int8), np.full(n, np.nan),
              np.zeros(n, np.int8), np.zeros(n, np.int8))
    if track:
        b.x0 = _c(np.concatenate([q, p], axis=1), np.float64)
        b.track = np.zeros((n, 2))
        b.track[:, 0] = (np.linalg.norm(q, axis=1) + np.linalg.norm(p, axis=1)) ** 2
    return b


def run_batch(plan: StepPlan, batch: Batch, k_start, k_end, threads=1):
    propagate(plan, batch.q, batch.p, batch.streams, k_start, k_end, batch.status,
              batch.etime, batch.outgoing, batch.substep, batch.track, batch.x0, threads)


__all__ = ["StepPlan", "Batch", "alloc", "run_batch", "propagate", "fv_run", "histogram",
           "HAVE_COMPILED"]
