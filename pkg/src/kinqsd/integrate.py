"""Time stepping of the kinetic SDE with first-exit detection.

Two schemes are available:

* ``euler-maruyama``: q' = q + p dt, p' = p + F dt + sigma sqrt(dt) xi.
* ``langevin-splitting``: for F = F0(q) - gamma p and sigma = noise * I, a
  symmetric O-B-A-B-O splitting whose O half-steps are exact
  Ornstein-Uhlenbeck updates.

When a step leaves O the crossing is located along the straight segment
travelled by the position (momentum frozen over the step), projected onto the
boundary and classified as outgoing or tangential from the sign of p . n.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _fallback, kernels
from .domains import FullSpace, Region
from .errors import BlowUpError, DomainError, ParameterError
from .model import CoefficientModel, KineticState

TANGENTIAL_THRESHOLD = 1e-8


@dataclass(frozen=True)
class IntegratorConfig:
    dt: float = 1e-3
    scheme: str | None = None
    crossing: str = "substep-interpolation"
    max_time: float = 10.0
    seed: int = 0
    stream_id: int = 0
    threshold: float = TANGENTIAL_THRESHOLD
    backend: str = "auto"

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ParameterError("dt must be positive and finite")
        if not self.max_time > 0:
            raise ParameterError("max_time must be positive")
        if self.dt > self.max_time:
            raise ParameterError("dt must not exceed max_time")
        if self.scheme not in (None, *kernels.SCHEMES):
            raise ParameterError(f"unknown scheme {self.scheme!r}")
        if self.crossing not in kernels.CROSSINGS:
            raise ParameterError(f"unknown crossing mode {self.crossing!r}")
        if self.threshold < 0:
            raise ParameterError("tangential threshold must be nonnegative")

    def resolved_scheme(self, model: CoefficientModel) -> str:
        if self.scheme is not None:
            return self.scheme
        return "langevin-splitting" if model.langevin is not None else "euler-maruyama"

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.max_time / self.dt - 1e-9))

    def plan(self, model: CoefficientModel, region: Region | None = None) -> kernels.StepPlan:
        region = region if region is not None else FullSpace(model.dim)
        return kernels.StepPlan(model, region, self.dt, self.resolved_scheme(model),
                                self.crossing, self.seed, self.threshold, self.backend)

    def replace(self, **kw) -> "IntegratorConfig":
        d = self.to_dict()
        d.update(kw)
        return IntegratorConfig(**d)

    def to_dict(self) -> dict:
        return {"dt": self.dt, "scheme": self.scheme, "crossing": self.crossing,
                "max_time": self.max_time, "seed": self.seed, "stream_id": self.stream_id,
                "threshold": self.threshold, "backend": self.backend}


@dataclass(frozen=True)
class ExitRecord:
    exit_time: float
    exit_state: KineticState
    classification: str
    crossed_at_substep: bool

    @property
    def outgoing(self) -> bool:
        return self.classification == "outgoing"


# --------------------------------------------------------------------------- single path


def step(state: KineticState, model: CoefficientModel, config: IntegratorConfig,
         rng_stream=None, step_index: int = 0, noise=None) -> KineticState:
    """One scheme update of a single state.

    Normals come from the counter RNG at ``(config.seed, stream, step_index)``
    unless ``noise`` is given explicitly (d values for Euler-Maruyama, 2d for
    the splitting scheme). ``rng_stream`` overrides ``config.stream_id``.
    """
    plan = config.plan(model)
    stream = config.stream_id if rng_stream is None else int(rng_stream)
    q = state.q[None, :].copy()
    p = state.p[None, :].copy()
    if noise is None:
        z = _fallback.noise(plan, np.array([stream], dtype=np.uint64), step_index)
    else:
        z = np.asarray(noise, dtype=float).reshape(1, -1)
        need = 2 * model.dim if plan.scheme_code == 0 else model.dim
        if z.shape[1] != need:
            raise ParameterError(f"{plan.scheme} needs {need} normals per step")
    with np.errstate(all="ignore"):
        qn, pn, _ = apply(plan, q, p, z)
    x = np.concatenate([qn[0], pn[0]])
    if not np.all(np.isfinite(x)) or np.any(np.abs(x) > _fallback.GUARD):
        raise BlowUpError("step left the finite guard region", last_state=state)
    return KineticState(qn[0], pn[0], state.t + config.dt)


def apply(plan, q, p, z):
    return _fallback.apply_step(plan, q, p, z)


@dataclass
class PathSummary:
    n_steps: int
    final_state: KineticState
    max_norm_sq: float
    max_displacement: float
    survived: bool
    path: np.ndarray | None = None


def _check_start(region: Region, q):
    if not np.all(region.contains(np.atleast_2d(q))):
        raise DomainError("starting position must lie inside O")


def simulate_until_exit(state: KineticState, model: CoefficientModel, domain: Region,
                        config: IntegratorConfig, rng_stream=None, record_path=False):
    """Step until the position leaves O or ``config.max_time`` is reached.

    Returns ``(PathSummary, ExitRecord | None)``; ``None`` means survival up to
    the horizon.
    """
    _check_start(domain, state.q)
    plan = config.plan(model, domain)
    stream = config.stream_id if rng_stream is None else int(rng_stream)
    b = kernels.alloc(state.q[None, :], state.p[None, :], [stream], track=True)
    nsteps = config.n_steps
    path = None
    if record_path:
        rows = [np.concatenate([[state.t], state.q, state.p])]
        done = nsteps
        for k in range(nsteps):
            kernels.run_batch(plan, b, k, k + 1)
            t = state.t + (b.etime[0] if b.status[0] == 1 else (k + 1) * config.dt)
            rows.append(np.concatenate([[t], b.q[0], b.p[0]]))
            if b.status[0] != 0:
                done = k + 1
                break
        path = np.array(rows)
    else:
        kernels.run_batch(plan, b, 0, nsteps)
        done = nsteps if b.status[0] == 0 else int(math.floor(b.etime[0] / config.dt)) + 1
    if b.status[0] == 2:
        last = KineticState(b.q[0], b.p[0], state.t)
        raise BlowUpError("trajectory left the finite guard region", last_state=last, index=0)
    exited = b.status[0] == 1
    t_end = state.t + (b.etime[0] if exited else nsteps * config.dt)
    final = KineticState(b.q[0], b.p[0], t_end)
    summary = PathSummary(done, final, float(b.track[0, 0]), float(b.track[0, 1]),
                          not exited, path)
    if not exited:
        return summary, None
    rec = ExitRecord(float(t_end), final, "outgoing" if b.outgoing[0] else "tangential",
                     bool(b.substep[0]))
    return summary, rec


# --------------------------------------------------------------------------- ensembles


@dataclass
class EnsembleResult:
    """Per-sample outcome of independent trajectories.

    ``exit_time`` is ``inf`` for samples that survived the horizon; ``q``/``p``
    hold the exit state for exited samples and the state at the horizon for
    survivors.
    """

    exit_time: np.ndarray
    q: np.ndarray
    p: np.ndarray
    outgoing: np.ndarray
    substep: np.ndarray
    horizon: float
    streams: np.ndarray
    track: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)

    @property
    def n(self):
        return len(self.exit_time)

    @property
    def survived(self):
        return ~np.isfinite(self.exit_time)

    def survival_at(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return (self.exit_time[None, :] > t[:, None]).mean(axis=1)

    def write_csv(self, path):
        d = self.q.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "exit_time"] + [f"exit_q{i + 1}" for i in range(d)]
                       + [f"exit_p{i + 1}" for i in range(d)]
                       + ["classification", "survived_flag"])
            for i in range(self.n):
                surv = not np.isfinite(self.exit_time[i])
                cls = "" if surv else ("outgoing" if self.outgoing[i] else "tangential")
                w.writerow([int(self.streams[i]), "" if surv else repr(float(self.exit_time[i]))]
                           + [repr(float(v)) for v in self.q[i]]
                           + [repr(float(v)) for v in self.p[i]]
                           + [cls, int(surv)])


def _as_starts(start, n, dim):
    """Normalise a start spec into (q, p) arrays of n rows."""
    if isinstance(start, KineticState):
        q = np.broadcast_to(start.q, (n, dim))
        p = np.broadcast_to(start.p, (n, dim))
        return q, p
    if callable(start):
        q, p = start(n)
        return np.asarray(q, dtype=float).reshape(n, dim), np.asarray(p, dtype=float).reshape(n, dim)
    q, p = start
    q = np.broadcast_to(np.asarray(q, dtype=float).reshape(-1, dim), (n, dim))
    p = np.broadcast_to(np.asarray(p, dtype=float).reshape(-1, dim), (n, dim))
    return q, p


def run_ensemble(start, model: CoefficientModel, domain: Region, config: IntegratorConfig,
                 n_samples: int, horizon: float | None = None, threads: int = 1,
                 track: bool = False, checkpoints=None, on_checkpoint=None) -> EnsembleResult:
    """Simulate ``n_samples`` independent absorbed trajectories.

    ``start`` is a KineticState, a ``(q, p)`` pair of arrays (one row per
    sample, or broadcastable), or a callable ``n -> (q, p)``. Sample ``i``
    uses RNG stream ``config.stream_id + i``. ``on_checkpoint(t, batch)`` is
    called at each checkpoint time with the live kernel batch.
    """
    horizon = config.max_time if horizon is None else float(horizon)
    q, p = _as_starts(start, n_samples, model.dim)
    _check_start(domain, q)
    plan = config.plan(model, domain)
    streams = config.stream_id + np.arange(n_samples, dtype=np.uint64)
    b = kernels.alloc(q, p, streams, track=track)
    total = int(math.ceil(horizon / config.dt - 1e-9))
    marks = sorted({min(total, int(round(t / config.dt))) for t in (checkpoints or [])})
    k = 0
    for m in marks + [total]:
        if m > k:
            kernels.run_batch(plan, b, k, m, threads)
            k = m
        if m in marks and on_checkpoint is not None:
            on_checkpoint(m * config.dt, b)
    blown = np.flatnonzero(b.status == 2)
    if blown.size:
        i = int(blown[0])
        raise BlowUpError(f"sample {i} left the finite guard region",
                          last_state=KineticState(b.q[i], b.p[i], 0.0), index=i)
    et = np.where(b.status == 1, b.etime, np.inf)
    prov = {"seed": config.seed, "dt": config.dt, "n_samples": n_samples,
            "stream_id": config.stream_id, "scheme": plan.scheme, "backend": plan.backend}
    return EnsembleResult(et, b.q, b.p, b.outgoing.astype(bool), b.substep.astype(bool),
                          horizon, streams, b.track, prov)


# --------------------------------------------------------------------------- survival curves


def wilson_interval(k, n, level=0.95):
    """Wilson score interval for a binomial proportion (vectorised)."""
    k = np.asarray(k, dtype=float)
    n = np.asarray(n, dtype=float)
    z = stats.norm.ppf(0.5 + level / 2.0)
    phat = k / n
    den = 1.0 + z * z / n
    centre = (phat + z * z / (2 * n)) / den
    half = z * np.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / den
    # the endpoints are exactly 0 and 1 at k = 0 and k = n; avoid rounding drift
    lo = np.where(k <= 0, 0.0, np.clip(centre - half, 0.0, 1.0))
    hi = np.where(k >= n, 1.0, np.clip(centre + half, 0.0, 1.0))
    return lo, hi


@dataclass
class SurvivalCurve:
    t: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    n: int
    level: float = 0.95
    provenance: dict = field(default_factory=dict)

    @classmethod
    def from_exit_times(cls, exit_times, times, level=0.95, provenance=None):
        et = np.asarray(exit_times, dtype=float)
        times = np.asarray(times, dtype=float)
        srt = np.sort(et)
        alive = len(et) - np.searchsorted(srt, times, side="right")
        lo, hi = wilson_interval(alive, len(et), level)
        return cls(times, alive / len(et), lo, hi, len(et), level, dict(provenance or {}))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "p_hat", "ci_lo", "ci_hi"])
            for row in zip(self.t, self.p_hat, self.ci_lo, self.ci_hi):
                w.writerow([repr(float(v)) for v in row])


def survival_probability(start, model, domain, config: IntegratorConfig, n_samples: int,
                         times=None, level=0.95, threads=1) -> SurvivalCurve:
    """Monte Carlo estimate of P(tau > t) on a fixed output grid with Wilson bands."""
    if n_samples < 100:
        raise ParameterError("survival_probability needs at least 100 samples")
    if times is None:
        times = np.linspace(0.0, config.max_time, 101)
    times = np.asarray(times, dtype=float)
    res = run_ensemble(start, model, domain, config, n_samples, horizon=float(times.max()),
                       threads=threads)
    return SurvivalCurve.from_exit_times(res.exit_time, times, level, res.provenance)


__all__ = ["IntegratorConfig", "ExitRecord", "PathSummary", "EnsembleResult", "SurvivalCurve",
           "step", "simulate_until_exit", "run_ensemble", "survival_probability",
           "wilson_interval", "TANGENTIAL_THRESHOLD"]
