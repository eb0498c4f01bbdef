"""Quasi-stationary distributions and decay rates.

Two independent estimators of the law conditioned on survival:

* :func:`fleming_viot_run` keeps N particles alive by cloning a uniformly
  chosen survivor onto every particle that exits. Its time-averaged
  empirical measure estimates the QSD and its kill rate estimates lambda0.
* :func:`conditioned_mc` simulates independent trajectories and keeps the
  survivors at a fixed time.

:func:`estimate_decay_rate` fits the exponential tail of a survival curve,
giving a third route to lambda0.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .domains import Region
from .errors import (BlowUpError, ExtinctionError, InsufficientSurvivorsError,
                     NonExponentialRegimeError, ParameterError)
from .integrate import IntegratorConfig, SurvivalCurve, _as_starts, _check_start, run_ensemble
from .model import CoefficientModel, KineticState
from .rng import StreamRNG


# --------------------------------------------------------------------------- binning


@dataclass(frozen=True)
class Binning:
    """Uniform phase-space bins over the window [lo, hi) in (q, p) coordinates."""

    lo: tuple
    hi: tuple
    nb: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        nb = tuple(int(v) for v in np.broadcast_to(self.nb, (len(lo),)))
        if len(lo) != len(hi) or len(lo) % 2 or not all(a < b for a, b in zip(lo, hi)):
            raise ParameterError("binning needs 2d bounds with lo < hi")
        if min(nb) < 1:
            raise ParameterError("bin counts must be positive")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "nb", nb)

    @classmethod
    def window(cls, q_lo, q_hi, p_lo, p_hi, nb=40):
        q_lo, q_hi, p_lo, p_hi = (np.atleast_1d(np.asarray(v, dtype=float))
                                  for v in (q_lo, q_hi, p_lo, p_hi))
        return cls(tuple(q_lo) + tuple(p_lo), tuple(q_hi) + tuple(p_hi),
                   np.broadcast_to(nb, (2 * len(q_lo),)))

    @property
    def dim(self):
        return len(self.lo) // 2

    @property
    def n_bins(self):
        return int(np.prod(self.nb))

    @property
    def arrays(self):
        return (np.asarray(self.lo, dtype=np.float64), np.asarray(self.hi, dtype=np.float64),
                np.asarray(self.nb, dtype=np.int64))

    @property
    def widths(self):
        lo, hi, nb = self.arrays
        return (hi - lo) / nb

    def centers(self):
        lo, hi, nb = self.arrays
        axes = [lo[a] + (np.arange(nb[a]) + 0.5) * (hi[a] - lo[a]) / nb[a] for a in range(len(nb))]
        return np.stack(np.meshgrid(*axes, indexing="ij"), -1).reshape(-1, len(nb))

    def new_counts(self, blocks=None):
        shape = (self.n_bins + 1,) if blocks is None else (blocks, self.n_bins + 1)
        return np.zeros(shape, dtype=np.int64)

    def counts(self, q, p):
        c = self.new_counts()
        lo, hi, nb = self.arrays
        kernels.histogram(np.atleast_2d(q), np.atleast_2d(p), lo, hi, nb, c)
        return c

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi), "nb": list(self.nb)}


def normalise(counts) -> np.ndarray:
    c = np.asarray(counts, dtype=float)
    tot = c.sum()
    if tot <= 0:
        raise ParameterError("cannot normalise an empty histogram")
    return c / tot


def tv_distance(w1, w2) -> float:
    """Total variation distance between two weight vectors on the same bins."""
    return 0.5 * float(np.abs(np.asarray(w1, dtype=float) - np.asarray(w2, dtype=float)).sum())


# --------------------------------------------------------------------------- data types


@dataclass
class ParticleEnsemble:
    q: np.ndarray
    p: np.ndarray
    streams: np.ndarray
    kill_count: int = 0
    epoch: float = 0.0
    step: int = 0

    @property
    def n(self):
        return self.q.shape[0]

    def all_inside(self, region: Region) -> bool:
        return bool(np.all(region.contains(self.q)))


@dataclass
class QsdEstimate:
    """Histogram estimate of a conditioned law plus a decay-rate estimate.

    ``weights`` has ``binning.n_bins + 1`` entries; the last is the mass
    outside the window. Weights sum to one.
    """

    binning: Binning
    weights: np.ndarray
    lambda0_hat: float
    lambda0_se: float
    burn_in: float
    n_particles: int
    horizon: float
    dt: float
    kill_count: int = 0
    series_times: np.ndarray | None = None
    series_counts: np.ndarray | None = None
    kill_series: np.ndarray | None = None
    provenance: dict = field(default_factory=dict)
    ensemble: ParticleEnsemble | None = None

    @property
    def overflow(self) -> float:
        return float(self.weights[-1])

    @property
    def window_weights(self):
        return self.weights[:-1]

    def moments(self):
        """Mean and covariance of the in-window histogram (bin centres)."""
        w = normalise(self.window_weights)
        c = self.binning.centers()
        mean = w @ c
        cov = ((c - mean) * w[:, None]).T @ (c - mean)
        return mean, cov

    def expectation(self, f):
        """Histogram expectation of f(q, p) over the window (diagnostic)."""
        w = normalise(self.window_weights)
        c = self.binning.centers()
        d = self.binning.dim
        return float(w @ np.asarray(f(c[:, :d], c[:, d:]), dtype=float))

    def to_dict(self):
        return {"binning": self.binning.to_dict(), "lambda0_hat": self.lambda0_hat,
                "lambda0_se": self.lambda0_se, "burn_in": self.burn_in,
                "n_particles": self.n_particles, "horizon": self.horizon, "dt": self.dt,
                "kill_count": self.kill_count, "overflow": self.overflow,
                "provenance": self.provenance}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def write_csv(self, path):
        d = self.binning.dim
        names = [f"q{i + 1}" for i in range(d)] + [f"p{i + 1}" for i in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bin_id"] + [f"center_{n}" for n in names] + ["weight"])
            for i, (c, wt) in enumerate(zip(self.binning.centers(), self.window_weights)):
                w.writerow([i] + [repr(float(v)) for v in c] + [repr(float(wt))])
            w.writerow(["overflow"] + [""] * (2 * d) + [repr(self.overflow)])

    def write_series_csv(self, path):
        if self.series_counts is None:
            raise ParameterError("no time series recorded")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "bin_id", "weight"])
            for t, row in zip(self.series_times, self.series_counts):
                tot = row.sum()
                for b in np.flatnonzero(row):
                    bid = "overflow" if b == len(row) - 1 else int(b)
                    w.writerow([repr(float(t)), bid, repr(float(row[b] / tot))])


@dataclass
class ConditionedLaw:
    binning: Binning
    weights: np.ndarray
    t: float
    n_samples: int
    n_survivors: int
    q: np.ndarray
    p: np.ndarray
    provenance: dict = field(default_factory=dict)

    @property
    def survival_fraction(self):
        return self.n_survivors / self.n_samples

    def to_dict(self):
        return {"t": self.t, "n_samples": self.n_samples, "n_survivors": self.n_survivors,
                "survival_fraction": self.survival_fraction, "overflow": float(self.weights[-1]),
                "binning": self.binning.to_dict(), "provenance": self.provenance}


# --------------------------------------------------------------------------- initial laws


def _initial(initial, n, dim, seed, region=None):
    if isinstance(initial, QsdEstimate):
        return start_from_estimate(initial, seed, region=region)(n)
    return _as_starts(initial, n, dim)


# --------------------------------------------------------------------------- Fleming-Viot


def block_bootstrap_se(kills_per_block, exposure_per_block, n_boot=2000, seed=0):
    """Bootstrap standard error of sum(kills) / sum(exposure) over resampled blocks."""
    k = np.asarray(kills_per_block, dtype=float)
    e = np.asarray(exposure_per_block, dtype=float)
    m = len(k)
    if m < 2:
        return float("nan")
    idx = StreamRNG(seed, 0).integers(m, n_boot * m).reshape(n_boot, m)
    rates = k[idx].sum(axis=1) / e[idx].sum(axis=1)
    return float(np.std(rates, ddof=1))


def fleming_viot_run(initial, model: CoefficientModel, domain: Region, n_particles: int,
                     config: IntegratorConfig, horizon: float | None = None,
                     burn_in: float | None = None, binning: Binning | None = None,
                     record_every: float | None = None, block_length: float = 1.0,
                     threads: int = 1, keep_ensemble: bool = False) -> QsdEstimate:
    """Run a Fleming-Viot particle system and time-average it after burn-in.

    Epochs are single time steps. Exited particles are reborn, in ascending
    index order, on a survivor chosen uniformly with the resampling RNG
    stream; each particle keeps its own noise stream. The kill-rate estimate
    is kills / (N * elapsed time after burn-in). Its standard error is the
    bootstrap over blocks of ``block_length`` time units, floored at the
    Poisson counting error sqrt(kills) / (N * elapsed).
    """
    if n_particles < 2:
        raise ParameterError("Fleming-Viot needs at least two particles")
    horizon = config.max_time if horizon is None else float(horizon)
    burn_in = 0.5 * horizon if burn_in is None else float(burn_in)
    if not 0 <= burn_in < horizon:
        raise ParameterError("burn-in must lie in [0, horizon)")
    dt = config.dt
    n_steps = int(math.ceil(horizon / dt - 1e-9))
    burn_steps = int(round(burn_in / dt))
    if binning is None:
        binning = _default_binning(domain, model.dim)
    q, p = _initial(initial, n_particles, model.dim, config.seed, domain)
    q = np.ascontiguousarray(q, dtype=np.float64).copy()
    p = np.ascontiguousarray(p, dtype=np.float64).copy()
    _check_start(domain, q)
    streams = config.stream_id + np.arange(n_particles, dtype=np.uint64)
    plan = config.plan(model, domain)

    rec_steps = max(1, int(round((record_every if record_every else block_length) / dt)))
    e = np.arange(n_steps)
    record_block = np.where(e >= burn_steps, (e - burn_steps) // rec_steps, -1).astype(np.int64)
    nblocks = int(record_block.max()) + 1 if n_steps > burn_steps else 0
    counts = binning.new_counts(max(nblocks, 1))
    kills = np.zeros(n_steps, dtype=np.int64)
    lo, hi, nb = binning.arrays
    code, epoch, index = kernels.fv_run(plan, q, p, streams, 0, n_steps, record_block, lo, hi,
                                        nb, counts, kills, threads)
    if code == 1:
        raise ExtinctionError(f"all particles exited at epoch {epoch}",
                              kill_count=int(kills[:epoch].sum()), time=(epoch + 1) * dt)
    if code == 2:
        raise BlowUpError(f"particle {index} left the finite guard region at epoch {epoch}",
                          last_state=KineticState(q[index], p[index], epoch * dt), index=index)

    post = kills[burn_steps:]
    elapsed = (n_steps - burn_steps) * dt
    lam = post.sum() / (n_particles * elapsed)
    blk_steps = max(1, int(round(block_length / dt)))
    nbk = len(post) // blk_steps
    kb = post[: nbk * blk_steps].reshape(nbk, blk_steps).sum(axis=1)
    se = block_bootstrap_se(kb, np.full(nbk, n_particles * blk_steps * dt), seed=config.seed)
    # a bootstrap over a handful of blocks can undershoot the counting noise
    se = max(se if math.isfinite(se) else 0.0, math.sqrt(post.sum()) / (n_particles * elapsed))
    if post.sum() == 0:
        se = 0.0
    weights = normalise(counts.sum(axis=0))
    times = burn_in + (np.arange(nblocks) + 1) * rec_steps * dt
    est = QsdEstimate(binning, weights, float(lam), float(se), burn_steps * dt, n_particles,
                      n_steps * dt, dt, int(kills.sum()), times, counts[:nblocks].copy(), kills,
                      {"seed": config.seed, "dt": dt, "n_particles": n_particles,
                       "scheme": plan.scheme, "backend": plan.backend,
                       "stream_id": config.stream_id, "block_length": block_length})
    if keep_ensemble:
        est.ensemble = ParticleEnsemble(q, p, streams, int(kills.sum()), n_steps * dt, n_steps)
    return est


def _default_binning(domain: Region, dim: int, nb=40, p_max=4.0):
    if domain.bounded:
        lo, hi = domain.bounding_box()
    else:
        lo, hi = -np.full(dim, 4.0), np.full(dim, 4.0)
    return Binning.window(lo, hi, -np.full(dim, p_max), np.full(dim, p_max), nb)


# --------------------------------------------------------------------------- conditioned MC


def conditioned_mc(start, model: CoefficientModel, domain: Region, t: float, n_samples: int,
                   config: IntegratorConfig, binning: Binning | None = None, threads: int = 1,
                   pilot_size: int = 2000, min_survivors: int = 30) -> ConditionedLaw:
    """Law of X_t given survival up to t, by brute-force independent sampling.

    A pilot run of ``pilot_size`` trajectories estimates the survival fraction
    first and refuses runs expected to keep fewer than 100 survivors.
    """
    if binning is None:
        binning = _default_binning(domain, model.dim)
    prov = {"seed": config.seed, "dt": config.dt, "n_samples": n_samples,
            "stream_id": config.stream_id}
    if t <= 0:
        q, p = _initial(start, n_samples, model.dim, config.seed, domain)
        q = np.array(q, dtype=float)
        p = np.array(p, dtype=float)
        _check_start(domain, q)
        return ConditionedLaw(binning, normalise(binning.counts(q, p)), 0.0, n_samples,
                              n_samples, q, p, prov)
    starts = _initial(start, n_samples, model.dim, config.seed, domain)
    npilot = min(pilot_size, n_samples)
    if npilot < n_samples:
        pq, pp = (np.asarray(a)[:npilot] for a in starts)
        pilot = run_ensemble((pq, pp), model, domain, config, npilot, horizon=t,
                             threads=threads)
        frac = float(pilot.survived.mean())
        if frac * n_samples < 100:
            raise InsufficientSurvivorsError(
                f"pilot survival fraction {frac:.3g} predicts fewer than 100 survivors",
                survival_fraction=frac)
    res = run_ensemble(starts, model, domain, config, n_samples, horizon=t, threads=threads)
    alive = res.survived
    ns = int(alive.sum())
    if ns < min_survivors:
        raise InsufficientSurvivorsError(f"only {ns} survivors at t={t}",
                                         survival_fraction=ns / n_samples)
    q, p = res.q[alive], res.p[alive]
    prov["backend"] = res.provenance["backend"]
    return ConditionedLaw(binning, normalise(binning.counts(q, p)), float(t), n_samples, ns,
                          q, p, prov)


# --------------------------------------------------------------------------- decay rate


@dataclass
class DecayRateEstimate:
    lambda0_hat: float
    stderr: float
    burn_in: float
    n_points: int
    candidates: list = field(default_factory=list)

    def to_dict(self):
        return {"lambda0_hat": self.lambda0_hat, "stderr": self.stderr, "burn_in": self.burn_in,
                "n_points": self.n_points}


def _tail_fit(t, p, n, iterations=4):
    """Slope of log p against t: GLS with cumulative binomial covariance, or OLS if n is None.

    The log-survival estimate has (nearly) independent increments, so
    Cov(log p(s), log p(t)) = v(min(s, t)) with v = (1 - P)/(n P). v is
    evaluated on the fitted curve, not on p itself: ties in the empirical
    tail would otherwise give zero-variance increments that pin the slope.
    """
    y = np.log(p)
    X = np.stack([np.ones_like(t), t], axis=1)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    if n is None:
        resid = y - X @ coef
        dof = max(len(t) - 2, 1)
        s2 = float(resid @ resid) / dof
        cov = s2 * np.linalg.inv(X.T @ X)
        return -coef[1], math.sqrt(max(cov[1, 1], 0.0))
    idx = np.minimum.outer(np.arange(len(t)), np.arange(len(t)))
    for _ in range(iterations):
        pf = np.clip(np.exp(X @ coef), 1e-300, 1.0)
        v = np.maximum.accumulate((1.0 - pf) / (n * pf))
        C = v[idx] + np.eye(len(t)) * (1e-12 + 1e-9 * v.max())
        L = np.linalg.cholesky(C)
        Xw = np.linalg.solve(L, X)
        yw = np.linalg.solve(L, y)
        A = Xw.T @ Xw
        coef = np.linalg.solve(A, Xw.T @ yw)
    cov = np.linalg.inv(A)
    return -coef[1], math.sqrt(max(cov[1, 1], 0.0))


def estimate_decay_rate(curve, n_samples=None, burn_in=None, n_candidates=11,
                        min_points=10) -> DecayRateEstimate:
    """Exponential decay rate of a survival curve.

    ``curve`` is a :class:`SurvivalCurve` or a ``(t, p_hat)`` pair; in the
    latter case ``n_samples=None`` marks an exact curve (ordinary least
    squares). Only points with p_hat above ten times the binomial noise floor
    1/n enter the fit. Without an explicit ``burn_in`` the onset is the
    smallest candidate in [0, T/2] whose slope agrees with every later
    candidate's slope within that candidate's standard error.
    """
    if isinstance(curve, SurvivalCurve):
        t, p, n = curve.t, curve.p_hat, curve.n
    else:
        t, p = (np.asarray(a, dtype=float) for a in curve)
        n = n_samples
    t = np.asarray(t, dtype=float)
    p = np.asarray(p, dtype=float)
    floor = 10.0 / n if n else 0.0
    if np.all(p >= 1.0):
        return DecayRateEstimate(0.0, 0.0, 0.0 if burn_in is None else float(burn_in), len(t))
    ok = (p > floor) & (p > 0)
    T = t[ok].max() if ok.any() else 0.0

    def fit(b):
        sel = ok & (t >= b)
        if sel.sum() < min_points:
            raise NonExponentialRegimeError(
                f"only {int(sel.sum())} usable points after burn-in {b:g}")
        if np.all(p[sel] >= 1.0):
            return 0.0, 0.0, int(sel.sum())
        lam, se = _tail_fit(t[sel], p[sel], n)
        return lam, se, int(sel.sum())

    if burn_in is not None:
        lam, se, m = fit(float(burn_in))
        return DecayRateEstimate(max(lam, 0.0), se, float(burn_in), m)
    grid = t[ok]
    cands = np.unique(grid[np.searchsorted(grid, np.linspace(0.0, 0.5 * T, n_candidates))
                           .clip(0, len(grid) - 1)])
    fits = []
    for b in cands:
        try:
            fits.append((float(b),) + fit(b))
        except NonExponentialRegimeError:
            break
    if not fits:
        raise NonExponentialRegimeError("no burn-in candidate leaves enough usable points")
    chosen = fits[-1]
    for i, (b, lam, se, m) in enumerate(fits):
        if all(abs(l2 - lam) <= max(s2, 1e-12) for _, l2, s2, _ in fits[i + 1:]):
            chosen = fits[i]
            break
    b, lam, se, m = chosen
    return DecayRateEstimate(max(lam, 0.0), se, b, m, [f[:3] for f in fits])


def survival_proxy(curve: SurvivalCurve, lambda0: float):
    """e^{lambda0 t} P(tau > t); tends to a constant depending on the start."""
    return curve.t, np.exp(lambda0 * curve.t) * curve.p_hat


# --------------------------------------------------------------------------- resampling


def start_from_estimate(est: QsdEstimate, seed: int = 0, stream: int = 0, region=None):
    """Sampler ``n -> (q, p)`` drawing a bin by weight, then uniformly within it.

    The overflow bin is excluded. If ``region`` is given, draws whose position
    falls outside it (possible only on bin edges) are redrawn.
    """
    w = np.asarray(est.window_weights, dtype=float)
    if w.sum() <= 0:
        raise ParameterError("cannot sample from an empty histogram")
    cdf = np.cumsum(w / w.sum())
    cdf[-1] = 1.0
    gen = StreamRNG(seed, stream)
    b = est.binning
    lo, hi, nb = b.arrays
    d = b.dim

    def draw(n):
        idx = np.minimum(np.searchsorted(cdf, gen.random(n), side="right"), len(cdf) - 1)
        multi = np.stack(np.unravel_index(idx, tuple(nb)), axis=1)
        u = gen.random(n * 2 * d).reshape(n, 2 * d)
        x = lo + (multi + u) * (hi - lo) / nb
        return x

    def sampler(n):
        x = draw(n)
        if region is not None:
            for _ in range(100):
                bad = ~region.contains(x[:, :d])
                if not bad.any():
                    break
                x[bad] = draw(int(bad.sum()))
        return x[:, :d].copy(), x[:, d:].copy()

    return sampler


__all__ = ["Binning", "ParticleEnsemble", "QsdEstimate", "ConditionedLaw", "DecayRateEstimate",
           "fleming_viot_run", "conditioned_mc", "estimate_decay_rate", "start_from_estimate",
           "tv_distance", "normalise", "block_bootstrap_se", "survival_proxy"]
