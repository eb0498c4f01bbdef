"""Statistical batteries and Monte Carlo probes for the absorbed kinetic process.

Every probe is a falsification attempt at a fixed resolution: it can fail or
come back inconclusive, it cannot certify a statement for all t or all x.
Significance is 0.01 with a Bonferroni split inside each battery.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import kernels
from .domains import Ball, Interval, Region
from .errors import BlowUpError, InsufficientExitsError, ParameterError
from .integrate import IntegratorConfig, _check_start, run_ensemble, wilson_interval
from .model import CoefficientModel, KineticState, PhaseBox
from .qsd import Binning, QsdEstimate, start_from_estimate

LEVEL = 0.01
PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
EXIT_STATUS = {PASS: 0, FAIL: 2, INCONCLUSIVE: 3}


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _dumps(obj):
    return json.dumps(obj, indent=2, default=_json_default)


def _prov(config: IntegratorConfig | None, **extra):
    out = {} if config is None else {"seed": config.seed, "dt": config.dt,
                                     "stream_id": config.stream_id}
    out.update(extra)
    return out


@dataclass
class StatTestReport:
    test_name: str
    statistic: float
    p_value: float | None
    passed: bool
    sample_size: int
    level: float = LEVEL
    slack: float | None = None
    informational: bool = False
    details: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.p_value is not None and not (0.0 <= self.p_value <= 1.0):
            raise ValueError("p-value outside [0, 1]")

    def to_dict(self):
        return {"test_name": self.test_name, "statistic": self.statistic,
                "p_value": self.p_value, "passed": self.passed,
                "sample_size": self.sample_size, "level": self.level, "slack": self.slack,
                "informational": self.informational, "details": self.details,
                "provenance": self.provenance}


# --------------------------------------------------------------------------- exit-time tests


def _trunc_cdf(t, rate, horizon):
    """CDF of an Exp(rate) variable conditioned on being at most ``horizon``."""
    num = -np.expm1(-rate * t)
    if math.isinf(horizon):
        return num
    return num / -math.expm1(-rate * horizon)


def censored_rate(times, horizon=math.inf) -> float:
    """MLE of an exponential rate from exit times censored at ``horizon`` (inf = survived)."""
    t = np.asarray(times, dtype=float)
    ex = np.isfinite(t) & (t <= horizon)
    expo = np.where(ex, t, horizon).sum()
    return float(ex.sum() / expo) if expo > 0 else math.inf


def _ks_stat(x, rate, horizon):
    x = np.sort(x)
    n = len(x)
    F = _trunc_cdf(x, rate, horizon)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - F), np.max(F - (i - 1) / n)))


def ks_exponential(times, rate=None, horizon=math.inf, n_boot=999, seed=0,
                   level=LEVEL) -> StatTestReport:
    """KS test of exit times against an exponential law.

    Exit times are the finite entries of ``times`` (censored samples carry
    ``inf`` and enter through the truncated CDF). With ``rate`` given this is
    the plug-in test with the asymptotic Kolmogorov p-value. With ``rate``
    None the rate is re-fit by censored MLE on the same sample and the
    p-value comes from a parametric bootstrap that repeats the fit.
    """
    t = np.asarray(times, dtype=float)
    ex = t[np.isfinite(t) & (t <= horizon)]
    n_all, n = len(t), len(ex)
    if n < 2:
        raise InsufficientExitsError("fewer than two exits", survival_fraction=1 - n / max(n_all, 1))
    details = {"n_exits": n, "horizon": horizon}
    if rate is not None:
        D = _ks_stat(ex, float(rate), horizon)
        p = float(stats.kstwo.sf(D, n))
        details["rate"] = float(rate)
        name = "ks_exponential_plugin"
    else:
        lam = censored_rate(t, horizon)
        D = _ks_stat(ex, lam, horizon)
        gen = np.random.default_rng([int(seed), 0x4B53])
        hits = 0
        for _ in range(n_boot):
            sim = gen.exponential(1.0 / lam, n_all)
            sim = np.where(sim <= horizon, sim, np.inf)
            sx = sim[np.isfinite(sim)]
            if len(sx) < 2:
                continue
            hits += _ks_stat(sx, censored_rate(sim, horizon), horizon) >= D
        p = (1.0 + hits) / (n_boot + 1.0)
        details.update({"rate": lam, "n_boot": n_boot})
        name = "ks_exponential_refit"
    return StatTestReport(name, D, min(1.0, p), p >= level, n, level, details=details)


def exit_categories(domain: Region, q) -> np.ndarray:
    """Exit-point category: side of an interval, or one of 8 angular sectors of a ball."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if isinstance(domain, Interval) or (isinstance(domain, Ball) and q.shape[1] == 1):
        mid = 0.5 * (domain.left + domain.right) if isinstance(domain, Interval) \
            else domain.center[0]
        return (q[:, 0] > mid).astype(int)
    if isinstance(domain, Ball):
        c = np.asarray(domain.center)
        ang = np.arctan2(q[:, 1] - c[1], q[:, 0] - c[0])
        return np.minimum(((ang + math.pi) / (2 * math.pi) * 8).astype(int), 7)
    raise ParameterError(f"no exit-point categories for a {domain.kind} domain")


def chi2_independence(categories, times, n_quantiles=4, level=LEVEL) -> StatTestReport:
    """Chi-square test of exit category against exit-time quantile class."""
    cat = np.asarray(categories)
    t = np.asarray(times, dtype=float)
    edges = np.quantile(t, np.linspace(0, 1, n_quantiles + 1)[1:-1])
    tq = np.searchsorted(edges, t, side="right")
    cats = np.unique(cat)
    table = np.array([[np.sum((cat == c) & (tq == j)) for j in range(n_quantiles)] for c in cats])
    table = table[table.sum(1) > 0][:, table.sum(0) > 0]
    details = {"table": table.tolist(), "quantile_edges": edges.tolist()}
    if table.shape[0] < 2 or table.shape[1] < 2:
        details["degenerate"] = True
        return StatTestReport("chi2_side_by_time_quantile", 0.0, 1.0, True, len(t), level,
                              details=details)
    chi2, p, dof, _ = stats.chi2_contingency(table, correction=False)
    details["dof"] = int(dof)
    return StatTestReport("chi2_side_by_time_quantile", float(chi2), float(p), p >= level, len(t),
                          level, details=details)


def memoryless_check(times, s, t, level=LEVEL) -> StatTestReport:
    """z-test of P(tau > s + t | tau > s) against P(tau > t).

    Both sides come from the same sample, so the variance of the difference
    uses the delta method on the joint exceedance indicators
    1{tau > s}, 1{tau > s + t}, 1{tau > t}.
    """
    x = np.asarray(times, dtype=float)
    n = len(x)
    name = f"memoryless_s{s:g}_t{t:g}"
    ns = int(np.sum(x > s))
    if ns == 0:
        return StatTestReport(name, float("nan"), None, False, n, level,
                              details={"reason": "no survivors at s"})
    a = np.array([s, s + t, t], dtype=float)
    m = np.array([np.mean(x > v) for v in a])
    r = m[1] / m[0]
    pt = m[2]
    cov = np.array([[np.mean(x > max(u, v)) for v in a] for u in a]) - np.outer(m, m)
    grad = np.array([-m[1] / m[0] ** 2, 1.0 / m[0], -1.0])
    var = float(grad @ cov @ grad) / n
    diff = r - pt
    if var <= 0:
        z = 0.0 if diff == 0 else math.copysign(math.inf, diff)
    else:
        z = float(diff / math.sqrt(var))
    p = float(2 * stats.norm.sf(abs(z)))
    return StatTestReport(name, z, p, p >= level, n, level, slack=float(abs(diff)),
                          details={"conditional": float(r), "unconditional": float(pt),
                                   "se": math.sqrt(max(var, 0.0)), "n_survived_s": ns})


@dataclass
class BatteryResult:
    name: str
    reports: list
    outcome: str
    negative_control: bool = False
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self):
        return self.outcome == PASS

    @property
    def exit_status(self):
        return EXIT_STATUS[self.outcome]

    def __getitem__(self, name) -> StatTestReport:
        for r in self.reports:
            if r.test_name == name:
                return r
        raise KeyError(name)

    def to_dict(self):
        return {"battery": self.name, "outcome": self.outcome, "passed": self.passed,
                "negative_control": self.negative_control,
                "reports": [r.to_dict() for r in self.reports], "provenance": self.provenance}

    def to_json(self):
        return _dumps(self.to_dict())


def exit_time_battery(times, categories=None, horizon=math.inf, lambda0_hat=None,
                      pairs=((1, 1), (1, 2), (2, 2)), level=LEVEL, n_boot=999, seed=0,
                      negative_control=False, provenance=None) -> BatteryResult:
    """Memoryless-exit battery on precomputed exit data.

    Gate tests (Bonferroni over their count): re-fit KS, chi-square
    independence when categories are given, and one memorylessness test per
    (s, t) pair with s + t within the horizon. The plug-in KS against
    ``lambda0_hat`` is reported as informational. In negative-control mode
    the battery passes when the re-fit KS rejects.
    """
    t = np.asarray(times, dtype=float)
    ok = np.isfinite(t) & (t <= horizon)
    pairs = [(s, u) for s, u in pairs if s + u <= horizon]
    m = 1 + (categories is not None) + len(pairs)
    lv = level / m
    # the bootstrap p-value must be able to fall below the per-test level
    n_boot = max(int(n_boot), math.ceil(2.0 / lv))
    reps = [ks_exponential(t, None, horizon, n_boot, seed, lv)]
    if lambda0_hat is not None:
        r = ks_exponential(t, lambda0_hat, horizon, level=lv)
        r.informational = True
        reps.append(r)
    if categories is not None:
        reps.append(chi2_independence(np.asarray(categories)[ok], t[ok], level=lv))
    reps += [memoryless_check(np.where(ok, t, np.inf), s, u, lv) for s, u in pairs]
    for r in reps:
        r.details["bonferroni_tests"] = m
    gate = [r for r in reps if not r.informational]
    if negative_control:
        outcome = PASS if not reps[0].passed else FAIL
    else:
        outcome = PASS if all(r.passed for r in gate) else FAIL
    return BatteryResult("exit-law", reps, outcome, negative_control, dict(provenance or {}))


def exit_law_battery(qsd_sampler, model: CoefficientModel, domain: Region, n_samples: int,
                     config: IntegratorConfig, lambda0_hat=None, horizon=None,
                     negative_control=False, min_exits=1000, level=LEVEL, n_boot=999,
                     threads=1) -> BatteryResult:
    """Simulate exits from ``qsd_sampler`` and run :func:`exit_time_battery`.

    ``qsd_sampler`` is a QsdEstimate (resampled bin by weight; its decay rate
    becomes the plug-in rate), a callable ``n -> (q, p)`` or a KineticState.
    """
    if n_samples < 1000:
        raise ParameterError("exit_law_battery needs n_samples >= 1000")
    if isinstance(qsd_sampler, QsdEstimate):
        if lambda0_hat is None:
            lambda0_hat = qsd_sampler.lambda0_hat
        qsd_sampler = start_from_estimate(qsd_sampler, config.seed, stream=1, region=domain)
    horizon = config.max_time if horizon is None else float(horizon)
    res = run_ensemble(qsd_sampler, model, domain, config, n_samples, horizon, threads)
    ex = ~res.survived
    if ex.sum() < min(min_exits, n_samples):
        raise InsufficientExitsError(
            f"only {int(ex.sum())} exits within horizon {horizon:g}",
            survival_fraction=float(res.survived.mean()))
    try:
        cats = np.zeros(n_samples, dtype=int)
        cats[ex] = exit_categories(domain, res.q[ex])
    except ParameterError:
        cats = None
    prov = _prov(config, n_samples=n_samples, horizon=horizon, exits=int(ex.sum()),
                 scheme=res.provenance.get("scheme"))
    return exit_time_battery(res.exit_time, cats, horizon, lambda0_hat, level=level,
                             n_boot=n_boot, seed=config.seed, negative_control=negative_control,
                             provenance=prov)


# --------------------------------------------------------------------------- grid ensembles


def _grid(K):
    if isinstance(K, PhaseBox):
        return K.grid(5)
    q, p = K
    return np.atleast_2d(np.asarray(q, dtype=float)), np.atleast_2d(np.asarray(p, dtype=float))


def _membership(A, dim):
    if A is None:
        return lambda q, p: np.ones(len(q), dtype=bool)
    if isinstance(A, PhaseBox):
        return A.contains
    if isinstance(A, Region):
        return lambda q, p: A.contains(q)
    return A


def grid_occupation(grid, model, domain, config, n_samples, times, A=None, threads=1):
    """Counts of samples alive and inside ``A`` at each time, per grid start.

    Grid point j uses streams ``stream_id + j * n_samples + i``. Returns an
    array of shape (len(times), n_grid).
    """
    q0, p0 = _grid(grid)
    g = len(q0)
    _check_start(domain, q0)
    inside = _membership(A, model.dim)
    times = sorted(float(t) for t in times)
    counts = {}

    def hook(t, b):
        live = b.status == 0
        hit = np.zeros(len(live), dtype=bool)
        hit[live] = inside(b.q[live], b.p[live])
        counts[round(t / config.dt)] = hit.reshape(g, n_samples).sum(axis=1)

    qs = np.repeat(q0, n_samples, axis=0)
    ps = np.repeat(p0, n_samples, axis=0)
    run_ensemble((qs, ps), model, domain, config, g * n_samples, max(times), threads,
                 checkpoints=times, on_checkpoint=hook)
    total = int(math.ceil(max(times) / config.dt - 1e-9))
    rows = [counts[min(total, int(round(t / config.dt)))] for t in times]
    return np.array(rows, dtype=np.int64), q0, p0


@dataclass
class HarnackReport:
    rows: list
    grid: list
    n_samples: int
    level: float
    outcome: str
    spread: float | None
    provenance: dict = field(default_factory=dict)

    @property
    def exit_status(self):
        return EXIT_STATUS[self.outcome]

    def ratios(self):
        return [r["ratio"] for r in self.rows]

    def to_dict(self):
        return {"rows": self.rows, "grid": self.grid, "n_samples": self.n_samples,
                "level": self.level, "outcome": self.outcome, "ratio_spread": self.spread,
                "provenance": self.provenance}

    def to_json(self):
        return _dumps(self.to_dict())


def harnack_ratio_scan(A, K, model: CoefficientModel, domain: Region, times, T: float,
                       n_samples: int, config: IntegratorConfig, level: float = 0.99,
                       spread_limit: float | None = 2.0, threads=1) -> HarnackReport:
    """R(t) = max_x u_A(t, x) / min_x u_A(t + T, x) over the grid K.

    u_A(t, x) = P_x(t < tau, X_t in A) is estimated per grid start with
    Wilson bounds at ``level``. A ratio is reported only when the Wilson
    lower bound of its denominator is positive; otherwise the row is
    inconclusive. The scan passes when every row is conclusive and, if
    ``spread_limit`` is set, max R / min R is below it.
    """
    times = [float(t) for t in times]
    all_t = sorted(set(times) | {t + T for t in times})
    counts, q0, p0 = grid_occupation(K, model, domain, config, n_samples, all_t, A, threads)
    u = counts / n_samples
    lo, hi = wilson_interval(counts, n_samples, level)
    se = np.sqrt(u * (1 - u) / n_samples)
    idx = {t: i for i, t in enumerate(all_t)}
    rows = []
    for t in times:
        a, b = idx[t], idx[t + T]
        jn, jd = int(np.argmax(u[a])), int(np.argmin(u[b]))
        num, den = u[a, jn], u[b, jd]
        row = {"t": t, "T": T, "num": float(num), "den": float(den),
               "num_argmax": [float(v) for v in np.r_[q0[jn], p0[jn]]],
               "den_argmin": [float(v) for v in np.r_[q0[jd], p0[jd]]],
               "den_wilson_lo": float(lo[b, jd]), "conclusive": bool(lo[b].min() > 0)}
        if row["conclusive"] and den > 0:
            R = num / den
            rel_num = se[a, jn] / num if num > 0 else 0.0
            rel = math.hypot(rel_num, se[b, jd] / den)
            row.update({"ratio": float(R), "ratio_se": float(R * rel),
                        "ratio_lo": float(lo[a].max() / hi[b].min()),
                        "ratio_hi": float(hi[a].max() / lo[b].min())})
        else:
            row.update({"ratio": None, "ratio_se": None, "ratio_lo": None, "ratio_hi": None})
        rows.append(row)
    Rs = [r["ratio"] for r in rows]
    if any(R is None for R in Rs):
        outcome, spread = INCONCLUSIVE, None
    else:
        spread = max(Rs) / min(Rs) if min(Rs) > 0 else math.inf
        outcome = PASS if spread_limit is None or spread < spread_limit else FAIL
    grid = [[float(v) for v in np.r_[a, b]] for a, b in zip(q0, p0)]
    return HarnackReport(rows, grid, n_samples, level, outcome, spread,
                         _prov(config, n_samples=n_samples, threads_independent=True))


# --------------------------------------------------------------------------- (F1) probe


@dataclass
class MinorizationReport:
    C1: float
    nu: list
    bin_minima: list
    binning: dict
    outcome: str
    n_samples: int
    provenance: dict = field(default_factory=dict)

    @property
    def exit_status(self):
        return EXIT_STATUS[self.outcome]

    def to_dict(self):
        return {"C1": self.C1, "nu": self.nu, "bin_minima": self.bin_minima,
                "binning": self.binning, "outcome": self.outcome, "n_samples": self.n_samples,
                "provenance": self.provenance}

    def to_json(self):
        return _dumps(self.to_dict())


def dobrushin_probe(K, model: CoefficientModel, domain: Region, t1: float, n_samples: int,
                    config: IntegratorConfig, reference: Binning | None = None, nb: int = 4,
                    threads=1) -> MinorizationReport:
    """Per-bin minima over grid starts of P_x(t1 < tau, X_t1 in bin).

    ``K`` is a PhaseBox (5 points per axis) or a ``(q, p)`` grid; the
    reference binning defaults to ``nb`` bins per axis on the bounding box of
    the grid. C1 is the total of the minima and nu their normalisation.
    """
    q0, p0 = _grid(K)
    if reference is None:
        X = np.concatenate([q0, p0], axis=1)
        lo, hi = X.min(0), X.max(0)
        pad = np.where(hi > lo, 0.0, 0.5)
        reference = Binning(tuple(lo - pad), tuple(hi + pad + 1e-12), nb)
    g = len(q0)
    _check_start(domain, q0)
    res = run_ensemble((np.repeat(q0, n_samples, 0), np.repeat(p0, n_samples, 0)), model, domain,
                       config, g * n_samples, t1, threads)
    surv = res.survived.reshape(g, n_samples)
    per = np.zeros((g, reference.n_bins))
    for j in range(g):
        s = surv[j]
        c = reference.counts(res.q.reshape(g, n_samples, -1)[j][s],
                             res.p.reshape(g, n_samples, -1)[j][s])
        per[j] = c[:-1] / n_samples
    mins = per.min(axis=0)
    C1 = float(mins.sum())
    nu = (mins / C1).tolist() if C1 > 0 else [0.0] * len(mins)
    outcome = PASS if C1 > 0 else INCONCLUSIVE
    return MinorizationReport(C1, nu, mins.tolist(), reference.to_dict(), outcome, n_samples,
                              _prov(config, n_samples=n_samples, t1=t1, grid_size=g))


# --------------------------------------------------------------------------- (F2) probes


def _value_fn(psi):
    return psi.value if hasattr(psi, "value") else psi


@dataclass
class ProbeReport:
    name: str
    rows: list
    outcome: str
    provenance: dict = field(default_factory=dict)

    @property
    def exit_status(self):
        return EXIT_STATUS[self.outcome]

    def to_dict(self):
        return {"probe": self.name, "rows": self.rows, "outcome": self.outcome,
                "provenance": self.provenance}

    def to_json(self):
        return _dumps(self.to_dict())


def f2_lyapunov_probe(psi1, K, model: CoefficientModel, domain: Region, t2: float,
                      alpha1: float, starts, n_samples: int, config: IntegratorConfig,
                      level=LEVEL, threads=1) -> ProbeReport:
    """E_x[1{t2 < tau_K and tau} psi1(X_t2)] against exp(-alpha1 t2) psi1(x).

    ``K`` is a PhaseBox, a Region (position only) or a predicate
    ``(q, p) -> bool``. Entry into K is monitored at the end of every step.
    A start fails when
    the estimate exceeds the bound by more than the one-sided Bonferroni
    quantile times its standard error.
    """
    val = _value_fn(psi1)
    q0, p0 = _grid(starts)
    g = len(q0)
    inK = _membership(K, model.dim)
    if np.any(inK(q0, p0)):
        raise ParameterError("f2 probe starts must lie outside K")
    _check_start(domain, q0)
    plan = config.plan(model, domain)
    streams = config.stream_id + np.arange(g * n_samples, dtype=np.uint64)
    b = kernels.alloc(np.repeat(q0, n_samples, 0), np.repeat(p0, n_samples, 0), streams)
    steps = int(math.ceil(t2 / config.dt - 1e-9))
    for k in range(steps):
        kernels.run_batch(plan, b, k, k + 1, threads)
        live = np.flatnonzero(b.status == 0)
        b.status[live[inK(b.q[live], b.p[live])]] = 3
    if np.any(b.status == 2):
        i = int(np.flatnonzero(b.status == 2)[0])
        raise BlowUpError("f2 probe trajectory left the finite guard region",
                          last_state=KineticState(b.q[i], b.p[i], 0.0), index=i)
    alive = (b.status == 0)
    vals = np.zeros(len(alive))
    vals[alive] = val(b.q[alive], b.p[alive])
    vals = vals.reshape(g, n_samples)
    z = stats.norm.isf(level / g)
    rows, ok = [], True
    for j in range(g):
        est = float(vals[j].mean())
        se = float(vals[j].std(ddof=1) / math.sqrt(n_samples))
        bound = float(math.exp(-alpha1 * t2) * val(q0[j:j + 1], p0[j:j + 1])[0])
        passed = est <= bound + z * se
        ok &= passed
        rows.append({"start": [float(v) for v in np.r_[q0[j], p0[j]]], "estimate": est,
                     "se": se, "bound": bound, "slack": bound - est, "passed": bool(passed),
                     "alive_fraction": float(alive.reshape(g, n_samples)[j].mean())})
    return ProbeReport("f2-lyapunov", rows, PASS if ok else FAIL,
                       _prov(config, n_samples=n_samples, t2=t2, alpha1=alpha1,
                             K=K.to_dict() if hasattr(K, "to_dict") else repr(K),
                             monitoring="end of step"))


def f2_growth_diagnostic(K: PhaseBox, model, domain, starts, alpha2, times, n_samples,
                         config: IntegratorConfig, threads=1) -> ProbeReport:
    """Finite-horizon table of exp(alpha2 t) u_K(t, x); no limit is asserted."""
    times = sorted(float(t) for t in times)
    counts, q0, p0 = grid_occupation(starts, model, domain, config, n_samples, times, K, threads)
    u = counts / n_samples
    rows = []
    for j in range(len(q0)):
        g = np.exp(alpha2 * np.asarray(times)) * u[:, j]
        rows.append({"start": [float(v) for v in np.r_[q0[j], p0[j]]], "t": times,
                     "u_K": u[:, j].tolist(), "growth": g.tolist(),
                     "increasing": bool(np.all(np.diff(g) > 0))})
    return ProbeReport("f2-growth", rows, PASS,
                       _prov(config, n_samples=n_samples, alpha2=alpha2, informational=True))


# --------------------------------------------------------------------------- moments


@dataclass
class MomentScan:
    rows: list
    band: float
    median: float
    outcome: str
    provenance: dict = field(default_factory=dict)

    @property
    def exit_status(self):
        return EXIT_STATUS[self.outcome]

    def to_dict(self):
        return {"rows": self.rows, "band": self.band, "median": self.median,
                "outcome": self.outcome, "provenance": self.provenance}

    def to_json(self):
        return _dumps(self.to_dict())


def sup_square_moments(model, domain, start, t, n_samples, config, threads=1):
    """Per-sample sup over [0, t] of (|q| + |p|)^2 and the terminal state."""
    res = run_ensemble(start, model, domain, config, n_samples, t, threads, track=True)
    return res.track[:, 0], res


def moment_bound_scan(family, start, t: float, n_samples: int, config: IntegratorConfig,
                      domain: Region | None = None, band: float = 0.05, threads=1) -> MomentScan:
    """Sup-square moments E[sup_{s<=t} |X_s|^2] across a model family.

    ``family`` maps an index n to a model. All members share seeds and
    streams (common random numbers). The scan passes when each estimate
    lies within band * median + 3 SE of the median estimate. The norm is
    |x| = |q| + |p|; sampling stops at exit when ``domain`` is bounded.
    """
    from .domains import FullSpace
    items = sorted(family.items()) if isinstance(family, dict) else list(family)
    rows = []
    for n, m in items:
        dom = domain if domain is not None else FullSpace(m.dim)
        sup2, res = sup_square_moments(m, dom, start, t, n_samples, config, threads)
        q2 = np.sum(res.q ** 2, axis=1)
        p2 = np.sum(res.p ** 2, axis=1)
        rows.append({"n": n, "sup_square": float(sup2.mean()),
                     "se": float(sup2.std(ddof=1) / math.sqrt(n_samples)),
                     "terminal_q2": float(q2.mean()),
                     "terminal_q2_se": float(q2.std(ddof=1) / math.sqrt(n_samples)),
                     "terminal_p2": float(p2.mean()),
                     "terminal_p2_se": float(p2.std(ddof=1) / math.sqrt(n_samples))})
    med = float(np.median([r["sup_square"] for r in rows]))
    ok = True
    for r in rows:
        r["deviation"] = abs(r["sup_square"] - med)
        r["allowed"] = band * med + 3 * r["se"]
        r["within_band"] = bool(r["deviation"] <= r["allowed"] and math.isfinite(r["sup_square"]))
        ok &= r["within_band"]
    return MomentScan(rows, band, med, PASS if ok else FAIL,
                      _prov(config, n_samples=n_samples, t=t, common_random_numbers=True))


# --------------------------------------------------------------------------- short time


@dataclass
class ShortTimeReport:
    rows: list
    threshold: float
    outcome: str
    provenance: dict = field(default_factory=dict)

    @property
    def exit_status(self):
        return EXIT_STATUS[self.outcome]

    def to_dict(self):
        return {"rows": self.rows, "threshold": self.threshold, "outcome": self.outcome,
                "provenance": self.provenance}

    def to_json(self):
        return _dumps(self.to_dict())


def _monotone_within(est, se, k=3.0):
    """True when est is non-decreasing in t up to k combined standard errors."""
    return all(est[i] <= est[j] + k * math.hypot(se[i], se[j])
               for i in range(len(est)) for j in range(i + 1, len(est)))


def short_time_scan(K, model, domain, times, n_samples, config: IntegratorConfig,
                    delta: float | None = None, threshold: float = 0.01,
                    threads=1) -> ShortTimeReport:
    """max over grid starts of P(tau <= t), and of P(sup_{s<=t} |X_s - x| >= delta).

    The probabilities share one ensemble per start, so the exit estimates are
    exactly nested in t. Passes when both maxima are monotone within MC
    error and the exit maximum at the smallest t is below ``threshold``.
    """
    times = sorted(float(t) for t in times)
    q0, p0 = _grid(K)
    g = len(q0)
    disp = {}

    def hook(t, b):
        disp[t] = b.track[:, 1].copy()

    res = run_ensemble((np.repeat(q0, n_samples, 0), np.repeat(p0, n_samples, 0)), model,
                       domain, config, g * n_samples, max(times), threads, track=True,
                       checkpoints=times if delta is not None else None,
                       on_checkpoint=hook if delta is not None else None)
    et = res.exit_time.reshape(g, n_samples)
    rows = []
    for t in times:
        pe = (et <= t).mean(axis=1)
        j = int(np.argmax(pe))
        _, hi = wilson_interval(int(round(pe[j] * n_samples)), n_samples, 0.99)
        row = {"t": t, "max_exit_prob": float(pe[j]), "argmax": [float(v) for v in
                                                                 np.r_[q0[j], p0[j]]],
               "se": float(math.sqrt(pe[j] * (1 - pe[j]) / n_samples)),
               "wilson_hi": float(hi)}
        if delta is not None:
            key = min(disp, key=lambda s: abs(s - t))
            pd = (disp[key].reshape(g, n_samples) >= delta).mean(axis=1)
            row.update({"max_displacement_prob": float(pd.max()),
                        "displacement_se": float(math.sqrt(pd.max() * (1 - pd.max())
                                                           / n_samples))})
        rows.append(row)
    ok = _monotone_within([r["max_exit_prob"] for r in rows], [r["se"] for r in rows])
    if delta is not None:
        ok &= _monotone_within([r["max_displacement_prob"] for r in rows],
                               [r["displacement_se"] for r in rows])
    ok &= rows[0]["max_exit_prob"] < threshold
    return ShortTimeReport(rows, threshold, PASS if ok else FAIL,
                           _prov(config, n_samples=n_samples, delta=delta))


__all__ = ["StatTestReport", "BatteryResult", "HarnackReport", "MinorizationReport",
           "ProbeReport", "MomentScan", "ShortTimeReport", "ks_exponential", "chi2_independence",
           "memoryless_check", "censored_rate", "exit_categories", "exit_time_battery",
           "exit_law_battery", "grid_occupation", "harnack_ratio_scan", "dobrushin_probe",
           "f2_lyapunov_probe", "f2_growth_diagnostic", "moment_bound_scan",
           "sup_square_moments", "short_time_scan", "PASS", "FAIL", "INCONCLUSIVE",
           "EXIT_STATUS"]
