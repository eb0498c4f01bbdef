"""Acceptance suite: one test per criterion, each printing a CRITERION line.

Runs at full scale (about a quarter of an hour on one core).
"""
from __future__ import annotations

import io
import json
import math
import os
import shutil
import time

import numpy as np
import pytest
import yaml

from kinqsd import cli
from kinqsd.diagnostics import exit_law_battery, harnack_ratio_scan, moment_bound_scan, short_time_scan
from kinqsd.domains import Interval
from kinqsd.integrate import IntegratorConfig, survival_probability
from kinqsd.lyapunov import (bounded_lyapunov_check, delta_feasible, generator_apply,
                             hamiltonian_lyapunov_check, smooth_catalog)
from kinqsd.model import (KineticState, PhaseBox, build_model, double_well_langevin,
                          expression_model, free_transport, harmonic_langevin)
from kinqsd.mollify import MollifierKernel, mollifier_convergence_report, mollify
from kinqsd.qsd import (Binning, conditioned_mc, estimate_decay_rate, fleming_viot_run,
                        start_from_estimate, tv_distance)

pytestmark = pytest.mark.slow

ORIGIN = KineticState([0.0], [0.0])
HARMONIC = dict(omega=1.0, gamma=1.0, kT=0.5)


def _fv(model, domain, seed, n=10_000, horizon=20.0, burn_in=10.0, binning=None):
    cfg = IntegratorConfig(dt=1e-3, max_time=horizon, seed=seed)
    return fleming_viot_run(ORIGIN, model, domain, n, cfg, burn_in=burn_in, binning=binning)


def test_criterion_1_fleming_viot_matches_conditioned_mc(criterion):
    model, O = harmonic_langevin(**HARMONIC), Interval(-2.0, 2.0)
    binning = Binning.window([-2.0], [2.0], [-4.0], [4.0], 40)
    t0 = time.perf_counter()
    est = _fv(model, O, seed=1, binning=binning)
    law = conditioned_mc(ORIGIN, model, O, 5.0, 1_000_000,
                         IntegratorConfig(dt=1e-3, max_time=5.0, seed=2), binning=binning)
    tv = tv_distance(est.weights, law.weights)
    elapsed = time.perf_counter() - t0
    assert criterion(1, tv <= 0.05 and elapsed <= 600.0,
                     f"TV = {tv:.4f} (limit 0.05), survivors at t=5: {law.n_survivors}, "
                     f"runtime {elapsed:.0f} s (limit 600)")


@pytest.mark.parametrize("name,model,O,n_slope,horizon", [
    ("harmonic", harmonic_langevin(**HARMONIC), Interval(-2.0, 2.0), 20_000, 20.0),
    ("double-well", double_well_langevin(), Interval(-1.0, 1.0), 100_000, 8.0),
])
def test_criterion_2_kill_rate_agrees_with_survival_slope(criterion, name, model, O, n_slope,
                                                          horizon):
    est = _fv(model, O, seed=1)
    curve = survival_probability(ORIGIN, model, O,
                                 IntegratorConfig(dt=1e-3, max_time=horizon, seed=1,
                                                  stream_id=1 << 40),
                                 n_slope, np.linspace(0.0, horizon, 201))
    dec = estimate_decay_rate(curve)
    se = math.hypot(est.lambda0_se, dec.stderr)
    gap = abs(est.lambda0_hat - dec.lambda0_hat)
    ok = gap <= 3 * se
    key = "2a" if name == "harmonic" else "2b"
    assert criterion(key, ok, f"{name}: kill rate {est.lambda0_hat:.5f} +/- "
                              f"{est.lambda0_se:.5f}, slope {dec.lambda0_hat:.5f} +/- "
                              f"{dec.stderr:.5f}, gap {gap / se:.2f} combined SE (limit 3)")


def test_criterion_3_exit_law_is_memoryless(criterion):
    model, O = double_well_langevin(), Interval(-1.0, 1.0)
    est = _fv(model, O, seed=4)
    cfg = IntegratorConfig(dt=1e-3, max_time=60.0, seed=4, stream_id=1 << 40)
    bat = exit_law_battery(est, model, O, 10_000, cfg)
    refit = bat.reports[0]  # re-fit KS against the exponential family (battery gate)
    plug = next(r for r in bat.reports if r.informational)  # KS against Exp(lambda0_hat)
    chi = bat["chi2_side_by_time_quantile"]
    # negative control: deterministic motion from the same initial law
    neg = exit_law_battery(start_from_estimate(est, 4, stream=1, region=O), free_transport(), O,
                           10_000, IntegratorConfig(dt=1e-3, max_time=60.0, seed=4),
                           negative_control=True, min_exits=1000)
    detail = (f"KS vs Exp({est.lambda0_hat:.4f}) p = {plug.p_value:.3g}, chi2 p = "
              f"{chi.p_value:.3g} (level 0.01), battery {bat.outcome} (re-fit KS p = "
              f"{refit.p_value:.3g}); negative control KS p = {neg.reports[0].p_value:.3g} "
              f"({neg.outcome})")
    ok = plug.p_value >= 0.01 and chi.p_value >= 0.01 and bat.passed and neg.passed
    assert criterion(3, ok, detail)


def test_criterion_4_bounded_domain_lyapunov(criterion):
    rep = bounded_lyapunov_check(Interval(-1.0, 1.0), double_well_langevin(), 1.0,
                                 n_random=100_000)
    bounds, shell = rep.checks
    detail = (f"phi in [{bounds['min_phi']:.6f}, {bounds['max_phi']:.6f}] vs [1, "
              f"{2 * rep.construction['beta'] - 1:g}], shell max rel slack "
              f"{shell['max_slack']:.3g} (tol {shell['tolerances']['relative']:g})")
    assert criterion(4, rep.passed, detail)


def test_criterion_5_hamiltonian_lyapunov(criterion):
    force = harmonic_langevin(**HARMONIC).langevin.force
    rep = hamiltonian_lyapunov_check(force, 1.0, 0.5, 0.5, 0.0, 1.0, half_width=10.0,
                                     n_per_axis=201)
    d1 = delta_feasible(1.0, 10.0, 0.0)
    d2 = delta_feasible(1.0, 10.0, 0.5)
    growth = rep.construction["drift_report"]["passed"]
    ok = rep.passed and growth and d1 == 5.0 / 6.0 and d2 == 0.75
    h1, hn = rep.checks
    detail = (f"growth condition {growth}, L H drift max rel slack "
              f"{h1['max_slack']:.3g}, outside B max rel slack "
              f"{hn['max_slack']:.3g}; delta_feasible = {d1!r}, {d2!r}")
    assert criterion(5, ok, detail)


def test_criterion_6_generator_matches_finite_differences(criterion):
    gen = np.random.default_rng(2024)
    models = {1: [harmonic_langevin(**HARMONIC), double_well_langevin(),
                  build_model("nonconservative-langevin")],
              2: [harmonic_langevin(dim=2), build_model("nonconservative-langevin", dim=2)]}
    worst, count = 0.0, 0
    while count < 1000:
        d = int(gen.integers(1, 3))
        fs = smooth_catalog(d)
        f = fs[int(gen.integers(len(fs)))]
        m = models[d][int(gen.integers(len(models[d])))]
        x = gen.uniform(-2.0, 2.0, 2 * d)
        q, p = x[:d][None], x[d:][None]
        a = float(generator_apply(m, f, q, p)[0])
        b = float(generator_apply(m, f.fd(), q, p)[0])
        worst = max(worst, abs(a - b) / (1.0 + abs(a)))
        count += 1
    assert criterion(6, worst <= 1e-5, f"max relative error {worst:.3g} over {count} pairs "
                                       f"(limit 1e-5)")


def test_criterion_7_mollifier_convergence(criterion):
    from scipy import integrate
    z, _ = integrate.quad(lambda s: math.exp(-1 / (1 - s * s)), -1, 1)
    m1, _ = integrate.quad(lambda s: s * math.exp(-1 / (1 - s * s)) / z, 0, 1)
    C = 8.0 * m1  # sign drift, q-length 2: L1 error of F_n is 2 E|Y| * 2 / n
    box = PhaseBox([-1.0], [1.0], [-1.0], [1.0])
    rep = mollifier_convergence_report(build_model("sign-drift"), [4, 8, 16, 32], box.grid(9),
                                       box)
    strict = all(b < a for a, b in zip(rep.drift_l1, rep.drift_l1[1:]))
    ratios = [l1 * n / C for n, l1 in zip(rep.ns, rep.drift_l1)]
    law = all(abs(r - 1) <= 0.10 for r in ratios)
    gen = np.random.default_rng(7)
    lin_err = 0.0
    for _ in range(20):
        a = [float(v) for v in gen.normal(size=4)]
        lm = expression_model([f"{a[0]!r}*q1 + {a[1]!r}*p1 + {a[2]!r}"],
                              [[f"{abs(a[3]) + 0.5!r} + 0*q1"]])
        x = gen.uniform(-3, 3, (50, 2))
        for n in (4, 8, 16, 32):
            mn = mollify(lm, MollifierKernel(1, n))
            lin_err = max(lin_err,
                          float(np.abs(mn.drift(x[:, :1], x[:, 1:]) - lm.drift(x[:, :1], x[:, 1:])).max()),
                          float(np.abs(mn.diffusion(x[:, :1], x[:, 1:])
                                       - lm.diffusion(x[:, :1], x[:, 1:])).max()))
    ok = strict and law and lin_err <= 1e-8
    detail = (f"L1 = {[round(v, 5) for v in rep.drift_l1]}, L1*n/C = "
              f"{[round(r, 4) for r in ratios]} (C = {C:.6f}), linear-field error {lin_err:.2g}")
    assert criterion(7, ok, detail)


@pytest.mark.xfail(strict=True, reason="ratio spread across t exceeds 2 for this process; "
                                       "see the decision log")
def test_criterion_8_harnack_ratio(criterion):
    rep = harnack_ratio_scan(PhaseBox([-0.5], [0.5], [-1.0], [1.0]),
                             PhaseBox([-1.0], [1.0], [-1.0], [1.0]).grid(5),
                             harmonic_langevin(**HARMONIC), Interval(-2.0, 2.0), [1.0, 2.0, 4.0],
                             1.0, 4000, IntegratorConfig(dt=1e-3, max_time=10.0, seed=3))
    dens = all(r["den_wilson_lo"] > 0 for r in rep.rows)
    finite = all(r["ratio"] is not None and math.isfinite(r["ratio"]) for r in rep.rows)
    detail = (", ".join(f"R({r['t']:g}) = {r['ratio']:.3f}" for r in rep.rows)
              + f"; denominators positive: {dens}; spread {rep.spread:.3f} (limit 2)")
    assert criterion(8, dens and finite and rep.spread < 2.0, detail)


def test_criterion_9_moment_bound_uniformity(criterion):
    base = build_model("sign-drift")
    fam = {n: mollify(base, MollifierKernel(1, n)) for n in (4, 8, 16, 32)}
    scan = moment_bound_scan(fam, ORIGIN, 1.0, 4000,
                             IntegratorConfig(dt=0.01, max_time=1.0, seed=6,
                                              scheme="euler-maruyama"))
    detail = "; ".join(f"n={r['n']:g}: {r['sup_square']:.4f} +/- {r['se']:.3f}"
                       for r in scan.rows) + f"; median {scan.median:.4f}, band 5%"
    assert criterion(9, scan.outcome == "pass", detail)


def test_criterion_10_short_time_estimates(criterion):
    rep = short_time_scan(PhaseBox([-1.0], [1.0], [-1.0], [1.0]), harmonic_langevin(**HARMONIC),
                          Interval(-2.0, 2.0), [0.0125, 0.025, 0.05], 4000,
                          IntegratorConfig(dt=1e-3, max_time=1.0, seed=10), delta=0.5)
    at = {r["t"]: r for r in rep.rows}
    detail = ", ".join(f"max P(tau <= {t:g}) = {r['max_exit_prob']:.4g}" for t, r in at.items())
    assert criterion(10, rep.outcome == "pass" and at[0.05]["max_exit_prob"] < 0.01, detail)


def _manifest_pair(tmp_path, cfg, name):
    src = tmp_path / f"{name}.yaml"
    src.write_text(yaml.safe_dump(cfg))
    first, again = tmp_path / f"{name}-1", tmp_path / f"{name}-2"
    cli.run(str(src), output_dir=str(first), threads=1, stream=io.StringIO())
    shutil.copy(first / "manifest.json", tmp_path / f"{name}-manifest.json")
    cli.run(str(tmp_path / f"{name}-manifest.json"), output_dir=str(again), threads=3,
            stream=io.StringIO())
    m1 = json.loads((first / "manifest.json").read_text())
    m2 = json.loads((again / "manifest.json").read_text())
    return m1["artifacts"] == m2["artifacts"] and m1["outcome"] == m2["outcome"], m1


def test_criterion_11_manifest_reruns_are_bit_identical(criterion, tmp_path, configs_dir):
    results = {}
    for name in ("fleming_viot_harmonic", "exit_law_negative_control", "harnack_harmonic",
                 "simulate_free_transport"):
        cfg = yaml.safe_load(open(os.path.join(configs_dir, f"{name}.yaml")))
        # shrink the costly ones; determinism does not depend on scale
        if cfg["kind"] == "fleming-viot":
            cfg["params"]["n_particles"] = 2000
        if cfg["kind"] == "harnack-scan":
            cfg["params"]["n_samples"] = 200
        ok, m = _manifest_pair(tmp_path, cfg, name)
        results[name] = (ok, len(m["artifacts"]))
    ok = all(v[0] for v in results.values())
    detail = ", ".join(f"{k}: {'identical' if v[0] else 'DIFFERENT'} ({v[1]} artifacts)"
                       for k, v in results.items()) + " (threads 1 vs 3)"
    assert criterion(11, ok, detail)
