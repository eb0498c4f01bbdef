"""Command-line experiment runner.

    kinqsd run CONFIG [--output-dir DIR] [--seed N] [--threads N] [--verbose]
    kinqsd catalog [--json]

Exit status: 0 pass, 1 error, 2 statistical fail, 3 inconclusive.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import inspect
import json
import logging
import math
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ConfigError, ExperimentConfig, load_config
from .diagnostics import (EXIT_STATUS, FAIL, INCONCLUSIVE, PASS, exit_law_battery,
                          f2_lyapunov_probe, harnack_ratio_scan, moment_bound_scan)
from .errors import (ConstructionError, InconclusiveError, InsufficientExitsError,
                     InsufficientSurvivorsError, KinQSDError, NonExponentialRegimeError)
from .integrate import run_ensemble, survival_probability
from .lyapunov import (bounded_lyapunov_check, hamiltonian_lyapunov_build,
                       hamiltonian_lyapunov_check)
from .model import MODEL_CATALOG
from .mollify import MollifierKernel, mollifier_convergence_report, mollify
from .qsd import conditioned_mc, estimate_decay_rate, fleming_viot_run

log = logging.getLogger("kinqsd")

DOMAIN_CATALOG = {
    "full": {"dim": "dimension d; O = R^d (no boundary)"},
    "interval": {"left": "left end", "right": "right end"},
    "ball": {"center": "centre vector", "radius": "radius > 0"},
    "box": {"lo": "lower corner", "hi": "upper corner"},
    "halfspace": {"normal": "outward normal n", "offset": "O = {q : n.q < offset}"},
}


def _default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(type(o).__name__)


class Outputs:
    """Writes artifacts into the run directory and records their hashes."""

    def __init__(self, root: Path):
        self.root = root
        self.files = {}

    def path(self, name) -> Path:
        return self.root / name

    def json(self, name, obj):
        self.path(name).write_text(json.dumps(obj, indent=2, default=_default) + "\n")
        self.files[name] = None

    def register(self, name):
        self.files[name] = None

    def digests(self):
        return {n: hashlib.sha256(self.path(n).read_bytes()).hexdigest()
                for n in sorted(self.files)}


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


# --------------------------------------------------------------------------- experiments


def _simulate(cfg, ctx, out):
    pr = cfg.typed_params
    res = run_ensemble(pr.start.build(), ctx["model"], ctx["domain"], ctx["integrator"],
                       pr.n_samples, pr.horizon, ctx["threads"])
    res.write_csv(out.path("exits.csv"))
    out.register("exits.csv")
    lines = [f"samples: {res.n}", f"exited: {int((~res.survived).sum())}"]
    if res.n == 1 and not res.survived[0]:
        lines.append(f"exit time: {float(res.exit_time[0])!r}")
    if pr.survival_times:
        s = res.survival_at(pr.survival_times)
        _write_rows(out.path("survival.csv"), ["t", "p_hat"], zip(pr.survival_times, s))
        out.register("survival.csv")
    return PASS, lines


def _fleming_viot(cfg, ctx, out):
    pr = cfg.typed_params
    binning = pr.binning.build() if pr.binning else None
    est = fleming_viot_run(pr.initial.build(), ctx["model"], ctx["domain"], pr.n_particles,
                           ctx["integrator"], pr.horizon, pr.burn_in, binning, pr.record_every,
                           pr.block_length, ctx["threads"])
    est.write_json(out.path("qsd.json"))
    est.write_csv(out.path("qsd.csv"))
    out.register("qsd.json")
    out.register("qsd.csv")
    if pr.record_every:
        est.write_series_csv(out.path("series.csv"))
        out.register("series.csv")
    lines = [f"lambda0 (kill rate): {est.lambda0_hat:.6g} +/- {est.lambda0_se:.3g}",
             f"kills: {est.kill_count}", f"overflow mass: {est.overflow:.3g}"]
    outcome = PASS
    if pr.slope_check_samples:
        horizon = pr.slope_check_horizon or pr.horizon
        curve = survival_probability(pr.initial.build(), ctx["model"], ctx["domain"],
                                     ctx["integrator"].replace(stream_id=1 << 40),
                                     pr.slope_check_samples,
                                     np.linspace(0.0, horizon, 201), threads=ctx["threads"])
        curve.write_csv(out.path("survival.csv"))
        out.register("survival.csv")
        dec = estimate_decay_rate(curve, pr.slope_check_samples)
        se = math.hypot(est.lambda0_se, dec.stderr)
        agree = abs(est.lambda0_hat - dec.lambda0_hat) <= 3 * se
        out.json("decay.json", {"kill_rate": est.lambda0_hat, "kill_rate_se": est.lambda0_se,
                                "slope": dec.to_dict(), "combined_se": se,
                                "agree_3se": bool(agree)})
        lines.append(f"lambda0 (survival slope): {dec.lambda0_hat:.6g} +/- {dec.stderr:.3g}"
                     f" -> {'agree' if agree else 'DISAGREE'} within 3 combined SE")
        outcome = PASS if agree else FAIL
    return outcome, lines


def _conditioned(cfg, ctx, out):
    pr = cfg.typed_params
    binning = pr.binning.build() if pr.binning else None
    law = conditioned_mc(pr.start.build(), ctx["model"], ctx["domain"], pr.t, pr.n_samples,
                         ctx["integrator"], binning, ctx["threads"], pr.pilot_size)
    out.json("law.json", law.to_dict())
    c = law.binning.centers()
    _write_rows(out.path("law.csv"), ["bin_id"] + [f"x{i}" for i in range(c.shape[1])]
                + ["weight"], ([i, *c[i], law.weights[i]] for i in range(len(c))))
    out.register("law.csv")
    return PASS, [f"survival fraction: {law.survival_fraction:.6g}",
                  f"survivors: {law.n_survivors}"]


def _lyapunov(cfg, ctx, out):
    pr = cfg.typed_params
    model = ctx["model"]
    if pr.construction == "bounded":
        rep = bounded_lyapunov_check(ctx["domain"], model, pr.lam, seed=cfg.seed)
    else:
        lf = model.langevin
        if lf is None or pr.alpha_drift is None or pr.beta_drift is None:
            raise ConfigError([{"loc": ("params",), "msg": "hamiltonian construction needs a "
                                "Langevin model and alpha_drift/beta_drift"}])
        rep = hamiltonian_lyapunov_check(lf.force, lf.gamma, lf.kT, pr.alpha_drift,
                                         pr.beta_drift, pr.lam, model.dim, pr.grid_half_width,
                                         pr.n_per_axis)
    out.json("lyapunov.json", rep.to_dict())
    lines = [f"{c['check']}: {'ok' if c['passed'] else 'VIOLATED'}" for c in rep.checks]
    return (PASS if rep.passed else FAIL), lines


def _harnack(cfg, ctx, out):
    pr = cfg.typed_params
    Kb = pr.K.build()
    grid = Kb.grid(pr.k_per_axis)
    rep = harnack_ratio_scan(pr.A.build(), grid, ctx["model"], ctx["domain"], pr.times, pr.T,
                             pr.n_samples, ctx["integrator"], pr.level, pr.spread_limit,
                             ctx["threads"])
    out.json("harnack.json", rep.to_dict())
    _write_rows(out.path("harnack.csv"), ["t", "T", "ratio", "ratio_se", "den_wilson_lo"],
                ([r["t"], r["T"], r["ratio"] if r["ratio"] is not None else "",
                  r["ratio_se"] if r["ratio_se"] is not None else "", r["den_wilson_lo"]]
                 for r in rep.rows))
    out.register("harnack.csv")
    lines = [f"R({r['t']:g}) = {r['ratio']}" for r in rep.rows] + [f"spread: {rep.spread}"]
    return rep.outcome, lines


def _exit_law(cfg, ctx, out):
    pr = cfg.typed_params
    src = pr.source
    lines = []
    if hasattr(src, "initial"):
        binning = src.binning.build() if src.binning else None
        sampler = fleming_viot_run(src.initial.build(), ctx["model"], ctx["domain"],
                                   src.n_particles, ctx["integrator"], src.horizon, src.burn_in,
                                   binning, None, src.block_length, ctx["threads"])
        lines.append(f"sampler: Fleming-Viot, lambda0 = {sampler.lambda0_hat:.6g}")
    else:
        sampler = src.build()
        lines.append("sampler: fixed start")
    integ = ctx["integrator"].replace(stream_id=ctx["integrator"].stream_id + (1 << 40))
    bat = exit_law_battery(sampler, ctx["model"], ctx["domain"], pr.n_samples, integ,
                           horizon=pr.horizon, negative_control=pr.negative_control,
                           min_exits=pr.min_exits, n_boot=pr.n_boot, threads=ctx["threads"])
    out.json("exit_law.json", bat.to_dict())
    lines += [f"{r.test_name}: p = {r.p_value}" + (" (informational)" if r.informational else "")
              for r in bat.reports]
    return bat.outcome, lines


def _mollify(cfg, ctx, out):
    pr = cfg.typed_params
    box = pr.compact.build()
    rep = mollifier_convergence_report(ctx["model"], pr.ns, box.grid(pr.grid_per_axis), box,
                                       pr.order, pr.l1_points)
    out.json("mollify.json", rep.to_dict())
    _write_rows(out.path("mollify.csv"), ["n", "sigma_sup", "drift_l1"],
                zip(rep.ns, rep.sigma_sup, rep.drift_l1))
    out.register("mollify.csv")
    ok = rep.sigma_monotone and rep.drift_monotone
    return (PASS if ok else FAIL), [f"n={n:g}: sigma {s:.4g}, L1 {d:.4g}"
                                    for n, s, d in zip(rep.ns, rep.sigma_sup, rep.drift_l1)]


def _f2(cfg, ctx, out):
    pr = cfg.typed_params
    model = ctx["model"]
    ly = None
    if pr.psi == "hamiltonian" or pr.K == "hamiltonian-B":
        lf = model.langevin
        if lf is None:
            raise ConfigError([{"loc": ("params", "psi"),
                                "msg": "the hamiltonian function needs a Langevin model"}])
        ly = hamiltonian_lyapunov_build(lf.force, lf.gamma, lf.kT, pr.alpha_drift, pr.beta_drift,
                                        pr.lam, model.dim)
    psi = ly.phi() if pr.psi == "hamiltonian" else (lambda q, p: np.ones(len(q)))
    K = ly.in_B if pr.K == "hamiltonian-B" else pr.K.build()
    starts = (np.array([s.q for s in pr.starts], dtype=float),
              np.array([s.p for s in pr.starts], dtype=float))
    rep = f2_lyapunov_probe(psi, K, model, ctx["domain"], pr.t2, pr.alpha1, starts,
                            pr.n_samples, ctx["integrator"], threads=ctx["threads"])
    out.json("f2.json", rep.to_dict())
    return rep.outcome, [f"start {r['start']}: {r['estimate']:.4g} vs bound {r['bound']:.4g}"
                         for r in rep.rows]


def _moments(cfg, ctx, out):
    pr = cfg.typed_params
    fam = {n: mollify(ctx["model"], MollifierKernel(ctx["model"].dim, n, pr.order))
           for n in pr.ns}
    rep = moment_bound_scan(fam, pr.start.build(), pr.t, pr.n_samples, ctx["integrator"],
                            ctx["domain"], pr.band, ctx["threads"])
    out.json("moments.json", rep.to_dict())
    _write_rows(out.path("moments.csv"), ["n", "sup_square", "se"],
                ([r["n"], r["sup_square"], r["se"]] for r in rep.rows))
    out.register("moments.csv")
    return rep.outcome, [f"n={r['n']:g}: {r['sup_square']:.5g} +/- {r['se']:.2g}"
                         for r in rep.rows]


RUNNERS = {"simulate": _simulate, "fleming-viot": _fleming_viot,
           "conditioned-mc": _conditioned, "lyapunov-verify": _lyapunov,
           "harnack-scan": _harnack, "exit-law": _exit_law, "mollify-report": _mollify,
           "f2-probe": _f2, "moment-scan": _moments}

INCONCLUSIVE_ERRORS = (InconclusiveError, InsufficientExitsError, InsufficientSurvivorsError,
                       NonExponentialRegimeError)


# --------------------------------------------------------------------------- commands


def run(config_path, output_dir=None, seed=None, threads=1, stream=None) -> int:
    """Run one experiment; returns the exit status."""
    stream = sys.stdout if stream is None else stream
    stage = "config"
    try:
        cfg = load_config(config_path)
        if seed is not None:
            cfg = cfg.model_copy(update={"seed": int(seed)})
            cfg = ExperimentConfig.model_validate(cfg.model_dump())
    except (ConfigError, OSError) as exc:
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return 1
    root = Path(output_dir or cfg.output_dir or f"runs/{cfg.kind}-seed{cfg.seed}")
    root.mkdir(parents=True, exist_ok=True)
    out = Outputs(root)
    n_threads = max(1, int(threads))
    t0 = time.perf_counter()
    outcome, lines, error = None, [], None
    try:
        stage = "build"
        ctx = {"model": cfg.model.build(), "domain": cfg.domain.build(),
               "integrator": cfg.integrator.build(cfg.seed), "threads": n_threads}
        stage = cfg.kind
        log.info("running %s", cfg.kind)
        outcome, lines = RUNNERS[cfg.kind](cfg, ctx, out)
    except INCONCLUSIVE_ERRORS as exc:
        outcome, error = INCONCLUSIVE, f"{type(exc).__name__}: {exc}"
        out.json("error.json", {"stage": stage, "error": error,
                                "survival_fraction": getattr(exc, "survival_fraction", None)})
    except ConstructionError as exc:
        outcome, error = FAIL, f"ConstructionError: {exc}"
        out.json("error.json", {"stage": stage, "error": error, "report": exc.report})
    except (KinQSDError, ValueError, ArithmeticError, ConfigError) as exc:
        error = f"{type(exc).__name__}: {exc}"
        print(f"error [{stage}]: {error}", file=sys.stderr)
        out.json("error.json", {"stage": stage, "error": error})
    status = 1 if outcome is None else EXIT_STATUS[outcome]
    wall = time.perf_counter() - t0
    summary = [f"kinqsd {__version__} - {cfg.kind}", f"outcome: {outcome or 'error'}"
               f" (exit status {status})", *lines]
    if error:
        summary.append(f"stage {stage}: {error}")
    summary.append(f"wall time: {wall:.2f} s")
    (root / "summary.txt").write_text("\n".join(summary) + "\n")
    manifest = {"engine_version": __version__, "config": cfg.resolved(), "kind": cfg.kind,
                "outcome": outcome or "error", "exit_status": status, "wall_time_s": wall,
                "threads": n_threads,
                "backend": "compiled" if kernels.HAVE_COMPILED else "python",
                "python": platform.python_version(), "numpy": np.__version__,
                "artifacts": out.digests()}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, default=_default) + "\n")
    print("\n".join(summary), file=stream)
    return status


def catalog() -> dict:
    models = {}
    for name, (builder, schema) in sorted(MODEL_CATALOG.items()):
        doc = inspect.getdoc(builder) or ""
        models[name] = {"description": doc.split("\n\n")[0].replace("\n", " "),
                        "params": {k: {"default": v[0], "help": v[1]}
                                   for k, v in schema.items()}}
    return {"models": models, "domains": DOMAIN_CATALOG,
            "experiments": sorted(RUNNERS),
            "schemes": sorted(kernels.SCHEMES), "crossings": sorted(kernels.CROSSINGS)}


def _print_catalog(as_json, stream=None):
    stream = sys.stdout if stream is None else stream
    cat = catalog()
    if as_json:
        print(json.dumps(cat, indent=2), file=stream)
        return
    print("models:", file=stream)
    for name, m in cat["models"].items():
        print(f"  {name}: {m['description']}", file=stream)
        for k, v in m["params"].items():
            print(f"      {k} = {v['default']!r}  ({v['help']})", file=stream)
    print("domains:", file=stream)
    for name, ps in cat["domains"].items():
        print(f"  {name}: " + ", ".join(f"{k} ({v})" for k, v in ps.items()), file=stream)
    print("experiments: " + ", ".join(cat["experiments"]), file=stream)


def build_parser():
    ap = argparse.ArgumentParser(prog="kinqsd", description=__doc__.split("\n\n")[0])
    ap.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment from a YAML config or a manifest")
    r.add_argument("config")
    r.add_argument("--output-dir", default=None)
    r.add_argument("--seed", type=int, default=None, help="override the config seed")
    r.add_argument("--threads", type=int, default=1, help="worker cap; results do not depend on it")
    r.add_argument("--verbose", "-v", action="store_true", dest="verbose_run")
    c = sub.add_parser("catalog", help="list built-in models, domains and experiments")
    c.add_argument("--json", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    verbose = args.verbose or getattr(args, "verbose_run", False)
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "catalog":
        _print_catalog(args.json)
        return 0
    return run(args.config, args.output_dir, args.seed, args.threads)


if __name__ == "__main__":
    sys.exit(main())
