"""Command line interface: ``stochlog {check-scalar,simulate,cascade,report}``.

Exit codes: 0 when every check passes, 1 on runtime errors (solver failure,
missing files), 2 on validation errors or failed invariants.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import artifacts
from .errors import (
    ConfigError,
    DomainError,
    GridMismatch,
    ParamError,
    StabilityError,
    StochlogError,
    SummabilityError,
    ZeroModeError,
)

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2
VALIDATION_ERRORS = (ConfigError, ParamError, DomainError, StabilityError, SummabilityError,
                     GridMismatch, ZeroModeError)


def _emit(args, payload, lines):
    if args.json:
        print(json.dumps(artifacts._jsonable(payload), indent=2, sort_keys=True))
    else:
        for line in lines:
            print(line)


def _ledger_lines(ledger):
    out = []
    for e in ledger:
        tag = "PASS" if e["passed"] else "FAIL"
        extra = ""
        if "value" in e:
            extra = f" value={e['value']:.4g} limit={e['limit']:.4g}"
        if e.get("detail"):
            extra += f" ({e['detail']})"
        name = e.get("check") or e.get("criterion")
        out.append(f"{tag} {name}{extra}")
    return out


def _status(ledger):
    return EXIT_OK if all(e["passed"] for e in ledger) else EXIT_INVALID


def _entry(name, passed, detail=""):
    return {"criterion": name, "passed": bool(passed), "detail": detail}


# ----------------------------------------------------------------- commands

def cmd_check_scalar(args):
    from .checks import SWEEP_LAMBDAS, scalar_suite

    lams = tuple(args.lam) if args.lam else SWEEP_LAMBDAS
    ledger = scalar_suite(lams, seed=args.seed if args.seed is not None else 0,
                          n_pairs=args.pairs)
    failed = [e for e in ledger if not e["passed"]]
    _emit(args, {"ledger": ledger, "passed": not failed},
          _ledger_lines(ledger) + [f"{len(ledger) - len(failed)}/{len(ledger)} checks passed"])
    return _status(ledger)


def _load(args):
    from . import config

    run = config.load(args.config)
    return run.with_overrides(seed=args.seed, n_paths=args.paths, out=args.out)


def _workers(args):
    from .config import env_workers

    return args.workers if args.workers is not None else env_workers()


def run_simulation(run, workers=1):
    """Simulate the ensemble described by ``run``; returns what ``write_run`` needs."""
    from .diagnostics import (
        MIN_PATHS,
        aggregate,
        dissipation_identity,
        energy_balance_check,
        fit_moment_constant,
        positivity_report,
    )
    from .solver import simulate_ensemble

    cfg = run.sim_config()
    model = cfg.noise_model()
    ens = simulate_ensemble(cfg, workers=workers, batch_size=run["ensemble"]["batch_size"],
                            model=model)
    report = aggregate(ens)
    ledger = []
    pos = positivity_report(ens)
    ledger.append(_entry("positivity", pos["passed"],
                         f"max negativity fraction {pos['max_fraction_at_outputs']:.3g}, "
                         f"{pos['n_events']} negative steps"))
    report.constants["run_min_value"] = pos["run_min_value"]
    p = cfg.params
    if run["diagnostics"]["energy"] and p.lam <= 0.5 and cfg.n_steps > 0:
        if model.is_off:
            defect = min(float(dissipation_identity(d).min()) for d in ens)
            ledger.append(_entry("dissipation", defect >= 0.0,
                                 f"min Phi(x) - Phi(X_t) - int |grad Psi~|^2 = {defect:.3g}"))
        else:
            eb = energy_balance_check(ens, model, p.lam)
            ledger.append(_entry("energy_balance", eb["passed"],
                                 f"min margin {eb['min_margin']:.3g}, no dt allowance"))
            report.constants["energy_min_margin"] = eb["min_margin"]
    if len(ens) >= MIN_PATHS and cfg.n_steps > 0:
        cell = fit_moment_constant(ens)
        report.constants.update(moment_c_hm1=cell.c_hm1, moment_c_l2=cell.c_l2,
                                moment_c_homog=cell.c_homog)
    if p.epsilon > 0:
        res = max(d.solver.get("max_relative_residual", 0.0) for d in ens)
        ledger.append(_entry("resolvent_residual", res <= p.solver_tol,
                             f"max relative residual {res:.3g}"))
        report.constants["max_resolvent_residual"] = res
    report.ledger = ledger
    return cfg, model, ens, report, ledger


def cmd_simulate(args):
    run = _load(args)
    cfg, model, ens, report, ledger = run_simulation(run, _workers(args))
    out = Path(run.output_dir())
    manifest = artifacts.write_run(out, run, cfg, model, ens, report, ledger,
                                   extra={"kind": "simulate"})
    _emit(args, manifest, _ledger_lines(ledger) + [
        f"wrote {out} ({len(ens)} paths, {cfg.n_steps} steps, dt={cfg.dt:.4g})",
        f"config hash {manifest['config_hash']}"])
    return _status(ledger)


def run_cascade(run, n_paths=None):
    """Cascade study plus ledger for ``run``."""
    from .cascade import cascade_study
    from .diagnostics import nu_rate_check

    eps, nus, lams = run.schedules()
    if not (eps or nus or lams):
        raise ConfigError("[params] cascade needs at least one of eps_schedule, nu_schedule, "
                          "lambda_schedule")
    cfg = run.sim_config(store_outputs=True)
    model = cfg.noise_model()
    rep = cascade_study(cfg, eps, nus, lams, n_paths=n_paths or run["ensemble"]["n_paths"],
                        batch_size=run["ensemble"]["batch_size"], model=model)
    ledger, rows = [], []
    for key in ("epsilon", "nu", "lambda"):
        if key in rep:
            rows.extend(rep[key].summary())
    if "epsilon" in rep and len(eps) > 1:
        ledger.append(_entry("epsilon_distances_decrease", rep["epsilon_monotone"],
                             f"to direct: {rep['epsilon_to_direct']}"))
    if "epsilon" in rep and rep["epsilon"].comparisons:
        res = rep["epsilon_max_residual"]
        ledger.append(_entry("resolvent_residual", res <= cfg.params.solver_tol,
                             f"max relative residual {res:.3g}"))
    if "nu_rate" in rep and len(rep["nu_rate"]["delta_nu"]) >= 2:
        chk = nu_rate_check(rep["nu_rate"]["delta_nu"], rep["nu_rate"]["mean_sup_hm1_sq"],
                            run["diagnostics"]["min_alpha"])
        rep["nu_rate_check"] = chk
        ledger.append(_entry("nu_rate", chk["passed"], f"alpha={chk['alpha']:.3g}"))
    return cfg, model, rep, rows, ledger


CASCADE_COLUMNS = ("study", "kind", "a", "b", "mean_sup_hm1_sq", "band_sup_hm1_sq", "mean_int_l2",
                   "band_int_l2", "mean_sup_local_hm1_sq", "band_sup_local_hm1_sq")


def cmd_cascade(args):
    run = _load(args)
    cfg, model, rep, rows, ledger = run_cascade(run)
    out = Path(run.output_dir())
    out.mkdir(parents=True, exist_ok=True)
    (out / artifacts.CONFIG).write_text(run.dump())
    text = run.dump(include_output=False)
    artifacts.write_csv(out / "cascade.csv", rows, CASCADE_COLUMNS)
    version = artifacts.code_version()
    manifest = {
        "kind": "cascade",
        "format_version": artifacts.FORMAT_VERSION,
        "config_hash": artifacts.config_hash(text, cfg.seed, version),
        "seed": cfg.seed,
        "code_version": version,
        "order": rep["order"],
        "n_paths": rep["n_paths"],
        "schedules": dict(zip(("epsilon", "nu", "lambda"), run.schedules())),
        "epsilon_to_direct": rep.get("epsilon_to_direct", []),
        "nu_rate": rep.get("nu_rate_check", rep.get("nu_rate")),
        "lambda_local": rep.get("lambda_local", []),
        "noise": model.manifest(),
        "files": {"cascade.csv": artifacts.sha256_file(out / "cascade.csv")},
        "ledger": ledger,
        "passed": all(e["passed"] for e in ledger),
    }
    artifacts.write_json(out / artifacts.MANIFEST, manifest)
    lines = [f"{r['study']:8s} {r['kind']:12s} {r['a']!r:>10} vs {r['b']!r:<10} "
             f"E sup|d|^2 = {r['mean_sup_hm1_sq']:.4g} +- {r['band_sup_hm1_sq']:.2g}" for r in rows]
    if not rows:
        lines.append("no comparisons (single-entry schedules)")
    _emit(args, manifest, lines + _ledger_lines(ledger) + [f"wrote {out}"])
    return _status(ledger)


def cmd_report(args):
    dirs = [Path(d) for d in args.run_dirs]
    out = Path(args.out) if args.out else dirs[0]
    out.mkdir(parents=True, exist_ok=True)
    summaries, warnings = [], []
    for d in dirs:
        manifest = artifacts.load_manifest(d)
        problems = artifacts.verify_integrity(d, manifest)
        for prob in problems:
            warnings.append(f"integrity warning: {d}: {prob}")
        if manifest.get("kind") == "cascade":
            rows = artifacts.read_csv(d / "cascade.csv") if (d / "cascade.csv").is_file() else []
            summaries.append({"run_dir": str(d), "kind": "cascade", "config_hash": manifest["config_hash"],
                              "passed": manifest.get("passed"), "ledger": manifest.get("ledger", []),
                              "rows": rows, "nu_rate": manifest.get("nu_rate"),
                              "integrity_problems": problems})
        else:
            s = artifacts.summarize_run(d)
            s["kind"] = "simulate"
            summaries.append(s)
    for w in warnings:
        print(w, file=sys.stderr)
    artifacts.write_json(out / "report.json", {"runs": summaries, "warnings": warnings})
    sim_dirs = [Path(s["run_dir"]) for s in summaries if s["kind"] == "simulate"]
    scripts = []
    if sim_dirs:
        rows = []
        for s in summaries:
            if s["kind"] == "simulate":
                rows.append({"run_dir": s["run_dir"], "config_hash": s["config_hash"],
                             "passed": bool(s["passed"]), **{k: v for k, v in s["final"].items()}})
        cols = list(rows[0].keys())
        for r in rows[1:]:
            cols += [c for c in r if c not in cols]
        for r in rows:
            for c in cols:
                r.setdefault(c, float("nan"))
        artifacts.write_csv(out / "report_summary.csv", rows, cols)
        for d in sim_dirs:
            name = "trajectories.gp" if len(sim_dirs) == 1 else f"trajectories_{d.name}.gp"
            (out / name).write_text(artifacts.gnuplot_script([d], output=name[:-3] + ".png"))
            scripts.append(name)
        if len(sim_dirs) > 1:
            (out / "overlay.gp").write_text(artifacts.gnuplot_script(sim_dirs, output="overlay.png"))
            scripts.append("overlay.gp")
    payload = {"runs": summaries, "warnings": warnings, "scripts": scripts, "out": str(out)}
    lines = []
    for s in summaries:
        lines.append(f"{s['run_dir']}: {s['kind']} hash {s['config_hash'][:16]} "
                     f"{'passed' if s['passed'] else 'FAILED'}")
        lines += ["  " + x for x in _ledger_lines(s["ledger"])]
    lines.append(f"wrote {out} ({', '.join(['report.json'] + scripts)})")
    _emit(args, payload, lines)
    failed = any(not s["passed"] for s in summaries)
    return EXIT_INVALID if warnings or failed else EXIT_OK


# --------------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")

    run_opts = argparse.ArgumentParser(add_help=False)
    run_opts.add_argument("--config", required=True, help="run configuration file")
    run_opts.add_argument("--seed", type=int, help="override [ensemble] seed")
    run_opts.add_argument("--paths", type=int, help="override [ensemble] n_paths")
    run_opts.add_argument("--workers", type=int, help="worker processes (default STOCHLOG_WORKERS or 1)")
    run_opts.add_argument("--out", help="override [output] directory")

    parser = argparse.ArgumentParser(prog="stochlog", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check-scalar", parents=[common], help="scalar calculus property suite")
    p.add_argument("--lambda", dest="lam", type=float, action="append",
                   help="regularization level to check (repeatable)")
    p.add_argument("--seed", type=int, help="seed of the random pairs")
    p.add_argument("--pairs", type=int, default=10_000, help="random pairs per lambda")
    p.set_defaults(func=cmd_check_scalar)

    p = sub.add_parser("simulate", parents=[common, run_opts], help="simulate an ensemble")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cascade", parents=[common, run_opts], help="regularization cascade study")
    p.set_defaults(func=cmd_cascade)

    p = sub.add_parser("report", parents=[common], help="summaries and plot scripts of run dirs")
    p.add_argument("run_dirs", nargs="+", help="run directories")
    p.add_argument("--out", help="directory for the report (default: first run dir)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    np.seterr(over="ignore", under="ignore")
    try:
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (StochlogError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
