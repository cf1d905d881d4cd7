"""Run directories: diagnostic CSVs, manifest, snapshots and plot scripts.

Layout of a run directory (schemas in ``docs/formats.md``)::

    config.cfg       normalized configuration (``RunConfig.dump``)
    paths.csv        one row per (path, output time)
    summary.csv      ensemble mean and 3 sigma band per output time
    manifest.json    hashes, constants, ledger
    snapshots/       optional final states, ``path_<id>.bin``

Everything written here is a pure function of the configuration, the seed
and the code version; nothing depends on wall-clock time or worker count.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import platform
from pathlib import Path

import numpy as np
import scipy

from . import __version__, kernels
from .errors import MissingArtifact
from .grid import ScalarField, write_snapshot
from .solver import PathDiagnostics

MANIFEST = "manifest.json"
PATHS_CSV = "paths.csv"
SUMMARY_CSV = "summary.csv"
CONFIG = "config.cfg"
FORMAT_VERSION = 1


def _num(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path, rows, columns=None):
    """Rows of dicts to CSV; floats are written with ``repr`` (exact round trip)."""
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_num(r[c]) if not isinstance(r[c], str) else r[c] for c in columns])
    return columns


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for r in rows:
        conv = {}
        for k, v in r.items():
            try:
                conv[k] = float(v)
            except ValueError:
                conv[k] = v
        out.append(conv)
    return out


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def code_version():
    """Everything besides the config and seed that can change the numbers."""
    return {
        "stochlog": __version__,
        "kernel_backend": kernels.BACKEND,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def config_hash(config_text, seed, version=None):
    """SHA-256 over the normalized config, the seed and the code version."""
    payload = json.dumps({"config": config_text, "seed": int(seed),
                          "code": version or code_version()}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if hasattr(obj, "__dict__") and not isinstance(obj, type):
        return _jsonable(vars(obj))
    return obj


def write_json(path, data):
    with open(path, "w") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def path_rows(ensemble):
    rows = []
    for d in ensemble:
        rows.extend(d.rows())
    return rows


def write_run(out_dir, run_config, sim_config, model, ensemble, report, ledger, extra=None):
    """Write a complete run directory and return the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG).write_text(run_config.dump())
    text = run_config.dump(include_output=False)
    files = {}
    if ensemble:
        write_csv(out / PATHS_CSV, path_rows(ensemble))
        files[PATHS_CSV] = sha256_file(out / PATHS_CSV)
    if report is not None:
        write_csv(out / SUMMARY_CSV, report.rows())
        files[SUMMARY_CSV] = sha256_file(out / SUMMARY_CSV)
    snaps = []
    for d in ensemble or ():
        if d.final_state is not None:
            (out / "snapshots").mkdir(exist_ok=True)
            name = f"snapshots/path_{d.path_id}.bin"
            write_snapshot(out / name, ScalarField(sim_config.grid, d.final_state))
            files[name] = sha256_file(out / name)
            snaps.append(name)
    g = sim_config.grid
    seed = sim_config.seed
    version = code_version()
    manifest = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash(text, seed, version),
        "seed": seed,
        "code_version": version,
        "grid": {"dim": g.dim, "n": g.n, "half_length": g.half_length,
                 "dim_three": g.dim_three},
        "time": {"dt": sim_config.dt, "dt_bound": sim_config.dt_bound,
                 "n_steps": sim_config.n_steps, "t_final": sim_config.t_final,
                 "output_times": sim_config.output_times},
        "params": {"lambda": sim_config.params.lam, "nu": sim_config.params.nu,
                   "epsilon": sim_config.params.epsilon, "mode": sim_config.params.mode},
        "noise": model.manifest(),
        "constants": report.constants if report is not None else {},
        "files": files,
        "snapshots": snaps,
        "ledger": ledger,
        "passed": all(e["passed"] for e in ledger),
    }
    if extra:
        manifest.update(extra)
    write_json(out / MANIFEST, manifest)
    return manifest


def load_manifest(run_dir):
    path = Path(run_dir) / MANIFEST
    if not path.is_file():
        raise MissingArtifact(f"{path} not found")
    with open(path) as fh:
        return json.load(fh)


def verify_integrity(run_dir, manifest=None):
    """Compare file hashes with the manifest.

    Returns a list of problems (empty when intact). Missing files raise
    :class:`MissingArtifact`; mismatched hashes are reported, not raised.
    """
    run_dir = Path(run_dir)
    manifest = manifest or load_manifest(run_dir)
    problems = []
    for name, digest in manifest.get("files", {}).items():
        p = run_dir / name
        if not p.is_file():
            raise MissingArtifact(f"{p} listed in the manifest is missing")
        actual = sha256_file(p)
        if actual != digest:
            problems.append(f"{name}: sha256 {actual} does not match manifest {digest}")
    return problems


# ------------------------------------------------------------------ plotting

PLOT_COLUMNS = (
    ("mean_norm_l2_sq", "E ||X||_2^2"),
    ("mean_norm_hm1_own_sq", "E ||X||_{H^-1_nu}^2"),
    ("mean_phi_lambda", "E Phi_lambda(X)"),
    ("mean_int_grad_psi", "E int ||grad Psi~(X)||^2"),
)


def gnuplot_script(run_dirs, labels=None, output="trajectories.png"):
    """Gnuplot text plotting norm and energy trajectories of one or more runs.

    With several directories every panel overlays the runs.
    """
    run_dirs = [Path(d) for d in run_dirs]
    labels = labels or [d.name for d in run_dirs]
    header = read_csv_header(run_dirs[0] / SUMMARY_CSV)
    lines = [
        "# generated by stochlog report",
        "set datafile separator ','",
        "set key autotitle columnhead",
        "set terminal pngcairo size 1200,900",
        f"set output '{output}'",
        "set multiplot layout 2,2",
        "set xlabel 't'",
    ]
    for col, title in PLOT_COLUMNS:
        if col not in header:
            continue
        c = header.index(col) + 1
        b = header.index(col.replace("mean_", "band_", 1)) + 1
        lines.append(f"set title '{title}'")
        parts = []
        for d, lab in zip(run_dirs, labels):
            f = (d / SUMMARY_CSV).as_posix()
            parts.append(f"'{f}' using 1:{c}:{b} with yerrorlines title '{lab}'")
        lines.append("plot " + ", \\\n     ".join(parts))
    lines.append("unset multiplot")
    return "\n".join(lines) + "\n"


def read_csv_header(path):
    if not Path(path).is_file():
        raise MissingArtifact(f"{path} not found")
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def summarize_run(run_dir):
    """Summary dict of a run directory; raises MissingArtifact when incomplete."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    problems = verify_integrity(run_dir, manifest)
    summary_path = run_dir / SUMMARY_CSV
    if not summary_path.is_file():
        raise MissingArtifact(f"{summary_path} not found")
    rows = read_csv(summary_path)
    final = rows[-1] if rows else {}
    return {
        "run_dir": os.fspath(run_dir),
        "config_hash": manifest["config_hash"],
        "passed": manifest.get("passed"),
        "ledger": manifest.get("ledger", []),
        "constants": manifest.get("constants", {}),
        "final": final,
        "integrity_problems": problems,
    }


def ensemble_from_csv(path):
    """Rebuild per-path scalar trajectories from ``paths.csv`` (for re-analysis)."""
    rows = read_csv(path)
    by_path = {}
    for r in rows:
        by_path.setdefault(int(r["path"]), []).append(r)
    out = {}
    for pid, rs in by_path.items():
        out[pid] = {c: np.array([r[c] for r in rs]) for c in PathDiagnostics.COLUMNS}
    return out
