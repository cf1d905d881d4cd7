"""Run configuration files.

INI-style text with named blocks (grammar in ``docs/formats.md``)::

    [grid]      dim, n, half_length
    [noise]     family, n_modes, decay, rate, scale, constant_value, mu
    [params]    lambda, nu, epsilon, solver_tol, solver_max_iter, newton_tol,
                newton_max_iter, eps_schedule, nu_schedule, lambda_schedule
    [time]      t_final, dt, n_outputs, c_stab
    [datum]     profile, floor, amplitude, width, center, wavenumber
    [ensemble]  n_paths, seed, batch_size
    [diagnostics] energy, nu_grid, n_weak_modes, store_increments, moment_factor, min_alpha
    [output]    directory, snapshots

Every block except ``diagnostics`` and ``output`` is required. Loading
normalizes values, fills defaults and validates them by building the
simulation objects, so a file that loads will run. ``dump`` writes the
normalized form; load, dump and load again is a fixed point.
"""

from __future__ import annotations

import configparser
import io
import os
from dataclasses import dataclass, field

from .errors import ConfigError, StochlogError
from .grid import Grid
from .noise import NoiseSpec
from .solver import DatumSpec, RegularizationParams, SimConfig

REQUIRED = ("grid", "noise", "params", "time", "datum", "ensemble")
ENV_OUTPUT = "STOCHLOG_OUTPUT_DIR"
ENV_WORKERS = "STOCHLOG_WORKERS"


def _floats(text):
    text = text.strip()
    if not text:
        return ()
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(_fmt(float(x)) for x in v)
    return str(v)


# block -> key -> (parser, default); None default means required
SCHEMA = {
    "grid": {"dim": (int, 3), "n": (int, 32), "half_length": (float, 8.0)},
    "noise": {"family": (str, "bumps"), "n_modes": (int, 16), "decay": (str, "geometric"),
              "rate": (float, 2.0), "scale": (float, 1.0), "constant_value": (float, 1.0),
              "mu": (_floats, ())},
    "params": {"lambda": (float, 0.25), "nu": (float, 0.0), "epsilon": (float, 0.0),
               "solver_tol": (float, 1e-10), "solver_max_iter": (int, 200),
               "newton_tol": (float, 1e-12), "newton_max_iter": (int, 100),
               "eps_schedule": (_floats, ()), "nu_schedule": (_floats, ()),
               "lambda_schedule": (_floats, ())},
    "time": {"t_final": (float, 1.0), "dt": (str, "auto"), "n_outputs": (int, 16),
             "c_stab": (float, 0.25)},
    "datum": {"profile": (str, "bump"), "floor": (float, 0.5), "amplitude": (float, 1.0),
              "width": (float, 1.5), "center": (_floats, ()), "wavenumber": (int, 1)},
    "ensemble": {"n_paths": (int, 100), "seed": (int, 0), "batch_size": (int, 25)},
    "diagnostics": {"energy": (_bool, True), "nu_grid": (_floats, (1.0, 0.1, 0.01)),
                    "n_weak_modes": (int, 8), "store_increments": (_bool, False),
                    "moment_factor": (float, 2.0), "min_alpha": (float, 0.8)},
    "output": {"directory": (str, "runs/out"), "snapshots": (_bool, False)},
}


@dataclass
class RunConfig:
    """Normalized configuration: ``blocks[block][key]`` holds typed values."""

    blocks: dict = field(default_factory=dict)
    source: str = ""

    def __getitem__(self, block):
        return self.blocks[block]

    # ---------------------------------------------------------------- building
    def grid(self):
        b = self.blocks["grid"]
        return Grid(b["dim"], b["n"], b["half_length"])

    def noise_spec(self):
        b = self.blocks["noise"]
        return NoiseSpec(family=b["family"], n_modes=b["n_modes"], decay=b["decay"],
                         rate=b["rate"], scale=b["scale"], constant_value=b["constant_value"],
                         mu=b["mu"])

    def params(self, **over):
        b = self.blocks["params"]
        kw = dict(lam=b["lambda"], nu=b["nu"], epsilon=b["epsilon"], solver_tol=b["solver_tol"],
                  solver_max_iter=b["solver_max_iter"], newton_tol=b["newton_tol"],
                  newton_max_iter=b["newton_max_iter"],
                  energy_diagnostics=self.blocks["diagnostics"]["energy"])
        kw.update(over)
        return RegularizationParams(**kw)

    def datum(self):
        b = self.blocks["datum"]
        return DatumSpec(profile=b["profile"], floor=b["floor"], amplitude=b["amplitude"],
                         width=b["width"], center=b["center"], wavenumber=b["wavenumber"])

    def sim_config(self, **over):
        t = self.blocks["time"]
        d = self.blocks["diagnostics"]
        e = self.blocks["ensemble"]
        kw = dict(grid=self.grid(), noise=self.noise_spec(), params=self.params(),
                  datum=self.datum(), t_final=t["t_final"],
                  dt=None if t["dt"] == "auto" else float(t["dt"]),
                  n_outputs=t["n_outputs"], n_paths=e["n_paths"], seed=e["seed"],
                  c_stab=t["c_stab"], nu_grid=d["nu_grid"], n_weak_modes=d["n_weak_modes"],
                  store_increments=d["store_increments"],
                  snapshot_final=self.blocks["output"]["snapshots"])
        kw.update(over)
        return SimConfig(**kw)

    def schedules(self):
        b = self.blocks["params"]
        return b["eps_schedule"], b["nu_schedule"], b["lambda_schedule"]

    # ------------------------------------------------------------- overrides
    def with_overrides(self, seed=None, n_paths=None, out=None):
        blocks = {k: dict(v) for k, v in self.blocks.items()}
        if seed is not None:
            blocks["ensemble"]["seed"] = int(seed)
        if n_paths is not None:
            blocks["ensemble"]["n_paths"] = int(n_paths)
        if out is not None:
            blocks["output"]["directory"] = str(out)
        cfg = RunConfig(blocks, self.source)
        cfg.validate()
        return cfg

    def output_dir(self):
        return os.environ.get(ENV_OUTPUT) or self.blocks["output"]["directory"]

    # ------------------------------------------------------------ validation
    def validate(self):
        """Build every object once; errors name the failing block."""
        checks = (
            ("grid", self.grid),
            ("noise", lambda: self.noise_spec()),
            ("params", lambda: self.params()),
            ("datum", lambda: self.datum().build(self.grid())),
        )
        for block, fn in checks:
            try:
                fn()
            except (StochlogError, ValueError) as exc:
                raise ConfigError(f"[{block}] {exc}") from exc
        try:
            from .noise import build_noise_model
            build_noise_model(self.noise_spec(), self.grid())
        except StochlogError as exc:
            raise ConfigError(f"[noise] {exc}") from exc
        for name in ("eps_schedule", "nu_schedule", "lambda_schedule"):
            s = self.blocks["params"][name]
            if any(b >= a for a, b in zip(s, s[1:])):
                raise ConfigError(f"[params] {name} must be strictly decreasing, got {list(s)}")
            if name == "lambda_schedule" and self.blocks["diagnostics"]["energy"] \
                    and any(v > 0.5 for v in s):
                raise ConfigError("[params] lambda_schedule entries must be <= 1/2 "
                                  "with energy diagnostics on")
        if self.blocks["ensemble"]["n_paths"] < 1 or self.blocks["ensemble"]["batch_size"] < 1:
            raise ConfigError("[ensemble] n_paths and batch_size must be positive")
        if not 0 <= self.blocks["ensemble"]["seed"] < 2 ** 64:
            raise ConfigError("[ensemble] seed must lie in [0, 2^64)")
        t = self.blocks["time"]["dt"]
        if t != "auto":
            try:
                float(t)
            except ValueError:
                raise ConfigError(f"[time] dt must be 'auto' or a number, got {t!r}") from None
        try:
            self.sim_config()
        except StochlogError as exc:
            raise ConfigError(f"[time] {exc}") from exc
        return self

    # ------------------------------------------------------------ text form
    def dump(self, include_output=True):
        """Canonical text; ``include_output=False`` omits the output location,
        which does not affect any number (used for hashing)."""
        buf = io.StringIO()
        for block, keys in SCHEMA.items():
            buf.write(f"[{block}]\n")
            for key in keys:
                if not include_output and block == "output" and key == "directory":
                    continue
                buf.write(f"{key} = {_fmt(self.blocks[block][key])}\n")
            buf.write("\n")
        return buf.getvalue()


def parse(text, source="<string>"):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {source}: {exc}") from exc
    for block in REQUIRED:
        if not cp.has_section(block):
            raise ConfigError(f"missing [{block}] block in {source}")
    for block in cp.sections():
        if block not in SCHEMA:
            raise ConfigError(f"unknown block [{block}] in {source}")
    blocks = {}
    for block, keys in SCHEMA.items():
        sec = cp[block] if cp.has_section(block) else {}
        for key in sec:
            if key not in keys:
                raise ConfigError(f"[{block}] unknown key {key!r}")
        vals = {}
        for key, (conv, default) in keys.items():
            if key in sec:
                try:
                    vals[key] = conv(sec[key])
                except ValueError as exc:
                    raise ConfigError(f"[{block}] bad value for {key}: {exc}") from None
            else:
                vals[key] = default
        if block == "time" and vals["dt"] != "auto":
            try:
                vals["dt"] = repr(float(vals["dt"]))
            except ValueError:
                pass
        blocks[block] = vals
    return RunConfig(blocks, source).validate()


def load(path):
    with open(path) as fh:
        return parse(fh.read(), str(path))


def env_workers(default=1):
    v = os.environ.get(ENV_WORKERS)
    if not v:
        return default
    try:
        n = int(v)
    except ValueError:
        raise ConfigError(f"{ENV_WORKERS} must be an integer, got {v!r}") from None
    if n < 1:
        raise ConfigError(f"{ENV_WORKERS} must be positive")
    return n
