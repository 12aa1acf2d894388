"""Run configuration: a flat INI file with one ``[run]`` section and one
``[spec.<id>]`` section per walk.

Example::

    [run]
    experiment = converge-tail
    n_grid = 1024, 4096, 16384
    k_list = 1, 4, sqrt:0.7071
    chi = 0.1
    seed = 7
    out_path = results

    [spec.half]
    delta = 0.5
    perturbation.kind = rational

``k_list`` entries are integers or ``sqrt:<c>``, meaning ``round(c sqrt(n))``
at each ``n``.  Spec sections take the keys of :func:`spec_from_config`.
"""

from __future__ import annotations

import configparser
import math
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .walk import SPEC_KEYS, WalkSpec, spec_from_config, spec_to_config

__all__ = [
    "ConfigError",
    "EXPERIMENTS",
    "KToken",
    "RunConfig",
    "parse_config",
    "load_config",
    "config_to_text",
]

EXPERIMENTS = (
    "audit", "converge-tail", "converge-point", "hit-regimes",
    "occupancy-llt", "location-llt", "coupling-study", "bessel-check",
    "estimate-k0",
)

_RUN_DEFAULTS = {
    "experiment": "",
    "n_grid": "1024, 4096, 16384",
    "k_list": "1, 4",
    "chi": "0.1",
    "chi_sweep": "",
    "reps": "10000",
    "seed": "0",
    "out_path": "results",
    "x_max": "65536",
    "cap": "4096",
    "h_floor": "8",
    "samples": "100000",
    "max_cells": "2000000000",
    "tolerance": "",
    "bessel_x": "100, 1000, 10000",
}


class ConfigError(ValueError):
    """Invalid configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, section: str = "", key: str = "", line: Optional[int] = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if section:
            where.append(f"[{section}]")
        if key:
            where.append(key)
        prefix = " ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
        self.section = section
        self.key = key
        self.line = line


@dataclass(frozen=True)
class KToken:
    """A requested height: fixed ``value`` or ``scale * sqrt(n)``."""

    value: Optional[int] = None
    scale: Optional[float] = None

    def at(self, n: int) -> int:
        if self.value is not None:
            return self.value
        return max(1, int(round(self.scale * math.sqrt(n))))

    @property
    def label(self) -> str:
        return str(self.value) if self.value is not None else f"sqrt:{self.scale!r}"

    @classmethod
    def parse(cls, text: str) -> "KToken":
        text = text.strip()
        if text.startswith("sqrt:"):
            scale = float(text[5:])
            if not scale > 0:
                raise ValueError("sqrt scale must be > 0")
            return cls(scale=scale)
        v = int(text)
        if v < 0:
            raise ValueError("heights must be >= 0")
        return cls(value=v)


@dataclass(frozen=True)
class RunConfig:
    specs: Tuple[Tuple[str, WalkSpec], ...]
    experiment: str = ""
    n_grid: Tuple[int, ...] = (1024, 4096, 16384)
    k_list: Tuple[KToken, ...] = (KToken(1), KToken(4))
    chi: float = 0.1
    chi_sweep: Tuple[float, ...] = ()
    reps: int = 10000
    seed: int = 0
    out_path: str = "results"
    x_max: int = 65536
    cap: int = 4096
    h_floor: int = 8
    samples: int = 100000
    max_cells: int = 2_000_000_000
    tolerance: Optional[float] = None
    bessel_x: Tuple[float, ...] = (100.0, 1000.0, 10000.0)

    @property
    def spec_map(self) -> Dict[str, WalkSpec]:
        return dict(self.specs)

    @property
    def chis(self) -> Tuple[float, ...]:
        return self.chi_sweep or (self.chi,)


def _line_index(text: str) -> Dict[Tuple[str, str], int]:
    idx: Dict[Tuple[str, str], int] = {}
    section = ""
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            idx[(section, "")] = i
            continue
        key = re.split(r"[=:]", line, maxsplit=1)[0].strip().lower()
        idx[(section, key)] = i
    return idx


def _ints(text: str) -> Tuple[int, ...]:
    return tuple(int(v) for v in text.replace(";", ",").split(",") if v.strip())


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.replace(";", ",").split(",") if v.strip())


def parse_config(text: str) -> RunConfig:
    """Parse and validate config text; raises :class:`ConfigError`."""
    lines = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, strict=True)
    try:
        cp.read_string(text)
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"duplicate section (spec ids must be unique)", exc.section,
                          line=exc.lineno) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigError("duplicate key", exc.section, exc.option, exc.lineno) from None
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse: {exc}") from None

    if not cp.has_section("run"):
        raise ConfigError("missing [run] section")
    run = cp["run"]
    for key in run:
        if key not in _RUN_DEFAULTS:
            raise ConfigError("unknown key", "run", key, lines.get(("run", key)))
    values = {k: run.get(k, v) for k, v in _RUN_DEFAULTS.items()}

    def conv(key, fn):
        try:
            return fn(values[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value {values[key]!r}: {exc}", "run", key,
                              lines.get(("run", key))) from None

    def check(cond, key, message):
        if not cond:
            raise ConfigError(message, "run", key, lines.get(("run", key)))

    experiment = values["experiment"].strip()
    check(experiment == "" or experiment in EXPERIMENTS, "experiment",
          f"unknown experiment {experiment!r}; expected one of {', '.join(EXPERIMENTS)}")
    n_grid = conv("n_grid", _ints)
    check(len(n_grid) >= 1, "n_grid", "n_grid is empty")
    check(all(n >= 2 for n in n_grid), "n_grid", "n_grid values must be >= 2")
    check(all(a < b for a, b in zip(n_grid, n_grid[1:])), "n_grid",
          "n_grid must be sorted strictly ascending")
    k_list = conv("k_list", lambda s: tuple(KToken.parse(v) for v in s.split(",") if v.strip()))
    chi = conv("chi", float)
    check(0 < chi < 1, "chi", "chi must lie in (0, 1)")
    chi_sweep = conv("chi_sweep", _floats)
    check(all(0 < c < 1 for c in chi_sweep), "chi_sweep", "chi values must lie in (0, 1)")
    reps = conv("reps", int)
    check(reps >= 100, "reps", "reps must be >= 100")
    seed = conv("seed", int)
    check(0 <= seed < 2**64, "seed", "seed must be an unsigned 64-bit integer")
    x_max = conv("x_max", int)
    check(x_max >= 1024, "x_max", "x_max must be >= 1024")
    cap = conv("cap", int)
    check(cap >= 1, "cap", "cap must be >= 1")
    h_floor = conv("h_floor", int)
    check(h_floor >= 1, "h_floor", "h_floor must be >= 1")
    samples = conv("samples", int)
    check(samples >= 1, "samples", "samples must be >= 1")
    max_cells = conv("max_cells", int)
    tol_text = values["tolerance"].strip()
    tolerance = conv("tolerance", float) if tol_text else None
    bessel_x = conv("bessel_x", _floats)
    check(all(x > 1 for x in bessel_x), "bessel_x", "bessel_x values must be > 1")

    specs: List[Tuple[str, WalkSpec]] = []
    for name in cp.sections():
        if name == "run":
            continue
        if not name.startswith("spec."):
            raise ConfigError("unknown section; expected [run] or [spec.<id>]", name,
                              line=lines.get((name, "")))
        sid = name[5:].strip()
        if not sid or not re.fullmatch(r"[A-Za-z0-9_.-]+", sid):
            raise ConfigError("spec id must be non-empty [A-Za-z0-9_.-]", name,
                              line=lines.get((name, "")))
        for key in cp[name]:
            if key not in SPEC_KEYS:
                raise ConfigError(f"unknown key; expected one of {', '.join(sorted(SPEC_KEYS))}",
                                  name, key, lines.get((name, key)))
        try:
            spec = spec_from_config(dict(cp[name]))
        except KeyError as exc:
            raise ConfigError(str(exc.args[0]) if exc.args else "missing key", name,
                              line=lines.get((name, ""))) from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), name, line=lines.get((name, ""))) from None
        specs.append((sid, spec))
    if not specs:
        raise ConfigError("no [spec.<id>] sections")

    return RunConfig(specs=tuple(specs), experiment=experiment, n_grid=n_grid, k_list=k_list,
                     chi=chi, chi_sweep=chi_sweep, reps=reps, seed=seed,
                     out_path=values["out_path"].strip(), x_max=x_max, cap=cap,
                     h_floor=h_floor, samples=samples, max_cells=max_cells,
                     tolerance=tolerance, bessel_x=bessel_x)


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def config_to_text(cfg: RunConfig) -> str:
    """Render a config back to INI text (round-trips through :func:`parse_config`)."""
    out = ["[run]"]
    if cfg.experiment:
        out.append(f"experiment = {cfg.experiment}")
    out.append("n_grid = " + ", ".join(str(n) for n in cfg.n_grid))
    out.append("k_list = " + ", ".join(t.label for t in cfg.k_list))
    out.append(f"chi = {cfg.chi!r}")
    if cfg.chi_sweep:
        out.append("chi_sweep = " + ", ".join(repr(c) for c in cfg.chi_sweep))
    for key in ("reps", "seed", "out_path", "x_max", "cap", "h_floor", "samples", "max_cells"):
        out.append(f"{key} = {getattr(cfg, key)}")
    if cfg.tolerance is not None:
        out.append(f"tolerance = {cfg.tolerance!r}")
    out.append("bessel_x = " + ", ".join(repr(x) for x in cfg.bessel_x))
    for sid, spec in cfg.specs:
        out.append("")
        out.append(f"[spec.{sid}]")
        for k, v in spec_to_config(spec).items():
            out.append(f"{k} = {v}")
    return "\n".join(out) + "\n"
