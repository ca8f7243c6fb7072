"""Run configuration: ``[problem]``, ``[numerics]`` and ``[output]`` sections.

Expressions may be quoted.  Lists are comma separated.  HJB controls go
in sections ``[control.1]``, ``[control.2]``, ... with the same coefficient
keys as a linear operator.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import HalfcellError
from .expr import ExprError, parse
from .model import (HJB, HalfStrip, Linear, LinearOblique, NonlinearHomogeneous, PucciMinus,
                    Semilinear)

SECTIONS = ("problem", "numerics", "output")
OPERATORS = ("linear", "hjb", "pucci", "semilinear")
BOUNDARIES = ("oblique", "nonlinear")
# schedules and the direction they must move in
SCHEDULES = {"deltas": -1, "eps_schedule": -1, "alpha_schedule": -1, "heights": 1,
             "epsilons": -1, "horizons": 1, "radii": 1}

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_override"]


class ConfigError(HalfcellError, ValueError):
    """Invalid or inconsistent configuration."""


def _unquote(value: str) -> str:
    value = value.strip()
    if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
        return value[1:-1]
    return value


def _floats(text: str) -> list:
    text = _unquote(text)
    if not text:
        return []
    out = []
    for item in text.split(","):
        item = item.strip()
        try:
            out.append(float(item))
        except ValueError:
            try:
                out.append(float(parse(item)()))
            except (ExprError, TypeError) as exc:
                raise ConfigError(f"not a number: {item!r}") from exc
    return out


def parse_override(text: str) -> tuple:
    """``section.key=value`` (section defaults to numerics) into a triple."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, value = text.split("=", 1)
    key = key.strip()
    section, _, name = key.rpartition(".")
    section = section or "numerics"
    if not name:
        raise ConfigError(f"override {text!r} has an empty key")
    return section, name, value.strip()


@dataclass
class RunConfig:
    problem: dict
    numerics: dict
    output: dict
    controls: list = field(default_factory=list)
    path: str | None = None

    # -- typed access ------------------------------------------------------------------------

    def _raw(self, section, key, default):
        table = getattr(self, section)
        return table[key] if key in table else default

    def text(self, key, default=None, section="numerics"):
        raw = self._raw(section, key, default)
        return None if raw is None else _unquote(str(raw))

    def number(self, key, default=None, section="numerics"):
        raw = self._raw(section, key, None)
        if raw is None:
            return default
        vals = _floats(str(raw))
        if len(vals) != 1:
            raise ConfigError(f"{section}.{key} must be a single number")
        return vals[0]

    def integer(self, key, default=None, section="numerics"):
        val = self.number(key, None, section)
        if val is None:
            return default
        if val != int(val):
            raise ConfigError(f"{section}.{key} must be an integer")
        return int(val)

    def numbers(self, key, default=None, section="numerics"):
        raw = self._raw(section, key, None)
        return list(default) if raw is None and default is not None else (
            None if raw is None else _floats(str(raw)))

    def flag(self, key, default=False, section="numerics"):
        raw = self._raw(section, key, None)
        if raw is None:
            return default
        val = _unquote(str(raw)).lower()
        if val in ("1", "true", "yes", "on"):
            return True
        if val in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{section}.{key} must be a boolean")

    # -- model objects -----------------------------------------------------------------------

    @property
    def dim(self) -> int:
        d = self.integer("dim", 1, "problem")
        if d not in (1, 2):
            raise ConfigError("problem.dim must be 1 or 2")
        return d

    def _linear_from(self, table: dict) -> Linear:
        d = self.dim
        get = lambda k, dflt: _unquote(str(table.get(k, dflt)))  # noqa: E731
        A = [[get(f"a{min(i, j) + 1}{max(i, j) + 1}", "1" if i == j else "0") for j in range(d)]
             for i in range(d)]
        b = [get(f"b{i + 1}", "0") for i in range(d)]
        singular = str(table.get("singular_drift", "true")).strip().lower() in ("1", "true", "yes", "on")
        return Linear.make(A, b, get("f", "0"), singular_drift=singular)

    def operator(self):
        kind = (self.text("operator", "linear", "problem") or "linear").lower()
        if kind not in OPERATORS:
            raise ConfigError(f"problem.operator must be one of {', '.join(OPERATORS)}")
        if kind == "linear":
            return self._linear_from(self.problem)
        if kind == "semilinear":
            H = self.text("H", None, "problem")
            if not H:
                raise ConfigError("semilinear operators need problem.H")
            return Semilinear(self._linear_from(self.problem), parse(H))
        if kind == "pucci":
            k = self.number("kappa", None, "problem")
            K = self.number("Kappa", None, "problem")
            if k is None or K is None:
                raise ConfigError("pucci operators need problem.kappa and problem.Kappa")
            try:
                return PucciMinus(k, K, self.dim)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if len(self.controls) < 2:
            raise ConfigError("hjb operators need at least two [control.N] sections")
        return HJB(tuple(self._linear_from(c) for c in self.controls))

    def boundary(self):
        d = self.dim
        kind = (self.text("boundary", "oblique", "problem") or "oblique").lower()
        if kind not in BOUNDARIES:
            raise ConfigError(f"problem.boundary must be one of {', '.join(BOUNDARIES)}")
        gamma = [self.text(f"gamma{i + 1}", "-1" if i == d - 1 else "0", "problem") for i in range(d)]
        base = LinearOblique.make(gamma, self.text("g", "0", "problem"))
        if kind == "oblique":
            return base
        h = self.text("h", None, "problem")
        if not h:
            raise ConfigError("nonlinear boundaries need problem.h")
        return NonlinearHomogeneous(base, parse(h))

    def psi(self):
        src = self.text("psi", "", "problem")
        return parse(src) if src else None

    def domain(self, height: float | None = None) -> HalfStrip:
        h = height if height is not None else self.number("height", 4.0, "problem")
        return HalfStrip(self.dim, self.psi(), h)

    def vector(self, key, default=None):
        vals = self.numbers(key, None)
        d = self.dim
        if vals is None:
            return np.zeros(d) if default is None else np.asarray(default, dtype=float)
        if len(vals) != d:
            raise ConfigError(f"numerics.{key} needs {d} entries")
        return np.asarray(vals)

    def matrix(self, key):
        vals = self.numbers(key, None)
        d = self.dim
        if vals is None:
            return np.zeros((d, d))
        if len(vals) != d * d:
            raise ConfigError(f"numerics.{key} needs {d * d} entries (row-major)")
        M = np.asarray(vals).reshape(d, d)
        if not np.allclose(M, M.T):
            raise ConfigError(f"numerics.{key} must be symmetric")
        return M

    # -- validation ----------------------------------------------------------------------------

    def validate(self, subcommand: str | None = None) -> "RunConfig":
        try:
            for table in [self.problem] + self.controls:
                for key, val in table.items():
                    if key in ("operator", "boundary", "dim", "height", "singular_drift",
                               "kappa"):
                        continue
                    src = _unquote(str(val))
                    if src:
                        parse(src)
            self.operator()
            self.boundary()
        except ExprError as exc:
            raise ConfigError(f"bad expression: {exc}") from exc
        for key, sign in SCHEDULES.items():
            vals = self.numbers(key, None)
            if vals is None:
                continue
            steps = np.diff(vals) * sign
            if len(vals) and (np.any(steps <= 0) or any(v <= 0 for v in vals)):
                raise ConfigError(f"numerics.{key} must be positive and strictly "
                                  f"{'increasing' if sign > 0 else 'decreasing'}")
        if subcommand == "mc" and self.number("seed", None) is None:
            raise ConfigError("mc runs need numerics.seed")
        return self


def load_config(path, overrides=()) -> RunConfig:
    """Read and validate a configuration file, applying ``section.key=value`` overrides."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"configuration file {path} not found")
    cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"), interpolation=None)
    cp.optionxform = str
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    for section, key, value in overrides:
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, value)
    unknown = [s for s in cp.sections() if s not in SECTIONS and not s.startswith("control.")]
    if unknown:
        raise ConfigError(f"unknown sections: {', '.join(unknown)}")
    tables = {s: dict(cp.items(s)) if cp.has_section(s) else {} for s in SECTIONS}
    names = [s for s in cp.sections() if s.startswith("control.")]
    order = lambda s: (0, int(s[8:]), "") if s[8:].isdigit() else (1, 0, s[8:])  # noqa: E731
    controls = [dict(cp.items(s)) for s in sorted(names, key=order)]
    return RunConfig(tables["problem"], tables["numerics"], tables["output"], controls, str(path))
