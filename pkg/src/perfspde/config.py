"""Run configuration: a small line-based format with typed, range-checked keys.

Grammar (one item per line)::

    # comment                  full-line or trailing comment
    [section]                  starts a section
    key = value                assignment inside the current section

Keys before the first section header belong to the root section (only
``seed`` lives there). Blank lines are ignored. Every key has a type, a
default and a range; unknown sections or keys are rejected with the line
number. Lists are comma separated; mode lists are written ``(1,1), (2,1)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from types import SimpleNamespace
from typing import Any, Callable

from .drift import parse_coefficient
from .fields import FieldExpr


class ConfigError(ValueError):
    """Invalid configuration text or value."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _parse_float(text):
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"expected a number, got {text!r}") from None
    return value


def _parse_int(text):
    try:
        return int(text)
    except ValueError:
        raise ValueError(f"expected an integer, got {text!r}") from None


def _parse_int_list(text):
    return tuple(_parse_int(t.strip()) for t in text.split(",") if t.strip())


def _parse_float_list(text):
    return tuple(_parse_float(t.strip()) for t in text.split(",") if t.strip())


_MODE = re.compile(r"\(\s*(\d+)\s*,\s*(\d+)\s*\)")


def _parse_modes(text):
    pairs = _MODE.findall(text)
    if _MODE.sub("", text).replace(",", "").strip():
        raise ValueError(f"mode list must look like (1,1), (2,1); got {text!r}")
    return tuple((int(k), int(l)) for k, l in pairs)


def _fmt_float(v):
    return repr(float(v))


@dataclass(frozen=True)
class Key:
    section: str
    name: str
    parse: Callable[[str], Any]
    fmt: Callable[[Any], str]
    default: Any
    check: Callable[[Any], str | None]
    help: str

    @property
    def dotted(self) -> str:
        return f"{self.section}.{self.name}" if self.section else self.name


def _choice(*options):
    return lambda v: None if v in options else f"must be one of {', '.join(options)}"


def _range(lo=None, hi=None, lo_open=False, hi_open=False):
    def check(v):
        if lo is not None and (v < lo or (lo_open and v == lo)):
            return f"must be {'>' if lo_open else '>='} {lo}"
        if hi is not None and (v > hi or (hi_open and v == hi)):
            return f"must be {'<' if hi_open else '<='} {hi}"
        return None

    return check


def _ladder_check(v):
    if len(v) < 1:
        return "needs at least one entry"
    if any(n < 1 for n in v):
        return "cells per side must be positive"
    if any(b <= a for a, b in zip(v, v[1:])):
        return "cells per side must increase strictly (epsilon decreasing)"
    return None


def _positive_list(v):
    return None if all(t > 0 for t in v) else "entries must be positive"


def _modes_check(v):
    if not v:
        return "needs at least one mode"
    return None if all(k >= 1 and l >= 1 for k, l in v) else "mode indices must be positive"


def _v0_check(v):
    if v == "trace":
        return None
    try:
        float(v)
    except ValueError:
        return "must be 'trace' or a number"
    return None


def _coeff_check(v):
    try:
        parse_coefficient(v)
    except ValueError as exc:
        return str(exc)
    return None


_S = str
_F = _fmt_float
_I = str
_FIELD = FieldExpr.parse

SCHEMA: list[Key] = [
    Key("", "seed", _parse_int, _I, 1, _range(0), "master seed of all random streams"),
    Key("geometry", "rho", _parse_float, _F, 0.5, _range(0.0, 1.0, hi_open=True), "hole side relative to the cell side"),
    Key("geometry", "m", _parse_int, _I, 8, _range(1), "grid intervals per cell side"),
    Key("geometry", "n_eps", _parse_int, _I, 8, _range(1), "cells per side for single runs (epsilon = 1/n_eps)"),
    Key("geometry", "ladder", _parse_int_list, lambda v: ", ".join(map(str, v)), (4, 8, 16), _ladder_check,
        "cells per side along the epsilon ladder"),
    Key("geometry", "max_nodes", _parse_int, _I, 4_000_000, _range(1), "cap on grid nodes"),
    Key("time", "T", _parse_float, _F, 0.25, _range(0.0, lo_open=True), "final time"),
    Key("time", "dt", _parse_float, _F, 1e-3, _range(0.0, lo_open=True), "time step"),
    Key("time", "sample_times", _parse_float_list, lambda v: ", ".join(map(_fmt_float, v)), (), _positive_list,
        "times at which functionals are recorded (default: T only)"),
    Key("physics", "b", _parse_float, _F, 1.0, lambda v: None, "boundary reaction coefficient"),
    Key("physics", "u0", _FIELD, str, FieldExpr("sines", (1.0, 1.0, 1.0)), lambda v: None, "initial state"),
    Key("physics", "v0", str, _S, "trace", _v0_check, "initial boundary value: trace or a constant"),
    Key("drift", "kind", str, _S, "forcing", _choice("forcing", "lipschitz", "polynomial", "monotone", "gradient"),
        "drift family"),
    Key("drift", "f", _FIELD, str, FieldExpr.constant(0.0), lambda v: None, "forcing field"),
    Key("drift", "c", _parse_float, _F, -1.0, lambda v: None, "lipschitz: linear coefficient"),
    Key("drift", "d", _parse_float, _F, 0.0, lambda v: None, "lipschitz: sine coefficient"),
    Key("drift", "a", _FIELD, str, FieldExpr.constant(1.0), lambda v: None, "polynomial: coefficient field"),
    Key("drift", "p", _parse_float, _F, 2.0, _range(0.0, lo_open=True), "polynomial: exponent"),
    Key("drift", "s", _parse_float, _F, 1.0, _range(0.0), "monotone: cube-root scale"),
    Key("drift", "h1", str, _S, "sin(1.0)", _coeff_check, "gradient: x coefficient, linear(c) or sin(c)"),
    Key("drift", "h2", str, _S, "sin(0.0)", _coeff_check, "gradient: y coefficient, linear(c) or sin(c)"),
    Key("noise", "J", _parse_int, _I, 16, _range(1), "retained sine modes"),
    Key("noise", "gamma", _parse_float, _F, 2.0, _range(0.0, lo_open=True), "eigenvalue decay exponent"),
    Key("noise", "q0", _parse_float, _F, 0.1, _range(0.0), "eigenvalue scale"),
    Key("noise", "g1", _FIELD, str, FieldExpr.constant(1.0), lambda v: None, "bulk noise multiplier"),
    Key("noise", "g2", _FIELD, str, FieldExpr.constant(1.0), lambda v: None, "boundary noise multiplier"),
    Key("macro", "n", _parse_int, _I, 64, _range(2), "grid intervals per side of the homogenized solver"),
    Key("macro", "reaction", str, _S, "consistent", _choice("consistent", "literal"),
        "boundary reaction rate: b*lambda/theta (consistent) or b*lambda (literal)"),
    Key("macro", "initial", str, _S, "theta_times", _choice("theta_times", "divided"),
        "initial state: theta*u0 or u0/theta"),
    Key("macro", "drift_argument", str, _S, "consistent", _choice("consistent", "literal"),
        "nonlinearity evaluated at U/theta (consistent) or U (literal)"),
    Key("experiment", "paths", _parse_int, _I, 500, _range(2), "Monte Carlo paths per ladder point"),
    Key("experiment", "coupling", str, _S, "shared", _choice("shared", "independent"), "noise coupling of the two models"),
    Key("experiment", "functionals", _parse_modes, lambda v: ", ".join(f"({k},{l})" for k, l in v), ((1, 1),),
        _modes_check, "sine modes probed"),
    Key("experiment", "common_n", _parse_int, _I, 0, _range(0), "comparison grid intervals (0: coarsest ladder grid)"),
    Key("experiment", "out_dir", str, _S, "", lambda v: None, "output directory (default: output root / run)"),
    Key("solver", "linear", str, _S, "direct", _choice("direct", "cg"), "implicit solve: sparse factorization or CG"),
    Key("solver", "batch", _parse_int, _I, 100, _range(1), "paths advanced together"),
    Key("solver", "blowup_cap", _parse_float, _F, 1e8, _range(0.0, lo_open=True), "path failure threshold"),
    Key("solver", "cell_tol", _parse_float, _F, 1e-10, _range(0.0, lo_open=True), "corrector CG relative tolerance"),
]

KEYS = {k.dotted: k for k in SCHEMA}
SECTIONS = list(dict.fromkeys(k.section for k in SCHEMA))


class Config:
    """Validated configuration; attribute access by section (``cfg.time.dt``)."""

    def __init__(self, values: dict[str, Any] | None = None):
        merged = {k.dotted: k.default for k in SCHEMA}
        for dotted, value in (values or {}).items():
            if dotted not in KEYS:
                raise ConfigError(f"unknown key {dotted!r}")
            merged[dotted] = value
        for dotted, value in merged.items():
            problem = KEYS[dotted].check(value)
            if problem:
                raise ConfigError(f"{dotted} {problem}")
        self._values = merged
        self._cross_check()

    def _cross_check(self):
        sample = self["time.sample_times"]
        if any(t > self["time.T"] + 1e-12 for t in sample):
            raise ConfigError("time.sample_times must not exceed time.T")

    def __getitem__(self, dotted: str):
        return self._values[dotted]

    def __getattr__(self, section: str):
        if section.startswith("_") or section not in SECTIONS:
            raise AttributeError(section)
        prefix = section + "."
        return SimpleNamespace(**{k[len(prefix):]: v for k, v in self._values.items() if k.startswith(prefix)})

    @property
    def seed(self) -> int:
        return self._values["seed"]

    def __eq__(self, other):
        return isinstance(other, Config) and self._values == other._values

    def __repr__(self):
        return f"Config({self._values!r})"

    def as_dict(self) -> dict[str, Any]:
        return dict(self._values)

    def replace(self, **dotted_values) -> "Config":
        """Copy with keys changed; pass dotted names via ``**{"time.T": 0.1}``."""
        return Config({**self._values, **dotted_values})

    def with_overrides(self, overrides: dict[str, str]) -> "Config":
        """Copy with keys set from their textual form (command-line overrides)."""
        values = dict(self._values)
        for dotted, text in overrides.items():
            if dotted not in KEYS:
                raise ConfigError(f"unknown key {dotted!r}")
            try:
                values[dotted] = KEYS[dotted].parse(text)
            except ValueError as exc:
                raise ConfigError(f"{dotted}: {exc}") from None
        return Config(values)

    @property
    def sample_times(self) -> tuple[float, ...]:
        return self["time.sample_times"] or (self["time.T"],)

    def serialize(self) -> str:
        lines = []
        current = None
        for key in SCHEMA:
            if key.section != current:
                if key.section:
                    lines.append("")
                    lines.append(f"[{key.section}]")
                current = key.section
            lines.append(f"{key.name} = {key.fmt(self._values[key.dotted])}")
        return "\n".join(lines) + "\n"


_HEADER = re.compile(r"^\[\s*([A-Za-z_]+)\s*\]$")
_ASSIGN = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\s*=\s*(.*)$")


def parse_config(text: str) -> Config:
    values: dict[str, Any] = {}
    lines_of: dict[str, int] = {}
    section = ""
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        header = _HEADER.match(line)
        if header:
            section = header.group(1)
            if section not in SECTIONS:
                raise ConfigError(f"unknown section [{section}]", number)
            continue
        assign = _ASSIGN.match(line)
        if assign is None:
            raise ConfigError(f"cannot parse {raw.strip()!r}", number)
        name, text_value = assign.group(1), assign.group(2).strip()
        dotted = f"{section}.{name}" if section else name
        key = KEYS.get(dotted)
        if key is None:
            raise ConfigError(f"unknown key {dotted!r}", number)
        if dotted in values:
            raise ConfigError(f"duplicate key {dotted!r}", number)
        try:
            value = key.parse(text_value)
        except ValueError as exc:
            raise ConfigError(f"{dotted}: {exc}", number) from None
        problem = key.check(value)
        if problem:
            raise ConfigError(f"{dotted} {problem}", number)
        values[dotted] = value
        lines_of[dotted] = number
    try:
        return Config(values)
    except ConfigError as exc:
        raise ConfigError(str(exc), lines_of.get("time.sample_times")) from None


def help_text() -> str:
    """One line per key: dotted name, default and meaning."""
    width = max(len(k.dotted) for k in SCHEMA)
    return "\n".join(f"  {k.dotted:<{width}}  {k.help} (default: {k.fmt(k.default)})" for k in SCHEMA)
