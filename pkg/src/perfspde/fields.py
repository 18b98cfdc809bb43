"""Closed-form scalar fields on the unit square.

A small fixed catalog used for noise multipliers, initial data, forcing and
the polynomial-drift coefficient. Fields are parsed from short strings so they
can live in config files::

    1.5                  constant 1.5
    constant(1.5)        same
    sines(k, l, amp)     amp * sin(k pi x) * sin(l pi y)
    linear(c0, cx, cy)   c0 + cx * x + cy * y
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

_CALL = re.compile(r"^\s*([a-z_]+)\s*\((.*)\)\s*$")


@dataclass(frozen=True)
class FieldExpr:
    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        arity = {"constant": 1, "sines": 3, "linear": 3}
        if self.kind not in arity:
            raise ValueError(f"unknown field kind {self.kind!r}")
        if len(self.params) != arity[self.kind]:
            raise ValueError(f"{self.kind} takes {arity[self.kind]} parameters, got {len(self.params)}")
        if self.kind == "sines":
            k, l, _ = self.params
            if k != int(k) or l != int(l) or k < 1 or l < 1:
                raise ValueError("sines(k, l, amp) needs positive integer k, l")

    @classmethod
    def constant(cls, value: float) -> "FieldExpr":
        return cls("constant", (float(value),))

    @classmethod
    def parse(cls, text: str) -> "FieldExpr":
        text = text.strip()
        try:
            return cls.constant(float(text))
        except ValueError:
            pass
        match = _CALL.match(text)
        if match is None:
            raise ValueError(f"cannot parse field expression {text!r}")
        name, args = match.groups()
        try:
            values = tuple(float(a) for a in args.split(",")) if args.strip() else ()
        except ValueError:
            raise ValueError(f"non-numeric argument in {text!r}") from None
        return cls(name, values)

    def __str__(self) -> str:
        if self.kind == "constant":
            return repr(self.params[0])
        if self.kind == "sines":
            k, l, amp = self.params
            return f"sines({int(k)}, {int(l)}, {amp!r})"
        return "linear({!r}, {!r}, {!r})".format(*self.params)

    @property
    def is_zero(self) -> bool:
        if self.kind == "linear":
            return all(p == 0.0 for p in self.params)
        return self.params[-1] == 0.0

    def __call__(self, x, y) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "constant":
            return np.full(np.broadcast(x, y).shape, self.params[0])
        if self.kind == "sines":
            k, l, amp = self.params
            return amp * np.sin(k * np.pi * x) * np.sin(l * np.pi * y)
        c0, cx, cy = self.params
        return c0 + cx * x + cy * y

    def bounds(self) -> tuple[float, float]:
        """(min, max) of the field over the closed unit square."""
        if self.kind == "constant":
            return self.params[0], self.params[0]
        if self.kind == "sines":
            k, l, amp = self.params
            if k == 1 and l == 1:
                return min(0.0, amp), max(0.0, amp)
            return -abs(amp), abs(amp)
        c0, cx, cy = self.params
        corners = [c0 + cx * a + cy * b for a in (0.0, 1.0) for b in (0.0, 1.0)]
        return min(corners), max(corners)

    def sup_abs(self) -> float:
        """Supremum of |field| over the closed unit square."""
        if self.kind == "constant":
            return abs(self.params[0])
        if self.kind == "sines":
            return abs(self.params[2])
        c0, cx, cy = self.params
        return max(abs(c0 + cx * a + cy * b) for a in (0.0, 1.0) for b in (0.0, 1.0))
