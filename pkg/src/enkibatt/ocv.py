"""Open-circuit voltage curves over a normalized argument in [0, 1]."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

_MONOTONE_GRID = np.linspace(0.0, 1.0, 2001)


@dataclass(frozen=True)
class OcvCurve:
    """Monotone OCV curve h(s).

    Built either from ascending polynomial coefficients (``c0 + c1*s + ...``)
    or from a breakpoint table evaluated by linear interpolation. Outside
    [0, 1] the curve is continued linearly with the endpoint slope, so
    ensemble members that wander out of range still get a finite voltage.
    """

    coefficients: tuple[float, ...] | None = None
    breakpoints: tuple[float, ...] | None = None
    voltages: tuple[float, ...] | None = None
    v_min: float = 2.5
    v_max: float = 4.2
    _slopes: tuple[float, float] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if (self.coefficients is None) == (self.breakpoints is None):
            raise ValueError("OcvCurve needs exactly one of coefficients or breakpoints")
        if self.coefficients is not None:
            coef = tuple(float(c) for c in self.coefficients)
            if not coef or not np.all(np.isfinite(coef)):
                raise ValueError("OCV polynomial coefficients must be finite and non-empty")
            object.__setattr__(self, "coefficients", coef)
            poly = np.polynomial.Polynomial(coef)
            values = poly(_MONOTONE_GRID)
            deriv = poly.deriv()
            slopes = (float(deriv(0.0)), float(deriv(1.0)))
        else:
            s = tuple(float(v) for v in self.breakpoints)
            v = tuple(float(v) for v in (self.voltages or ()))
            if len(s) < 2 or len(s) != len(v):
                raise ValueError("OCV table needs at least two (s, V) pairs of equal length")
            if not (np.all(np.isfinite(s)) and np.all(np.isfinite(v))):
                raise ValueError("OCV table entries must be finite")
            if np.any(np.diff(s) <= 0):
                raise ValueError("OCV table breakpoints must be strictly increasing")
            if s[0] > 0.0 or s[-1] < 1.0:
                raise ValueError("OCV table must cover the interval [0, 1]")
            object.__setattr__(self, "breakpoints", s)
            object.__setattr__(self, "voltages", v)
            values = np.asarray(v)
            slopes = ((v[1] - v[0]) / (s[1] - s[0]), (v[-1] - v[-2]) / (s[-1] - s[-2]))
        if np.any(np.diff(values) <= 0):
            raise ValueError("OCV curve must be strictly increasing on [0, 1]")
        object.__setattr__(self, "_slopes", slopes)
        lo, hi = self._inside(np.array([0.0, 1.0]))
        if lo < self.v_min - 1e-12 or hi > self.v_max + 1e-12:
            raise ValueError(
                f"OCV endpoints ({lo:.4g}, {hi:.4g}) V fall outside the voltage window "
                f"[{self.v_min}, {self.v_max}] V"
            )

    @classmethod
    def linear(cls, v0: float = 3.0, v1: float = 4.2, **kw) -> "OcvCurve":
        return cls(coefficients=(v0, v1 - v0), **kw)

    @classmethod
    def table(cls, s: Sequence[float], v: Sequence[float], **kw) -> "OcvCurve":
        return cls(breakpoints=tuple(s), voltages=tuple(v), **kw)

    @classmethod
    def from_dict(cls, spec: Mapping, v_min: float = 2.5, v_max: float = 4.2) -> "OcvCurve":
        kind = spec.get("kind", "polynomial")
        if kind == "polynomial":
            return cls(coefficients=tuple(spec["coefficients"]), v_min=v_min, v_max=v_max)
        if kind == "table":
            return cls(
                breakpoints=tuple(spec["soc"]), voltages=tuple(spec["voltage"]),
                v_min=v_min, v_max=v_max,
            )
        raise ValueError(f"unknown OCV kind {kind!r}")

    def to_dict(self) -> dict:
        if self.coefficients is not None:
            return {"kind": "polynomial", "coefficients": list(self.coefficients)}
        return {"kind": "table", "soc": list(self.breakpoints), "voltage": list(self.voltages)}

    def _inside(self, s):
        if self.coefficients is not None:
            return np.polynomial.polynomial.polyval(s, self.coefficients)
        return np.interp(s, self.breakpoints, self.voltages)

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        lo_clip = 0.0 if self.coefficients is not None else self.breakpoints[0]
        hi_clip = 1.0 if self.coefficients is not None else self.breakpoints[-1]
        inner = np.clip(s, lo_clip, hi_clip)
        v = self._inside(inner)
        below = s < lo_clip
        above = s > hi_clip
        if np.any(below) or np.any(above):
            v = np.where(below, v + self._slopes[0] * (s - lo_clip), v)
            v = np.where(above, v + self._slopes[1] * (s - hi_clip), v)
        return v if v.ndim else float(v)


def ocv_eval(curve: OcvCurve, s):
    """Evaluate ``curve`` at normalized argument ``s`` (SoC or V_s)."""
    return curve(s)


LINEAR_FIXTURE = OcvCurve.linear(3.0, 4.2)
