"""Periodic shape histories as cubic splines.

The shape path interpolates values at uniform knots with natural end
conditions; periodicity is a value constraint (first knot = last knot),
matching how the optimization problem treats it.  The induced position
history, when present, is carried as a clamped cubic B-spline so its
endpoint values are plain coefficients.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline, CubicSpline


def uniform_knots(period, n_intervals):
    return np.linspace(0.0, period, n_intervals + 1)


def natural_basis(knots, times):
    """Value and derivative matrices of natural cubic interpolation.

    Returns (B, Bd) with shape (len(times), len(knots)) such that the
    spline through knot values v satisfies s(times) = B @ v.
    """
    spl = CubicSpline(knots, np.eye(len(knots)), axis=0, bc_type="natural")
    times = np.asarray(times, dtype=float)
    return spl(times), spl(times, 1)


def bspline_knot_vector(period, n_intervals):
    """Clamped cubic knot vector on [0, period]; n_intervals + 3 coefficients."""
    inner = np.linspace(0.0, period, n_intervals + 1)
    return np.concatenate([[0.0] * 3, inner, [period] * 3])


def bspline_basis(kv, times):
    """Value and derivative design matrices of the clamped cubic B-spline."""
    n_coef = len(kv) - 4
    spl = BSpline(kv, np.eye(n_coef), 3)
    dspl = spl.derivative()
    times = np.asarray(times, dtype=float)
    # clamp to the closed interval so t = period evaluates the last span
    t = np.clip(times, kv[0], kv[-1])
    return spl(t), dspl(t)


@dataclass(frozen=True)
class Stroke:
    """Cubic-spline shape history, optionally with a position history."""

    period: float
    shape_values: np.ndarray            # (K+1, M) knot values
    position_coeffs: np.ndarray | None = None   # (K+3, pd) B-spline coefficients

    def __post_init__(self):
        vals = np.atleast_2d(np.asarray(self.shape_values, dtype=float))
        object.__setattr__(self, "shape_values", vals)
        if self.position_coeffs is not None:
            object.__setattr__(
                self, "position_coeffs",
                np.atleast_2d(np.asarray(self.position_coeffs, dtype=float)))
        knots = uniform_knots(self.period, vals.shape[0] - 1)
        spl = CubicSpline(knots, vals, axis=0, bc_type="natural")
        object.__setattr__(self, "_spline", spl)
        object.__setattr__(self, "_dspline", spl.derivative())
        if self.position_coeffs is not None:
            kv = bspline_knot_vector(self.period, vals.shape[0] - 1)
            pspl = BSpline(kv, self.position_coeffs, 3)
            object.__setattr__(self, "_pspline", pspl)
            object.__setattr__(self, "_dpspline", pspl.derivative())

    @property
    def n_intervals(self):
        return self.shape_values.shape[0] - 1

    @property
    def knots(self):
        return uniform_knots(self.period, self.n_intervals)

    def shape(self, t):
        return self._spline(np.clip(t, 0.0, self.period))

    def shape_rate(self, t):
        return self._dspline(np.clip(t, 0.0, self.period))

    def position(self, t):
        if self.position_coeffs is None:
            raise ValueError("stroke carries no position history")
        return self._pspline(np.clip(t, 0.0, self.period))

    def position_rate(self, t):
        if self.position_coeffs is None:
            raise ValueError("stroke carries no position history")
        return self._dpspline(np.clip(t, 0.0, self.period))

    def bound_violation(self, lower, upper, samples=1000):
        """Largest excursion of the shape path outside [lower, upper]."""
        t = np.linspace(0.0, self.period, samples)
        xi = self.shape(t)
        below = np.maximum(lower - xi, 0.0)
        above = np.maximum(xi - upper, 0.0)
        return float(max(below.max(), above.max()))

    def to_json(self):
        doc = {
            "period": self.period,
            "shape_values": [[float(v) for v in row] for row in self.shape_values],
        }
        if self.position_coeffs is not None:
            doc["position_coeffs"] = [[float(v) for v in row]
                                      for row in self.position_coeffs]
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text):
        doc = json.loads(text) if isinstance(text, str) else text
        pc = doc.get("position_coeffs")
        return Stroke(
            period=float(doc["period"]),
            shape_values=np.asarray(doc["shape_values"], dtype=float),
            position_coeffs=None if pc is None else np.asarray(pc, dtype=float),
        )
