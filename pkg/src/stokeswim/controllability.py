"""Numerical certification of the full-rank (Chow) condition.

The control fields F_i = (e_i; W_i) and their first-order Lie brackets
must span the whole state tangent space.  Brackets are formed by central
finite differences of the mobility along the fields; for the spatial
swimmer the rotational components live in the angular-velocity chart,
where commuting two rotations adds the cross product of their rates.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import dynamics, geometry
from .farfield import bracket_pairs
from .geometry import KIND_4S

ANALYTICITY_CAVEAT = (
    "rank checked numerically at sampled states only; extending local to "
    "global controllability relies on smooth (analytic) dependence of the "
    "fields on the state, which no finite computation certifies"
)


def default_step(state):
    """Finite-difference step: 1e-4 times the shape scale."""
    return 1e-4 * float(np.mean(np.abs(state.shape)))


def _fields_at(model, state, n_q, eta):
    mob = dynamics.mobility(model, state, n_q=n_q, eta=eta)
    return mob.w


def _probe(model, state, direction, h):
    """State moved by h along a full tangent direction (shape; position)."""
    M = model.shape_dim
    xi = state.shape + h * direction[:M]
    pos = geometry.advance_position(model, state.position, direction[M:], scale=h)
    return geometry.State(xi, pos)


def _bracket_once(model, state, w0, i, j, h, n_q, eta):
    """Position part of [F_i, F_j] with a single central-difference step."""
    M = model.shape_dim
    eye = np.eye(M)
    di = np.concatenate([eye[i], w0[:, i]])
    dj = np.concatenate([eye[j], w0[:, j]])
    w_ip = _fields_at(model, _probe(model, state, di, +h), n_q, eta)
    w_im = _fields_at(model, _probe(model, state, di, -h), n_q, eta)
    w_jp = _fields_at(model, _probe(model, state, dj, +h), n_q, eta)
    w_jm = _fields_at(model, _probe(model, state, dj, -h), n_q, eta)
    val = (w_ip[:, j] - w_im[:, j]) / (2 * h) - (w_jp[:, i] - w_jm[:, i]) / (2 * h)
    if model.kind == KIND_4S:
        # angular-velocity chart: rotations do not commute
        val = val.copy()
        val[3:] += np.cross(w0[3:, i], w0[3:, j])
    return val


def lie_bracket(model, state, i, j, h=None, n_q=89, eta=1.0, richardson=True):
    """First-order Lie bracket [F_i, F_j] at a state.

    Returns the full tangent vector (shape part is identically zero).
    Central differences with one Richardson refinement by default.
    """
    if i == j:
        raise ValueError("bracket needs two distinct field indices")
    if h is None:
        h = default_step(state)
    if h <= 0:
        raise ValueError("step must be positive")
    w0 = _fields_at(model, state, n_q, eta)
    b = _bracket_once(model, state, w0, i, j, h, n_q, eta)
    if richardson:
        b_half = _bracket_once(model, state, w0, i, j, 0.5 * h, n_q, eta)
        b = (4.0 * b_half - b) / 3.0
    return np.concatenate([np.zeros(model.shape_dim), b])


@dataclass(frozen=True)
class BracketReport:
    kind: str
    shape: np.ndarray
    columns: np.ndarray        # (d, d): F_1..F_M then brackets in pair order
    pair_order: tuple
    determinant: float
    sigma_min: float
    max_column_norm: float
    step: float
    threshold: float
    passed: bool
    caveat: str = ANALYTICITY_CAVEAT

    def to_json(self):
        return json.dumps({
            "kind": self.kind,
            "shape": [float(v) for v in self.shape],
            "columns": [[float(v) for v in row] for row in self.columns],
            "pair_order": [list(p) for p in self.pair_order],
            "determinant": float(self.determinant),
            "sigma_min": float(self.sigma_min),
            "max_column_norm": float(self.max_column_norm),
            "step": float(self.step),
            "threshold": float(self.threshold),
            "passed": bool(self.passed),
            "caveat": self.caveat,
        }, sort_keys=True, indent=2)


def chow_certificate(model, state, h=None, n_q=89, eta=1.0,
                     threshold=1e-8, richardson=True):
    """Assemble fields and brackets and test the full-rank condition.

    Pass/fail is decided on the smallest singular value against
    ``threshold`` times the largest column norm (determinants scale
    poorly across the mixed units of the state chart).
    """
    if h is None:
        h = default_step(state)
    M, pd = model.shape_dim, model.position_dim
    d = M + pd
    pairs = bracket_pairs(M)
    if len(pairs) != pd:
        raise ValueError("first-order brackets cannot square the system")
    mob = dynamics.mobility(model, state, n_q=n_q, eta=eta)
    cols = np.zeros((d, d))
    cols[:M, :M] = np.eye(M)
    cols[M:, :M] = mob.w
    for c, (i, j) in enumerate(pairs):
        cols[:, M + c] = lie_bracket(model, state, i, j, h=h, n_q=n_q,
                                     eta=eta, richardson=richardson)
    det = float(np.linalg.det(cols))
    sigma = np.linalg.svd(cols, compute_uv=False)
    max_col = float(np.max(np.linalg.norm(cols, axis=0)))
    passed = bool(sigma[-1] > threshold * max_col)
    return BracketReport(model.kind, state.shape.copy(), cols, tuple(pairs),
                         det, float(sigma[-1]), max_col, float(h),
                         float(threshold), passed)


class _LegStroke:
    """Straight-line shape history xi(t) = xi0 + t * rate (one flow leg)."""

    def __init__(self, xi0, rate, duration):
        self.period = duration
        self._xi0 = np.asarray(xi0, dtype=float)
        self._rate = np.asarray(rate, dtype=float)

    def shape(self, t):
        return self._xi0 + t * self._rate

    def shape_rate(self, t):
        return self._rate


def bracket_move(model, state, i, j, t, steps_per_leg=50, n_q=89, eta=1.0):
    """Execute the commutator flow of fields i and j for parameter t.

    Runs the four legs (+i, +j, -i, -j), each of duration t, through the
    trajectory integrator; the end state differs from the start by
    t^2 [F_i, F_j] + O(t^3).
    """
    M = model.shape_dim
    eye = np.eye(M)
    current = state
    for rate in (eye[i], eye[j], -eye[i], -eye[j]):
        stroke = _LegStroke(current.shape, rate, t)
        traj = dynamics.integrate(model, current, stroke,
                                  steps=steps_per_leg, n_q=n_q, eta=eta)
        current = traj.final_state()
    return current


def bracket_move_displacement(model, state, i, j, t, **kw):
    """Chart displacement of the commutator flow, with the shape part."""
    end = bracket_move(model, state, i, j, t, **kw)
    dpos = geometry.position_delta(model, state.position, end.position)
    return np.concatenate([end.shape - state.shape, dpos])
