"""Swimmer models, their configuration spaces and boundary kinematics.

Three sphere assemblies are supported:

* ``3S``  -- three collinear spheres; shape = two arm lengths, position = one
  scalar coordinate along the axis.
* ``3SP`` -- three spheres on coplanar arms at 120 degrees; position =
  planar center (cx, cy) and orientation angle theta (stored unwrapped).
* ``4S``  -- four spheres on tetrahedral arms; position = center in R^3 and
  a rotation (unit quaternion internally).

Units are mm / s / mg throughout, so water viscosity is 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import OverlapError
from .rotations import (
    IDENTITY_QUAT,
    normalize_quat,
    quat_from_rotvec,
    quat_multiply,
    quat_to_matrix,
    rotation_z,
    rotvec_from_matrix,
)

KIND_3S = "3S"
KIND_3SP = "3SP"
KIND_4S = "4S"

_SQRT3 = np.sqrt(3.0)

# reference arm directions; the paper-level symmetry classes pinned to
# concrete coordinates
_ARMS = {
    KIND_3S: np.array([[1.0, 0.0, 0.0]]),
    KIND_3SP: np.array([
        [1.0, 0.0, 0.0],
        [-0.5, _SQRT3 / 2.0, 0.0],
        [-0.5, -_SQRT3 / 2.0, 0.0],
    ]),
    KIND_4S: np.array([
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ]) / _SQRT3,
}

_SHAPE_DIM = {KIND_3S: 2, KIND_3SP: 3, KIND_4S: 4}
_POSITION_DIM = {KIND_3S: 1, KIND_3SP: 3, KIND_4S: 6}
_N_BALLS = {KIND_3S: 3, KIND_3SP: 3, KIND_4S: 4}


@dataclass(frozen=True)
class SwimmerModel:
    """Declarative description of one swimmer kind.

    ``shape_lower``/``shape_upper`` are per-component bounds on the arm
    lengths; the default lower bounds are the smallest values that keep the
    balls from overlapping.
    """

    kind: str
    ball_radius: float
    shape_lower: np.ndarray
    shape_upper: np.ndarray

    def __post_init__(self):
        if self.kind not in _SHAPE_DIM:
            raise ValueError(f"unknown swimmer kind: {self.kind!r}")
        if self.ball_radius <= 0:
            raise ValueError("ball radius must be positive")
        lo = np.asarray(self.shape_lower, dtype=float)
        up = np.asarray(self.shape_upper, dtype=float)
        M = _SHAPE_DIM[self.kind]
        if lo.shape != (M,) or up.shape != (M,):
            raise ValueError(f"bounds must have shape ({M},)")
        if np.any(lo >= up):
            raise ValueError("lower bounds must be below upper bounds")
        object.__setattr__(self, "shape_lower", lo)
        object.__setattr__(self, "shape_upper", up)

    @property
    def shape_dim(self):
        return _SHAPE_DIM[self.kind]

    @property
    def position_dim(self):
        return _POSITION_DIM[self.kind]

    @property
    def n_balls(self):
        return _N_BALLS[self.kind]

    @property
    def arm_directions(self):
        return _ARMS[self.kind]

    def to_json(self):
        bounds = [[lo, up] for lo, up in zip(self.shape_lower, self.shape_upper)]
        return json.dumps(
            {"kind": self.kind, "radius": self.ball_radius, "bounds": bounds},
            sort_keys=True,
        )

    @staticmethod
    def from_json(text):
        doc = json.loads(text) if isinstance(text, str) else text
        bounds = np.asarray(doc["bounds"], dtype=float)
        return SwimmerModel(
            kind=doc["kind"],
            ball_radius=float(doc["radius"]),
            shape_lower=bounds[:, 0],
            shape_upper=bounds[:, 1],
        )


def min_shape(kind, a):
    """Componentwise non-overlap lower bound for the shape variables."""
    if kind == KIND_3S:
        return 2.0 * a
    if kind == KIND_3SP:
        return 2.0 * a / _SQRT3
    # tetrahedral arms: equal arms zeta give pairwise distance zeta*sqrt(8/3)
    return a * np.sqrt(1.5)


def three_sphere_line(a=0.05, lower=None, upper=None):
    lo = 2.0 * a if lower is None else lower
    up = np.inf if upper is None else upper
    return SwimmerModel(KIND_3S, a, np.full(2, lo, dtype=float), np.full(2, up, dtype=float))


def three_sphere_plane(a=0.05, lower=None, upper=None):
    lo = 2.0 * a / _SQRT3 if lower is None else lower
    up = np.inf if upper is None else upper
    return SwimmerModel(KIND_3SP, a, np.full(3, lo, dtype=float), np.full(3, up, dtype=float))


def four_sphere_space(a=0.05, lower=None, upper=None):
    # non-overlap needs xi > a*sqrt(3/2); exposed rather than hard-coded
    lo = a * np.sqrt(1.5) if lower is None else lower
    up = np.inf if upper is None else upper
    return SwimmerModel(KIND_4S, a, np.full(4, lo, dtype=float), np.full(4, up, dtype=float))


def model_for_kind(kind, a=0.05, lower=None, upper=None):
    factory = {
        KIND_3S: three_sphere_line,
        KIND_3SP: three_sphere_plane,
        KIND_4S: four_sphere_space,
    }[kind]
    return factory(a, lower, upper)


@dataclass(frozen=True)
class Position:
    """Position variables of a swimmer.

    ``coords`` holds (p,) for 3S, (cx, cy, theta) for 3SP and the center c
    for 4S; the 4S orientation lives in ``quat`` (w, x, y, z).  theta is kept
    unwrapped so net rotation over a stroke is meaningful.
    """

    coords: np.ndarray
    quat: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=float))
        if self.quat is not None:
            object.__setattr__(self, "quat", normalize_quat(self.quat))


@dataclass(frozen=True)
class State:
    shape: np.ndarray
    position: Position

    def __post_init__(self):
        object.__setattr__(self, "shape", np.asarray(self.shape, dtype=float))


@dataclass(frozen=True)
class BallConfiguration:
    centers: np.ndarray  # (N, 3)
    separation: float    # min over pairs of |x_i - x_j|


def position_zero(model):
    if model.kind == KIND_3S:
        return Position(np.zeros(1))
    if model.kind == KIND_3SP:
        return Position(np.zeros(3))
    return Position(np.zeros(3), IDENTITY_QUAT.copy())


def make_state(model, shape, position=None):
    pos = position_zero(model) if position is None else position
    return State(np.asarray(shape, dtype=float), pos)


def validate_state(model, state, tol=1e-10):
    """Check shape bounds and (for 4S) that the rotation is proper."""
    xi = state.shape
    if xi.shape != (model.shape_dim,):
        raise ValueError(f"shape must have {model.shape_dim} components")
    if np.any(xi <= model.shape_lower) or np.any(xi >= model.shape_upper):
        raise ValueError(f"shape {xi} outside open bounds "
                         f"({model.shape_lower}, {model.shape_upper})")
    if model.kind == KIND_4S:
        R = quat_to_matrix(state.position.quat)
        if abs(np.linalg.det(R) - 1.0) > tol or np.max(np.abs(R @ R.T - np.eye(3))) > tol:
            raise ValueError("4S rotation is not a proper rotation within tolerance")


def rotation_matrix(model, position):
    """Body rotation taking reference arm directions to current ones."""
    if model.kind == KIND_3S:
        return np.eye(3)
    if model.kind == KIND_3SP:
        return rotation_z(position.coords[2])
    return quat_to_matrix(position.quat)


def center_point(model, position):
    """Center c of the swimmer in R^3."""
    if model.kind == KIND_3S:
        return np.array([position.coords[0], 0.0, 0.0])
    if model.kind == KIND_3SP:
        return np.array([position.coords[0], position.coords[1], 0.0])
    return position.coords.copy()


def centers(model, state):
    """Ball centers for a state; raises OverlapError if any pair touches."""
    xi = state.shape
    a = model.ball_radius
    if model.kind == KIND_3S:
        p = state.position.coords[0]
        pts = np.array([
            [p - xi[0], 0.0, 0.0],
            [p, 0.0, 0.0],
            [p + xi[1], 0.0, 0.0],
        ])
    else:
        R = rotation_matrix(model, state.position)
        c = center_point(model, state.position)
        pts = c + xi[:, None] * (model.arm_directions @ R.T)
    diffs = pts[:, None, :] - pts[None, :, :]
    dist = np.linalg.norm(diffs, axis=2)
    iu = np.triu_indices(model.n_balls, k=1)
    separation = float(dist[iu].min())
    if separation <= 2.0 * a:
        raise OverlapError(
            f"ball separation {separation:.6g} <= 2a = {2 * a:.6g}")
    return BallConfiguration(pts, separation)


def canonical_position(model):
    """Position with c = 0 and identity orientation."""
    return position_zero(model)


def advance_position(model, position, delta, scale=1.0):
    """Move a position by ``scale * delta`` in the tangent chart.

    The chart is (p) for 3S, (cx, cy, theta) for 3SP, and (dc, dphi) for 4S
    where dphi is a spatial rotation vector applied as R -> exp(skew(dphi)) R.
    """
    delta = scale * np.asarray(delta, dtype=float)
    if model.kind == KIND_4S:
        new_c = position.coords + delta[:3]
        dq = quat_from_rotvec(delta[3:])
        new_q = normalize_quat(quat_multiply(dq, position.quat))
        return Position(new_c, new_q)
    return Position(position.coords + delta, None)


def position_delta(model, pos_from, pos_to):
    """Chart displacement from one position to another (4S rotation as rotvec)."""
    if model.kind == KIND_4S:
        dc = pos_to.coords - pos_from.coords
        R_rel = quat_to_matrix(pos_to.quat) @ quat_to_matrix(pos_from.quat).T
        return np.concatenate([dc, rotvec_from_matrix(R_rel)])
    return pos_to.coords - pos_from.coords


def boundary_velocity(model, state, shape_rate, position_rate, ball, r):
    """Velocity of the boundary point ``r`` (relative to center) of one ball.

    ``position_rate`` lives in the chart of :func:`advance_position`; for 4S
    its rotational part is the spatial angular velocity.
    """
    xi = state.shape
    shape_rate = np.asarray(shape_rate, dtype=float)
    position_rate = np.asarray(position_rate, dtype=float)
    r = np.asarray(r, dtype=float)
    if model.kind == KIND_3S:
        axial = position_rate[0] + (-shape_rate[0] if ball == 0 else 0.0) \
            + (shape_rate[1] if ball == 2 else 0.0)
        return np.array([axial, 0.0, 0.0])
    R = rotation_matrix(model, state.position)
    t_i = R @ model.arm_directions[ball]
    if model.kind == KIND_3SP:
        cdot = np.array([position_rate[0], position_rate[1], 0.0])
        omega = np.array([0.0, 0.0, position_rate[2]])
    else:
        cdot = position_rate[:3]
        omega = position_rate[3:]
    return cdot + np.cross(omega, xi[ball] * t_i + r) + t_i * shape_rate[ball]


def shape_basis_velocities(model, state):
    """Per-ball uniform boundary velocity of each unit shape rate (frozen p).

    Returns an (M, N, 3) array: entry [i, m] is the rigid translation of ball
    m caused by unit rate of shape component i.
    """
    M, N = model.shape_dim, model.n_balls
    out = np.zeros((M, N, 3))
    if model.kind == KIND_3S:
        out[0, 0] = [-1.0, 0.0, 0.0]
        out[1, 2] = [1.0, 0.0, 0.0]
        return out
    R = rotation_matrix(model, state.position)
    dirs = model.arm_directions @ R.T
    for i in range(M):
        out[i, i] = dirs[i]
    return out


def rigid_basis_velocities(model, state, points):
    """Boundary fields of the unit rigid motions at the given surface points.

    ``points`` has shape (N, n, 3) (absolute coordinates).  Returns an array
    (position_dim, N, n, 3): unit translations along the free axes followed,
    where applicable, by unit rotations about the swimmer center.
    """
    N, n = points.shape[0], points.shape[1]
    pd = model.position_dim
    out = np.zeros((pd, N, n, 3))
    if model.kind == KIND_3S:
        out[0, :, :, 0] = 1.0
        return out
    c = center_point(model, state.position)
    rel = points - c
    if model.kind == KIND_3SP:
        out[0, :, :, 0] = 1.0
        out[1, :, :, 1] = 1.0
        out[2] = np.cross([0.0, 0.0, 1.0], rel)
        return out
    for k in range(3):
        out[k, :, :, k] = 1.0
        axis = np.zeros(3)
        axis[k] = 1.0
        out[3 + k] = np.cross(axis, rel)
    return out
