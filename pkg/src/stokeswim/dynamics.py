"""Self-propulsion reduction and trajectory integration.

The force-free / torque-free constraints turn shape rates into position
rates: assembling the resistance matrix of the free rigid motions and the
coupling columns of the unit shape rates gives W = -Res^{-1} V.  Because
the hydrodynamics is equivariant under rigid motions, everything is
computed once per shape in a canonical pose (center at the origin,
identity orientation, body-attached quadrature grid) and rotated to the
requested pose; results are cached per shape.
"""

from __future__ import annotations

import io
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import bem, geometry
from .errors import OverlapError, SingularResistanceError
from .geometry import KIND_3S, KIND_3SP, KIND_4S
from .rotations import left_jacobian_inv, rotation_z

_CACHE_MAX = 200_000
_table_cache = OrderedDict()


@dataclass(frozen=True)
class ShapeTables:
    """Canonical-pose hydrodynamic tables of one shape."""

    resistance: np.ndarray  # (pd, pd) SPD
    coupling: np.ndarray    # (pd, M) generalized force per unit shape rate
    w: np.ndarray           # (pd, M), pdot = w @ xidot
    metric: np.ndarray      # (M, M) SPD energy metric


@dataclass(frozen=True)
class MobilityField:
    """Mobility data of one state, expressed at the state's orientation."""

    state: geometry.State
    n_q: int
    resistance: np.ndarray
    coupling: np.ndarray
    w: np.ndarray
    metric: np.ndarray

    def fields(self):
        """Control vector fields as columns: F_i = (e_i; W_i)."""
        M = self.w.shape[1]
        return np.vstack([np.eye(M), self.w])


def clear_cache():
    _table_cache.clear()


# Guard for the 3S reduction: the transverse force/torque balances are
# satisfied by symmetry up to quadrature error (~1.5e-7 at n_q=89 and
# arm length 20a, larger for coarse grids or close spheres); anything
# past this tripwire signals genuinely broken assembly.
SYMMETRY_GUARD_3S = 1e-4


def _transverse_residual_3s(sys, sols, lam0, xi):
    """Largest transverse force / transverse torque of the 3S solves.

    Relative to the axial drag; torque additionally scaled by arm length.
    Axial torque is excluded (rotation about the axis is not a degree of
    freedom of this swimmer).
    """
    weights = sys.grid.weights
    res = 0.0
    torque_scale = max(float(np.mean(xi)), 1.0)
    for k in range(sols.shape[1]):
        f = sols[:, k].reshape(-1, 3)
        force = np.einsum("p,pk->k", weights, f)
        torque = np.einsum("p,pk->k", weights, np.cross(sys.grid.points, f))
        res = max(res, float(np.max(np.abs(force[1:]))) / abs(lam0))
        res = max(res, float(np.max(np.abs(torque[1:]))) / (abs(lam0) * torque_scale))
    return res


def _compute_tables(model, state, sys, return_residual=False):
    """Resistance, coupling, reduction and metric from one assembled system."""
    pd, M = model.position_dim, model.shape_dim
    grid = sys.grid
    P = grid.points.shape[0]
    n = grid.points_per_sphere

    pts = grid.points.reshape(model.n_balls, n, 3)
    rigid = geometry.rigid_basis_velocities(model, state, pts).reshape(pd, P, 3)
    shape_u = geometry.shape_basis_velocities(model, state)  # (M, N, 3)
    shape = np.repeat(shape_u, n, axis=1)                    # (M, P, 3)

    fields = np.concatenate([rigid, shape], axis=0)          # (pd+M, P, 3)
    rhs = fields.reshape(pd + M, 3 * P).T
    sols = scipy.linalg.lu_solve(sys.lu, rhs)                # (3P, pd+M)

    weighted = fields * grid.weights[None, :, None]
    gram = weighted.reshape(pd + M, 3 * P) @ sols            # (pd+M, pd+M)
    gram = 0.5 * (gram + gram.T)

    res = gram[:pd, :pd]
    coupling = gram[:pd, pd:]
    rss = gram[pd:, pd:]

    sym = None
    if model.kind == KIND_3S:
        sym = _transverse_residual_3s(sys, sols, res[0, 0], state.shape)
        if sym > SYMMETRY_GUARD_3S:
            raise SingularResistanceError(
                f"3S off-axis force/torque residual {sym:.3e} exceeds "
                f"{SYMMETRY_GUARD_3S:g}; quadrature too coarse or assembly broken")

    try:
        cho = scipy.linalg.cho_factor(res)
    except scipy.linalg.LinAlgError as exc:
        raise SingularResistanceError(
            f"resistance matrix not positive definite: {exc}") from exc
    w = -scipy.linalg.cho_solve(cho, coupling)
    metric = rss + coupling.T @ w
    metric = 0.5 * (metric + metric.T)
    tables = ShapeTables(res, coupling, w, metric)
    return (tables, sym) if return_residual else tables


def symmetry_residual_3s(model, xi, n_q=89, eta=1.0):
    """Measure the 3S transverse-balance residual at a shape (diagnostic)."""
    state = geometry.make_state(model, np.asarray(xi, dtype=float),
                                geometry.canonical_position(model))
    config = geometry.centers(model, state)
    grid = bem.build_grid(config, model.ball_radius, n_q)
    sys = bem.assemble(config, grid, eta)
    _, sym = _compute_tables(model, state, sys, return_residual=True)
    return sym


def shape_tables(model, xi, n_q=89, eta=1.0):
    """Canonical-pose tables for a shape, cached."""
    xi = np.asarray(xi, dtype=float)
    key = (model.kind, model.ball_radius, float(eta), int(n_q), xi.tobytes())
    hit = _table_cache.get(key)
    if hit is not None:
        _table_cache.move_to_end(key)
        return hit
    state = geometry.make_state(model, xi, geometry.canonical_position(model))
    config = geometry.centers(model, state)
    grid = bem.build_grid(config, model.ball_radius, n_q)
    sys = bem.assemble(config, grid, eta)
    tables = _compute_tables(model, state, sys)
    _table_cache[key] = tables
    if len(_table_cache) > _CACHE_MAX:
        _table_cache.popitem(last=False)
    return tables


def _pose_block(model, position):
    """Block rotation taking canonical-pose charts to the state's pose."""
    if model.kind == KIND_3S:
        return np.eye(1)
    if model.kind == KIND_3SP:
        T = np.eye(3)
        T[:2, :2] = rotation_z(position.coords[2])[:2, :2]
        return T
    R = geometry.rotation_matrix(model, position)
    Q = np.zeros((6, 6))
    Q[:3, :3] = R
    Q[3:, 3:] = R
    return Q


def mobility(model, state, bem_system=None, n_q=89, eta=1.0):
    """Mobility field at a state.

    With ``bem_system`` given, everything is computed directly on that
    system (assembled at centers(model, state)); otherwise the canonical
    per-shape tables are used and rotated, which is exact because the
    discrete problem is equivariant under rigid motions.
    """
    if bem_system is not None:
        t = _compute_tables(model, state, bem_system)
        return MobilityField(state, bem_system.grid.points_per_sphere,
                             t.resistance, t.coupling, t.w, t.metric)
    t = shape_tables(model, state.shape, n_q=n_q, eta=eta)
    Q = _pose_block(model, state.position)
    return MobilityField(
        state, n_q,
        Q @ t.resistance @ Q.T,
        Q @ t.coupling,
        Q @ t.w,
        t.metric,
    )


def metric(model, xi, n_q=89, eta=1.0):
    """Energy metric G(xi); independent of position."""
    return shape_tables(model, xi, n_q=n_q, eta=eta).metric.copy()


@dataclass(frozen=True)
class Trajectory:
    model: geometry.SwimmerModel
    times: np.ndarray
    shapes: np.ndarray            # (n+1, M)
    positions: tuple              # n+1 Position objects
    energy: np.ndarray            # (n+1,) cumulative dissipated energy

    def final_state(self):
        return geometry.State(self.shapes[-1], self.positions[-1])

    def position_coords(self):
        """Stacked plain coordinates; 4S appends the quaternion."""
        rows = []
        for p in self.positions:
            if p.quat is not None:
                rows.append(np.concatenate([p.coords, p.quat]))
            else:
                rows.append(p.coords)
        return np.asarray(rows)

    def csv_header(self):
        M = self.shapes.shape[1]
        cols = ["t"] + [f"xi{i+1}" for i in range(M)]
        if self.model.kind == KIND_3S:
            cols += ["p"]
        elif self.model.kind == KIND_3SP:
            cols += ["cx", "cy", "theta"]
        else:
            cols += ["cx", "cy", "cz", "qw", "qx", "qy", "qz"]
        return cols + ["energy"]

    def to_csv(self, path_or_file):
        coords = self.position_coords()
        rows = np.column_stack([self.times, self.shapes, coords, self.energy])
        header = ",".join(self.csv_header())
        if isinstance(path_or_file, (str, bytes)):
            with open(path_or_file, "w") as fh:
                self._write_csv(fh, header, rows)
        else:
            self._write_csv(path_or_file, header, rows)

    @staticmethod
    def _write_csv(fh, header, rows):
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")

    def to_csv_string(self):
        buf = io.StringIO()
        self.to_csv(buf)
        return buf.getvalue()


def _chart_rate(model, disp, w_pdot):
    """Rate of the local position chart for a given physical rate.

    For 4S the rotational chart coordinate is the rotation vector phi of
    R = exp(skew(phi)) R_base, whose rate is J_l^{-1}(phi) omega.
    """
    if model.kind != KIND_4S:
        return w_pdot
    out = w_pdot.copy()
    out[3:] = left_jacobian_inv(disp[3:]) @ w_pdot[3:]
    return out


def integrate(model, state0, stroke, steps=200, n_q=89, eta=1.0):
    """Integrate the driftless system along a prescribed shape history.

    Classical RK4 with fixed steps on the position chart; for 4S the
    rotation is advanced by the exponential map per step (quaternion
    renormalized).  Dissipated energy accumulates as an extra state via
    the shape-space metric.
    """
    T = stroke.period
    h = T / steps
    pd = model.position_dim

    times = np.linspace(0.0, T, steps + 1)
    shapes = np.empty((steps + 1, model.shape_dim))
    energies = np.empty(steps + 1)
    positions = [state0.position]
    shapes[0] = stroke.shape(0.0)
    energies[0] = 0.0

    def rate(t, base_pos, disp):
        xi = stroke.shape(t)
        xid = stroke.shape_rate(t)
        pos = geometry.advance_position(model, base_pos, disp)
        try:
            mob = mobility(model, geometry.State(xi, pos), n_q=n_q, eta=eta)
        except OverlapError as exc:
            raise OverlapError(f"{exc} at t = {t:.6g}") from exc
        pdot = mob.w @ xid
        edot = float(xid @ mob.metric @ xid)
        return np.concatenate([_chart_rate(model, disp, pdot), [edot]])

    pos = state0.position
    energy = 0.0
    zero = np.zeros(pd + 1)
    for k in range(steps):
        t = times[k]
        k1 = rate(t, pos, zero[:pd])
        k2 = rate(t + 0.5 * h, pos, 0.5 * h * k1[:pd])
        k3 = rate(t + 0.5 * h, pos, 0.5 * h * k2[:pd])
        k4 = rate(t + h, pos, h * k3[:pd])
        step = (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        pos = geometry.advance_position(model, pos, step[:pd])
        energy += step[pd]
        # admissibility of the end-of-step configuration
        geometry.centers(model, geometry.State(stroke.shape(times[k + 1]), pos))
        positions.append(pos)
        shapes[k + 1] = stroke.shape(times[k + 1])
        energies[k + 1] = energy

    return Trajectory(model, times, shapes, tuple(positions), energies)
