"""Energy-optimal strokes by direct spline transcription.

The shape history is a natural cubic spline through knot values (periodic
through a shared first/last knot); the position history is a clamped
cubic B-spline whose endpoint coefficients carry the boundary conditions.
The dynamics constraint W(xi, p) xidot = pdot is collocated at the knots,
the energy integral uses Gauss-Legendre quadrature per interval, and the
finite-dimensional program is solved by SQP (scipy SLSQP) with an
augmented-Lagrangian fallback.  Shape-derivative information of the
hydrodynamic tables comes from central finite differences, reusing the
per-shape cache.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.optimize

from . import dynamics, geometry, strokes
from .errors import (InfeasibleMaskError, LineSearchFailure,
                     MaxIterationsError, OverlapError,
                     SingularResistanceError)
from .geometry import KIND_3S, KIND_3SP, KIND_4S
from .rotations import (left_jacobian, quat_from_rotvec, rotation_z)
from .strokes import Stroke


def position_from_chart(model, coords):
    """Chart coordinates -> Position (4S rotation given as rotation vector)."""
    coords = np.asarray(coords, dtype=float)
    if model.kind == KIND_4S:
        return geometry.Position(coords[:3], quat_from_rotvec(coords[3:]))
    return geometry.Position(coords)


def chart_from_position(model, position):
    if model.kind == KIND_4S:
        from .rotations import quat_to_matrix, rotvec_from_matrix
        return np.concatenate([position.coords,
                               rotvec_from_matrix(quat_to_matrix(position.quat))])
    return position.coords.copy()


def metric(model, xi, n_q=89, eta=1.0):
    """Energy metric G(xi) of a shape (independent of position)."""
    return dynamics.metric(model, xi, n_q=n_q, eta=eta)


@dataclass(frozen=True)
class OptimizationProblem:
    """Stroke optimization setup.

    ``p_start`` / ``p_target`` live in the position chart (for 4S the
    rotation part is a rotation vector).  ``target_fixed`` masks which
    final components are prescribed; at least one must be.  ``xi_start``
    fixes the initial (= final) shape, or leaves it free when None.
    """

    model: geometry.SwimmerModel
    p_start: np.ndarray
    p_target: np.ndarray
    target_fixed: np.ndarray
    xi_start: np.ndarray | None = None
    period: float = 1.0
    n_knots: int = 12
    quad_points: int = 4
    n_q: int = 89
    eta: float = 1.0
    xi_lower: np.ndarray | None = None
    xi_upper: np.ndarray | None = None
    fd_step: float = 1e-4
    threads: int = 1

    def __post_init__(self):
        pd = self.model.position_dim
        for name in ("p_start", "p_target"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (pd,):
                raise ValueError(f"{name} must have {pd} components")
            object.__setattr__(self, name, v)
        mask = np.asarray(self.target_fixed, dtype=bool)
        if mask.shape != (pd,):
            raise ValueError(f"target_fixed must have {pd} components")
        object.__setattr__(self, "target_fixed", mask)
        if self.xi_start is not None:
            object.__setattr__(self, "xi_start",
                               np.asarray(self.xi_start, dtype=float))
        lo = self.model.shape_lower if self.xi_lower is None else self.xi_lower
        up = self.model.shape_upper if self.xi_upper is None else self.xi_upper
        object.__setattr__(self, "xi_lower", np.asarray(lo, dtype=float))
        object.__setattr__(self, "xi_upper", np.asarray(up, dtype=float))

    def to_json(self):
        doc = {
            "model": json.loads(self.model.to_json()),
            "p_start": list(map(float, self.p_start)),
            "p_target": list(map(float, self.p_target)),
            "target_fixed": list(map(bool, self.target_fixed)),
            "xi_start": None if self.xi_start is None
                        else list(map(float, self.xi_start)),
            "period": self.period,
            "n_knots": self.n_knots,
            "quad_points": self.quad_points,
            "n_q": self.n_q,
            "eta": self.eta,
            "xi_lower": list(map(float, self.xi_lower)),
            "xi_upper": list(map(float, self.xi_upper)),
            "fd_step": self.fd_step,
            "threads": self.threads,
        }
        return json.dumps(doc, sort_keys=True)

    @staticmethod
    def from_json(text):
        doc = json.loads(text) if isinstance(text, str) else text
        return OptimizationProblem(
            model=geometry.SwimmerModel.from_json(doc["model"]),
            p_start=np.asarray(doc["p_start"], dtype=float),
            p_target=np.asarray(doc["p_target"], dtype=float),
            target_fixed=np.asarray(doc["target_fixed"], dtype=bool),
            xi_start=None if doc.get("xi_start") is None
                     else np.asarray(doc["xi_start"], dtype=float),
            period=float(doc.get("period", 1.0)),
            n_knots=int(doc.get("n_knots", 12)),
            quad_points=int(doc.get("quad_points", 4)),
            n_q=int(doc.get("n_q", 89)),
            eta=float(doc.get("eta", 1.0)),
            xi_lower=None if doc.get("xi_lower") is None
                     else np.asarray(doc["xi_lower"], dtype=float),
            xi_upper=None if doc.get("xi_upper") is None
                     else np.asarray(doc["xi_upper"], dtype=float),
            fd_step=float(doc.get("fd_step", 1e-4)),
            threads=int(doc.get("threads", 1)),
        )


def _gauss_nodes(knots, q):
    x, w = np.polynomial.legendre.leggauss(q)
    nodes, weights = [], []
    for k in range(len(knots) - 1):
        a, b = knots[k], knots[k + 1]
        nodes.append(0.5 * (b - a) * x + 0.5 * (a + b))
        weights.append(0.5 * (b - a) * w)
    return np.concatenate(nodes), np.concatenate(weights)


def _node_tables(model, xi, n_q, eta, fd_step, want_grad):
    """Canonical tables and their shape derivatives at one node."""
    M = model.shape_dim
    t0 = dynamics.shape_tables(model, xi, n_q=n_q, eta=eta)
    if not want_grad:
        return t0, None, None
    dW = np.empty((M,) + t0.w.shape)
    dG = np.empty((M, M, M))
    for k in range(M):
        e = np.zeros(M)
        e[k] = fd_step
        tp = dynamics.shape_tables(model, xi + e, n_q=n_q, eta=eta)
        tm = dynamics.shape_tables(model, xi - e, n_q=n_q, eta=eta)
        dW[k] = (tp.w - tm.w) / (2.0 * fd_step)
        dG[k] = (tp.metric - tm.metric) / (2.0 * fd_step)
    return t0, dW, dG


class Transcription:
    """Finite-dimensional objective and constraints over spline coefficients."""

    def __init__(self, problem):
        if not np.any(problem.target_fixed):
            raise InfeasibleMaskError(
                "all final position components are free; the zero stroke "
                "would be optimal")
        self.problem = problem
        model = problem.model
        self.M = model.shape_dim
        self.pd = model.position_dim
        K = problem.n_knots
        self.K = K
        self.knots = strokes.uniform_knots(problem.period, K)
        self.gl_nodes, self.gl_weights = _gauss_nodes(self.knots, problem.quad_points)
        self.colloc = self.knots.copy()

        self.Bg, self.Bdg = strokes.natural_basis(self.knots, self.gl_nodes)
        self.Bc, self.Bdc = strokes.natural_basis(self.knots, self.colloc)
        self.kv = strokes.bspline_knot_vector(problem.period, K)
        self.Pc, self.Pdc = strokes.bspline_basis(self.kv, self.colloc)

        sample_t = np.unique(np.concatenate([self.knots, self.gl_nodes]))
        self.sample_basis, _ = strokes.natural_basis(self.knots, sample_t)
        self.sample_times = sample_t

        self._build_variable_maps()
        self._cache = {}
        self.n_eq = (K + 1) * self.pd

    # -- variable layout -------------------------------------------------
    def _build_variable_maps(self):
        p = self.problem
        K, M, pd = self.K, self.M, self.pd
        n_xi_rows = K + 1
        n_pc = K + 3

        # shape knots: row K ties to row 0 (periodic); row 0 constant if fixed
        xi_entries = []           # (row, var_index or None, const)
        self.n_xi_vars = 0
        row_map = {}
        for r in range(n_xi_rows):
            src = 0 if r == K else r
            if src == 0 and p.xi_start is not None:
                row_map[r] = ("const", p.xi_start)
            elif src in row_map and isinstance(row_map[src], tuple) and row_map[src][0] == "var":
                row_map[r] = row_map[src]
            elif src == 0 and 0 in row_map:
                row_map[r] = row_map[0]
            else:
                row_map[r] = ("var", self.n_xi_vars)
                self.n_xi_vars += 1
        self.xi_row_map = row_map

        # position coefficients: first row = p_start, last row fixed per mask
        self.p_entry = np.full((n_pc, pd), -1, dtype=int)   # var index or -1
        self.p_const = np.zeros((n_pc, pd))
        n = 0
        for r in range(n_pc):
            for c in range(pd):
                if r == 0:
                    self.p_const[r, c] = p.p_start[c]
                elif r == n_pc - 1 and p.target_fixed[c]:
                    self.p_const[r, c] = p.p_target[c]
                else:
                    self.p_entry[r, c] = n
                    n += 1
        self.n_p_vars = n
        self.n_vars = self.n_xi_vars * M + n

        lo = np.empty(self.n_vars)
        up = np.empty(self.n_vars)
        lo[:], up[:] = -np.inf, np.inf
        for r in range(n_xi_rows):
            kind, val = self.xi_row_map[r]
            if kind == "var":
                for m in range(M):
                    lo[val * M + m] = p.xi_lower[m]
                    up[val * M + m] = p.xi_upper[m]
        self.var_lower, self.var_upper = lo, up

    def unpack(self, z):
        K, M, pd = self.K, self.M, self.pd
        X = np.empty((K + 1, M))
        for r in range(K + 1):
            kind, val = self.xi_row_map[r]
            X[r] = val if kind == "const" else z[val * M:(val + 1) * M]
        C = self.p_const.copy()
        off = self.n_xi_vars * M
        idx = self.p_entry >= 0
        C[idx] = z[off + self.p_entry[idx]]
        return X, C

    def pack(self, X, C):
        z = np.zeros(self.n_vars)
        for r in range(self.K + 1):
            kind, val = self.xi_row_map[r]
            if kind == "var":
                z[val * self.M:(val + 1) * self.M] = X[r]
        off = self.n_xi_vars * self.M
        idx = self.p_entry >= 0
        z[off + self.p_entry[idx]] = C[idx]
        return z

    def clip(self, z):
        return np.clip(z, self.var_lower, self.var_upper)

    def stroke_from(self, z):
        X, C = self.unpack(z)
        return Stroke(self.problem.period, X, C)

    def pack_stroke(self, stroke):
        if stroke.position_coeffs is None:
            raise ValueError("stroke needs a position history to be packed")
        return self.pack(stroke.shape_values, stroke.position_coeffs)

    # -- pose handling ----------------------------------------------------
    def _pose_matrix(self, pc):
        model = self.problem.model
        if model.kind == KIND_3S:
            return np.eye(1)
        if model.kind == KIND_3SP:
            T = np.eye(3)
            T[:2, :2] = rotation_z(pc[2])[:2, :2]
            return T
        R = geometry.rotation_matrix(model, position_from_chart(model, pc))
        Q = np.zeros((6, 6))
        Q[:3, :3] = R
        Q[3:, 3:] = R
        return Q

    def _chart_rate_matrix(self, pc):
        """Maps the position chart derivative to the physical rate (cdot; omega)."""
        model = self.problem.model
        if model.kind != KIND_4S:
            return np.eye(self.pd)
        J = np.eye(6)
        J[3:, 3:] = left_jacobian(pc[3:])
        return J

    def _residual_node(self, w0, xid, pc, pdc):
        Q = self._pose_matrix(pc)
        return Q @ (w0 @ xid) - self._chart_rate_matrix(pc) @ pdc

    def _pose_derivative(self, w0, xid, pc, pdc):
        """d(residual)/d(pc) holding xi and pdc fixed; (pd, pd) matrix."""
        model = self.problem.model
        if model.kind == KIND_3S:
            return np.zeros((1, 1))
        if model.kind == KIND_3SP:
            th = pc[2]
            dT = np.zeros((3, 3))
            dT[:2, :2] = np.array([[-np.sin(th), -np.cos(th)],
                                   [np.cos(th), -np.sin(th)]])
            out = np.zeros((3, 3))
            out[:, 2] = dT @ (w0 @ xid)
            return out
        out = np.zeros((6, 6))
        h = 1e-7
        for k in range(3, 6):
            e = np.zeros(6)
            e[k] = h
            rp = self._residual_node(w0, xid, pc + e, pdc)
            rm = self._residual_node(w0, xid, pc - e, pdc)
            out[:, k] = (rp - rm) / (2.0 * h)
        return out

    # -- evaluation --------------------------------------------------------
    def _tables(self, xis, want_grad):
        p = self.problem
        model = p.model
        work = [np.asarray(x, dtype=float) for x in xis]
        if p.threads > 1:
            with ThreadPoolExecutor(max_workers=p.threads) as ex:
                return list(ex.map(
                    lambda x: _node_tables(model, x, p.n_q, p.eta,
                                           p.fd_step, want_grad), work))
        return [_node_tables(model, x, p.n_q, p.eta, p.fd_step, want_grad)
                for x in work]

    def _evaluate(self, z, want_grad):
        key = (z.tobytes(), want_grad)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if not want_grad:
            full = self._cache.get((z.tobytes(), True))
            if full is not None:
                return full
        p = self.problem
        M, pd, K = self.M, self.pd, self.K
        X, C = self.unpack(z)
        xi_g = self.Bg @ X
        xid_g = self.Bdg @ X
        xi_c = self.Bc @ X
        xid_c = self.Bdc @ X
        p_c = self.Pc @ C
        pd_c = self.Pdc @ C

        try:
            gl_tabs = self._tables(xi_g, want_grad)
            co_tabs = self._tables(xi_c, want_grad)
        except (OverlapError, SingularResistanceError):
            # inadmissible probe point during a line search: return a large
            # finite value so the solver backtracks instead of crashing
            out = {
                "X": X, "C": C,
                "E": 1e4 * (1.0 + self.bound_violation(z)),
                "cons": np.zeros(self.n_eq),
                "gE": np.zeros(self.n_vars),
                "jac": np.zeros((self.n_eq, self.n_vars)),
            }
            self._cache[(z.tobytes(), want_grad)] = out
            return out

        # objective
        E = 0.0
        gvecs = np.zeros((len(self.gl_nodes), M))
        Gxid = np.zeros((len(self.gl_nodes), M))
        for g, (tab, _, dG) in enumerate(gl_tabs):
            Gx = tab.metric @ xid_g[g]
            Gxid[g] = Gx
            E += self.gl_weights[g] * float(xid_g[g] @ Gx)
            if want_grad:
                for m in range(M):
                    gvecs[g, m] = xid_g[g] @ dG[m] @ xid_g[g]

        # constraints
        cons = np.zeros(self.n_eq)
        for c, (tab, dW, _) in enumerate(co_tabs):
            cons[c * pd:(c + 1) * pd] = self._residual_node(
                tab.w, xid_c[c], p_c[c], pd_c[c])

        out = {"X": X, "C": C, "E": E, "cons": cons}
        if want_grad:
            dE_dX = (2.0 * np.einsum("g,gm,gr->rm", self.gl_weights, Gxid, self.Bdg)
                     + np.einsum("g,gm,gr->rm", self.gl_weights, gvecs, self.Bg))
            out["gE"] = self._fold_xi_gradient(dE_dX)

            jac = np.zeros((self.n_eq, self.n_vars))
            off = self.n_xi_vars * M
            for c, (tab, dW, _) in enumerate(co_tabs):
                Q = self._pose_matrix(p_c[c])
                A = np.stack([Q @ (dW[m] @ xid_c[c]) for m in range(M)], axis=1)
                B = Q @ tab.w
                dX = (A[:, None, :] * self.Bc[c][None, :, None]
                      + B[:, None, :] * self.Bdc[c][None, :, None])  # (pd, K+1, M)
                block = self._fold_xi_jacobian(dX.reshape(pd, -1))
                rows = slice(c * pd, (c + 1) * pd)
                jac[rows, :off] = block
                dpose = self._pose_derivative(tab.w, xid_c[c], p_c[c], pd_c[c])
                Jrate = self._chart_rate_matrix(p_c[c])
                for s in range(C.shape[0]):
                    for beta in range(pd):
                        v = self.p_entry[s, beta]
                        if v < 0:
                            continue
                        col = (dpose[:, beta] * self.Pc[c, s]
                               - Jrate[:, beta] * self.Pdc[c, s])
                        jac[rows, off + v] += col
            out["jac"] = jac
        self._cache[(z.tobytes(), want_grad)] = out
        if len(self._cache) > 8:
            self._cache.pop(next(iter(self._cache)))
        return out

    def _fold_xi_gradient(self, dX):
        g = np.zeros(self.n_vars)
        for r in range(self.K + 1):
            kind, val = self.xi_row_map[r]
            if kind == "var":
                g[val * self.M:(val + 1) * self.M] += dX[r]
        return g

    def _fold_xi_jacobian(self, dXflat):
        """(rows, (K+1)*M) -> (rows, n_xi_vars*M) with tied/constant knots folded."""
        rows = dXflat.shape[0]
        out = np.zeros((rows, self.n_xi_vars * self.M))
        dX = dXflat.reshape(rows, self.K + 1, self.M)
        for r in range(self.K + 1):
            kind, val = self.xi_row_map[r]
            if kind == "var":
                out[:, val * self.M:(val + 1) * self.M] += dX[:, r, :]
        return out

    # -- public entry points ------------------------------------------------
    def objective(self, z):
        return self._evaluate(np.asarray(z, dtype=float), False)["E"]

    def gradient(self, z):
        return self._evaluate(np.asarray(z, dtype=float), True)["gE"]

    def eq_constraints(self, z):
        return self._evaluate(np.asarray(z, dtype=float), False)["cons"]

    def eq_jacobian(self, z):
        return self._evaluate(np.asarray(z, dtype=float), True)["jac"]

    def bound_constraints(self, z):
        X, _ = self.unpack(np.asarray(z, dtype=float))
        xi_s = self.sample_basis @ X
        p = self.problem
        return np.concatenate([(xi_s - p.xi_lower).ravel(),
                               (p.xi_upper - xi_s).ravel()])

    def bound_jacobian(self, z):
        ns, M = self.sample_basis.shape[0], self.M
        rows = ns * M
        dX = np.zeros((rows, (self.K + 1) * M))
        for s in range(ns):
            for m in range(M):
                dX[s * M + m, m::M] = self.sample_basis[s]
        block = self._fold_xi_jacobian(dX)
        full = np.zeros((2 * rows, self.n_vars))
        full[:rows, :block.shape[1]] = block
        full[rows:, :block.shape[1]] = -block
        return full

    def bound_violation(self, z):
        """Infeasibility measure of a guess (no error; reported as a number)."""
        g = self.bound_constraints(z)
        return float(np.maximum(-g, 0.0).max())

    # -- seeding -------------------------------------------------------------
    def seed_shape_values(self, amplitude=0.05, base=None):
        """Phase-shifted sinusoid knot values around the starting shape."""
        p = self.problem
        M = self.M
        if base is None:
            base = p.xi_start
        if base is None:
            finite = np.isfinite(p.xi_upper)
            base = np.where(finite, 0.5 * (p.xi_lower + p.xi_upper),
                            p.xi_lower + 6.0 * p.model.ball_radius)
        base = np.asarray(base, dtype=float)
        if M >= 3:
            phases = 2.0 * np.pi * np.arange(M) / M
        else:
            phases = np.array([0.0, 0.5 * np.pi])[:M]
        t = self.knots[:, None] / self.problem.period
        vals = base[None, :] + amplitude * (
            np.sin(2.0 * np.pi * t + phases[None, :]) - np.sin(phases[None, :]))
        return np.clip(vals, p.xi_lower + 1e-9, p.xi_upper - 1e-9)

    def fit_position_coeffs(self, stroke_shape_values, steps_per_interval=8):
        """Integrate the shape history and least-squares fit the p spline."""
        p = self.problem
        shape_stroke = Stroke(p.period, stroke_shape_values)
        state0 = geometry.State(shape_stroke.shape(0.0),
                                position_from_chart(p.model, p.p_start))
        traj = dynamics.integrate(p.model, state0, shape_stroke,
                                  steps=steps_per_interval * self.K,
                                  n_q=p.n_q, eta=p.eta)
        coords = np.array([chart_from_position(p.model, pos)
                           for pos in traj.positions])
        Pfit, _ = strokes.bspline_basis(self.kv, traj.times)
        # first coefficient pinned at p_start
        rhs = coords - np.outer(Pfit[:, 0], p.p_start)
        sol, *_ = np.linalg.lstsq(Pfit[:, 1:], rhs, rcond=None)
        C = np.vstack([p.p_start, sol])
        return C

    def seed(self, amplitude=0.05, base=None, calibrate=True):
        """Sinusoid seed; optionally match loop orientation and size.

        A small stroke's net displacement scales with the enclosed
        shape-space area, so the amplitude is rescaled by the square root
        of the displacement mismatch, and the loop is time-reversed when
        the main fixed component comes out with the wrong sign.
        """
        X = self.seed_shape_values(amplitude, base)
        if not calibrate:
            return self.pack(X, self.fit_position_coeffs(X))
        p = self.problem
        fixed = np.where(p.target_fixed)[0]
        target = p.p_target[fixed] - p.p_start[fixed]
        main = fixed[int(np.argmax(np.abs(target)))]
        want = target[int(np.argmax(np.abs(target)))]
        for _ in range(2):
            C = self.fit_position_coeffs(X)
            got = (C[-1] - C[0])[main]
            if abs(want) < 1e-15 or abs(got) < 1e-12:
                break
            if np.sign(got) != np.sign(want):
                X = X[::-1].copy()
                got = -got
            ratio = np.sqrt(min(abs(want) / abs(got), 25.0))
            if abs(ratio - 1.0) < 0.1:
                break
            # scale the loop about the starting shape so xi(0) is preserved
            X = X[0][None, :] + ratio * (X - X[0][None, :])
            span = np.where(np.isfinite(p.xi_upper - p.xi_lower),
                            p.xi_upper - p.xi_lower, 1.0)
            X = np.clip(X, p.xi_lower + 0.02 * span, p.xi_upper - 0.02 * span)
        C = self.fit_position_coeffs(X)
        return self.pack(X, C)


def transcribe(problem):
    """Build the finite-dimensional program for a stroke problem."""
    return Transcription(problem)


@dataclass
class OptimizationResult:
    problem: OptimizationProblem
    stroke: Stroke
    energy: float
    status: str
    iterations: int
    constraint_residual: float
    scaled_constraint_residual: float
    projected_gradient: float
    energy_reintegrated: float
    p_end_reintegrated: np.ndarray
    active_bounds: list
    message: str = ""
    history: list = field(default_factory=list)

    @property
    def converged(self):
        return self.status == "converged"

    def to_json(self):
        doc = {
            "energy": float(self.energy),
            "status": self.status,
            "iterations": int(self.iterations),
            "constraint_residual": float(self.constraint_residual),
            "scaled_constraint_residual": float(self.scaled_constraint_residual),
            "projected_gradient": float(self.projected_gradient),
            "energy_reintegrated": float(self.energy_reintegrated),
            "p_end_reintegrated": [float(v) for v in self.p_end_reintegrated],
            "active_bounds": self.active_bounds,
            "message": self.message,
            "stroke": json.loads(self.stroke.to_json()),
            "problem": json.loads(self.problem.to_json()),
        }
        return json.dumps(doc, sort_keys=True, indent=2)


def _kkt_measures(tr, z, tol_active=1e-7):
    """Constraint residual and projected-gradient norm at a point."""
    cons = tr.eq_constraints(z)
    g = tr.gradient(z)
    Jeq = tr.eq_jacobian(z)
    rows = [Jeq]
    gb = tr.bound_constraints(z)
    Jb = tr.bound_jacobian(z)
    active = gb < tol_active
    if np.any(active):
        rows.append(Jb[active])
    at_lo = z < tr.var_lower + tol_active
    at_up = z > tr.var_upper - tol_active
    nb = int(at_lo.sum() + at_up.sum())
    if nb:
        B = np.zeros((nb, tr.n_vars))
        k = 0
        for i in np.where(at_lo)[0]:
            B[k, i] = 1.0
            k += 1
        for i in np.where(at_up)[0]:
            B[k, i] = -1.0
            k += 1
        rows.append(B)
    A = np.vstack(rows)
    lam, *_ = np.linalg.lstsq(A.T, g, rcond=None)
    resid = g - A.T @ lam
    pdot_scale = 1.0 + float(np.max(np.abs(tr.Pdc @ tr.unpack(z)[1])))
    return (float(np.max(np.abs(cons))),
            float(np.max(np.abs(cons))) / pdot_scale,
            float(np.linalg.norm(resid)))


def _auglag(tr, z0, outer=6, mu0=10.0, maxiter=80):
    """Augmented-Lagrangian fallback on the equality constraints."""
    z = z0.copy()
    lam = np.zeros(tr.n_eq)
    mu = mu0
    bounds = list(zip(tr.var_lower, tr.var_upper))
    for _ in range(outer):
        def fun(x):
            c = tr.eq_constraints(x)
            gb = np.minimum(tr.bound_constraints(x), 0.0)
            return (tr.objective(x) + lam @ c + 0.5 * mu * (c @ c)
                    + 0.5 * mu * (gb @ gb))

        def grad(x):
            c = tr.eq_constraints(x)
            J = tr.eq_jacobian(x)
            gb = tr.bound_constraints(x)
            Jb = tr.bound_jacobian(x)
            neg = gb < 0
            g = tr.gradient(x) + J.T @ (lam + mu * c)
            if np.any(neg):
                g += mu * (Jb[neg].T @ gb[neg])
            return g

        res = scipy.optimize.minimize(fun, z, jac=grad, method="L-BFGS-B",
                                      bounds=bounds,
                                      options={"maxiter": maxiter})
        z = res.x
        c = tr.eq_constraints(z)
        if np.max(np.abs(c)) < 1e-8:
            break
        lam = lam + mu * c
        mu *= 4.0
    return z


def solve(problem, initial=None, amplitude=0.05, seed_base=None,
          maxiter=200, ftol=1e-10, verbose=False):
    """Solve a stroke problem; returns an OptimizationResult.

    ``initial`` may be a packed variable vector, a Stroke (with position
    history) or None for the built-in sinusoid seed.  The guess is
    clipped into the shape bounds.
    """
    tr = transcribe(problem)
    if initial is None:
        z0 = tr.seed(amplitude, seed_base)
    elif isinstance(initial, Stroke):
        z0 = tr.pack_stroke(initial)
    else:
        z0 = np.asarray(initial, dtype=float).copy()
    z0 = tr.clip(z0)

    history = []

    def callback(xk):
        if verbose:
            e = tr.objective(xk)
            c = np.max(np.abs(tr.eq_constraints(xk)))
            history.append((len(history), e, c))
            print(f"  iter {len(history):3d}: E = {e:.6f}  |c| = {c:.2e}")
        else:
            history.append(len(history))

    constraints = [
        {"type": "eq", "fun": tr.eq_constraints, "jac": tr.eq_jacobian},
        {"type": "ineq", "fun": tr.bound_constraints, "jac": tr.bound_jacobian},
    ]
    bounds = list(zip(tr.var_lower, tr.var_upper))
    res = scipy.optimize.minimize(
        tr.objective, z0, jac=tr.gradient, method="SLSQP",
        constraints=constraints, bounds=bounds, callback=callback,
        options={"maxiter": maxiter, "ftol": ftol})

    z = res.x
    cons_inf, cons_scaled, pgrad = _kkt_measures(tr, z)
    status = "converged"
    message = res.message
    if not res.success or cons_scaled > 1e-6:
        z2 = _auglag(tr, z)
        res2 = scipy.optimize.minimize(
            tr.objective, z2, jac=tr.gradient, method="SLSQP",
            constraints=constraints, bounds=bounds,
            options={"maxiter": maxiter // 2, "ftol": ftol})
        c2 = np.max(np.abs(tr.eq_constraints(res2.x)))
        if res2.success or c2 < max(cons_inf, 1e-9):
            z = res2.x
            cons_inf, cons_scaled, pgrad = _kkt_measures(tr, z)
            message = res2.message
            res = res2

    E = tr.objective(z)
    if cons_scaled > 1e-6:
        status = ("max_iterations" if res.status == 9 else
                  "line_search_failure" if res.status == 8 else "not_converged")
    elif pgrad > 1e-5 * (1.0 + abs(E)):
        status = "stationarity_loose"

    result = _finalize(tr, z, E, status, len(history),
                       cons_inf, cons_scaled, pgrad, message, history)

    if status in ("max_iterations", "line_search_failure") and cons_scaled > 1e-3:
        err = (MaxIterationsError if status == "max_iterations"
               else LineSearchFailure)
        raise err(f"stroke optimization failed: {message}", result)
    return result


def _finalize(tr, z, E, status, iters, cons_inf, cons_scaled, pgrad,
              message, history):
    problem = tr.problem
    stroke = tr.stroke_from(z)
    state0 = geometry.State(stroke.shape(0.0),
                            position_from_chart(problem.model, problem.p_start))
    steps = max(200, 20 * problem.n_knots)
    traj = dynamics.integrate(problem.model, state0, stroke, steps=steps,
                              n_q=problem.n_q, eta=problem.eta)
    e_int = float(traj.energy[-1])
    p_end = chart_from_position(problem.model, traj.positions[-1])

    t_dense = np.linspace(0.0, problem.period, 1000)
    xi_dense = stroke.shape(t_dense)
    active = []
    for m in range(tr.M):
        lo_hit = np.min(xi_dense[:, m] - problem.xi_lower[m])
        up_hit = np.min(problem.xi_upper[m] - xi_dense[:, m])
        if lo_hit < 1e-5:
            active.append({"component": m, "bound": "lower",
                           "time": float(t_dense[np.argmin(
                               xi_dense[:, m] - problem.xi_lower[m])])})
        if up_hit < 1e-5:
            active.append({"component": m, "bound": "upper",
                           "time": float(t_dense[np.argmin(
                               problem.xi_upper[m] - xi_dense[:, m])])})
    return OptimizationResult(
        problem=problem, stroke=stroke, energy=float(E), status=status,
        iterations=iters, constraint_residual=cons_inf,
        scaled_constraint_residual=cons_scaled, projected_gradient=pgrad,
        energy_reintegrated=e_int, p_end_reintegrated=p_end,
        active_bounds=active, message=str(message), history=history)


def cyclic_shift_shape(shape_values, shift=1):
    """Relabel arms cyclically: new component i follows old component i+shift."""
    M = shape_values.shape[1]
    return shape_values[:, (np.arange(M) + shift) % M]


def branch_scan(problem, theta0_grid=None, n_seeds=3, base_result=None,
                verbose=False, **solve_kw):
    """Energy of converged local optima across starting angles and seeds.

    Planar swimmer only: each cell solves the problem with start/target
    angle set to theta0; seed families are the cyclic arm relabelings of
    a converged theta0 = grid[0] solution, continued by warm starts.
    Per-cell failures are recorded and the scan continues.
    """
    if problem.model.kind != KIND_3SP:
        raise ValueError("branch scan targets the planar swimmer")
    if theta0_grid is None:
        theta0_grid = np.linspace(0.0, np.pi / 3.0, 7)

    def problem_at(theta0):
        ps = problem.p_start.copy()
        pt = problem.p_target.copy()
        ps[2] = theta0
        if problem.target_fixed[2]:
            pt[2] = theta0
        return replace(problem, p_start=ps, p_target=pt)

    base_problem = problem_at(theta0_grid[0])
    if base_result is None:
        base_result = solve(base_problem, **solve_kw)
    base_stroke = base_result.stroke

    seed_strokes = []
    tr0 = transcribe(base_problem)
    for s in range(n_seeds):
        X = cyclic_shift_shape(base_stroke.shape_values, s)
        C = tr0.fit_position_coeffs(X) if s else base_stroke.position_coeffs
        seed_strokes.append(Stroke(problem.period, X, C))

    records = []
    for s, seed0 in enumerate(seed_strokes):
        warm = seed0
        for theta0 in theta0_grid:
            prob = problem_at(theta0)
            trc = transcribe(prob)
            try:
                res = solve(prob, initial=trc.pack_stroke(warm), **solve_kw)
                ok = res.scaled_constraint_residual <= 1e-6
                records.append({
                    "theta0": float(theta0), "seed": s,
                    "energy": float(res.energy), "status": res.status,
                    "theta_final": float(res.p_end_reintegrated[2]),
                    "feasible": bool(ok),
                })
                if ok:
                    warm = res.stroke
            except Exception as exc:  # noqa: BLE001 - record and continue
                records.append({
                    "theta0": float(theta0), "seed": s, "energy": float("nan"),
                    "status": f"error: {exc}", "theta_final": float("nan"),
                    "feasible": False,
                })
            if verbose:
                print(f"scan seed {s} theta0={theta0:.3f}: {records[-1]['status']} "
                      f"E={records[-1]['energy']:.4f}")
    return records
