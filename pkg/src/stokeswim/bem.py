"""Discrete Dirichlet-to-Neumann map for the exterior Stokes problem.

Each sphere carries the same Fibonacci-lattice quadrature grid (equal
weights).  The influence matrix couples every quadrature point to every
other through the stokeslet; the singular diagonal blocks are set by a
row-sum rule that makes the isolated-sphere map exact for rigid
translations, so a single translating sphere reproduces the 6*pi*eta*a
drag to machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import FactorizationError, NegativePowerError, SingularPointError

_GOLDEN = (1.0 + np.sqrt(5.0)) / 2.0


def is_fibonacci(n):
    a, b = 1, 1
    while b < n:
        a, b = b, a + b
    return b == n


def stokeslet(r, eta=1.0):
    """Free-space Green's function G(r) = (I/|r| + rr^T/|r|^3) / (8 pi eta)."""
    r = np.asarray(r, dtype=float)
    d = np.linalg.norm(r)
    if d == 0.0:
        raise SingularPointError("stokeslet evaluated at r = 0")
    return (np.eye(3) / d + np.outer(r, r) / d**3) / (8.0 * np.pi * eta)


@lru_cache(maxsize=16)
def _fibonacci_sphere_cached(n):
    k = np.arange(n)
    z = 1.0 - (2.0 * k + 1.0) / n
    phi = 2.0 * np.pi * k / _GOLDEN
    rho = np.sqrt(1.0 - z * z)
    pts = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
    for _ in range(100):
        mean = pts.mean(axis=0)
        if np.max(np.abs(mean)) < 1e-16:
            break
        pts = pts - mean
        pts /= np.linalg.norm(pts, axis=1)[:, None]
    pts.setflags(write=False)
    return pts


def fibonacci_sphere(n):
    """Unit-sphere Fibonacci lattice, midpoint offset in z (no poles).

    The raw lattice has a small nonzero centroid (it is chiral), which
    would leave a spurious torque on a rigidly translating sphere; the
    points are therefore re-centered on the sphere until the centroid
    vanishes to machine precision.
    """
    return _fibonacci_sphere_cached(int(n)).copy()


@dataclass(frozen=True)
class QuadratureGrid:
    points: np.ndarray    # (N * n_q, 3) absolute positions
    weights: np.ndarray   # (N * n_q,) surface weights, all equal
    n_balls: int
    points_per_sphere: int
    radius: float

    def ball_slice(self, i):
        n = self.points_per_sphere
        return slice(i * n, (i + 1) * n)

    def ball_points(self, i):
        return self.points[self.ball_slice(i)]


def build_grid(config, a, n_q, orientation=None):
    """Quadrature grid on every sphere of a configuration.

    The reference lattice is rotated by ``orientation`` (body-attached
    grids keep the discrete problem exactly equivariant under rigid
    rotations) and translated to each center.  Equal weights 4 pi a^2 / n_q.
    """
    if not is_fibonacci(n_q) or n_q < 34:
        raise ValueError(f"n_q must be a Fibonacci number >= 34, got {n_q}")
    ref = _fibonacci_sphere_cached(int(n_q))
    if orientation is not None:
        ref = ref @ np.asarray(orientation, dtype=float).T
    centers = np.asarray(config.centers, dtype=float)
    pts = (centers[:, None, :] + a * ref[None, :, :]).reshape(-1, 3)
    w = np.full(pts.shape[0], 4.0 * np.pi * a * a / n_q)
    return QuadratureGrid(pts, w, centers.shape[0], n_q, a)


@dataclass(frozen=True)
class BemSystem:
    """Assembled and factorized discrete Dirichlet-to-Neumann map."""

    grid: QuadratureGrid
    config: object
    eta: float
    matrix: np.ndarray           # (3P, 3P) velocity per unit force density
    lu: tuple                    # scipy lu_factor output

    @property
    def n_points(self):
        return self.grid.points.shape[0]


def assemble(config, grid, eta=1.0):
    """Build and factorize the influence matrix for a configuration.

    Off-diagonal entries are stokeslets times quadrature weights.  The
    diagonal 3x3 block of point i is (2a/3eta) I minus the sum of the
    same-sphere off-diagonal blocks of its row, which makes the isolated
    sphere exact for uniform boundary velocities (force 6 pi eta a u).
    """
    pts = grid.points
    P = pts.shape[0]
    a = grid.radius
    d = pts[:, None, :] - pts[None, :, :]
    r2 = np.einsum("ijk,ijk->ij", d, d)
    np.fill_diagonal(r2, 1.0)
    inv_r = 1.0 / np.sqrt(r2)
    inv_r3 = inv_r / r2
    np.fill_diagonal(inv_r, 0.0)
    np.fill_diagonal(inv_r3, 0.0)
    col_scale = grid.weights / (8.0 * np.pi * eta)

    A = np.empty((3 * P, 3 * P))
    for ca in range(3):
        for cb in range(3):
            blk = d[:, :, ca] * d[:, :, cb]
            blk *= inv_r3
            if ca == cb:
                blk += inv_r
            blk *= col_scale[None, :]
            A[ca::3, cb::3] = blk

    # per-sphere row-sum correction of the singular diagonal
    target = (2.0 * a / (3.0 * eta)) * np.eye(3)
    for b in range(grid.n_balls):
        sl = grid.ball_slice(b)
        idx = np.arange(sl.start, sl.stop)
        for ca in range(3):
            for cb in range(3):
                sub = A[ca::3, cb::3][sl, sl]
                A[3 * idx + ca, 3 * idx + cb] = target[ca, cb] - sub.sum(axis=1)

    try:
        lu = scipy.linalg.lu_factor(A.copy(), check_finite=False)
    except scipy.linalg.LinAlgError as exc:  # pragma: no cover
        raise FactorizationError(f"LU factorization failed: {exc}") from exc
    pivots = lu[0].diagonal()
    if not np.all(np.isfinite(pivots)) or np.any(pivots == 0.0):
        raise FactorizationError("LU factorization produced singular pivots")
    return BemSystem(grid, config, eta, A, lu)


def solve_dn(sys, u):
    """Force densities from boundary velocities: f = A^{-1} u.

    ``u`` has shape (P, 3) or (P, 3, k) for multiple right-hand sides.
    """
    u = np.asarray(u, dtype=float)
    single = u.ndim == 2
    rhs = u.reshape(3 * sys.n_points, -1)
    f = scipy.linalg.lu_solve(sys.lu, rhs)
    residual = np.linalg.norm(sys.matrix @ f - rhs)
    scale = np.linalg.norm(rhs)
    if scale > 0 and residual > 1e-10 * scale:
        raise FactorizationError(
            f"DN solve residual {residual:.3e} exceeds 1e-10 * |u| = {1e-10 * scale:.3e}")
    f = f.reshape(u.shape)
    return f if not single else f.reshape(sys.n_points, 3)


def total_force(sys, f):
    """Total force of a force-density field (sum of f * weight)."""
    f = np.asarray(f, dtype=float).reshape(sys.n_points, 3)
    return np.einsum("p,pk->k", sys.grid.weights, f)


def total_torque(sys, f, origin=None):
    """Total torque of a force-density field about ``origin`` (default 0)."""
    f = np.asarray(f, dtype=float).reshape(sys.n_points, 3)
    x = sys.grid.points
    if origin is not None:
        x = x - np.asarray(origin, dtype=float)
    return np.einsum("p,pk->k", sys.grid.weights, np.cross(x, f))


def dissipated_power(sys, u):
    """Instantaneous viscous dissipation of a boundary velocity field."""
    u = np.asarray(u, dtype=float).reshape(sys.n_points, 3)
    f = solve_dn(sys, u)
    power = float(np.einsum("p,pk,pk->", sys.grid.weights, u, f))
    if power < -1e-10:
        raise NegativePowerError(f"dissipated power {power:.3e} < -1e-10")
    return power


def dump_system(sys, path):
    """Diagnostic dump of the influence matrix and grid (debug aid)."""
    np.savez_compressed(
        path,
        matrix=sys.matrix,
        points=sys.grid.points,
        weights=sys.grid.weights,
        centers=np.asarray(sys.config.centers, dtype=float),
        eta=sys.eta,
    )
