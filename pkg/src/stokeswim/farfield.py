"""Closed-form far-field approximations, used as independent oracles.

Everything here is a truncated large-separation expansion evaluated
directly from ball centers and velocities; no fluid solve is involved.
The remainders are O(delta^-2) for forces and O(1) for torques, so these
functions cross-check the BEM rather than replace it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularPointError
from .geometry import KIND_3SP, KIND_4S

_SQRT2 = np.sqrt(2.0)
_SQRT3 = np.sqrt(3.0)


@dataclass(frozen=True)
class InteractionMatrix:
    matrix: np.ndarray  # (3, 3), units 1/length
    r: float            # center distance
    e: np.ndarray       # unit separation vector


def s_matrix(x_i, x_j):
    """Pair interaction matrix S_ij = (I + e e^T) / r for centers x_i, x_j."""
    d = np.asarray(x_i, dtype=float) - np.asarray(x_j, dtype=float)
    r = np.linalg.norm(d)
    if r == 0.0:
        raise SingularPointError("interaction matrix needs distinct centers")
    e = d / r
    return InteractionMatrix((np.eye(3) + np.outer(e, e)) / r, r, e)


def approx_total_force(config, velocities, eta=1.0, a=0.05):
    """Leading-order total force on the fluid from ball velocities.

    Sum of isolated-sphere drags 6 pi eta a u_i minus the pairwise
    stokeslet correction (9 pi eta a^2 / 2) S_ij u_j over ordered pairs.
    """
    x = np.asarray(config.centers, dtype=float)
    u = np.asarray(velocities, dtype=float)
    n = x.shape[0]
    force = 6.0 * np.pi * eta * a * u.sum(axis=0)
    corr = np.zeros(3)
    for i in range(n):
        for j in range(n):
            if i != j:
                corr += s_matrix(x[i], x[j]).matrix @ u[j]
    return force - 4.5 * np.pi * eta * a * a * corr


def approx_total_torque(config, velocities, eta=1.0, a=0.05, origin=None):
    """Leading-order total torque: 6 pi eta a sum (x_i - origin) x u_i."""
    x = np.asarray(config.centers, dtype=float)
    if origin is not None:
        x = x - np.asarray(origin, dtype=float)
    u = np.asarray(velocities, dtype=float)
    return 6.0 * np.pi * eta * a * np.cross(x, u).sum(axis=0)


def lambda_coefficients_3s(xi, eta=1.0, a=0.05):
    """Axial force-balance coefficients of the collinear swimmer.

    With ball velocities u1 = (pdot - xidot1) e1, u2 = pdot e1,
    u3 = (pdot + xidot2) e1, the axial total force reads
    lambda1 xidot1 + lambda2 xidot2 + lambda0 pdot.  The truncations come
    from evaluating :func:`approx_total_force` on those velocity patterns,
    so lambda0 > 0 is the rigid-translation drag and the self-propelled
    response is V_k = -lambda_k / lambda0 (V_1 ~ +1/3 for long arms).
    """
    xi1, xi2 = float(xi[0]), float(xi[1])
    s_all = 1.0 / xi1 + 1.0 / xi2 + 1.0 / (xi1 + xi2)
    lam0 = 6.0 * np.pi * a * eta * (3.0 - 3.0 * a * s_all)
    lam1 = -6.0 * np.pi * a * eta * (1.0 - 1.5 * a * (1.0 / xi1 + 1.0 / (xi1 + xi2)))
    lam2 = 6.0 * np.pi * a * eta * (1.0 - 1.5 * a * (1.0 / xi2 + 1.0 / (xi1 + xi2)))
    return lam0, lam1, lam2


def bracket_pairs(shape_dim):
    """Ordered index pairs (k, l), k < l, matching the bracket column order."""
    return [(k, l) for k in range(shape_dim) for l in range(k + 1, shape_dim)]


def bracket_asymptotics(model, zeta):
    """Stated leading-order commutator columns at the symmetric shape.

    Returns an array (position_dim, n_pairs); the column for the pair
    (k, l) is the published curvature direction in the (translation,
    angular-velocity) chart, implemented truncated exactly as stated:

    * 3SP: ((4 a / zeta^2) (t_l - t_k); -(1/(9 zeta^2)) (t_l x t_k) . e3)
    * 4S:  ((9 sqrt3 a / (64 sqrt2 zeta^2)) (t_l - t_k);
            (3/(16 zeta^2)) t_l x t_k)

    These serve as scaling oracles (each column is O(zeta^-2), so the
    certificate determinant scales as zeta^-6 / zeta^-12).  Numerically
    the measured bracket [F_k, F_l] equals -column(k, l) to O(zeta^-1)
    relative for 4S; for 3SP (with this module's arm labels) the measured
    spin component is twice the stated one and the stated translation
    component is not realized (it cancels to about 0.6% of its stated
    size), so only the scaling and rank content of the 3SP columns is
    oracle-grade.
    """
    a = model.ball_radius
    t = model.arm_directions
    pairs = bracket_pairs(model.shape_dim)
    if model.kind == KIND_3SP:
        cols = np.zeros((3, len(pairs)))
        for c, (k, l) in enumerate(pairs):
            trans = (4.0 * a / zeta**2) * (t[l] - t[k])
            cols[:2, c] = trans[:2]
            cols[2, c] = -np.cross(t[l], t[k])[2] / (9.0 * zeta**2)
        return cols
    if model.kind == KIND_4S:
        cols = np.zeros((6, len(pairs)))
        for c, (k, l) in enumerate(pairs):
            cols[:3, c] = (9.0 * _SQRT3 * a / (64.0 * _SQRT2 * zeta**2)) * (t[l] - t[k])
            cols[3:, c] = (3.0 / (16.0 * zeta**2)) * np.cross(t[l], t[k])
        return cols
    raise ValueError(f"no bracket asymptotics for kind {model.kind!r}")
