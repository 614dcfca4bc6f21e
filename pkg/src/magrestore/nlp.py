"""The magnetic-vector restoration program.

The decision vector is ``y = (mx, my, mz, k)``: a candidate unit field
direction in the body frame and the norm of the accelerometer/magnetometer
quaternion. The cost is the squared distance between ``q_tilde(a, m)`` and
``k * q_ref``; ``mD`` is always computed as ``a . m`` rather than carried as
a separate variable.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core import PreconditionError

N_CONSTRAINTS = 5
NEAR_SINGULAR_MN = 1e-9


class DomainError(ValueError):
    """``|a . m| > 1``: the north projection ``mN`` is not real."""


class InfeasibleIterateError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemData:
    a: np.ndarray
    q_ref: np.ndarray
    gamma_mD_minus: float
    gamma_mD_plus: float
    gamma_k_minus: float
    gamma_k_plus: float

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "q_ref", np.asarray(self.q_ref, dtype=float))
        if not 0.0 < self.gamma_mD_minus < self.gamma_mD_plus < 1.0:
            raise PreconditionError(
                f"need 0 < gamma_mD- < gamma_mD+ < 1, got ({self.gamma_mD_minus}, {self.gamma_mD_plus})")
        if not 0.0 < self.gamma_k_minus < self.gamma_k_plus:
            raise PreconditionError(
                f"need 0 < gamma_k- < gamma_k+, got ({self.gamma_k_minus}, {self.gamma_k_plus})")


def pack(m, k: float) -> np.ndarray:
    return np.array([m[0], m[1], m[2], k], dtype=float)


def _projections(y: np.ndarray, a: np.ndarray) -> tuple[float, float]:
    mD = a[0] * y[0] + a[1] * y[1] + a[2] * y[2]
    if abs(mD) > 1.0:
        raise DomainError(f"|mD| = {abs(mD)!r} > 1")
    return mD, math.sqrt(1.0 - mD * mD)


def _linear_parts(a: np.ndarray):
    """``q_tilde = L m + u mN + v mD`` for fixed ``a``."""
    ax, ay, az = a
    L = np.array([
        [-ay, ax, 0.0],
        [az - 1.0, 0.0, -ax],
        [0.0, az - 1.0, -ay],
        [0.0, 0.0, -1.0],
    ])
    u = np.array([-ay, az - 1.0, 0.0, -ax])
    v = np.array([0.0, ax, ay, az])
    return L, u, v


def _residual_list(y, data: ProblemData) -> list[float]:
    ax, ay, az = data.a.tolist()
    mx, my, mz, k = (float(v) for v in y)
    mD = ax * mx + ay * my + az * mz
    if abs(mD) > 1.0:
        raise DomainError(f"|mD| = {abs(mD)!r} > 1")
    mN = math.sqrt(1.0 - mD * mD)
    q0, q1, q2, q3 = data.q_ref.tolist()
    return [
        -ay * (mN + mx) + ax * my - k * q0,
        (az - 1.0) * (mN + mx) + ax * (mD - mz) - k * q1,
        (az - 1.0) * my + ay * (mD - mz) - k * q2,
        az * mD - ax * mN - mz - k * q3,
    ]


def residuals(y, data: ProblemData) -> np.ndarray:
    """The four components of ``q_tilde(a, m) - k q_ref``."""
    return np.array(_residual_list(y, data))


def cost(y, data: ProblemData) -> float:
    r0, r1, r2, r3 = _residual_list(y, data)
    return r0 * r0 + r1 * r1 + r2 * r2 + r3 * r3


def _residual_jacobian(y: np.ndarray, data: ProblemData):
    mD, mN = _projections(y, data.a)
    if mN < NEAR_SINGULAR_MN:
        warnings.warn(f"mN = {mN:.3g} near zero; cost derivatives are ill-conditioned",
                      RuntimeWarning, stacklevel=3)
    L, u, v = _linear_parts(data.a)
    J = np.empty((4, 4))
    J[:, :3] = L + np.outer(v - u * (mD / mN), data.a)
    J[:, 3] = -data.q_ref
    return J, u, mN


def cost_gradient(y, data: ProblemData) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    r = residuals(y, data)
    J, _, _ = _residual_jacobian(y, data)
    return 2.0 * J.T @ r


def cost_hessian(y, data: ProblemData) -> np.ndarray:
    """Exact Hessian: Gauss-Newton term plus the ``mN`` curvature term."""
    y = np.asarray(y, dtype=float)
    r = residuals(y, data)
    J, u, mN = _residual_jacobian(y, data)
    H = 2.0 * J.T @ J
    # d2 mN / d mD2 = -1 / mN^3
    H[:3, :3] -= 2.0 * float(r @ u) / mN**3 * np.outer(data.a, data.a)
    return H


def _constraint_list(y, data: ProblemData) -> list[float]:
    mx, my, mz, k = (float(v) for v in y)
    ax, ay, az = data.a.tolist()
    mD = ax * mx + ay * my + az * mz
    return [
        data.gamma_mD_plus**2 - mD * mD,
        mD * mD - data.gamma_mD_minus**2,
        data.gamma_k_plus**2 - k * k,
        k * k - data.gamma_k_minus**2,
        mx * mx + my * my + mz * mz,
    ]


def constraints(y, data: ProblemData) -> np.ndarray:
    """``c1..c4 > 0`` bound the magnitudes of ``mD`` and ``k``; ``c5 = |m|^2`` should be 1."""
    return np.array(_constraint_list(y, data))


def constraint_jacobian(y, data: ProblemData) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    a = data.a
    mD = float(a @ y[:3])
    k = y[3]
    G = np.zeros((N_CONSTRAINTS, 4))
    G[0, :3] = -2.0 * mD * a
    G[1, :3] = 2.0 * mD * a
    G[2, 3] = -2.0 * k
    G[3, 3] = 2.0 * k
    G[4, :3] = 2.0 * y[:3]
    return G


def constraint_hessians(y, data: ProblemData) -> np.ndarray:
    """Stacked ``(5, 4, 4)`` Hessians of ``c1..c5`` (constant in ``y``)."""
    aa = np.outer(data.a, data.a)
    H = np.zeros((N_CONSTRAINTS, 4, 4))
    H[0, :3, :3] = -2.0 * aa
    H[1, :3, :3] = 2.0 * aa
    H[2, 3, 3] = -2.0
    H[3, 3, 3] = 2.0
    H[4, :3, :3] = 2.0 * np.eye(3)
    return H


def barrier_value(y, data: ProblemData, rho: float) -> float:
    """``f(y) - rho * ln(c1 c2 c3 c4 c5)``; raises outside the interior."""
    c = _constraint_list(y, data)
    if min(c) <= 0.0:
        raise InfeasibleIterateError(f"constraint values not strictly positive: {c}")
    f = cost(y, data)
    if rho == 0.0:
        return f
    return f - rho * sum(math.log(ci) for ci in c)


def barrier(y, data: ProblemData, rho: float, lam) -> tuple[float, np.ndarray]:
    """Barrier value and the multiplier form of its gradient, ``grad f - G^T lambda``.

    With ``lambda_i = rho / c_i`` the returned gradient equals the exact
    barrier gradient ``grad f - rho * sum(grad c_i / c_i)``.
    """
    value = barrier_value(y, data, rho)
    G = constraint_jacobian(y, data)
    return value, cost_gradient(y, data) - G.T @ np.asarray(lam, dtype=float)


def derivatives(y, data: ProblemData):
    """``(f, grad f, hess f, c, G)`` from one residual evaluation."""
    y = np.asarray(y, dtype=float)
    r = residuals(y, data)
    J, u, mN = _residual_jacobian(y, data)
    grad = 2.0 * J.T @ r
    H = 2.0 * J.T @ J
    H[:3, :3] -= 2.0 * float(r @ u) / mN**3 * np.outer(data.a, data.a)
    return float(r @ r), grad, H, constraints(y, data), constraint_jacobian(y, data)


def barrier_gradient(y, data: ProblemData, rho: float) -> np.ndarray:
    c = constraints(y, data)
    G = constraint_jacobian(y, data)
    return cost_gradient(y, data) - rho * (G.T @ (1.0 / c))


def barrier_hessian(y, data: ProblemData, rho: float) -> np.ndarray:
    """``hess f + rho * sum(grad c grad c^T / c^2 - hess c / c)``."""
    c = constraints(y, data)
    G = constraint_jacobian(y, data)
    Hc = constraint_hessians(y, data)
    H = cost_hessian(y, data)
    H += rho * (G.T @ (G / (c * c)[:, None]))
    H -= rho * np.tensordot(1.0 / c, Hc, axes=1)
    return H


def lagrangian_hessian(y, data: ProblemData, lam) -> np.ndarray:
    """``hess f - sum(lambda_i hess c_i)``."""
    Hc = constraint_hessians(y, data)
    return cost_hessian(y, data) - np.tensordot(np.asarray(lam, dtype=float), Hc, axes=1)


def build_P(a, q_ref) -> np.ndarray:
    """Matrix with ``q_tilde - k q_ref = P x`` for ``x = (mN + mx, my, mD - mz, k)``."""
    ax, ay, az = a
    q0, q1, q2, q3 = q_ref
    return np.array([
        [-ay, ax, 0.0, -q0],
        [az - 1.0, 0.0, ax, -q1],
        [0.0, az - 1.0, ay, -q2],
        [-ax, -ay, az + 1.0, -q3],
    ])


def substitution_vector(m, k: float, a) -> np.ndarray:
    mD = float(np.dot(a, m))
    mN = math.sqrt(max(0.0, 1.0 - mD * mD))
    return np.array([mN + m[0], m[1], mD - m[2], k])


def null_space_dim(P, tol: float) -> int:
    """Number of singular values of ``P`` below ``tol * sigma_max``."""
    s = np.linalg.svd(np.asarray(P, dtype=float), compute_uv=False)
    if s[0] == 0.0:
        return len(s)
    return int(np.sum(s < tol * s[0]))
