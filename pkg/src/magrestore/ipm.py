"""Primal-dual log-barrier interior-point solver for the restoration program.

Each iteration solves the 9x9 system

    [ W        -G^T ] [pi_y  ]   [ -grad f + G^T lambda ]
    [ D(lam) G  D(c)] [pi_lam] = [ rho - c_i lambda_i    ]

by truncated SVD and updates ``(y, lambda) += alpha * pi``. The unit-norm
condition ``c5 = 1`` is enforced by putting ``m`` back on the sphere after
every step, so ``W`` is the Hessian restricted to the sphere's tangent space,
curvature term ``-(grad . m) I`` included. Without that term the inequality
treatment of ``c5`` injects ``-2 lambda_5 I`` into every direction of ``m``
and the step stops being a descent direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

from .core import normalize, quat_from_acc_mag
from .geomag import ConfigurationError
from .nlp import (
    N_CONSTRAINTS,
    InfeasibleIterateError,
    ProblemData,
    barrier_gradient,
    barrier_value,
    constraint_jacobian,
    constraints,
    cost,
    cost_gradient,
    derivatives,
    pack,
)

LAMBDA_FLOOR = 1e-12
SVD_RCOND = 1e-12
PROJECTION_FRACTION = 0.25
PROJECTION_MAX_EPS = 0.01
K_MARGIN = 1e-3
RADIAL_STIFFNESS = 1e6
# at the final rho, a step that lowers f by less than this fraction counts as a stall
STALL_DECREASE = 1e-3
STALL_STATIONARITY = 1e-8  # tangential barrier gradient needed to call a stall converged
INERTIA_FLOOR = 1e-10
DEGENERATE_AZ_TOL = 1e-12

Termination = Literal["f_tol", "eq_tol", "max_iters", "infeasible", "running"]


class DegenerateAttitudeError(ValueError):
    """``a_z = 1``: the quaternion norm bounds collapse to an empty range."""


class NumericalError(ArithmeticError):
    pass


@dataclass
class SolverConfig:
    rho: float = 1e-4
    h: float = 1e-5
    max_iters: int = 50
    eq_tol: float = 1e-15
    f_tol: float = 1e-30
    lambda_init: tuple = (0.2, 0.2, 0.2, 0.2, 0.2)
    step_mode: Literal["line_search", "fixed"] = "line_search"
    hessian: Literal["barrier", "lagrangian"] = "barrier"
    # rho <- max(rho_min, rho_decay * rho) once the KKT error at the current
    # rho drops below kkt_factor * rho; rho_decay = 1 keeps rho constant.
    rho_decay: float = 1e-2
    rho_min: float = 1e-16
    kkt_factor: float = 10.0
    max_halvings: int = 30
    armijo: float = 1e-4
    # lambda_i is kept within [rho / (kappa c_i), kappa rho / c_i] after each
    # step; 0 disables the safeguard.
    lambda_safeguard: float = 1e10
    boundary_fraction: float = 0.9  # a step may consume at most this share of any bound's slack
    zero_start: bool = False  # start from m = 0, k = 1 instead of the measured direction
    record_history: bool = False

    def __post_init__(self):
        if not (self.rho > 0 and self.h > 0 and self.max_iters >= 1):
            raise ConfigurationError("rho, h must be > 0 and max_iters >= 1")
        if not (self.eq_tol > 0 and self.f_tol > 0):
            raise ConfigurationError("tolerances must be > 0")
        if len(self.lambda_init) != N_CONSTRAINTS or min(self.lambda_init) <= 0:
            raise ConfigurationError("lambda_init must hold 5 positive values")
        if self.step_mode not in ("line_search", "fixed"):
            raise ConfigurationError(f"unknown step_mode {self.step_mode!r}")
        if self.hessian not in ("barrier", "lagrangian"):
            raise ConfigurationError(f"unknown hessian {self.hessian!r}")
        if not 0 < self.boundary_fraction < 1:
            raise ConfigurationError("boundary_fraction must lie in (0, 1)")
        if not 0 < self.rho_decay <= 1 or not 0 < self.rho_min <= self.rho:
            raise ConfigurationError("need 0 < rho_decay <= 1 and 0 < rho_min <= rho")


@dataclass
class SolverState:
    y: np.ndarray
    lam: np.ndarray
    rho: float
    iter: int = 0
    f_val: float = math.inf
    converged: bool = False
    termination: Termination = "running"
    history: list = field(default_factory=list)

    @property
    def m(self) -> np.ndarray:
        return self.y[:3]

    @property
    def k(self) -> float:
        return float(self.y[3])


def k_bounds(a, beta_min: float, beta_max: float) -> tuple[float, float]:
    """Quaternion-norm bounds ``beta * |a_z - 1|``."""
    if not beta_max > beta_min > 0:
        raise ConfigurationError("need beta_max > beta_min > 0")
    d = abs(a[2] - 1.0)
    if d <= DEGENERATE_AZ_TOL:
        raise DegenerateAttitudeError("a_z = 1: quaternion norm range is empty")
    return beta_min * d, beta_max * d


def _tangent_projector(y: np.ndarray) -> np.ndarray:
    m = y[:3]
    P = np.eye(4)
    P[:3, :3] -= np.outer(m, m) / (m @ m)
    return P


def _tangent(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Drop the component along ``m`` (undone by putting ``m`` back on the sphere)."""
    out = np.array(g, dtype=float)
    m = y[:3]
    out[:3] -= (out[:3] @ m) / (m @ m) * m
    return out


def sphere_hessian(H: np.ndarray, grad: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Restrict a Hessian to the tangent space of ``|m| = 1``.

    The radial direction gets a stiffness far above every other entry, which
    keeps the full KKT solve (whose ``mD`` rows couple radial and tangential
    motion) confined to the tangent space.
    """
    m = y[:3] / np.linalg.norm(y[:3])
    P = _tangent_projector(y)
    W = P @ H @ P
    W[:3, :3] -= float(grad[:3] @ m) * P[:3, :3]
    W[:3, :3] += RADIAL_STIFFNESS * max(1.0, float(np.max(np.abs(W)))) * np.outer(m, m)
    return W


def _weighted_constraint_hessian(w, a: np.ndarray) -> np.ndarray:
    """``sum_i w_i hess c_i`` using the constant constraint Hessians."""
    H = np.zeros((4, 4))
    H[:3, :3] = 2.0 * (w[1] - w[0]) * np.outer(a, a) + 2.0 * w[4] * np.eye(3)
    H[3, 3] = 2.0 * (w[3] - w[2])
    return H


@dataclass
class _Linearization:
    W: np.ndarray  # tangent-space Hessian block
    P: np.ndarray  # tangent projector
    G: np.ndarray
    c: np.ndarray
    grad_f: np.ndarray
    grad_B: np.ndarray  # exact barrier gradient


def _linearize(y, lam, rho: float, data: ProblemData, hessian: str) -> _Linearization:
    y = np.asarray(y, dtype=float)
    lam = np.asarray(lam, dtype=float)
    _, grad_f, H, c, G = derivatives(y, data)
    inv_c = 1.0 / c
    grad_B = grad_f - rho * (G.T @ inv_c)
    if hessian == "barrier":
        H = H + rho * (G.T @ (G * (inv_c * inv_c)[:, None]))
        H -= _weighted_constraint_hessian(rho * inv_c, data.a)
        grad = grad_B
    else:
        H = H - _weighted_constraint_hessian(lam, data.a)
        grad = grad_f - G.T @ lam
    return _Linearization(sphere_hessian(H, grad, y), _tangent_projector(y), G, c, grad_f, grad_B)


def _literal_step(y, lam, rho: float, data: ProblemData) -> np.ndarray:
    """Newton step of the unrestricted Lagrangian system, usable where ``m`` is off the sphere."""
    _, grad_f, H, c, G = derivatives(y, data)
    lin = _Linearization(H - _weighted_constraint_hessian(lam, data.a), np.eye(4), G, c, grad_f, grad_f)
    return svd_solve(*_assemble(lin, lam, rho, 0.0))


def _assemble(lin: _Linearization, lam: np.ndarray, rho: float, shift: float):
    A = np.zeros((9, 9))
    A[:4, :4] = lin.W + shift * lin.P if shift else lin.W
    A[:4, 4:] = -lin.G.T
    A[4:, :4] = lam[:, None] * lin.G
    A[4:, 4:] = np.diag(lin.c)
    b = np.concatenate([-lin.grad_f + lin.G.T @ lam, rho - lin.c * lam])
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
        raise NumericalError(f"non-finite KKT system: A={A!r}, b={b!r}")
    return A, b


def kkt_system(y, lam, rho: float, data: ProblemData, hessian: str = "barrier", shift: float = 0.0):
    """Assemble the 9x9 search-direction system ``A pi = b``.

    ``shift`` adds ``shift * I`` on the tangent space of the Hessian block
    (inertia correction when the plain step is not a descent direction).
    """
    lam = np.asarray(lam, dtype=float)
    try:
        lin = _linearize(y, lam, rho, data, hessian)
    except (FloatingPointError, ZeroDivisionError) as exc:
        raise NumericalError(f"KKT assembly failed at y={y!r}, lambda={lam!r}: {exc}") from exc
    return _assemble(lin, lam, rho, shift)


def svd_solve(A, b, rcond: float = SVD_RCOND) -> np.ndarray:
    """Least-squares solution through a truncated SVD pseudo-inverse."""
    U, s, Vt = np.linalg.svd(A)
    keep = s > rcond * s[0] if s[0] > 0 else np.zeros_like(s, dtype=bool)
    coef = np.zeros_like(s)
    coef[keep] = (U.T @ b)[keep] / s[keep]
    return Vt.T @ coef


def kkt_step(state: SolverState, data: ProblemData, cfg: SolverConfig) -> np.ndarray:
    """Search direction ``pi = (pi_y, pi_lambda)``."""
    A, b = kkt_system(state.y, state.lam, state.rho, data, cfg.hessian)
    return svd_solve(A, b)


def kkt_error(y, lam, rho: float, data: ProblemData) -> float:
    """Largest violation of tangential stationarity and of ``c_i lambda_i = rho`` (i <= 4)."""
    c = constraints(y, data)
    G = constraint_jacobian(y, data)
    stat = _tangent(y, cost_gradient(y, data) - G.T @ lam)
    return max(float(np.max(np.abs(stat))), float(np.max(np.abs(c[:4] * lam[:4] - rho))))


def centred_error(y, rho: float, data: ProblemData) -> float:
    """Tangential barrier-gradient norm: the KKT error at ``lambda_i = rho / c_i``."""
    return float(np.max(np.abs(_tangent(y, barrier_gradient(y, data, rho)))))


def is_interior(y, data: ProblemData) -> bool:
    return bool(np.all(constraints(y, data)[:4] > 0.0))


def retract(y: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Return ``y`` with ``m`` back on the unit sphere at unchanged ``mD = a . m``.

    Only the component of ``m`` orthogonal to ``a`` is rescaled, so the
    bound constraints on ``mD`` see a linear step exactly. Falls back to a
    plain normalization when ``|mD| >= 1`` or the orthogonal part vanishes.
    """
    out = np.array(y, dtype=float)
    m = out[:3]
    mD = float(a @ m)
    horiz = m - mD * a
    hn = math.sqrt(float(horiz @ horiz))
    if abs(mD) < 1.0 and hn > 1e-12:
        out[:3] = mD * a + math.sqrt(1.0 - mD * mD) / hn * horiz
        return out
    n = math.sqrt(float(m @ m))
    if n == 0.0:
        raise InfeasibleIterateError("magnetic direction collapsed to zero")
    out[:3] = m / n
    return out


def project_feasible(m, k: float, data: ProblemData) -> np.ndarray:
    """Move ``(m, k)`` strictly inside the ``mD`` and ``k`` bounds.

    An out-of-range ``|mD|`` is brought ``eps`` inside the violated bound by
    rotating ``m`` in the plane spanned by itself and ``a``; ``k`` is clamped.
    """
    a = data.a
    m = normalize(m)
    lo, hi = data.gamma_mD_minus, data.gamma_mD_plus
    eps = min(PROJECTION_FRACTION * (hi - lo), PROJECTION_MAX_EPS)
    mD = float(a @ m)
    target = min(max(abs(mD), lo + eps), hi - eps)
    if target != abs(mD):
        horiz = m - mD * a
        hn = np.linalg.norm(horiz)
        if hn < 1e-12:
            raise ConfigurationError("m is parallel to a; cannot rotate into the mD bounds")
        m = math.copysign(target, mD) * a + math.sqrt(1.0 - target * target) * horiz / hn
    klo, khi = data.gamma_k_minus, data.gamma_k_plus
    k = min(max(abs(k), klo * (1.0 + K_MARGIN)), khi * (1.0 - K_MARGIN))
    return pack(m, k)


def initialize_or_warm_start(previous: SolverState | None, measured_m, data: ProblemData,
                             cfg: SolverConfig) -> SolverState:
    """Warm start from a convergent ``previous`` state (barrier parameter reset), else a cold start.

    The cold start takes the measured direction (rotated into the ``mD``
    bounds if needed) and ``k0 = ||q_tilde(a, m0)||`` clamped into the ``k``
    bounds, with ``lambda = cfg.lambda_init``.
    """
    if previous is not None and previous.converged:
        y = previous.y.copy()
        if not is_interior(y, data):
            y = project_feasible(y[:3], y[3], data)
        return replace(previous, y=y, lam=previous.lam.copy(), rho=cfg.rho, iter=0, converged=False,
                       termination="running", history=[])
    lam = np.array(cfg.lambda_init, dtype=float)
    if cfg.zero_start:
        return SolverState(y=np.array([0.0, 0.0, 0.0, 1.0]), lam=lam, rho=cfg.rho)
    y = project_feasible(measured_m, 1.0, data)
    qt, _ = quat_from_acc_mag(data.a, y[:3])
    y = project_feasible(y[:3], float(np.linalg.norm(qt)), data)
    return SolverState(y=y, lam=lam, rho=cfg.rho)


def _safeguard(lam, y, rho: float, data: ProblemData, cfg: SolverConfig) -> np.ndarray:
    lam = np.maximum(lam, LAMBDA_FLOOR)
    if cfg.lambda_safeguard > 0.0:
        central = rho / constraints(y, data)
        lam = np.clip(lam, central / cfg.lambda_safeguard, central * cfg.lambda_safeguard)
        lam = np.maximum(lam, LAMBDA_FLOOR)
    return lam


def _tangent_basis(y: np.ndarray) -> np.ndarray:
    """Orthonormal 4x3 basis of the tangent space at ``y`` (``m`` direction removed)."""
    x, y_, z = (float(v) for v in y[:3] / math.sqrt(float(y[:3] @ y[:3])))
    # u = m x e for the axis e least aligned with m
    ax, ay, az = abs(x), abs(y_), abs(z)
    if ax <= ay and ax <= az:
        u = (0.0, z, -y_)
    elif ay <= az:
        u = (-z, 0.0, x)
    else:
        u = (y_, -x, 0.0)
    n = math.sqrt(u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
    u0, u1, u2 = u[0] / n, u[1] / n, u[2] / n
    return np.array([
        [u0, y_ * u2 - z * u1, 0.0],
        [u1, z * u0 - x * u2, 0.0],
        [u2, x * u1 - y_ * u0, 0.0],
        [0.0, 0.0, 1.0],
    ])


def _descent_direction(y, lam, rho, data: ProblemData, cfg: SolverConfig):
    """KKT direction with an inertia correction that guarantees barrier descent.

    After eliminating ``pi_lambda`` the step solves
    ``(W + G^T D(lambda / c) G) pi_y = -grad B``. When that matrix is not
    positive definite on the tangent space, ``W`` is shifted by twice the
    most negative eigenvalue (plus a small floor) before solving.
    Returns ``(pi_y, pi_lambda, slope, corrected)`` with ``slope`` the
    directional derivative of the merit along ``pi_y``.
    """
    lin = _linearize(y, lam, rho, data, cfg.hessian)
    grad_t = _tangent(y, lin.grad_B)
    T = _tangent_basis(y)
    M = lin.W + lin.G.T @ (lin.G * (lam / lin.c)[:, None])
    eig = np.linalg.eigvalsh(T.T @ M @ T)
    scale = max(1.0, float(np.max(np.abs(eig))))
    floor = INERTIA_FLOOR * scale
    shift = 0.0 if eig[0] > floor else floor - 2.0 * min(eig[0], 0.0)
    for _ in range(4):
        pi = svd_solve(*_assemble(lin, lam, rho, shift))
        py = _tangent(y, pi[:4])
        slope = float(grad_t @ py)
        if slope < 0.0:
            return py, pi[4:], slope, shift > 0.0
        shift = max(shift, floor) * 100.0
    return -grad_t, np.zeros(N_CONSTRAINTS), -float(grad_t @ grad_t), True


def _extrapolate(y, py, accepted, data: ProblemData, rho: float, cfg: SolverConfig):
    """Double the step while the merit keeps decreasing and the iterate stays interior."""
    alpha, best = 1.0, barrier_value(accepted, data, rho)
    for _ in range(cfg.max_halvings):
        trial = retract(y + 2.0 * alpha * py, data.a)
        if not is_interior(trial, data):
            break
        value = barrier_value(trial, data, rho)
        if value >= best:
            break
        accepted, best, alpha = trial, value, 2.0 * alpha
    return accepted, alpha


def _next_rho(rho: float, rho_final: float, cfg: SolverConfig) -> float:
    """Superlinear barrier decrease ``min(decay * rho, rho ** 1.5)``, floored at ``rho_final``."""
    return max(rho_final, min(rho * cfg.rho_decay, rho ** 1.5))


def _finish(state: SolverState, y, lam, rho, it, f, term) -> SolverState:
    return replace(state, y=y, lam=lam, rho=rho, iter=it, f_val=f,
                   converged=term in ("f_tol", "eq_tol"), termination=term)


def _unit_ok(y, cfg: SolverConfig) -> bool:
    return abs(float(y[:3] @ y[:3]) - 1.0) <= cfg.eq_tol


def solve(data: ProblemData, init: SolverState, cfg: SolverConfig) -> SolverState:
    """Run the interior-point iteration from ``init``.

    Stops when ``f <= f_tol``; when the merit stalls at the final barrier
    parameter with ``|c5 - 1| <= eq_tol`` (``eq_tol``); after ``max_iters``;
    or, in fixed-step mode, when an iterate leaves the interior.
    """
    y = np.asarray(init.y, dtype=float).copy()
    lam = np.maximum(np.asarray(init.lam, dtype=float), LAMBDA_FLOOR)
    rho = init.rho
    history: list = []
    state = replace(init, history=history)
    rho_final = cfg.rho_min if cfg.rho_decay < 1.0 else rho

    if cfg.zero_start and not is_interior(y, data):
        # m = 0 is off the sphere: one unrestricted Newton step, then project
        pi = _literal_step(y, lam, rho, data)
        y = y + pi[:4]
        lam = np.maximum(lam + pi[4:], LAMBDA_FLOOR)
        y = project_feasible(y[:3], y[3], data)
    else:
        y = retract(y, data.a)
    if not is_interior(y, data):
        raise InfeasibleIterateError(f"initial point not strictly feasible: c = {constraints(y, data)}")

    f = cost(y, data)
    for it in range(cfg.max_iters):
        if cfg.record_history:
            history.append((it, f, barrier_value(y, data, rho), rho))
        if f <= cfg.f_tol:
            return _finish(state, y, lam, rho, it, f, "f_tol")

        if cfg.step_mode == "fixed":
            pi = svd_solve(*kkt_system(y, lam, rho, data, cfg.hessian))
            y = retract(y + cfg.h * _tangent(y, pi[:4]), data.a)
            lam = np.maximum(lam + cfg.h * pi[4:], LAMBDA_FLOOR)
            if not is_interior(y, data):
                return _finish(state, y, lam, rho, it + 1, cost(y, data), "infeasible")
            lam = _safeguard(lam, y, rho, data, cfg)
            f = cost(y, data)
        else:
            B0 = barrier_value(y, data, rho)
            c_floor = (1.0 - cfg.boundary_fraction) * constraints(y, data)[:4]
            py, pl, slope, corrected = _descent_direction(y, lam, rho, data, cfg)
            alpha, accepted = 1.0, None
            for _ in range(cfg.max_halvings + 1):
                trial = retract(y + alpha * py, data.a)
                if np.all(constraints(trial, data)[:4] >= c_floor) and \
                        barrier_value(trial, data, rho) <= B0 + cfg.armijo * alpha * slope:
                    accepted = trial
                    break
                alpha *= 0.5
            if corrected and accepted is not None and alpha == 1.0:
                # the corrected model underestimates how far the merit keeps falling
                accepted, alpha = _extrapolate(y, py, accepted, data, rho, cfg)
            if accepted is None:
                if rho > rho_final:
                    rho = _next_rho(rho, rho_final, cfg)
                    lam = _safeguard(lam, y, rho, data, cfg)
                    continue
                return _finish(state, y, lam, rho, it + 1, f,
                               "eq_tol" if _unit_ok(y, cfg) else "max_iters")
            y = accepted
            lam = _safeguard(lam + alpha * pl, y, rho, data, cfg)
            f_prev, f = f, cost(y, data)
            if rho <= rho_final and f >= (1.0 - STALL_DECREASE) * f_prev and _unit_ok(y, cfg) \
                    and centred_error(y, rho, data) <= STALL_STATIONARITY:
                return _finish(state, y, lam, rho, it + 1, f, "eq_tol")

        if rho > rho_final and centred_error(y, rho, data) <= cfg.kkt_factor * rho:
            rho = _next_rho(rho, rho_final, cfg)
            lam = _safeguard(lam, y, rho, data, cfg)

    if cfg.record_history:
        history.append((cfg.max_iters, f, barrier_value(y, data, rho), rho))
    return _finish(state, y, lam, rho, cfg.max_iters, f, "f_tol" if f <= cfg.f_tol else "max_iters")
