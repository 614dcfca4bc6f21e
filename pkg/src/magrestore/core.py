"""Vector/quaternion helpers and the closed-form accelerometer/magnetometer quaternion.

Conventions used throughout the package:

* quaternions are scalar-first ``(q0, q1, q2, q3)`` numpy arrays;
* an attitude quaternion rotates body-frame vectors into the navigation frame;
* attitudes (references, Euler angles, simulated truth) use North-East-Down
  navigation and body frames, so gravity points along body ``+z`` at level;
* the accelerometer measures specific force, which at rest points *up*
  (``a = (0, 0, -1)`` at level);
* ``q_tilde(a, m)`` maps ``a`` to ``+z`` and ``m`` to ``(mN, 0, mD)``, i.e. it
  is an attitude relative to North-West-Up. ``mD = a . m`` is therefore the
  upward field component, negative in the northern hemisphere.
  ``nwu_from_ned`` converts a NED attitude into that frame.
"""

from __future__ import annotations

import math
from decimal import Decimal, localcontext
from typing import NamedTuple

import numpy as np

UNIT_TOL = 1e-9
RADICAND_TOL = 1e-12
REFINE_RADICAND = 1e-4  # below this the closed-form norm is evaluated in extended precision


class PreconditionError(ValueError):
    """Input violates a documented precondition (e.g. non-unit vector)."""


class NumericalInconsistencyError(ArithmeticError):
    pass


class MagProjections(NamedTuple):
    mD: float
    mN: float


class Euler(NamedTuple):
    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool = False


def normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0.0 or not np.isfinite(n):
        raise PreconditionError(f"cannot normalize vector with norm {n}")
    return v / n


def _check_unit(v: np.ndarray, name: str) -> None:
    if v.shape != (3,):
        raise PreconditionError(f"{name} must be a 3-vector, got shape {v.shape}")
    n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if abs(n - 1.0) > UNIT_TOL:
        raise PreconditionError(f"{name} must be unit length, |{name}| = {n!r}")


def mag_projections(a, m) -> MagProjections:
    """Down (``mD = a.m``) and north (``mN = sqrt(1 - mD^2)``) field projections."""
    mD = float(a[0] * m[0] + a[1] * m[1] + a[2] * m[2])
    if mD > 1.0:
        mD = 1.0
    elif mD < -1.0:
        mD = -1.0
    # |a x m| equals sqrt(1 - mD^2) for unit inputs but keeps full accuracy as m -> +-a
    cx = a[1] * m[2] - a[2] * m[1]
    cy = a[2] * m[0] - a[0] * m[2]
    cz = a[0] * m[1] - a[1] * m[0]
    return MagProjections(mD, min(1.0, math.sqrt(float(cx * cx + cy * cy + cz * cz))))


def _qtilde(a, m, mD: float, mN: float) -> np.ndarray:
    ax, ay, az = a
    mx, my, mz = m
    return np.array(
        [
            -ay * (mN + mx) + ax * my,
            (az - 1.0) * (mN + mx) + ax * (mD - mz),
            (az - 1.0) * my + ay * (mD - mz),
            az * mD - ax * mN - mz,
        ]
    )


def quat_from_acc_mag(a, m) -> tuple[np.ndarray, MagProjections]:
    """Unnormalized attitude quaternion from unit accelerometer and magnetometer vectors.

    Returns ``(q_tilde, MagProjections)``. The quaternion vanishes as
    ``a_z -> 1``; callers normalizing it must guard that case.
    """
    a = np.asarray(a, dtype=float)
    m = np.asarray(m, dtype=float)
    _check_unit(a, "a")
    _check_unit(m, "m")
    proj = mag_projections(a, m)
    return _qtilde(a, m, proj.mD, proj.mN), proj


def quat_norm_closed_form(a, m) -> float:
    """``||q_tilde||`` evaluated without forming the quaternion."""
    a = np.asarray(a, dtype=float)
    m = np.asarray(m, dtype=float)
    _check_unit(a, "a")
    _check_unit(m, "m")
    mD, mN = mag_projections(a, m)
    radicand = mN * ((1.0 - a[2]) * (mN + m[0]) - a[0] * (mD - m[2]))
    if radicand < -RADICAND_TOL:
        raise NumericalInconsistencyError(f"negative radicand {radicand!r}")
    if radicand < REFINE_RADICAND:
        # O(1) terms cancel here and sqrt amplifies their rounding; redo it exactly
        return 2.0 * math.sqrt(_radicand_extended(a, m))
    return 2.0 * math.sqrt(radicand)


def _unit_decimal(v):
    d = [Decimal(float(x)) for x in v]
    n = sum(x * x for x in d).sqrt()
    return [x / n for x in d]


def _radicand_extended(a, m) -> float:
    with localcontext() as ctx:
        ctx.prec = 50
        # renormalized exactly: the closed form relies on |a| = |m| = 1
        ax, ay, az = _unit_decimal(a)
        mx, my, mz = _unit_decimal(m)
        mD = ax * mx + ay * my + az * mz
        mN = max(Decimal(1) - mD * mD, Decimal(0)).sqrt()
        r = mN * ((1 - az) * (mN + mx) - ax * (mD - mz))
        return max(float(r), 0.0)


def quat_multiply(p, q) -> np.ndarray:
    p0, p1, p2, p3 = p
    q0, q1, q2, q3 = q
    return np.array(
        [
            p0 * q0 - p1 * q1 - p2 * q2 - p3 * q3,
            p0 * q1 + p1 * q0 + p2 * q3 - p3 * q2,
            p0 * q2 - p1 * q3 + p2 * q0 + p3 * q1,
            p0 * q3 + p1 * q2 - p2 * q1 + p3 * q0,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]], dtype=float)


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix taking body vectors to the navigation frame."""
    q0, q1, q2, q3 = q
    return np.array(
        [
            [1 - 2 * (q2 * q2 + q3 * q3), 2 * (q1 * q2 - q0 * q3), 2 * (q1 * q3 + q0 * q2)],
            [2 * (q1 * q2 + q0 * q3), 1 - 2 * (q1 * q1 + q3 * q3), 2 * (q2 * q3 - q0 * q1)],
            [2 * (q1 * q3 - q0 * q2), 2 * (q2 * q3 + q0 * q1), 1 - 2 * (q1 * q1 + q2 * q2)],
        ]
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = normalize(axis)
    s = math.sin(0.5 * angle)
    return np.array([math.cos(0.5 * angle), axis[0] * s, axis[1] * s, axis[2] * s])


def quat_from_rotvec(rv) -> np.ndarray:
    rv = np.asarray(rv, dtype=float)
    angle = float(np.linalg.norm(rv))
    if angle < 1e-12:
        q = np.array([1.0, 0.5 * rv[0], 0.5 * rv[1], 0.5 * rv[2]])
        return q / np.linalg.norm(q)
    return quat_from_axis_angle(rv / angle, angle)


def canonical_sign(q) -> np.ndarray:
    """Return ``q`` or ``-q`` so that the first nonzero component is positive."""
    q = np.asarray(q, dtype=float)
    for c in q:
        if c != 0.0:
            return q if c > 0.0 else -q
    return q


def quat_align_sign(q, ref) -> np.ndarray:
    """Flip ``q`` onto the hemisphere of ``ref``; a zero dot product keeps ``q``."""
    q = np.asarray(q, dtype=float)
    return -q if float(np.dot(q, ref)) < 0.0 else q


def euler_to_quat(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Z-Y-X (yaw, pitch, roll) Euler angles to a scalar-first quaternion."""
    cr, sr = math.cos(0.5 * roll), math.sin(0.5 * roll)
    cp, sp = math.cos(0.5 * pitch), math.sin(0.5 * pitch)
    cy, sy = math.cos(0.5 * yaw), math.sin(0.5 * yaw)
    return np.array(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )


def quat_to_euler(q) -> Euler:
    """Z-Y-X Euler angles of a normalized quaternion.

    yaw is in ``(-pi, pi]`` and pitch in ``[-pi/2, pi/2]``. At gimbal lock
    roll is set to zero, the whole rotation about z is assigned to yaw and
    ``gimbal_lock`` is set.
    """
    q0, q1, q2, q3 = q
    sinp = 2.0 * (q0 * q2 - q1 * q3)
    if abs(sinp) >= 1.0 - 1e-12:
        pitch = math.copysign(0.5 * math.pi, sinp)
        yaw = -2.0 * math.atan2(q1, q0) * math.copysign(1.0, sinp)
        yaw = wrap_angle(yaw)
        return Euler(0.0, pitch, yaw, True)
    roll = math.atan2(2.0 * (q0 * q1 + q2 * q3), 1.0 - 2.0 * (q1 * q1 + q2 * q2))
    pitch = math.asin(sinp)
    yaw = wrap_angle(math.atan2(2.0 * (q0 * q3 + q1 * q2), 1.0 - 2.0 * (q2 * q2 + q3 * q3)))
    return Euler(roll, pitch, yaw, False)


def wrap_angle(x: float) -> float:
    """Wrap to ``(-pi, pi]``."""
    y = math.remainder(x, 2.0 * math.pi)
    return math.pi if y == -math.pi else y


def gravity_from_quat(q) -> np.ndarray:
    """Body-frame gravity direction (down) for NED attitude ``q``.

    The third row of the body-to-nav rotation matrix; ``(0, 0, 1)`` at level.
    """
    q0, q1, q2, q3 = q
    g = np.array(
        [
            2.0 * (q1 * q3 - q0 * q2),
            2.0 * (q2 * q3 + q0 * q1),
            1.0 - 2.0 * (q1 * q1 + q2 * q2),
        ]
    )
    return g / np.linalg.norm(g)


NED_TO_NWU = np.array([0.0, 1.0, 0.0, 0.0])  # half turn about north


def nwu_from_ned(q) -> np.ndarray:
    """Attitude relative to North-West-Up from one relative to North-East-Down."""
    return quat_multiply(NED_TO_NWU, q)


def specific_force_from_quat(q) -> np.ndarray:
    """Unit accelerometer reading at rest for NED attitude ``q`` (points up)."""
    return -gravity_from_quat(q)


def tilt_from_acc(a) -> tuple[float, float]:
    """Roll and pitch (rad) of a NED body frame from a unit specific-force reading."""
    return math.atan2(-a[1], -a[2]), math.asin(max(-1.0, min(1.0, float(a[0]))))


def rotmat_from_acc_mag(a, m) -> np.ndarray:
    """NED body-to-navigation rotation built from the specific-force and field directions.

    Rows are the navigation axes in body coordinates: north along the
    horizontal part of ``m``, down along ``-a``. Raises when ``m`` is
    parallel to ``a``.
    """
    a = np.asarray(a, dtype=float)
    m = np.asarray(m, dtype=float)
    horiz = m - float(a @ m) * a
    n = np.linalg.norm(horiz)
    if n < 1e-12:
        raise PreconditionError("m is parallel to a; heading undefined")
    x = horiz / n
    return np.vstack([x, np.cross(x, a), -a])


def yaw_from_acc_mag(a, m) -> float:
    """NED heading (rad) of the accelerometer/magnetometer attitude.

    The same attitude as the normalized ``q_tilde(a, m)`` taken back to NED,
    but built from the rotation matrix so it stays finite where ``q_tilde``
    vanishes. ``nan`` when ``m`` is parallel to ``a``.
    """
    ax, ay, az = (float(v) for v in a)
    mD = ax * m[0] + ay * m[1] + az * m[2]
    hx, hy, hz = m[0] - mD * ax, m[1] - mD * ay, m[2] - mD * az
    if hx * hx + hy * hy + hz * hz < 1e-24:
        return math.nan
    # first column of rotmat_from_acc_mag, up to the common positive scale |h|
    return wrap_angle(math.atan2(hy * az - hz * ay, hx))
