"""Synthetic IMU/magnetometer streams with injected disturbances, plus a reference filter."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .core import (
    euler_to_quat,
    gravity_from_quat,
    normalize,
    quat_from_rotvec,
    quat_multiply,
    quat_to_rotmat,
    specific_force_from_quat,
    tilt_from_acc,
)
from .estimator import SampleRecord
from .geomag import ConfigurationError

STANDARD_GRAVITY = 9.80665
DEFAULT_FIELD_NORM = 0.38593
DEFAULT_DIP = math.asin(0.75)  # positive downward; upward projection mD = -0.75

DisturbanceKind = Literal["none", "constant", "step", "ramp", "random_walk", "motor_noise"]


@dataclass(frozen=True)
class DisturbanceProfile:
    """Additive body-frame field disturbance ``b_dyn(t)`` in Gauss.

    ``constant``: ``amplitude`` throughout. ``step``: ``amplitude`` from
    ``start`` on. ``ramp``: linear from 0 at ``start`` to ``amplitude`` at
    ``stop``, held after. ``random_walk``: ``amplitude`` offset plus a walk
    with per-axis intensity ``sigma`` (Gauss/sqrt(s)) from ``start``.
    ``motor_noise``: ``amplitude`` modulated at ``freq`` Hz by 30 % plus white
    noise ``sigma`` between ``start`` and ``stop``.
    """

    kind: DisturbanceKind = "none"
    amplitude: tuple = (0.0, 0.0, 0.0)
    start: float = 0.0
    stop: float = math.inf
    sigma: float = 0.0
    freq: float = 5.0

    def __post_init__(self):
        if self.kind not in ("none", "constant", "step", "ramp", "random_walk", "motor_noise"):
            raise ConfigurationError(f"unknown disturbance kind {self.kind!r}")
        if len(self.amplitude) != 3:
            raise ConfigurationError("disturbance amplitude must have 3 components")
        if self.sigma < 0:
            raise ConfigurationError("disturbance sigma must be >= 0")
        if self.kind == "ramp" and not self.stop > self.start:
            raise ConfigurationError("ramp needs stop > start")

    def sample(self, t: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Disturbance at the (increasing) times ``t``, shape ``(len(t), 3)``."""
        amp = np.asarray(self.amplitude, dtype=float)
        n = len(t)
        if self.kind == "none":
            return np.zeros((n, 3))
        if self.kind == "constant":
            return np.tile(amp, (n, 1))
        if self.kind == "step":
            return np.where((t >= self.start)[:, None], amp, 0.0)
        if self.kind == "ramp":
            frac = np.clip((t - self.start) / (self.stop - self.start), 0.0, 1.0)
            return frac[:, None] * amp
        active = ((t >= self.start) & (t < self.stop))[:, None]
        if self.kind == "random_walk":
            dt = np.diff(t, prepend=t[0])
            steps = rng.normal(0.0, 1.0, (n, 3)) * (self.sigma * np.sqrt(dt))[:, None]
            steps = np.where(active, steps, 0.0)
            return np.where(active, amp + np.cumsum(steps, axis=0), 0.0)
        mod = 1.0 + 0.3 * np.sin(2.0 * math.pi * self.freq * t)
        noise = rng.normal(0.0, self.sigma, (n, 3))
        return np.where(active, mod[:, None] * amp + noise, 0.0)


@dataclass(frozen=True)
class NoiseModel:
    gyro: float = 0.002  # rad/s
    acc: float = 0.02  # m/s^2
    mag: float = 0.002  # Gauss

    def __post_init__(self):
        if min(self.gyro, self.acc, self.mag) < 0:
            raise ConfigurationError("noise sigmas must be >= 0")


@dataclass(frozen=True)
class ScenarioConfig:
    mode: Literal["static", "dynamic"] = "static"
    duration: float = 10.0
    imu_rate: float = 400.0
    mag_rate: float = 50.0
    field_norm: float = DEFAULT_FIELD_NORM
    dip: float = DEFAULT_DIP
    declination: float = 0.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    disturbance: DisturbanceProfile = field(default_factory=DisturbanceProfile)
    seed: int = 0
    # attitude (rad): static pose, or the centre of the dynamic oscillations
    roll: float = math.radians(3.0)
    pitch: float = math.radians(-2.0)
    yaw: float = math.radians(40.0)
    # dynamic mode: roll/pitch oscillation amplitude (rad) and yaw swing (rad)
    tilt_amplitude: float = math.radians(1.0)
    yaw_amplitude: float = math.radians(60.0)
    motion_period: float = 20.0

    def __post_init__(self):
        if self.mode not in ("static", "dynamic"):
            raise ConfigurationError(f"mode: unknown scenario mode {self.mode!r}")
        if not self.duration > 0:
            raise ConfigurationError("duration: must be > 0")
        if not self.mag_rate > 0:
            raise ConfigurationError("mag_rate: must be > 0")
        if not self.imu_rate >= self.mag_rate:
            raise ConfigurationError("mag_rate: must not exceed imu_rate")
        if not self.field_norm > 0:
            raise ConfigurationError("field_norm: must be > 0")
        if not abs(self.dip) < 0.5 * math.pi:
            raise ConfigurationError("dip: |dip| must be below pi/2")
        if not self.motion_period > 0:
            raise ConfigurationError("motion_period: must be > 0")

    @property
    def nav_field(self) -> np.ndarray:
        """NED field vector ``field_norm * (cos dip, 0, sin dip)``."""
        return self.field_norm * np.array([math.cos(self.dip), 0.0, math.sin(self.dip)])


@dataclass(frozen=True)
class GroundTruth:
    t: float
    q: np.ndarray  # attitude w.r.t. true north
    field_body: np.ndarray  # clean body-frame field at the last mag sample
    b_dyn: np.ndarray  # injected disturbance at the last mag sample
    mag_update: bool  # a new magnetometer sample arrived on this row


def euler_trajectory(cfg: ScenarioConfig, t: np.ndarray):
    """Euler angles and their time derivatives, each shaped ``(len(t), 3)``."""
    base = np.array([cfg.roll, cfg.pitch, cfg.yaw])
    ang = np.tile(base, (len(t), 1))
    rate = np.zeros_like(ang)
    if cfg.mode == "dynamic":
        w = 2.0 * math.pi / cfg.motion_period
        # incommensurate roll/pitch frequencies keep the tilt direction moving
        for i, (amp, mult) in enumerate([(cfg.tilt_amplitude, 1.3), (cfg.tilt_amplitude, 0.7),
                                         (cfg.yaw_amplitude, 1.0)]):
            ang[:, i] += amp * np.sin(mult * w * t)
            rate[:, i] = amp * mult * w * np.cos(mult * w * t)
    return ang, rate


def body_rates(euler: np.ndarray, euler_rate: np.ndarray) -> np.ndarray:
    """Body angular velocity from Z-Y-X Euler angles and their rates."""
    roll, pitch = euler[:, 0], euler[:, 1]
    droll, dpitch, dyaw = euler_rate[:, 0], euler_rate[:, 1], euler_rate[:, 2]
    sr, cr = np.sin(roll), np.cos(roll)
    sp, cp = np.sin(pitch), np.cos(pitch)
    return np.column_stack([
        droll - dyaw * sp,
        dpitch * cr + dyaw * sr * cp,
        -dpitch * sr + dyaw * cr * cp,
    ])


def generate(cfg: ScenarioConfig) -> tuple[list[SampleRecord], list[GroundTruth]]:
    """Sample the scenario at the IMU rate; the magnetometer is held between its samples.

    ``q_ref`` carries the exact attitude. Static scenarios emit gyro readings
    that are pure noise.
    """
    rng = np.random.default_rng(cfg.seed)
    n = int(round(cfg.duration * cfg.imu_rate))
    t = np.arange(n) / cfg.imu_rate
    euler, euler_rate = euler_trajectory(cfg, t)
    omega = body_rates(euler, euler_rate) if cfg.mode == "dynamic" else np.zeros((n, 3))

    # magnetometer sample instants snapped to IMU rows
    ratio = cfg.imu_rate / cfg.mag_rate
    mag_rows = np.unique(np.floor(np.arange(int(math.ceil(n / ratio))) * ratio + 1e-9).astype(int))
    mag_rows = mag_rows[mag_rows < n]
    b_mag = cfg.disturbance.sample(t[mag_rows], rng)

    gyro_noise = rng.normal(0.0, cfg.noise.gyro, (n, 3))
    acc_noise = rng.normal(0.0, cfg.noise.acc, (n, 3))
    mag_noise = rng.normal(0.0, cfg.noise.mag, (len(mag_rows), 3))

    nav_field = cfg.nav_field
    samples: list[SampleRecord] = []
    truth: list[GroundTruth] = []
    held = -1
    field_body = b = mag = None
    is_mag_row = np.zeros(n, dtype=bool)
    is_mag_row[mag_rows] = True
    for i in range(n):
        roll, pitch, yaw = euler[i]
        q_true = euler_to_quat(roll, pitch, yaw)
        if is_mag_row[i]:
            held += 1
            q_mag = euler_to_quat(roll, pitch, yaw - cfg.declination)
            field_body = quat_to_rotmat(q_mag).T @ nav_field
            b = b_mag[held]
            mag = field_body + b + mag_noise[held]
        acc = STANDARD_GRAVITY * specific_force_from_quat(q_true) + acc_noise[i]
        samples.append(SampleRecord(float(t[i]), omega[i] + gyro_noise[i], acc, mag.copy(), q_true))
        truth.append(GroundTruth(float(t[i]), q_true, field_body.copy(), np.array(b, dtype=float),
                                 bool(is_mag_row[i])))
    return samples, truth


def complementary_filter(stream: Sequence[SampleRecord], gain: float,
                         q0: np.ndarray | None = None) -> list[np.ndarray]:
    """Gyro integration pulled toward accelerometer gravity by a fraction ``gain`` per sample.

    Yaw is left free (no magnetic correction). The initial attitude is ``q0``,
    or the first sample's ``q_ref``, or the tilt of the first accelerometer
    reading at zero yaw.
    """
    if not 0.0 <= gain <= 1.0:
        raise ConfigurationError(f"gain must lie in [0, 1], got {gain}")
    if not stream:
        return []
    if q0 is not None:
        q = normalize(q0)
    elif stream[0].q_ref is not None:
        q = normalize(stream[0].q_ref)
    else:
        q = euler_to_quat(*tilt_from_acc(normalize(stream[0].acc)), 0.0)
    out = [q]
    for prev, cur in zip(stream[:-1], stream[1:]):
        dt = cur.t - prev.t
        if dt <= 0:
            raise ValueError("stream must be time-ordered")
        # trapezoidal rate over the interval; exact for constant rates
        q = quat_multiply(q, quat_from_rotvec(0.5 * (prev.gyro + cur.gyro) * dt))
        if gain > 0.0:
            g_pred = gravity_from_quat(q)
            g_meas = -normalize(cur.acc)
            axis = np.cross(g_meas, g_pred)
            s = np.linalg.norm(axis)
            if s > 1e-15:
                angle = math.atan2(s, float(g_meas @ g_pred))
                q = quat_multiply(q, quat_from_rotvec(gain * angle * axis / s))
        q = q / np.linalg.norm(q)
        out.append(q)
    return out
