"""Per-sample disturbance estimation: gating, restoration solve, output assembly."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Sequence

import numpy as np

from .core import (
    euler_to_quat,
    normalize,
    nwu_from_ned,
    quat_align_sign,
    quat_from_acc_mag,
    quat_multiply,
    quat_to_euler,
    specific_force_from_quat,
    tilt_from_acc,
    yaw_from_acc_mag,
)
from .geomag import ConfigurationError, mD_bounds_from_dip
from .ipm import (
    DegenerateAttitudeError,
    NumericalError,
    SolverConfig,
    SolverState,
    initialize_or_warm_start,
    k_bounds,
    solve,
)
from .nlp import DomainError, InfeasibleIterateError, ProblemData, pack

YAW_RATE_THRESHOLD = math.radians(10.0) / 3600.0  # 10 deg/h in rad/s
ZARU_GYRO_THRESHOLD = 0.01  # rad/s


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class SampleRecord:
    t: float
    gyro: np.ndarray
    acc: np.ndarray
    mag: np.ndarray
    q_ref: np.ndarray | None = None

    def __post_init__(self):
        for name in ("gyro", "acc", "mag"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be a finite 3-vector")
            object.__setattr__(self, name, v)
        if self.q_ref is not None:
            q = np.asarray(self.q_ref, dtype=float)
            if q.shape != (4,) or not np.all(np.isfinite(q)):
                raise ValueError("q_ref must be a finite 4-vector")
            object.__setattr__(self, "q_ref", q)


@dataclass(frozen=True)
class EstimateRecord:
    t: float
    b_dyn: np.ndarray
    m_hat: np.ndarray
    mN: float
    mD: float
    k: float
    iters: int
    f_val: float
    gated: bool
    yaw_before: float
    yaw_after: float
    converged: bool = False
    termination: str = ""


@dataclass
class EstimatorConfig:
    field_norm: float = 0.38593
    # |mD| bounds: explicit values, or bracket |sin(dip)| by dip_margin when dip is set
    gamma_mD_minus: float = 0.05
    gamma_mD_plus: float = 0.95
    dip: float | None = None
    dip_margin: float = 0.02
    # k lower bound factor; 10 would exceed max ||q_tilde|| = 4 whenever |1 - a_z| > 0.4
    beta_min: float = 0.01
    beta_max: float = 1e4
    declination: float = 0.0
    gating: Literal["rate", "always", "never"] = "rate"
    gate_threshold: float = YAW_RATE_THRESHOLD
    window: int = 50
    on_ungated: Literal["passthrough", "hold"] = "passthrough"
    zaru_threshold: float = 0.0  # 0 disables holding q_ref during stillness
    solver: SolverConfig = field(default_factory=SolverConfig)

    def __post_init__(self):
        if not self.field_norm > 0:
            raise ConfigurationError("field_norm must be > 0")
        if self.gating not in ("rate", "always", "never"):
            raise ConfigurationError(f"unknown gating mode {self.gating!r}")
        if self.on_ungated not in ("passthrough", "hold"):
            raise ConfigurationError(f"unknown on_ungated mode {self.on_ungated!r}")
        if self.window < 2:
            raise ConfigurationError("window must be >= 2")
        if not self.beta_max > self.beta_min > 0:
            raise ConfigurationError("need beta_max > beta_min > 0")
        lo, hi = self.mD_bounds()
        if not 0.0 < lo < hi < 1.0:
            raise ConfigurationError(f"need 0 < gamma_mD- < gamma_mD+ < 1, got ({lo}, {hi})")

    def mD_bounds(self) -> tuple[float, float]:
        if self.dip is not None:
            return mD_bounds_from_dip(self.dip, self.dip_margin)
        return self.gamma_mD_minus, self.gamma_mD_plus


def gyro_yaw_rate(gyro, roll: float, pitch: float) -> float:
    """Z-Y-X yaw rate implied by body rates at the given roll and pitch."""
    return (gyro[1] * math.sin(roll) + gyro[2] * math.cos(roll)) / math.cos(pitch)


def _sample_rates(s: SampleRecord) -> tuple[float, float]:
    """Acc/mag heading and gyro-implied yaw rate for one sample."""
    yaw = yaw_from_acc_mag(normalize(s.acc), normalize(s.mag))
    if s.q_ref is not None:
        e = quat_to_euler(normalize(s.q_ref))
        roll, pitch = e.roll, e.pitch
    else:
        roll, pitch = tilt_from_acc(normalize(s.acc))
    return yaw, gyro_yaw_rate(s.gyro, roll, pitch)


def _rate_mismatch(times: np.ndarray, yaws: np.ndarray, rates: Sequence[float]) -> float:
    """``|heading change / T - trapezoidal mean of gyro yaw rate|`` over the window.

    Integrating the rates by the trapezoid rule matches the end-to-end
    heading difference to second order in the sample spacing, so smooth
    consistent motion stays far below the threshold.
    """
    if np.any(np.isnan(yaws)):
        return math.inf
    dt = np.diff(times)
    if np.any(dt <= 0):
        raise InsufficientDataError("window timestamps must increase")
    rates = np.asarray(rates, dtype=float)
    integral = float(np.sum(0.5 * (rates[1:] + rates[:-1]) * dt))
    yaws = np.unwrap(yaws)
    return abs(yaws[-1] - yaws[0] - integral) / float(times[-1] - times[0])


def gate(window: Sequence[SampleRecord], threshold: float = YAW_RATE_THRESHOLD) -> bool:
    """True when the acc/mag yaw rate disagrees with the gyro yaw rate by more than ``threshold``.

    The acc/mag rate is the end-to-end finite difference of the heading over
    the window; the gyro rate is its trapezoidal average over the same samples.
    """
    if len(window) < 2:
        raise InsufficientDataError("gating needs at least two samples")
    yaws, rates = zip(*(_sample_rates(s) for s in window))
    times = np.array([s.t for s in window])
    return bool(_rate_mismatch(times, np.array(yaws), rates) > threshold)


def zaru_hold(window: Sequence[SampleRecord], gyro_norm_threshold: float = ZARU_GYRO_THRESHOLD) -> bool:
    """True when the mean gyro norm over the window is below the threshold."""
    if not window:
        return False
    return float(np.mean([np.linalg.norm(s.gyro) for s in window])) < gyro_norm_threshold


def _passthrough(sample: SampleRecord, a: np.ndarray | None, gated: bool, termination: str) -> EstimateRecord:
    m = normalize(sample.mag)
    yaw = yaw_from_acc_mag(a, m) if a is not None else math.nan
    mD = float(a @ m) if a is not None else math.nan
    return EstimateRecord(sample.t, np.zeros(3), m, math.sqrt(max(0.0, 1.0 - mD * mD)), mD,
                          math.nan, 0, math.nan, gated, yaw, yaw, False, termination)


def reference_attitude(q_ref, declination: float = 0.0) -> np.ndarray:
    """Normalized reference quaternion, rotated from true to magnetic north."""
    q = normalize(q_ref)
    if declination:
        q = quat_multiply(euler_to_quat(0.0, 0.0, -declination), q)
    return q


def build_problem(a: np.ndarray, q_ref: np.ndarray, measured_m: np.ndarray, cfg: EstimatorConfig) -> ProblemData:
    """Restoration problem for specific force ``a`` and NED reference attitude ``q_ref``."""
    lo, hi = cfg.mD_bounds()
    klo, khi = k_bounds(a, cfg.beta_min, cfg.beta_max)
    qt, _ = quat_from_acc_mag(a, measured_m)
    return ProblemData(a, quat_align_sign(nwu_from_ned(q_ref), qt), lo, hi, klo, khi)


def heading_frame(q_ref: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Body-frame rotation about body ``z`` that brings the reference heading near zero.

    Returns ``(R, q)``: body vectors map as ``v' = R v`` and ``q`` is the
    reference attitude of the rotated body. ``q_tilde`` shrinks to zero as
    the heading approaches south (at level ``||q_tilde||^2 = 8 mN^2 (1 + cos yaw)``),
    which leaves the cost with a spurious flat minimum; solving in this frame
    keeps every problem where ``||q_tilde||`` is largest.
    """
    psi = quat_to_euler(q_ref).yaw
    c, s = math.cos(psi), math.sin(psi)
    R = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    qz = np.array([math.cos(0.5 * psi), 0.0, 0.0, -math.sin(0.5 * psi)])
    return R, quat_multiply(q_ref, qz)


def _to_frame(state: SolverState | None, R: np.ndarray) -> SolverState | None:
    if state is None:
        return None
    return replace(state, y=pack(R @ state.y[:3], state.y[3]))


def estimate_sample(sample: SampleRecord, field_norm: float, state: SolverState | None,
                    cfg: EstimatorConfig, gated: bool = True,
                    q_ref: np.ndarray | None = None) -> tuple[EstimateRecord, SolverState | None]:
    """Restore the field direction for one sample and split off the disturbance.

    Returns the record and the solver state (in body coordinates) to warm
    start the next sample; ``None`` after a failure forces a cold start.
    """
    if not field_norm > 0:
        raise ConfigurationError("field_norm must be > 0")
    q = q_ref if q_ref is not None else sample.q_ref
    if q is None:
        raise ConfigurationError("sample has no reference quaternion")
    q = reference_attitude(q, cfg.declination)
    a = specific_force_from_quat(q)
    if not gated:
        return _passthrough(sample, a, False, "ungated"), state
    m_meas = normalize(sample.mag)
    R, q_h = heading_frame(q)
    a_h = R @ a
    try:
        m0 = R @ m_meas
        data = build_problem(a_h, q_h, m0, cfg)
        if cfg.dip is not None and cfg.dip != 0.0 and float(a_h @ m0) * cfg.dip > 0.0:
            # a points up, so a positive (downward) dip means a . m < 0
            m0 = m0 - 2.0 * float(a_h @ m0) * a_h
        init = initialize_or_warm_start(_to_frame(state, R), m0, data, cfg.solver)
        result = solve(data, init, cfg.solver)
    except (DegenerateAttitudeError, InfeasibleIterateError, DomainError, NumericalError,
            ConfigurationError) as exc:
        return _passthrough(sample, a, True, type(exc).__name__), None
    result = _to_frame(result, R.T)
    m_hat = result.m / np.linalg.norm(result.m)
    b_dyn = sample.mag - field_norm * m_hat
    mD = float(a @ m_hat)
    record = EstimateRecord(
        t=sample.t, b_dyn=b_dyn, m_hat=m_hat, mN=math.sqrt(max(0.0, 1.0 - mD * mD)), mD=mD,
        k=result.k, iters=result.iter, f_val=result.f_val, gated=True,
        yaw_before=yaw_from_acc_mag(a, m_meas), yaw_after=yaw_from_acc_mag(a, m_hat),
        converged=result.converged, termination=result.termination,
    )
    return record, (result if result.converged else None)


class StreamEstimator:
    """Sequential estimator for one sample stream (warm start, gating window, hold state)."""

    def __init__(self, cfg: EstimatorConfig):
        self.cfg = cfg
        self._window: deque[SampleRecord] = deque(maxlen=cfg.window)
        self._rates: deque[tuple[float, float]] = deque(maxlen=cfg.window)
        self._state: SolverState | None = None
        self._last: EstimateRecord | None = None
        self._held_q: np.ndarray | None = None

    def _is_gated(self) -> bool:
        mode = self.cfg.gating
        if mode == "always":
            return True
        if mode == "never" or len(self._window) < 2:
            return False
        yaws, rates = zip(*self._rates)
        times = np.array([s.t for s in self._window])
        return _rate_mismatch(times, np.array(yaws), rates) > self.cfg.gate_threshold

    def _reference(self, sample: SampleRecord) -> np.ndarray | None:
        if self.cfg.zaru_threshold > 0.0 and zaru_hold(list(self._window), self.cfg.zaru_threshold):
            if self._held_q is None:
                self._held_q = sample.q_ref
            return self._held_q
        self._held_q = None
        return sample.q_ref

    def process(self, sample: SampleRecord) -> EstimateRecord:
        if self._window and sample.t <= self._window[-1].t:
            raise ValueError(f"timestamps must increase (t={sample.t!r})")
        self._window.append(sample)
        if self.cfg.gating == "rate":
            self._rates.append(_sample_rates(sample))
        gated = self._is_gated()
        q_ref = self._reference(sample)
        if not gated and self.cfg.on_ungated == "hold" and self._last is not None and self._last.gated:
            last = self._last
            m = normalize(sample.mag)
            yaw = yaw_from_acc_mag(normalize(sample.acc), m)
            record = EstimateRecord(sample.t, sample.mag - self.cfg.field_norm * last.m_hat, last.m_hat,
                                    last.mN, last.mD, last.k, 0, last.f_val, False, yaw, last.yaw_after,
                                    last.converged, "held")
            return record
        record, self._state = estimate_sample(sample, self.cfg.field_norm, self._state, self.cfg,
                                              gated=gated, q_ref=q_ref)
        if record.gated:
            self._last = record
        return record


def estimate_stream(samples: Iterable[SampleRecord], cfg: EstimatorConfig) -> list[EstimateRecord]:
    est = StreamEstimator(cfg)
    return [est.process(s) for s in samples]
