"""Line-oriented ``key = value`` configuration and the CSV dataset formats."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .estimator import EstimateRecord, EstimatorConfig, SampleRecord
from .geomag import ConfigurationError
from .ipm import SolverConfig
from .sim import DisturbanceProfile, GroundTruth, NoiseModel, ScenarioConfig

CONFIG_ENV = "MAGRESTORE_CONFIG"

DATASET_COLUMNS = ["t", "gx", "gy", "gz", "ax", "ay", "az", "mx", "my", "mz"]
QUAT_COLUMNS = ["q0", "q1", "q2", "q3"]
TRUTH_COLUMNS = ["t", "q0", "q1", "q2", "q3", "fx", "fy", "fz", "bx", "by", "bz", "mag_update"]
ESTIMATE_COLUMNS = ["t", "bx", "by", "bz", "mhx", "mhy", "mhz", "mN", "mD", "k", "iters", "fval",
                    "gated", "yaw_before", "yaw_after"]


class DatasetError(ValueError):
    pass


def _floats(text: str) -> tuple:
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SOLVER_KEYS = {
    "rho": float, "h": float, "max_iters": int, "eq_tol": float, "f_tol": float,
    "lambda_init": _floats, "step_mode": str, "hessian": str, "rho_decay": float,
    "rho_min": float, "kkt_factor": float, "max_halvings": int, "armijo": float,
    "lambda_safeguard": float, "boundary_fraction": float, "zero_start": _bool,
}
ESTIMATOR_KEYS = {
    "field_norm": float, "gamma_mD_minus": float, "gamma_mD_plus": float,
    "dip_margin": float, "beta_min": float, "beta_max": float, "declination": float,
    "gating": str, "gate_threshold": float, "window": int, "on_ungated": str,
    "zaru_threshold": float,
}
SCENARIO_KEYS = {
    "mode": str, "duration": float, "imu_rate": float, "mag_rate": float, "field_norm": float,
    "dip": float, "declination": float, "seed": int, "roll": float, "pitch": float, "yaw": float,
    "tilt_amplitude": float, "yaw_amplitude": float, "motion_period": float,
}
NOISE_KEYS = {"noise_gyro": float, "noise_acc": float, "noise_mag": float}
DISTURBANCE_KEYS = {
    "disturbance": str, "disturbance_amplitude": _floats, "disturbance_start": float,
    "disturbance_stop": float, "disturbance_sigma": float, "disturbance_freq": float,
}
OTHER_KEYS = {
    "mD_bounds": str,  # "fixed" (gamma_mD_*) or "dip" (dip +/- dip_margin)
    "ref_filter_gain": float,
    # field norm from the geomagnetic model at this site (overrides field_norm)
    "latitude": float, "longitude": float, "altitude": float, "igrf_schmidt": _bool,
}
ALL_KEYS = {**SOLVER_KEYS, **ESTIMATOR_KEYS, **SCENARIO_KEYS, **NOISE_KEYS, **DISTURBANCE_KEYS, **OTHER_KEYS}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Unknown keys are errors."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in ALL_KEYS:
            raise ConfigurationError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            out[key] = ALL_KEYS[key](value)
        except ValueError as exc:
            raise ConfigurationError(f"{source}:{lineno}: {key}: {exc}") from None
    return out


def load_config(path: str | Path | None) -> dict[str, Any]:
    """Read a config file; ``None`` falls back to ``$MAGRESTORE_CONFIG`` or no overrides."""
    if path is None:
        path = os.environ.get(CONFIG_ENV) or None
    if path is None:
        return {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, str(path))


def _pick(values: dict[str, Any], keys: Iterable[str], rename: dict[str, str] | None = None) -> dict[str, Any]:
    rename = rename or {}
    return {rename.get(k, k): values[k] for k in keys if k in values}


def _build(cls, kwargs: dict[str, Any]):
    try:
        return cls(**kwargs)
    except ConfigurationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(str(exc)) from None


def solver_config(values: dict[str, Any]) -> SolverConfig:
    return _build(SolverConfig, _pick(values, SOLVER_KEYS))


def estimator_config(values: dict[str, Any]) -> EstimatorConfig:
    kwargs = _pick(values, ESTIMATOR_KEYS)
    mode = values.get("mD_bounds", "fixed")
    if mode == "dip":
        kwargs["dip"] = values.get("dip", ScenarioConfig().dip)
    elif mode != "fixed":
        raise ConfigurationError(f"mD_bounds: expected 'fixed' or 'dip', got {mode!r}")
    kwargs["solver"] = solver_config(values)
    return _build(EstimatorConfig, kwargs)


def scenario_config(values: dict[str, Any]) -> ScenarioConfig:
    kwargs = _pick(values, SCENARIO_KEYS)
    noise = _pick(values, NOISE_KEYS, {"noise_gyro": "gyro", "noise_acc": "acc", "noise_mag": "mag"})
    kwargs["noise"] = _build(NoiseModel, noise)
    dist = _pick(values, DISTURBANCE_KEYS, {
        "disturbance": "kind", "disturbance_amplitude": "amplitude", "disturbance_start": "start",
        "disturbance_stop": "stop", "disturbance_sigma": "sigma", "disturbance_freq": "freq"})
    kwargs["disturbance"] = _build(DisturbanceProfile, dist)
    return _build(ScenarioConfig, kwargs)


def dump_config(cfg: dict[str, Any]) -> str:
    lines = []
    for key, value in cfg.items():
        if isinstance(value, tuple):
            value = ", ".join(repr(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


# --- datasets -------------------------------------------------------------------------

def _fmt(x) -> str:
    return repr(float(x))


def write_dataset(path: str | Path, samples: Iterable[SampleRecord], with_ref: bool = True) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DATASET_COLUMNS + (QUAT_COLUMNS if with_ref else []))
        for s in samples:
            row = [s.t, *s.gyro, *s.acc, *s.mag]
            if with_ref:
                row += list(s.q_ref)
            w.writerow([_fmt(v) for v in row])


def read_dataset(path: str | Path) -> tuple[list[SampleRecord], bool]:
    """Parse a dataset CSV; returns the samples and whether ``q0..q3`` were present."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return [], False
        header = [h.strip() for h in header]
        if header == DATASET_COLUMNS + QUAT_COLUMNS:
            has_ref = True
        elif header == DATASET_COLUMNS:
            has_ref = False
        else:
            raise DatasetError(f"{path}:1: unexpected header {','.join(header)}")
        samples = []
        prev_t = -math.inf
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                v = [float(x) for x in row]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if not all(math.isfinite(x) for x in v):
                raise DatasetError(f"{path}:{lineno}: non-finite value")
            if v[0] <= prev_t:
                raise DatasetError(f"{path}:{lineno}: timestamps must increase")
            prev_t = v[0]
            samples.append(SampleRecord(v[0], np.array(v[1:4]), np.array(v[4:7]), np.array(v[7:10]),
                                        np.array(v[10:14]) if has_ref else None))
    return samples, has_ref


def truth_path(dataset_path: str | Path) -> Path:
    p = Path(dataset_path)
    return p.with_name(p.stem + ".truth.csv")


def write_truth(path: str | Path, truth: Iterable[GroundTruth]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_COLUMNS)
        for g in truth:
            w.writerow([_fmt(v) for v in (g.t, *g.q, *g.field_body, *g.b_dyn)] + [int(g.mag_update)])


@dataclass(frozen=True)
class TruthRow:
    t: float
    q: np.ndarray
    field_body: np.ndarray
    b_dyn: np.ndarray


def read_truth(path: str | Path) -> list[TruthRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRUTH_COLUMNS:
            raise DatasetError(f"{path}:1: unexpected truth header")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                v = [float(x) for x in row]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from None
            if len(v) != len(TRUTH_COLUMNS):
                raise DatasetError(f"{path}:{lineno}: expected {len(TRUTH_COLUMNS)} fields")
            rows.append(TruthRow(v[0], np.array(v[1:5]), np.array(v[5:8]), np.array(v[8:11])))
    return rows


def write_estimates(path: str | Path, records: Iterable[EstimateRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ESTIMATE_COLUMNS)
        for r in records:
            w.writerow([_fmt(r.t), *(_fmt(v) for v in r.b_dyn), *(_fmt(v) for v in r.m_hat),
                        _fmt(r.mN), _fmt(r.mD), _fmt(r.k), str(r.iters), _fmt(r.f_val),
                        str(int(r.gated)), _fmt(r.yaw_before), _fmt(r.yaw_after)])

