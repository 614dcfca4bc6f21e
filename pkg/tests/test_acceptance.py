"""End-to-end acceptance checks, one test per criterion.

Each test records its verdict before asserting, so the terminal summary lists
every criterion with its measured figures whether it passed or not.
"""

import math
import subprocess
import sys
import time

import numpy as np
import pytest

from magrestore.core import (
    euler_to_quat,
    normalize,
    quat_from_acc_mag,
    quat_norm_closed_form,
    quat_to_euler,
    quat_to_rotmat,
    specific_force_from_quat,
    wrap_angle,
)
from magrestore.estimator import (
    EstimatorConfig,
    SampleRecord,
    build_problem,
    estimate_sample,
    estimate_stream,
    heading_frame,
)
from magrestore.nlp import (
    ProblemData,
    build_P,
    constraint_jacobian,
    constraints,
    cost,
    cost_gradient,
    cost_hessian,
    null_space_dim,
    pack,
)
from magrestore.sim import DisturbanceProfile, NoiseModel, ScenarioConfig, generate

from conftest import FIELD_NORM, WUHAN_DIP, ned_field, unit

NOISELESS = NoiseModel(0.0, 0.0, 0.0)


def _random_units(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1)[:, None]


def _mag_rows(samples, truth):
    idx = [i for i, g in enumerate(truth) if g.mag_update]
    return [samples[i] for i in idx], [truth[i] for i in idx]


def _yaw_rms_deg(records, truth, attr):
    err = [wrap_angle(getattr(r, attr) - quat_to_euler(g.q).yaw) for r, g in zip(records, truth)]
    return math.degrees(math.sqrt(np.mean(np.square(err))))


def test_c1_closed_form_norm(verdict):
    rng = np.random.default_rng(101)
    A, M = _random_units(rng, 100_000), _random_units(rng, 100_000)
    t0 = time.perf_counter()
    worst = 0.0
    for a, m in zip(A, M):
        qt, _ = quat_from_acc_mag(a, m)
        worst = max(worst, abs(math.sqrt(float(qt @ qt)) - quat_norm_closed_form(a, m)))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and elapsed < 5.0
    verdict(1, ok, f"max |diff| {worst:.2e} (<= 1e-12), {elapsed:.2f} s (< 5 s)")
    assert ok


def _random_feasible(rng):
    a = unit(rng)
    while abs(a[2] - 1.0) < 0.05:
        a = unit(rng)
    lo, hi = sorted(rng.uniform(0.05, 0.95, 2))
    mD = math.copysign(rng.uniform(lo, hi), rng.uniform(-1, 1))
    h = unit(rng)
    h = normalize(h - (h @ a) * a)
    m = mD * a + math.sqrt(1.0 - mD * mD) * h
    kd = abs(a[2] - 1.0)
    data = ProblemData(a, unit(rng, 4), lo - 1e-3, hi + 1e-3, 0.01 * kd, 1e4 * kd)
    return pack(m, rng.uniform(0.02, 4.0)), data


def _central(fun, y, h):
    cols = []
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        cols.append((np.asarray(fun(y + e)) - np.asarray(fun(y - e))) / (2 * h))
    return np.stack(cols, axis=-1)


def test_c2_derivatives_match_finite_differences(verdict):
    rng = np.random.default_rng(102)
    bad, worst = 0, 0.0
    for _ in range(1000):
        y, data = _random_feasible(rng)
        checks = [
            (cost_gradient(y, data), _central(lambda z: cost(z, data), y, 1e-6)),
            (cost_hessian(y, data), _central(lambda z: cost_gradient(z, data), y, 1e-6)),
            # quadratic in y, so a wide step is exact and avoids cancelling the large gamma_k+^2
            (constraint_jacobian(y, data), _central(lambda z: constraints(z, data), y, 1e-2)),
        ]
        for exact, fd in checks:
            excess = np.abs(exact - fd) - (1e-5 + 1e-4 * np.abs(fd))
            worst = max(worst, float(np.max(np.abs(exact - fd))))
            bad += int(np.any(excess > 0))
    verdict(2, bad == 0, f"{bad} mismatches over 1000 points, max abs diff {worst:.1e}")
    assert bad == 0


def test_c3_null_space_is_two_dimensional(verdict):
    rng = np.random.default_rng(103)
    dims = []
    for _ in range(1000):
        q = normalize(rng.normal(size=4))
        a = specific_force_from_quat(q)
        if abs(a[2] - 1.0) < 1e-3:
            continue
        m = quat_to_rotmat(q).T @ ned_field()
        qt, _ = quat_from_acc_mag(a, m)
        dims.append(null_space_dim(build_P(a, normalize(qt)), 1e-9))
    ok = len(dims) >= 990 and set(dims) == {2}
    verdict(3, ok, f"null dimensions {sorted(set(dims))} over {len(dims)} pairs")
    assert ok


# --- static bias recovery (criteria 4, 5) ------------------------------------------------

def _bias_scenarios():
    rng = np.random.default_rng(104)
    out = []
    for i in range(20):
        frac = 0.5 if i < 5 else rng.uniform(0.05, 0.5)
        bias = tuple(frac * FIELD_NORM * unit(rng))
        roll, pitch = np.radians(rng.uniform(-20, 20, 2))
        out.append((bias, float(roll), float(pitch), float(rng.uniform(-math.pi, math.pi))))
    return out


def _run_bias(noise):
    # a constant bias never disagrees with the gyro, so estimation is forced on
    cfg = EstimatorConfig(dip=WUHAN_DIP, dip_margin=1e-3, gating="always")
    errors, iters, fvals = [], [], []
    for seed, (bias, roll, pitch, yaw) in enumerate(_bias_scenarios()):
        scn = ScenarioConfig(duration=3.0, noise=noise, seed=seed, roll=roll, pitch=pitch, yaw=yaw,
                             disturbance=DisturbanceProfile("constant", bias))
        samples, truth = _mag_rows(*generate(scn))
        for rec, g in zip(estimate_stream(samples, cfg), truth):
            assert rec.gated
            errors.append(rec.b_dyn - g.b_dyn)
            iters.append(rec.iters)
            fvals.append(rec.f_val)
    return np.array(errors), np.array(iters), np.array(fvals)


@pytest.fixture(scope="module")
def bias_runs():
    return {"clean": _run_bias(NOISELESS), "noisy": _run_bias(NoiseModel(mag=0.002))}


def test_c4_static_bias_recovery(verdict, bias_runs):
    clean, _, _ = bias_runs["clean"]
    noisy, _, _ = bias_runs["noisy"]
    within = float(np.mean(np.all(np.abs(clean) <= 1e-3, axis=1)))
    rms = float(np.sqrt(np.mean(noisy ** 2)))
    ok = within >= 0.99 and rms <= 0.01
    verdict(4, ok, f"{100 * within:.2f}% within 1e-3 G (>= 99%), noisy RMS {rms:.2e} G (<= 0.01)")
    assert ok


def test_c5_convergence(verdict, bias_runs):
    _, it_clean, f_clean = bias_runs["clean"]
    _, it_noisy, _ = bias_runs["noisy"]
    max_it = int(max(it_clean.max(), it_noisy.max()))
    max_f = float(np.max(f_clean))
    ok = max_it <= 50 and max_f <= 1e-20
    verdict(5, ok, f"max iterations {max_it} (<= 50), noiseless max f {max_f:.1e} (<= 1e-20)")
    assert ok


# --- dynamic heading run (criteria 6, 7) ---------------------------------------------------

@pytest.fixture(scope="module")
def dynamic_run():
    scn = ScenarioConfig(mode="dynamic", duration=60.0, seed=1,
                         disturbance=DisturbanceProfile("motor_noise", (0.12, 0.08, 0.05), sigma=0.01))
    samples, truth = _mag_rows(*generate(scn))
    return estimate_stream(samples, EstimatorConfig(dip=WUHAN_DIP)), truth


def test_c6_heading_improvement(verdict, dynamic_run):
    records, truth = dynamic_run
    before = _yaw_rms_deg(records, truth, "yaw_before")
    after = _yaw_rms_deg(records, truth, "yaw_after")
    ok = before >= 10.0 and after <= 0.1 * before and after <= 1.5
    verdict(6, ok, f"yaw RMS {before:.2f} -> {after:.3f} deg ({100 * after / before:.1f}% of raw)")
    assert ok


def test_c7_geographic_validity(verdict, dynamic_run):
    records, _ = dynamic_run
    conv = [r for r in records if r.gated and r.converged]
    inside = np.mean([0.64 <= r.mN <= 0.69 and -0.77 <= r.mD <= -0.73 for r in conv])
    ok = len(conv) > 0.9 * len(records) and inside >= 0.95
    verdict(7, ok, f"{100 * inside:.1f}% of {len(conv)} converged samples in range (>= 95%)")
    assert ok


# --- brute-force heading oracle (criterion 8) -----------------------------------------------

def _qtilde_rows(a, M):
    """``q_tilde(a, m)`` for each row of ``M``."""
    ax, ay, az = a
    mx, my, mz = M.T
    mD = M @ a
    mN = np.sqrt(np.clip(1.0 - mD * mD, 0.0, None))
    return np.column_stack([
        -ay * (mN + mx) + ax * my,
        (az - 1.0) * (mN + mx) + ax * (mD - mz),
        (az - 1.0) * my + ay * (mD - mz),
        az * mD - ax * mN - mz,
    ])


def _grid_heading(q_ref, a, data, R, step_deg=0.01):
    """Heading minimizing the cost over headings with the dip held at its known value."""
    roll, pitch = quat_to_euler(q_ref)[:2]
    psi = np.radians(np.arange(-180.0, 180.0, step_deg))
    n = ned_field()
    # body field for attitude (roll, pitch, psi): R_x(roll)^T R_y(pitch)^T R_z(psi)^T n
    h = np.column_stack([np.cos(psi) * n[0], -np.sin(psi) * n[0], np.full_like(psi, n[2])])
    Rxy = quat_to_rotmat(euler_to_quat(roll, pitch, 0.0))
    M = h @ Rxy @ R.T
    Q = _qtilde_rows(data.a, M)
    k = np.clip(Q @ data.q_ref, data.gamma_k_minus, data.gamma_k_plus)
    f = np.sum((Q - k[:, None] * data.q_ref) ** 2, axis=1)
    j = int(np.argmin(f))
    assert math.isclose(f[j], cost(pack(M[j], k[j]), data), rel_tol=1e-9, abs_tol=1e-24)
    return float(psi[j])


def test_c8_grid_search_agrees(verdict):
    rng = np.random.default_rng(108)
    cfg = EstimatorConfig(dip=WUHAN_DIP, dip_margin=1e-3, gating="always")
    worst = 0.0
    for i in range(100):
        roll, pitch = np.radians(rng.uniform(-20, 20, 2))
        yaw = rng.uniform(-math.pi, math.pi)
        q_true = euler_to_quat(roll, pitch, yaw)
        # half the problems get a reference that disagrees with the field by up to 2 deg
        q_ref = q_true if i % 2 == 0 else euler_to_quat(
            *(np.array([roll, pitch, yaw]) + np.radians(rng.uniform(-2, 2, 3))))
        mag = FIELD_NORM * (quat_to_rotmat(q_true).T @ ned_field()) + 0.4 * FIELD_NORM * unit(rng)
        rec, _ = estimate_sample(SampleRecord(0.0, np.zeros(3), 9.8 * specific_force_from_quat(q_ref), mag, q_ref),
                                 FIELD_NORM, None, cfg)
        assert rec.converged
        R, q_h = heading_frame(q_ref)
        a = specific_force_from_quat(q_ref)
        data = build_problem(R @ a, q_h, R @ normalize(mag), cfg)
        worst = max(worst, abs(math.degrees(wrap_angle(_grid_heading(q_ref, a, data, R) - rec.yaw_after))))
    ok = worst <= 0.05
    verdict(8, ok, f"max heading gap {worst:.4f} deg (<= 0.05)")
    assert ok


# --- gating (criterion 9) --------------------------------------------------------------------

def test_c9_gating(verdict):
    step_at = 10.0
    scn = ScenarioConfig(duration=20.0, noise=NOISELESS,
                         disturbance=DisturbanceProfile("step", (0.05, -0.03, 0.02), start=step_at))
    samples, _ = _mag_rows(*generate(scn))
    records = estimate_stream(samples, EstimatorConfig())
    fired = [r.t for r in records if r.gated]
    early = [t for t in fired if t < step_at]
    delay = fired[0] - step_at if fired and not early else math.inf

    false_fires = 0
    for mode in ("static", "dynamic"):
        clean, _ = _mag_rows(*generate(ScenarioConfig(mode=mode, duration=20.0, noise=NOISELESS)))
        false_fires += sum(r.gated for r in estimate_stream(clean, EstimatorConfig()))
    ok = delay <= 1.0 and false_fires == 0
    verdict(9, ok, f"fires {delay:.2f} s after the step (<= 1 s), {false_fires} false fires on clean streams")
    assert ok


# --- CLI determinism and throughput (criterion 10) -----------------------------------------

def test_c10_cli_deterministic_and_fast(verdict, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("duration = 60\nmode = dynamic\ndisturbance = motor_noise\n"
                   "disturbance_amplitude = 0.12 0.08 0.05\ndisturbance_sigma = 0.01\nmD_bounds = dip\n")
    data = tmp_path / "run.csv"
    cli = [sys.executable, "-m", "magrestore.cli"]
    subprocess.run(cli + ["simulate", "--config", str(cfg), "-o", str(data)], check=True, capture_output=True)
    outputs, times = [], []
    for n in range(2):
        out = tmp_path / f"est{n}.csv"
        t0 = time.perf_counter()
        subprocess.run(cli + ["estimate", str(data), "--config", str(cfg), "-o", str(out)],
                       check=True, capture_output=True)
        times.append(time.perf_counter() - t0)
        outputs.append(out.read_bytes())
    identical = outputs[0] == outputs[1]
    ok = identical and max(times) < 10.0
    verdict(10, ok, f"runs {times[0]:.1f} s / {times[1]:.1f} s (< 10 s), identical output: {identical}")
    assert ok
