"""``magrestore`` command line: simulate datasets, run the estimator, debug single solves."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import (
    DatasetError,
    load_config,
    read_dataset,
    read_truth,
    scenario_config,
    estimator_config,
    solver_config,
    truth_path,
    write_dataset,
    write_estimates,
    write_truth,
)
from .core import PreconditionError, normalize, quat_to_euler, wrap_angle
from .estimator import SampleRecord, StreamEstimator, reference_attitude
from .geomag import (
    ConfigurationError,
    GeoPosition,
    default_coefficients,
    igrf_field_norm,
    load_coefficients,
)
from .ipm import (
    DegenerateAttitudeError,
    NumericalError,
    initialize_or_warm_start,
    solve,
)
from .nlp import DomainError, InfeasibleIterateError, ProblemData, constraints
from .sim import complementary_filter, generate

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DEFAULT_FILTER_GAIN = 0.02

log = logging.getLogger("magrestore")


class UsageError(Exception):
    pass


@dataclass
class RunReport:
    sample_count: int = 0
    gated_count: int = 0
    converged_count: int = 0
    iteration_histogram: dict = field(default_factory=dict)
    max_f_val: float = math.nan
    yaw_rms_before_deg: float = math.nan
    yaw_rms_after_deg: float = math.nan
    solve_us_mean: float = math.nan
    solve_us_median: float = math.nan
    solve_us_max: float = math.nan

    def format(self) -> str:
        hist = " ".join(f"{k}:{v}" for k, v in sorted(self.iteration_histogram.items())) or "-"
        return "\n".join([
            f"samples        {self.sample_count}",
            f"gated          {self.gated_count}",
            f"converged      {self.converged_count}",
            f"iterations     {hist}",
            f"max f          {self.max_f_val:.3e}",
            f"yaw RMS (deg)  before {self.yaw_rms_before_deg:.4f}  after {self.yaw_rms_after_deg:.4f}",
            f"solve time us  mean {self.solve_us_mean:.1f}  median {self.solve_us_median:.1f}"
            f"  max {self.solve_us_max:.1f}",
        ])


def _rms_deg(errors: list[float]) -> float:
    if not errors:
        return math.nan
    return math.degrees(math.sqrt(sum(e * e for e in errors) / len(errors)))


# --- simulate ---------------------------------------------------------------------------

def cmd_simulate(config_path: str | None, out_path: str) -> int:
    values = load_config(config_path)
    scn = scenario_config(values)
    samples, truth = generate(scn)
    out = Path(out_path)
    try:
        write_dataset(out, samples)
        write_truth(truth_path(out), truth)
    except OSError as exc:
        raise UsageError(f"cannot write {out}: {exc.strerror}") from None
    b = np.array([g.b_dyn for g in truth]) if truth else np.zeros((0, 3))
    print(f"scenario   {scn.mode}, {scn.duration:g} s, imu {scn.imu_rate:g} Hz, mag {scn.mag_rate:g} Hz, seed {scn.seed}")
    print(f"field      {scn.field_norm:g} G, dip {math.degrees(scn.dip):.2f} deg")
    print(f"disturb    {scn.disturbance.kind}, max |b| {np.max(np.linalg.norm(b, axis=1)) if len(b) else 0.0:.4f} G")
    print(f"wrote      {out} ({len(samples)} rows), {truth_path(out)}")
    return EXIT_OK


# --- estimate ---------------------------------------------------------------------------

def _mag_rate_rows(samples: Sequence[SampleRecord], mag_rate: float) -> list[int]:
    """Indices of rows to estimate on: at most one per magnetometer period."""
    period = 1.0 / mag_rate
    rows, next_t = [], -math.inf
    for i, s in enumerate(samples):
        if s.t >= next_t - 1e-9 * period:
            rows.append(i)
            next_t = s.t + period
    return rows


def site_field_norm(values: dict, igrf_file: str | None = None) -> float | None:
    """Field norm at the configured ``latitude``/``longitude`` (deg) and ``altitude`` (km).

    Returns ``None`` when no site is configured. Published coefficient tables
    assume Schmidt semi-normalization, which ``igrf_schmidt`` (default on)
    applies.
    """
    if "latitude" not in values and "longitude" not in values:
        if igrf_file:
            raise ConfigurationError("--igrf-file needs latitude and longitude in the config")
        return None
    if "latitude" not in values or "longitude" not in values:
        raise ConfigurationError("latitude and longitude must be given together")
    coeffs = load_coefficients(igrf_file) if igrf_file else default_coefficients()
    try:
        pos = GeoPosition.from_geodetic(values["latitude"], values["longitude"], values.get("altitude", 0.0))
        schmidt = values.get("igrf_schmidt", True)
        return igrf_field_norm(pos, coeffs, schmidt=schmidt, standard_radial=schmidt)
    except ValueError as exc:
        raise ConfigurationError(f"site: {exc}") from None


def run_estimation(dataset: str | Path, values: dict, out_path: str | Path, truth: str | Path | None = None,
                   ref_from_filter: bool = False) -> RunReport:
    ecfg = estimator_config(values)
    samples, has_ref = read_dataset(dataset)
    if samples and not has_ref and not ref_from_filter:
        raise ConfigurationError(f"{dataset}: no q0..q3 columns; pass --ref-from-filter")
    if ref_from_filter and samples:
        qs = complementary_filter(samples, values.get("ref_filter_gain", DEFAULT_FILTER_GAIN))
        samples = [SampleRecord(s.t, s.gyro, s.acc, s.mag, q) for s, q in zip(samples, qs)]
    rows = _mag_rate_rows(samples, values.get("mag_rate", 50.0))
    truth_rows = read_truth(truth) if truth else None
    if truth_rows is not None and len(truth_rows) != len(samples):
        raise DatasetError(f"{truth}: {len(truth_rows)} rows, dataset has {len(samples)}")

    est = StreamEstimator(ecfg)
    records, times = [], []
    for i in rows:
        t0 = time.perf_counter()
        rec = est.process(samples[i])
        times.append(time.perf_counter() - t0)
        records.append(rec)
    write_estimates(out_path, records)

    report = RunReport(sample_count=len(records))
    report.gated_count = sum(r.gated for r in records)
    report.converged_count = sum(r.gated and r.converged for r in records)
    report.iteration_histogram = dict(sorted(Counter(r.iters for r in records if r.gated).items()))
    fvals = [r.f_val for r in records if r.gated and math.isfinite(r.f_val)]
    report.max_f_val = max(fvals) if fvals else math.nan
    before, after = [], []
    for i, r in zip(rows, records):
        if truth_rows is not None:
            ref_yaw = quat_to_euler(normalize(truth_rows[i].q)).yaw - ecfg.declination
        else:
            ref_yaw = quat_to_euler(reference_attitude(samples[i].q_ref, ecfg.declination)).yaw
        if math.isfinite(r.yaw_before) and math.isfinite(r.yaw_after):
            before.append(wrap_angle(r.yaw_before - ref_yaw))
            after.append(wrap_angle(r.yaw_after - ref_yaw))
    report.yaw_rms_before_deg = _rms_deg(before)
    report.yaw_rms_after_deg = _rms_deg(after)
    if times:
        us = np.array(times) * 1e6
        report.solve_us_mean, report.solve_us_median, report.solve_us_max = (
            float(us.mean()), float(np.median(us)), float(us.max()))
    return report


def _with_site_norm(values: dict, igrf_file: str | None) -> dict:
    norm = site_field_norm(values, igrf_file)
    if norm is None:
        return values
    print(f"field norm {norm:.5f} G from the geomagnetic model")
    return {**values, "field_norm": norm}


def _estimate_job(args):
    dataset, values, out, truth, ref_from_filter = args
    return run_estimation(dataset, values, out, truth, ref_from_filter)


def cmd_estimate(datasets: Sequence[str], config_path: str | None, out_path: str, truth: str | None = None,
                 ref_from_filter: bool = False, parallel: int = 1, igrf_file: str | None = None) -> int:
    values = _with_site_norm(load_config(config_path), igrf_file)
    estimator_config(values)  # validate before any work
    if len(datasets) == 1:
        jobs = [(datasets[0], values, out_path, truth, ref_from_filter)]
    else:
        if truth:
            raise UsageError("--truth applies to a single dataset")
        out_dir = Path(out_path)
        if not out_dir.is_dir():
            raise UsageError(f"{out_dir}: with several datasets --out must be an existing directory")
        jobs = [(d, values, out_dir / (Path(d).stem + ".estimates.csv"), None, ref_from_filter)
                for d in datasets]
    if parallel > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            reports = list(pool.map(_estimate_job, jobs))
    else:
        reports = [_estimate_job(j) for j in jobs]
    for job, report in zip(jobs, reports):
        if len(jobs) > 1:
            print(f"== {job[0]} -> {job[2]}")
        print(report.format())
    return EXIT_OK


# --- solve-one --------------------------------------------------------------------------

def _vec(values, n: int, name: str) -> list[float]:
    if values is None or len(values) != n:
        raise UsageError(f"{name} needs {n} numbers")
    return [float(v) for v in values]


def _solve_inputs(args) -> dict:
    if args.input:
        text = sys.stdin.read() if args.input == "-" else Path(args.input).read_text()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.input}: invalid JSON ({exc})") from None
        doc = doc.get("input", doc)
        keys = ("a", "q_ref", "m", "mD_bounds", "k_bounds")
        missing = [k for k in keys if k not in doc]
        if missing:
            raise UsageError(f"{args.input}: missing {', '.join(missing)}")
        return {k: [float(v) for v in doc[k]] for k in keys}
    return {
        "a": _vec(args.a, 3, "--a"),
        "q_ref": _vec(args.q, 4, "--q"),
        "m": _vec(args.m, 3, "--m"),
        "mD_bounds": _vec(args.mD_bounds, 2, "--mD-bounds"),
        "k_bounds": _vec(args.k_bounds, 2, "--k-bounds"),
    }


def cmd_solve_one(args, values: dict) -> int:
    inp = _solve_inputs(args)
    cfg = solver_config(values)
    try:
        a, q, m = normalize(inp["a"]), normalize(inp["q_ref"]), normalize(inp["m"])
        data = ProblemData(a, q, *inp["mD_bounds"], *inp["k_bounds"])
    except PreconditionError as exc:
        raise ConfigurationError(str(exc)) from None
    try:
        state = solve(data, initialize_or_warm_start(None, m, data, cfg), cfg)
    except (InfeasibleIterateError, DomainError, DegenerateAttitudeError) as exc:
        y0 = np.array([*m, 1.0])
        c = constraints(y0, data)
        bad = [f"c{i + 1} = {c[i]:.6g}" for i in range(4) if c[i] <= 0]
        print(f"infeasible: {exc}", file=sys.stderr)
        if bad:
            print("violated at the measured direction: " + ", ".join(bad), file=sys.stderr)
        return EXIT_RUNTIME
    c = constraints(state.y, data)
    result = {
        "input": inp,
        "solution": {"m": state.m.tolist(), "k": state.k, "mD": float(a @ state.m)},
        "constraints": c.tolist(),
        "iterations": state.iter,
        "f_val": state.f_val,
        "converged": state.converged,
        "termination": state.termination,
    }
    if args.json:
        print(json.dumps(result, indent=2))
    else:
        print(f"m            {' '.join(repr(float(v)) for v in state.m)}")
        print(f"k            {state.k!r}")
        print(f"mD           {result['solution']['mD']!r}")
        print(f"constraints  {' '.join(f'{v:.6g}' for v in c)}")
        print(f"iterations   {state.iter}")
        print(f"f            {state.f_val:.3e}")
        print(f"termination  {state.termination}{'' if state.converged else ' (not converged)'}")
    return EXIT_OK


# --- entry point ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="magrestore", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="synthesize a dataset and its truth sidecar")
    s.add_argument("--config", help="key = value file (default: $MAGRESTORE_CONFIG)")
    s.add_argument("-o", "--out", required=True, help="dataset CSV path")

    e = sub.add_parser("estimate", help="run the disturbance estimator over datasets")
    e.add_argument("datasets", nargs="+")
    e.add_argument("--config")
    e.add_argument("-o", "--out", required=True, help="estimates CSV (or directory for several datasets)")
    e.add_argument("--truth", help="truth sidecar for heading statistics")
    e.add_argument("--ref-from-filter", action="store_true",
                   help="derive q_ref with the complementary filter")
    e.add_argument("--igrf-file", help="coefficient file for the site field norm (default: bundled table)")
    e.add_argument("--parallel", type=int, default=1, metavar="N", help="worker processes across datasets")

    o = sub.add_parser("solve-one", help="solve a single restoration problem")
    o.add_argument("--config")
    o.add_argument("--input", help="JSON file with a, q_ref, m, mD_bounds, k_bounds ('-' for stdin)")
    o.add_argument("--a", nargs=3, type=float)
    o.add_argument("--q", nargs=4, type=float)
    o.add_argument("--m", nargs=3, type=float)
    o.add_argument("--mD-bounds", dest="mD_bounds", nargs=2, type=float)
    o.add_argument("--k-bounds", dest="k_bounds", nargs=2, type=float)
    o.add_argument("--json", action="store_true")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "simulate":
            return cmd_simulate(args.config, args.out)
        if args.command == "estimate":
            if args.parallel < 1:
                raise UsageError("--parallel must be >= 1")
            return cmd_estimate(args.datasets, args.config, args.out, args.truth,
                                args.ref_from_filter, args.parallel, args.igrf_file)
        return cmd_solve_one(args, load_config(args.config))
    except (ConfigurationError, UsageError, DatasetError) as exc:
        print(f"magrestore: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"magrestore: error: {exc.filename}: no such file", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, ArithmeticError, ValueError, OSError) as exc:
        print(f"magrestore: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
