import math

import numpy as np
import pytest

from magrestore.core import euler_to_quat, normalize, quat_to_rotmat, specific_force_from_quat
from magrestore.geomag import mD_bounds_from_dip
from magrestore.ipm import k_bounds
from magrestore.nlp import ProblemData
from magrestore.core import nwu_from_ned, quat_from_acc_mag

WUHAN_DIP = math.asin(0.75)
FIELD_NORM = 0.38593


def unit(rng, n=3):
    return normalize(rng.normal(size=n))


def ned_field(dip=WUHAN_DIP):
    return np.array([math.cos(dip), 0.0, math.sin(dip)])


def pose(roll_deg, pitch_deg, yaw_deg, dip=WUHAN_DIP):
    """NED attitude, its specific-force direction and the clean unit field in body axes."""
    q = euler_to_quat(*np.radians([roll_deg, pitch_deg, yaw_deg]))
    R = quat_to_rotmat(q)
    return q, specific_force_from_quat(q), R.T @ ned_field(dip)


def consistent_problem(q, dip=WUHAN_DIP, margin=1e-3, beta=(0.01, 1e4)):
    """Restoration problem whose reference is generated by the same attitude as the true field."""
    a = specific_force_from_quat(q)
    m_true = quat_to_rotmat(q).T @ ned_field(dip)
    qt, _ = quat_from_acc_mag(a, m_true)
    q_hat = nwu_from_ned(q)
    if q_hat @ qt < 0:
        q_hat = -q_hat
    lo, hi = mD_bounds_from_dip(dip, margin)
    return ProblemData(a, q_hat, lo, hi, *k_bounds(a, *beta)), m_true, float(np.linalg.norm(qt))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record ``(criterion, passed, detail)`` for the end-of-run acceptance summary."""
    results = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(number: int, passed: bool, detail: str) -> None:
        results[number] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE_KEY, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
