import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from magrestore.config import (
    CONFIG_ENV,
    DatasetError,
    dump_config,
    estimator_config,
    load_config,
    parse_config_text,
    read_dataset,
    read_truth,
    scenario_config,
    solver_config,
    write_dataset,
    write_truth,
)
from magrestore.estimator import SampleRecord
from magrestore.geomag import ConfigurationError
from magrestore.sim import ScenarioConfig, generate

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


def test_parse_types_and_comments():
    text = """
    # solver
    rho = 1e-3        # barrier
    max_iters = 20
    lambda_init = 0.1, 0.2, 0.3, 0.4, 0.5
    zero_start = yes
    gating = always
    """
    v = parse_config_text(text)
    assert v == {"rho": 1e-3, "max_iters": 20, "lambda_init": (0.1, 0.2, 0.3, 0.4, 0.5),
                 "zero_start": True, "gating": "always"}


@pytest.mark.parametrize("text, fragment", [
    ("rho = 1\nbogus = 3\n", "cfg.txt:2: unknown key 'bogus'"),
    ("\n\nrho 1\n", "cfg.txt:3: expected 'key = value'"),
    ("max_iters = many\n", "cfg.txt:1: max_iters"),
    ("zero_start = maybe\n", "cfg.txt:1: zero_start"),
])
def test_parse_errors_name_file_and_line(text, fragment):
    with pytest.raises(ConfigurationError, match=fragment.replace("'", ".")):
        parse_config_text(text, "cfg.txt")


def test_config_round_trip():
    values = {"rho": 2.5e-5, "lambda_init": (0.1, 0.2, 0.3, 0.4, 0.5), "mode": "dynamic", "seed": 9}
    assert parse_config_text(dump_config(values)) == values


def test_env_var_supplies_default_path(tmp_path, monkeypatch):
    cfg = tmp_path / "env.cfg"
    cfg.write_text("duration = 3\n")
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    assert load_config(None) == {"duration": 3.0}
    monkeypatch.delenv(CONFIG_ENV)
    assert load_config(None) == {}
    with pytest.raises(ConfigurationError, match="cannot read config"):
        load_config(tmp_path / "missing.cfg")


def test_builders_map_keys():
    values = parse_config_text("""
    rho = 1e-3
    gating = never
    mD_bounds = dip
    dip = 0.5
    dip_margin = 0.01
    noise_mag = 0.0
    disturbance = step
    disturbance_amplitude = 0.1 0 0
    disturbance_start = 2
    """)
    assert solver_config(values).rho == 1e-3
    e = estimator_config(values)
    assert e.gating == "never" and e.mD_bounds() == pytest.approx((math.sin(0.5) - 0.01, math.sin(0.5) + 0.01))
    s = scenario_config(values)
    assert s.noise.mag == 0.0 and s.disturbance.kind == "step" and s.disturbance.amplitude == (0.1, 0.0, 0.0)


@pytest.mark.parametrize("text", ["mD_bounds = both\n", "mag_rate = 500\n", "rho = -1\n", "window = 1\n"])
def test_builders_reject_invalid_values(text):
    values = parse_config_text(text)
    with pytest.raises(ConfigurationError):
        solver_config(values)
        estimator_config(values)
        scenario_config(values)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(*[finite] * 13), min_size=1, max_size=5))
def test_dataset_round_trip_is_lossless(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("ds") / "d.csv"
    samples = [SampleRecord(float(i), np.array(r[0:3]), np.array(r[3:6]), np.array(r[6:9]), np.array(r[9:13]))
               for i, r in enumerate(rows)]
    write_dataset(path, samples)
    back, has_ref = read_dataset(path)
    assert has_ref
    for a, b in zip(samples, back):
        for x, y in ((a.gyro, b.gyro), (a.acc, b.acc), (a.mag, b.mag), (a.q_ref, b.q_ref)):
            assert np.array_equal(x, y)


def test_dataset_without_reference_columns(tmp_path):
    samples, _ = generate(ScenarioConfig(duration=0.01))
    write_dataset(tmp_path / "d.csv", samples, with_ref=False)
    back, has_ref = read_dataset(tmp_path / "d.csv")
    assert not has_ref and back[0].q_ref is None and len(back) == 4


@pytest.mark.parametrize("body, fragment", [
    ("t,gx\n", ":1: unexpected header"),
    ("t,gx,gy,gz,ax,ay,az,mx,my,mz\n0,0,0,0,0,0,1,1,0,0\n1,0,0\n", ":3: expected 10 fields"),
    ("t,gx,gy,gz,ax,ay,az,mx,my,mz\n0,0,0,0,0,0,1,1,0,x\n", ":2: could not convert"),
    ("t,gx,gy,gz,ax,ay,az,mx,my,mz\n0,0,0,0,0,0,1,1,0,nan\n", ":2: non-finite"),
    ("t,gx,gy,gz,ax,ay,az,mx,my,mz\n1,0,0,0,0,0,1,1,0,0\n1,0,0,0,0,0,1,1,0,0\n", ":3: timestamps must increase"),
])
def test_malformed_dataset_reports_line(tmp_path, body, fragment):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(DatasetError, match=fragment):
        read_dataset(path)


def test_empty_dataset(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert read_dataset(path) == ([], False)


def test_truth_round_trip(tmp_path):
    _, truth = generate(ScenarioConfig(duration=0.05, seed=2))
    write_truth(tmp_path / "t.csv", truth)
    back = read_truth(tmp_path / "t.csv")
    assert len(back) == len(truth)
    for g, r in zip(truth, back):
        assert np.array_equal(g.q, r.q) and np.array_equal(g.field_body, r.field_body)
