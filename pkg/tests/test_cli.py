from __future__ import annotations

import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import expm_oracle
from delaybounds import ConfigError
from delaybounds.cli import RunConfig, dump_config, load_config, main, parse_config, read_csv

REPO = Path(__file__).resolve().parents[1]


def base_config(**changes):
    cfg = {
        "model": "vdp",
        "params": {"d": 0.1, "mu1": 1.0, "mu2": 1.0, "h0": 0.5, "h1": 1.0},
        "K": 4,
        "T": 10.0,
        "dt": 0.01,
        "varpi": 50.0,
        "phi_s": [0.3, 0.2, 0.0, 0.0],
        "sweep": {"theta_step": math.pi / 4, "tol_rho": 0.05, "seed": 0.05},
    }
    cfg.update(changes)
    return cfg


def write_config(tmp_path, name="run.json", **changes):
    path = tmp_path / name
    data = base_config(output_dir=str(tmp_path / "out"), **changes)
    path.write_text(json.dumps(data))
    return str(path)


def columns(path):
    meta, cols, rows = read_csv(path)
    rows = list(rows)
    data = {}
    for i, c in enumerate(cols):
        raw = [r[i] for r in rows]
        data[c] = np.array(raw) if c == "flag" else np.array([float(v) if v else np.nan for v in raw])
    return meta, data


def test_shipped_configs_load():
    for path in sorted((REPO / "configs").glob("*.json")):
        cfg = load_config(str(path))
        assert parse_config(dump_config(cfg)) == cfg


def test_round_trip():
    cfg = RunConfig.from_dict(base_config())
    assert parse_config(dump_config(cfg)) == cfg
    assert parse_config(dump_config(cfg)).hash() == cfg.hash()


@settings(max_examples=25, deadline=None)
@given(
    K=st.integers(1, 8),
    T=st.floats(1.0, 100.0),
    varpi=st.floats(0.1, 1e3),
    phi=st.lists(st.floats(-5, 5), min_size=4, max_size=4),
    model=st.sampled_from(["vdp", "duffing"]),
)
def test_round_trip_property(K, T, varpi, phi, model):
    cfg = RunConfig.from_dict(base_config(K=K, T=T, varpi=varpi, phi_s=phi, model=model))
    again = parse_config(dump_config(cfg))
    assert again == cfg and again.hash() == cfg.hash()


def test_hash_ignores_number_spelling_and_output_dir():
    a = RunConfig.from_dict(base_config(T=10))
    b = RunConfig.from_dict(base_config(T=10.0, output_dir="elsewhere"))
    assert a.hash() == b.hash()
    assert a.hash() != RunConfig.from_dict(base_config(T=11.0)).hash()


@pytest.mark.parametrize(
    "mutate, fragment",
    [
        (lambda c: c["params"].pop("d"), "params.d"),
        (lambda c: c["params"].pop("mu2"), "params.mu2"),
        (lambda c: c.pop("varpi"), "varpi"),
        (lambda c: c.update(dt=0.8), "exceeds the smallest delay"),
        (lambda c: c.update(K=0), "K must"),
        (lambda c: c.update(model="lorenz"), "model must"),
        (lambda c: c.update(extra=1), "unknown config keys"),
        (lambda c: c["params"].update(wobble=2), "unknown oscillator parameters"),
        (lambda c: c.update(phi_s=[1, 2]), "4 components"),
        (lambda c: c.update(sweep={"theta_step": 0.7}), "theta_step"),
    ],
)
def test_config_errors(mutate, fragment):
    data = base_config()
    mutate(data)
    with pytest.raises(ConfigError, match=fragment):
        RunConfig.from_dict(data)


def test_tanh_config_needs_explicit_extras():
    data = base_config(model="vdp_tanh")
    with pytest.raises(ConfigError, match="mu3"):
        RunConfig.from_dict(data)


def test_json_error_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{\n  "model": "vdp",\n  "K": ,\n}')
    assert main(["simulate", "--config", str(bad)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_simulate_zero_history(tmp_path):
    cfg = write_config(tmp_path, phi_s=[0, 0, 0, 0], params={"d": 0.1, "mu1": 1.0, "mu2": 1.0, "h0": 0.5, "h1": 1.0, "F0": 0.0})
    assert main(["simulate", "--config", cfg]) == 0
    meta, data = columns(tmp_path / "out" / "simulate.csv")
    assert not data["norm"].any()
    assert meta["kind"] == "trajectory" and meta["config_hash"] == load_config(cfg).hash()


def test_simulate_linear_duffing(tmp_path):
    params = {"d": 0.1, "mu1": 0.0, "mu2": 0.0, "h0": 0.5, "h1": 1.0, "a1": 0.0, "a2": 0.0, "b1": 0.0, "b2": 0.0}
    cfg = write_config(tmp_path, model="duffing", params=params)
    assert main(["simulate", "--config", cfg, "--phi-s", "0.5,-0.2,0.1,0.3"]) == 0
    _, data = columns(tmp_path / "out" / "simulate.csv")
    phi = np.array([0.5, -0.2, 0.1, 0.3])
    A = _A(params)
    exact = [np.linalg.norm(expm_oracle(A, t) @ phi) for t in data["t"][::100]]
    assert np.max(np.abs(data["norm"][::100] - exact)) < 1e-6


def _A(params):
    from delaybounds import OscillatorParams, build_model

    return build_model("duffing", OscillatorParams.from_dict(params)).A


def test_simulate_tanh_horizon(tmp_path):
    params = {"d": 0.1, "mu1": -0.1, "mu2": -0.1, "mu3": -1.0, "mu4": -0.1, "h0": 1.0, "h1": 10.0, "k1": 1.0, "k2": 1.0}
    cfg = write_config(tmp_path, model="vdp_tanh", params=params, T=80.0, phi_s=[0.2, 0.0, 0.0, 0.0])
    assert main(["simulate", "--config", cfg]) == 0
    _, data = columns(tmp_path / "out" / "simulate.csv")
    assert data["t"][-1] == 80.0 and np.isfinite(data["norm"]).all()


def test_bounds_output(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["bounds", "--config", cfg, "--K", "3"]) == 0
    meta, data = columns(tmp_path / "out" / "bounds_K3.csv")
    assert meta["convention"] == "oscillator" and meta["K"] == 3
    assert np.all(data["lower"] <= data["reference"] + 1e-12) and np.all(data["reference"] <= data["upper"] + 1e-12)


def test_bounds_rejects_tanh(tmp_path):
    params = {"d": 0.1, "mu1": -0.1, "mu2": -0.1, "mu3": -1.0, "mu4": -0.1, "h0": 1.0, "h1": 10.0}
    cfg = write_config(tmp_path, model="vdp_tanh", params=params)
    assert main(["bounds", "--config", cfg]) == 2


def test_cascade_output(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["cascade", "--config", cfg]) == 0
    meta, data = columns(tmp_path / "out" / "cascade.csv")
    assert {"norm_Y1", "norm_Y4", "Y1"} <= set(data)
    assert "decay" in meta


def test_numerical_failure_exit_code(tmp_path):
    cfg = write_config(tmp_path, phi_s=[50.0, 50.0, 0.0, 0.0], T=20.0)
    assert main(["simulate", "--config", cfg]) == 3


def test_missing_history(tmp_path):
    cfg = write_config(tmp_path, phi_s=None)
    assert main(["bounds", "--config", cfg]) == 2


def test_boundary_all_and_compare(tmp_path):
    cfg = write_config(tmp_path, K=6, tail_check=False)
    assert main(["boundary", "--config", cfg, "--method", "all"]) == 0
    out = tmp_path / "out"
    polylines = sorted(out.glob("boundary_*_K6.csv"))
    assert len(polylines) == 3
    meta, data = columns(out / "containment_K6.csv")
    assert meta["passed"] and np.nanmin(data["margin"]) >= -0.05
    for path in polylines:
        m, d = columns(path)
        assert m["method"] in ("reference", "scalar_bound", "y_threshold") and len(d["theta1"]) == 8
    ref = str(out / "boundary_reference_K6.csv")
    assert main(["compare", ref, ref, "--out", str(out / "same.csv")]) == 0
    _, rows = read_csv(str(out / "same.csv"))[1:]
    values = {r[0]: float(r[1]) for r in rows}
    assert all(v == 0.0 for k, v in values.items() if "deviation" in k or "margin" in k)
    assert main(["compare", ref, str(out / "boundary_scalar_bound_K6.csv"), "--out", str(out / "c.csv")]) == 0
    values = {r[0]: float(r[1]) for r in read_csv(str(out / "c.csv"))[2]}
    assert [v for k, v in values.items() if k.startswith("min_signed_margin")][0] >= -0.05


def test_boundary_y_threshold_depths(tmp_path):
    cfg = write_config(tmp_path, tail_check=False)
    for K in ("4", "8"):
        assert main(["boundary", "--config", cfg, "--method", "y_threshold", "--K", K]) == 0
    out = tmp_path / "out"
    a, b = out / "boundary_y_threshold_K4.csv", out / "boundary_y_threshold_K8.csv"
    assert a.read_bytes() != b.read_bytes()
    assert main(["compare", str(a), str(b), "--out", str(out / "k.csv")]) == 0
    names = [r[0] for r in read_csv(str(out / "k.csv"))[2]]
    assert any(n.startswith("max_relative_deviation") for n in names)


def test_compare_bounds_tightening(tmp_path):
    cfg = write_config(tmp_path, T=20.0)
    for K in ("4", "6"):
        assert main(["bounds", "--config", cfg, "--K", K]) == 0
    out = tmp_path / "out"
    assert main(["compare", str(out / "bounds_K4.csv"), str(out / "bounds_K6.csv"), "--out", str(out / "m.csv")]) == 0
    values = {r[0]: float(r[1]) for r in read_csv(str(out / "m.csv"))[2]}
    ratio = [v for k, v in values.items() if k.startswith("gap_ratio")][0]
    assert ratio <= 1.05
    assert all(v == 0 for k, v in values.items() if k.startswith("enclosure_violations"))


def test_compare_mismatched_grids(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["bounds", "--config", cfg, "--K", "2"]) == 0
    assert main(["bounds", "--config", cfg, "--K", "3", "--T", "5", "-o", str(tmp_path / "other")]) == 0
    assert main(["compare", str(tmp_path / "out" / "bounds_K2.csv"), str(tmp_path / "other" / "bounds_K3.csv")]) == 2


def test_module_entry_point(tmp_path):
    cfg = write_config(tmp_path, T=2.0)
    proc = subprocess.run([sys.executable, "-m", "delaybounds", "simulate", "--config", cfg], capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip().endswith("simulate.csv")


def test_schema_documents_outputs():
    import delaybounds

    schema = json.loads((Path(delaybounds.__file__).parent / "csv_schema.json").read_text())
    assert {"simulate.csv", "bounds_K<K>.csv", "boundary_<method>_K<K>.csv", "compare.csv"} <= set(schema["files"])
    assert list(schema["files"]["bounds_K<K>.csv"]["columns"]) == ["t", "lower", "upper", "Z", "approx", "reference"]
