import csv
import json
from math import pi

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from detlab import fieldio
from detlab.cli import main, make_config
from detlab.torus import MatrixField, ScalarField, TorusGrid, VectorField

finite = st.floats(-1e300, 1e300, allow_nan=False, allow_infinity=False)


# -- field container ----------------------------------------------------------


@given(arrays(np.float64, (8, 8), elements=finite))
def test_scalar_roundtrip_bitwise(v):
    F = ScalarField(TorusGrid(2, 8), v)
    back = fieldio.field_from_text(fieldio.field_to_text(F))
    assert back.values.tobytes() == F.values.tobytes()


@given(arrays(np.float64, (8, 8, 2), elements=finite))
def test_vector_roundtrip_bitwise(v):
    F = VectorField(TorusGrid(2, 8), v)
    assert fieldio.field_from_text(fieldio.field_to_text(F)).values.tobytes() == F.values.tobytes()


@given(arrays(np.float64, (8, 8, 8, 3, 3), elements=st.floats(-1e6, 1e6)))
def test_matrix_roundtrip_bitwise(v):
    v = v + np.swapaxes(v, -1, -2)
    F = MatrixField(TorusGrid(3, 8), v)
    back = fieldio.field_from_text(fieldio.field_to_text(F))
    assert back.values.tobytes() == F.values.tobytes()
    assert back.psd is False


def test_roundtrip_keeps_psd_flag(tmp_path):
    F = MatrixField.constant(TorusGrid(2, 8), np.eye(2), psd=True)
    fieldio.write_field(tmp_path / "f.json", F)
    assert fieldio.read_field(tmp_path / "f.json").psd


def test_container_errors():
    with pytest.raises(ValueError):
        fieldio.field_from_text('{"values": []}')
    with pytest.raises(ValueError):
        fieldio.field_from_text('{"header": {"schema_version": 9, "n": 2, "m": 8, '
                                '"field_kind": "scalar"}, "values": []}')
    with pytest.raises(ValueError):
        fieldio.field_from_text('{"header": {"schema_version": 1, "n": 2, "m": 8, '
                                '"field_kind": "scalar"}, "values": [1.0]}')


def test_json_floats_have_17_digits():
    assert json.loads(fieldio.dumps({"x": 0.1, "y": [1 / 3, None, True]})) == \
        {"x": 0.1, "y": [1 / 3, None, True]}
    assert fieldio.fmt(float("inf")) == "null"


# -- commands -----------------------------------------------------------------


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def summary(path):
    return json.loads((path / "summary.json").read_text())


def test_counterexample_command(tmp_path):
    out = tmp_path / "ce"
    assert main(["counterexample", "--n", "2", "--k", "1..5", "--p", "2", "--out", str(out)]) == 0
    rows = read_csv(out / "counterexample.csv")
    assert len(rows) == 5
    assert all(float(r["D"]) == pi for r in rows)
    assert all(float(r["div_tv"]) == pytest.approx(2 * pi) for r in rows)
    s = summary(out)
    assert s["all_passed"] and s["seed"] == 0 and s["command"] == "counterexample"
    assert "wall_time_s" in s and s["config"]["k"] == [1, 2, 3, 4, 5]


def test_quasiconcavity_on_constant_file(tmp_path):
    assert main(["gen", "--family", "constant", "--m", "16", "--out", str(tmp_path / "g")]) == 0
    out = tmp_path / "q"
    rc = main(["quasiconcavity", "--input", str(tmp_path / "g" / "field.json"), "--out", str(out)])
    assert rc == 0
    assert summary(out)["results"]["gap"] == 0


def test_ma_solve_on_manufactured_file(tmp_path):
    assert main(["gen", "--family", "manufactured-ma", "--m", "64", "--out", str(tmp_path / "g")]) == 0
    out = tmp_path / "ma"
    assert main(["ma-solve", "--input", str(tmp_path / "g" / "f.json"), "--out", str(out)]) == 0
    s = summary(out)
    assert s["results"]["residual_inf"] <= 1e-9
    phi = fieldio.read_field(out / "phi.json")
    star = fieldio.read_field(tmp_path / "g" / "phi_star.json")
    assert np.abs(phi.values - star.values).max() <= 1e-6
    assert (out / "phi.summary.json").exists()


def test_assertion_failure_exit_code(tmp_path):
    out = tmp_path / "ma"
    rc = main(["ma-solve", "--m", "32", "--tol-override", "ma_residual=1e-15", "--out", str(out)])
    assert rc == 2
    s = summary(out)
    assert not s["all_passed"]
    assert not s["assertions"]["residual_inf"]["passed"]
    assert (out / "phi.json").exists()


@pytest.mark.parametrize("cmd", [
    ["probe-usc", "--family", "oscillation", "--m", "32", "--k", "1,2,4", "--seed", "3"],
    ["proof-terms", "--m", "64", "--R", "0.5,0.25", "--k", "1,2", "--a", "0.3,0.4"],
    ["gen", "--family", "separable", "--m", "16", "--seed", "7"],
])
def test_outputs_are_byte_stable(tmp_path, cmd):
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(cmd + ["--out", str(o)]) == 0
    for name in sorted(p.name for p in outs[0].iterdir()):
        if name == "summary.json":
            continue  # carries the wall time
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_remaining_commands(tmp_path):
    for cmd in (["functional", "--m", "32", "--p", "inf"], ["young", "--m", "32"],
                ["probe-usc", "--k", "1..3"], ["probe-usc", "--family", "constant", "--k", "1,2"],
                ["gen", "--family", "oscillation", "--k", "2", "--m", "32"],
                ["gen", "--family", "counterexample", "--k", "2", "--m", "64"]):
        out = tmp_path / cmd[0]
        assert main(cmd + ["--out", str(out)]) == 0, cmd
        assert summary(out)["all_passed"]


# -- configuration ------------------------------------------------------------


def test_config_file_and_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# manifest\nn = 2\nm = 32\nk = 1..3\ntol-override = slack=1e-5\n"
                   "tol.gamma = 1e-7\n")
    rc, _ = make_config(["probe-usc", "--config", str(cfg), "--m", "64"])
    assert rc.m == 64 and rc.k == [1, 2, 3]
    assert rc.tolerances["slack"] == 1e-5 and rc.tolerances["gamma"] == 1e-7


def test_solver_failure_is_an_assertion_failure(tmp_path):
    out = tmp_path / "pt"
    rc = main(["proof-terms", "--m", "32", "--R", "0.5", "--k", "1", "--a", "0.3,0.4",
               "--out", str(out)])
    assert rc == 2
    s = summary(out)
    assert not s["assertions"]["solver_converged"]["passed"]
    assert "NewtonStall" in s["results"]["error"]


@pytest.mark.parametrize("argv,needle", [
    (["functional", "--m", "30"], "m=30"),
    (["functional", "--k", "one"], "'k'"),
    (["functional", "--tol-override", "nonsense=1"], "nonsense"),
    (["functional", "--tol-override", "slack=1e-20"], "slack"),
    (["functional", "--input", "/nonexistent/field.json"], "input"),
    (["gen", "--family", "spiral"], "family"),
])
def test_usage_errors(tmp_path, capsys, argv, needle):
    assert main(argv + ["--out", str(tmp_path / "o")]) == 1
    err = capsys.readouterr().err
    assert needle in err
    assert "key = value" in err  # example stanza


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n = 2\ncolour = blue\n")
    assert main(["functional", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
    assert "colour" in capsys.readouterr().err


def test_unknown_command():
    assert main(["plot"]) == 1
