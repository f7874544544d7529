import csv
import io
import json
import math

import numpy as np
import pytest

from wickchaos.chaos import ChaosField
from wickchaos.cli import main, series_rows
from wickchaos.multiindex import ZERO, Shape, zeta_box_product
from wickchaos.pde import solve_deterministic
from wickchaos.propagator import norms_csv
from wickchaos.scenario import load_scenario

from conftest import SCENARIOS


def small_doc(**over):
    doc = {
        "name": "tiny",
        "truncation": {"m": 1, "n": 1, "shape": "total"},
        "grid": {"J": 8, "boundary": "periodic"},
        "time": {"scheme": "crank_nicolson", "dt": 0.1, "T": 0.5},
        "potential": {"terms": [{"index": [0], "generator": {"kind": "constant", "c": 1.0}, "amplitude": 1.0}]},
        "force": {"terms": []},
        "initial": {"terms": [{"index": [0], "generator": {"kind": "constant", "c": 1.0}, "amplitude": 1.0}]},
        "seed": 1,
    }
    doc.update(over)
    return doc


def write(tmp_path, doc, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc, indent=2))
    return str(p)


def read_csv(path):
    return list(csv.DictReader(io.StringIO(path.read_text())))


def test_solve_writes_artifacts(tmp_path):
    out = tmp_path / "o"
    assert main(["solve", str(SCENARIOS / "decoupled.json"), "--out", str(out)]) == 0
    for name in ("U.json", "norms.csv", "manifest.json"):
        assert (out / name).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert len(manifest["sha256"]) == 64 and manifest["seed"] == 3
    sc = load_scenario(SCENARIOS / "decoupled.json").data
    u0 = solve_deterministic(sc.op, sc.q0, sc.F.coefficient(ZERO), sc.G.coefficient(ZERO))
    row = read_csv(out / "norms.csv")[0]
    assert row["index"] == "(0,0)"
    assert float(row["l2_final"]) == float(sc.op.grid.l2_norm(u0[-1]))
    U = ChaosField.from_json((out / "U.json").read_text())
    assert norms_csv(U) == (out / "norms.csv").read_text()


def test_solve_rerun_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["solve", str(SCENARIOS / "reference.json"), "--out", str(d)]) == 0
    assert (a / "norms.csv").read_bytes() == (b / "norms.csv").read_bytes()
    assert (a / "U.json").read_bytes() == (b / "U.json").read_bytes()


def test_seed_flag_changes_random_generators(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["solve", str(SCENARIOS / "reference.json"), "--out", str(a)])
    main(["solve", str(SCENARIOS / "reference.json"), "--out", str(b), "--seed", "8"])
    assert (a / "norms.csv").read_bytes() != (b / "norms.csv").read_bytes()


def test_missing_key_exit_2(tmp_path, capsys):
    doc = small_doc()
    del doc["grid"]
    assert main(["solve", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    assert "grid" in capsys.readouterr().err


def test_invalid_json_reports_line(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "name": "x",\n  "grid": {"J": 8,,}\n}\n')
    assert main(["solve", str(p)]) == 2
    assert "line 3" in capsys.readouterr().err


def test_schema_error_reports_line(tmp_path, capsys):
    doc = small_doc()
    doc["grid"]["J"] = "eight"
    assert main(["solve", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line " in err and "J" in err


def test_missing_file_exit_2(tmp_path):
    assert main(["solve", str(tmp_path / "nope.json")]) == 2


def test_singular_step_exit_3(tmp_path, capsys):
    doc = small_doc(time={"scheme": "backward_euler", "dt": 0.5, "T": 1.0},
                    grid={"J": 4, "boundary": "periodic"})
    doc["potential"]["terms"][0]["generator"]["c"] = -2.0
    assert main(["solve", write(tmp_path, doc), "--out", str(tmp_path / "o")]) == 3
    assert "numerical failure" in capsys.readouterr().err


def test_verify_violation_exit_1_with_witness(tmp_path, capsys):
    # backward Euler samples f at the right endpoint; a steep ramp beats the trapezoid integral
    doc = small_doc(time={"scheme": "backward_euler", "dt": 0.1, "T": 0.5})
    doc["potential"]["terms"][0]["generator"]["c"] = 0.0
    doc["initial"]["terms"] = []
    doc["force"]["terms"] = [{"index": [0], "generator": {"kind": "constant", "c": 1.0}, "amplitude": 1.0,
                              "time": {"kind": "linear", "slope": 1000.0}}]
    out = tmp_path / "o"
    assert main(["verify", write(tmp_path, doc), "--check", "thm1", "--out", str(out)]) == 1
    assert "FAIL" in capsys.readouterr().out
    report = json.loads((out / "verify_thm1.json").read_text())
    assert report["passed"] is False


@pytest.mark.parametrize("check", ["oracle", "lemma1", "lemma2", "eq3"])
def test_verify_reference_passes(tmp_path, check, capsys):
    out = tmp_path / "o"
    assert main(["verify", str(SCENARIOS / "reference.json"), "--check", check, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert text.startswith("PASS") and "FAIL" not in text
    assert json.loads((out / f"verify_{check}.json").read_text())["passed"] is True


def test_zero_tolerance_bound_reports_ratios(tmp_path):
    doc = json.loads((SCENARIOS / "reference.json").read_text())
    doc["checks"]["bound_tol"] = 0.0
    out = tmp_path / "o"
    main(["verify", write(tmp_path, doc), "--check", "eq3", "--out", str(out)])
    rep = json.loads((out / "verify_eq3.json").read_text())
    details = rep["checks"]["eq3"]["details"]
    assert len(details) == 3
    for t_rep in details.values():
        assert t_rep["tol"] == 0.0
        ratios = [r["ratio_exact"] for r in t_rep["records"]]
        assert len(ratios) == 10 and all(0 < x < 1 for x in ratios if x)
    for i in range(3):
        rows = read_csv(out / f"coefficient_bound_t{i}.csv")
        assert len(rows) == 10 and all(r["ratio_exact"] for r in rows)


def test_series_matches_product_and_growth(tmp_path, capsys):
    assert main(["series", "--p", "0,1,2", "--m", "4", "--n", "8", "--out", str(tmp_path)]) == 0
    rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
    assert (tmp_path / "series.csv").exists()
    by_p = {p: [r for r in rows if float(r["p"]) == p] for p in (0.0, 1.0, 2.0)}
    for r in by_p[2.0]:
        assert math.isclose(float(r["partial_sum"]), float(r["closed_form"]), rel_tol=1e-9)
    p1 = [float(r["partial_sum"]) for r in by_p[1.0]]
    assert all(b > a for a, b in zip(p1, p1[1:]))
    p0 = [float(r["partial_sum"]) for r in by_p[0.0]]
    assert p0 == [9.0 ** m for m in range(1, 5)]
    assert all(a >= b for a, b in zip(p0, p1))


def test_series_rows_total_shape_has_no_closed_form():
    rows = series_rows([2.0], 2, 3, Shape.TOTAL)
    assert all(r[-1] is None for r in rows)
    rows = series_rows([2.0], 2, 3, Shape.BOX)
    assert rows[-1][-1] == zeta_box_product(2.0, 2, 3)


def test_summability_csv_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["verify", str(SCENARIOS / "summability.json"), "--check", "summability", "--out", str(d)]) == 0
    assert (a / "summability.csv").read_bytes() == (b / "summability.csv").read_bytes()
    rows = read_csv(a / "summability.csv")
    assert any(r["decays"] == "true" for r in rows)
    assert np.all(np.diff([float(r["p"]) for r in rows]) > 0)
