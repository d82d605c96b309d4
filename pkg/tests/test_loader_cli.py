import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from condexp.cli import main
from condexp.loader import (
    ConfigError, load_space, parse_schedule, quantize, read_json, space_to_doc,
)

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

FOUR = {
    "schema": "1",
    "weights": [0.25, 0.25, 0.25, 0.25],
    "fields": {"G1": [[0, 1], [2, 3]], "G2": [[0, 2], [1, 3]]},
    "rvs": {"X0": [1.0, 2.0, 3.0, 4.0]},
    "schedule": {"kind": "periodic", "pattern": [1, 2]},
    "steps": 200,
    "x0": "X0",
}


@pytest.fixture
def write(tmp_path):
    def _write(doc, name="doc.json"):
        p = tmp_path / name
        p.write_text(doc if isinstance(doc, str) else json.dumps(doc))
        return str(p)
    return _write


@pytest.fixture(autouse=True)
def _no_out_env(monkeypatch):
    monkeypatch.delenv("CONDEXP_OUT", raising=False)


# -- loader --------------------------------------------------------------------

def test_load_round_trip():
    sd = load_space(FOUR)
    doc = space_to_doc(sd.space, sd.fields, sd.rvs)
    again = load_space(doc)
    assert again.fields == sd.fields
    np.testing.assert_array_equal(again.rvs["X0"], sd.rvs["X0"])


@pytest.mark.parametrize("patch, fragment", [
    ({"weights": [0.5, 0.6, 0.0, 0.0]}, "sum to"),
    ({"weights": "abc"}, "weights must be a list"),
    ({"fields": {"G": [[0, 1], [2, 7]]}}, "fields.G block 1: atom 7 outside 0..3"),
    ({"fields": {"G": [[0, 1], [1, 2, 3]]}}, "fields.G"),
    ({"fields": {"G": [[0, 1]]}}, "not covered"),
    ({"fields": {"G": [[0, 1.5], [2, 3]]}}, "entry 1"),
    ({"rvs": {"X": [1, 2, 3]}}, "rvs.X has 3 values, expected 4"),
    ({"rvs": {"X": [1, 2, "a", 4]}}, "rvs.X\\[2\\]"),
    ({"schema": "9"}, "unsupported schema"),
])
def test_loader_reports_coordinates(patch, fragment):
    with pytest.raises(ConfigError, match=fragment):
        doc = {**FOUR, **patch}
        from condexp.loader import check_schema
        check_schema(doc)
        load_space(doc)


def test_unknown_names_list_known():
    sd = load_space(FOUR)
    with pytest.raises(ConfigError, match="'Q' \\(known: X0\\)"):
        sd.rv("Q")
    with pytest.raises(ConfigError, match="known: G1, G2"):
        sd.field("H")


def test_malformed_json_position(write):
    with pytest.raises(ConfigError, match="line 2 column"):
        read_json(write('{"a": 1,\n  oops}'))


def test_quantize_merges_level_sets():
    v = np.array([0.1 + 0.2, 0.3, -0.0])
    q = quantize(v, 9)
    assert q[0] == q[1] and not np.signbit(q[2])
    assert quantize(v, None) is v


@pytest.mark.parametrize("cfg, fragment", [
    ({"kind": "periodic"}, "pattern is required"),
    ({"kind": "random"}, "seed is required"),
    ({"kind": "explicit"}, "sequence is required"),
    ({"kind": "spiral"}, "kind must be"),
    ({"kind": "periodic", "pattern": [1, 5]}, "schedule:"),
    ("periodic", "must be an object"),
])
def test_schedule_errors(cfg, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_schedule(cfg, 2)


def test_schedule_kinds():
    assert parse_schedule({"kind": "alternating"}, 3).indices(4).tolist() == [1, 2, 3, 1]
    s = parse_schedule({"kind": "random", "seed": 3, "distribution": [0.5, 0.5]}, 2)
    assert s.infinite_repeat


# -- CLI exit codes ------------------------------------------------------------

def test_cli_four_atom_demo(write, tmp_path, capsys):
    out = tmp_path / "traj.csv"
    assert main(["iterate", write(FOUR), "--out", str(out)]) == 0
    rows = out.read_text().strip().splitlines()
    assert rows[0] == "step,k_n,d1,d2,dinf,dist_to_limit,m4"
    assert float(rows[-1].split(",")[5]) <= 1e-10
    assert "converged=True" in capsys.readouterr().out


def test_cli_shipped_configs(tmp_path):
    assert main(["iterate", str(CONFIGS / "four_atom.json"), "--out", str(tmp_path / "a")]) == 0
    assert main(["iterate", str(CONFIGS / "chain.json"), "--config",
                 str(CONFIGS / "chain_run.json"), "--out", str(tmp_path / "b")]) == 0
    assert main(["gaussian", "iterate", str(CONFIGS / "gaussian_plane.json"),
                 "--out", str(tmp_path / "c")]) == 0
    assert main(["extend", str(CONFIGS / "split.json"), "--C", "0", "1", "2", "--verify",
                 "--out", str(tmp_path / "d")]) == 0


def test_cli_unknown_rv_exit_2(write, capsys):
    assert main(["iterate", write({**FOUR, "x0": "Nope"})]) == 2
    assert "'Nope'" in capsys.readouterr().err


def test_cli_config_errors_exit_2(write, tmp_path):
    assert main(["iterate", str(tmp_path / "missing.json")]) == 2
    assert main(["iterate", write("{not json")]) == 2
    assert main(["iterate", write({**FOUR, "steps": "many"})]) == 2
    assert main(["iterate", write({k: v for k, v in FOUR.items() if k != "schedule"})]) == 2
    assert main(["sampler", "--test", "ks"]) == 2  # seed is mandatory
    assert main(["bogus"]) == 2


def test_cli_not_converged_exit_1(write):
    assert main(["iterate", write({**FOUR, "steps": 1}), "--out", "/dev/null"]) == 1


def test_cli_limit_mismatch_exit_1():
    # converges, but the final distance to the predicted limit is round-off (~1e-15),
    # which a zero tolerance rejects
    args = ["iterate", str(CONFIGS / "chain.json"), "--config", str(CONFIGS / "chain_run.json"),
            "--out", "/dev/null"]
    assert main(args) == 0
    assert main(["--tol", "0"] + args) == 1


def test_cli_compat(write, capsys):
    X = [0, 0, 1, 1]
    doc = {"weights": [0.3, 0.2, 0.1, 0.4], "rvs": {"X": X, "Y": [0, 1, 0, 1]}}
    assert main(["compat", write(doc), "--x", "X", "--y", "Y"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["compatible"] is True
    assert rep["a"] == pytest.approx(0.4)
    assert main(["compat", write(doc), "--x", "X", "--y", "Z"]) == 2
    # a constant regressor is unusable input, not a failed identity
    assert main(["compat", write({"weights": [0.5, 0.5], "rvs": {"X": [1, 1], "Y": [0, 1]}}),
                 "--x", "X", "--y", "Y"]) == 2


def test_cli_compat_clause_failure_exit_1(write):
    from condexp.compat import disc_grid
    X, Y = disc_grid(20)
    doc = {"weights": X.space.weights.tolist(),
           "rvs": {"X": X.values.tolist(), "Y": (Y.values + 0.3 * X.values).tolist()}}
    path = write(doc)
    assert main(["--tol", "10", "compat", path, "--x", "X", "--y", "Y",
                 "--clause-tol", "1e-12", "--out", "/dev/null"]) == 1


def test_cli_counterexamples(tmp_path, capsys):
    out = tmp_path / "ind.json"
    assert main(["compat", "--counterexample", "indicator", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["weights"] == [0.2, 0.1, 0.2, 0.5]
    assert main(["compat", "--counterexample", "disc", "--N", "30",
                 "--out", str(tmp_path / "disc.json")]) == 0


def test_cli_gaussian_verbs(capsys):
    cfg = str(CONFIGS / "gaussian_plane.json")
    assert main(["gaussian", "angle", cfg]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["cosine"] == pytest.approx(np.sqrt(0.5))
    assert main(["gaussian", "project", cfg]) == 0
    assert main(["gaussian", "slowdown", "--d-max", "6"]) == 0


def test_cli_sampler_deterministic(capsys):
    args = ["sampler", "--channels", "3", "--n", "20000", "--seed", "42"]
    assert main(args) == 0
    first = capsys.readouterr().out
    assert main(args) == 0
    assert capsys.readouterr().out == first
    assert main(["sampler", "--enumerate", "10"]) == 0
    assert json.loads(capsys.readouterr().out)["discrepancy"] == 0


def test_cli_meet(capsys):
    assert main(["meet", str(CONFIGS / "chain.json"), "--x0", "X"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["meet"] == [[0, 1, 2, 3], [4]]
    assert main(["meet", str(CONFIGS / "chain.json"), "--no-complete"]) == 0
    assert json.loads(capsys.readouterr().out)["meet"] == [[0, 1, 2, 3, 4]]


def test_cli_extend_outputs_full_space(tmp_path):
    out = tmp_path / "ext.json"
    assert main(["extend", str(CONFIGS / "split.json"), "--C", "0", "1", "2",
                 "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["fields"]["G"] == [[0], [1, 2], [3, 4]]
    assert doc["rvs"]["X"] == [1.0, 5.0, -2.0, 0.0, 0.0]
    assert main(["extend", str(CONFIGS / "split.json"), "--C", "0", "9"]) == 2


def test_cli_out_env(tmp_path, monkeypatch, write):
    monkeypatch.setenv("CONDEXP_OUT", str(tmp_path / "art"))
    assert main(["iterate", write(FOUR)]) == 0
    assert (tmp_path / "art" / "iterate.csv").exists()


def test_module_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "condexp", "iterate", str(CONFIGS / "four_atom.json"),
                        "--out", str(tmp_path / "t.csv")], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert "limit_matched=True" in r.stdout
