import csv
import json
import math

import pytest
from numpy.testing import assert_allclose

from confspec.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, EXIT_VERIFY, main
from confspec.errors import ConfigError
from confspec.runner import I_K_LABEL, NOT_ATTAINED, ExperimentConfig, report_json, resolve_config, run_experiment


def _run(tmp_path, *argv, figures=False):
    args = list(argv) + ["--out", str(tmp_path)]
    if not figures:
        args.append("--no-figures")
    return main(args)


def _load(tmp_path, stem):
    doc = json.loads((tmp_path / f"{stem}.json").read_text())
    with open(tmp_path / f"{stem}.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return doc, rows


class TestCommands:
    def test_spectrum(self, tmp_path, capsys):
        assert _run(tmp_path, "spectrum", "--surface", "torus", "--res", "16", "--k", "4") == EXIT_OK
        doc, rows = _load(tmp_path, "spectrum")
        assert len(rows) == 5
        assert_allclose(float(rows[1]["oracle"]), 4 * math.pi**2)
        assert float(rows[1]["rel_error"]) < 0.05
        assert doc["results"]["spectrum"]["module"] == "fem"
        assert "exact" in capsys.readouterr().out
        with open(tmp_path / "spectrum_eigenvectors.csv", newline="") as fh:
            vecs = list(csv.reader(fh))
        assert vecs[0] == ["dof", "u0", "u1", "u2", "u3", "u4"]
        assert len(vecs) == 1 + doc["results"]["n_dofs"]

    def test_oracle(self, tmp_path):
        assert _run(tmp_path, "oracle", "--surface", "rp2", "--count", "3") == EXIT_OK
        _, rows = _load(tmp_path, "oracle")
        assert_allclose(float(rows[1]["lambda_bar"]), 12 * math.pi)
        assert rows[1]["multiplicity"] == "5"

    def test_gen_mesh(self, tmp_path):
        assert _run(tmp_path, "gen-mesh", "--surface", "klein", "--b", "2", "--res", "6") == EXIT_OK
        doc, rows = _load(tmp_path, "gen_mesh")
        assert doc["results"]["topology"]["euler_characteristic"] == 0
        assert doc["results"]["topology"]["orientable"] is False
        assert len(rows) == len(doc["results"]["mesh"]["vertices"])

    def test_maximize_sphere_k2_annotation(self, tmp_path):
        assert _run(tmp_path, "maximize", "--surface", "sphere", "--res", "2", "--k", "2", "--iters", "3") == EXIT_OK
        doc, rows = _load(tmp_path, "maximize")
        assert NOT_ATTAINED in doc["results"]["annotations"]
        assert {r["start"] for r in rows} == {"uniform", "two-bubble"}

    def test_limit(self, tmp_path):
        assert _run(tmp_path, "limit", "--spec", "klein-to-rp2", "--k", "3") == EXIT_OK
        doc, rows = _load(tmp_path, "limit")
        # RP^2 plus one projective-plane bubble per 1-sided collapse
        assert [r["exact"] for r in rows] == ["12π", "24π", "32π"]
        assert doc["results"]["values"][1]["assignment"] == {"RP2#0": 1, "RP2#1": 1}

    def test_limit_from_file_with_table(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({"orientable_components": [0, 0], "nonorientable_components": [], "two_sided_count": 1, "one_sided_count": 0}))
        assert _run(tmp_path, "limit", "--spec", str(spec), "--k", "2") == EXIT_OK
        _, rows = _load(tmp_path, "limit")
        assert [r["exact"] for r in rows] == ["8π", "16π"]

    def test_collar(self, tmp_path):
        assert _run(tmp_path, "collar", "--length", "1", "--sidedness", "1") == EXIT_OK
        doc, rows = _load(tmp_path, "collar")
        assert_allclose(doc["results"]["collar"]["width"], 2.215, atol=5e-4)
        assert_allclose(min(float(r["profile"]) for r in rows), 1 / math.pi, rtol=1e-12)

    def test_rho_delta_and_ball_removal(self, tmp_path):
        assert _run(tmp_path, "rho-delta", "--res", "2", "--deltas", "0.1", "0.01") == EXIT_OK
        _, rows = _load(tmp_path, "rho_delta")
        assert [float(r["delta"]) for r in rows] == [0.1, 0.01]
        assert _run(tmp_path, "ball-removal", "--res", "3", "--radii", "0.3", "0.1", "--centers", "[[0,0,1],[0,0,-1]]") == EXIT_OK
        _, rows = _load(tmp_path, "ball_removal")
        assert len(rows) == 2

    def test_sweep_rows_and_summary(self, tmp_path, capsys):
        code = _run(tmp_path, "sweep", "--family", "torus-pinch", "--schedule", "1", "2", "--res", "6", "--iters", "2", "--jobs", "1")
        assert code == EXIT_OK
        doc, rows = _load(tmp_path, "sweep")
        # one row per (b, start, iterate)
        expected = sum(len(tr["iterates"]) for m in doc["members"] for tr in m["traces"])
        assert len(rows) == expected
        assert {float(r["b"]) for r in rows} == {1.0, 2.0}
        s = doc["summary"]
        assert s[I_K_LABEL] == min(e for _, e in s["estimates"])
        assert s["limit"]["value"]["exact"] == "8π"
        assert I_K_LABEL in capsys.readouterr().out

    def test_empty_sweep(self, tmp_path):
        assert _run(tmp_path, "sweep", "--family", "klein-to-rp2", "--schedule", "--jobs", "1") == EXIT_OK
        doc, rows = _load(tmp_path, "sweep")
        assert rows == []
        assert (tmp_path / "sweep.csv").read_text().startswith("b,start,iterate")
        assert doc["summary"][I_K_LABEL] is None

    def test_figures_written(self, tmp_path):
        assert _run(tmp_path, "collar", "--length", "0.5", figures=True) == EXIT_OK
        assert (tmp_path / "collar_profile.png").stat().st_size > 0
        assert _run(tmp_path, "spectrum", "--surface", "sphere", "--res", "2", "--k", "3", figures=True) == EXIT_OK
        assert (tmp_path / "spectrum_spectrum.png").exists()


class TestExitCodes:
    @pytest.mark.parametrize("argv", [
        ["spectrum", "--res", "3"],
        ["spectrum", "--surface", "sphere", "--res", "9"],
        ["spectrum", "--surface", "torus", "--a", "0.7", "--b", "2"],
        ["spectrum", "--tol", "1e-2"],
        ["spectrum", "--surface", "cube"],
        ["spectrum", "--k", "two"],
        ["maximize", "--k", "0"],
        ["nonsense"],
    ])
    def test_config_errors(self, tmp_path, argv):
        assert _run(tmp_path, *argv) == EXIT_CONFIG

    def test_bad_config_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"resolution": 8}))
        assert _run(tmp_path, "spectrum", "--config", str(cfg)) == EXIT_CONFIG
        cfg.write_text(json.dumps({"k": "x"}))
        assert _run(tmp_path, "spectrum", "--config", str(cfg)) == EXIT_CONFIG

    def test_numeric_failure(self, tmp_path):
        assert _run(tmp_path, "collar", "--length", "-1") == EXIT_NUMERIC
        assert _run(tmp_path, "spectrum", "--res", "4", "--k", "40") == EXIT_NUMERIC

    def test_verify_failure_exit(self, tmp_path, capsys):
        assert main(["verify", "--only", "9", "--out", str(tmp_path)]) == EXIT_VERIFY
        assert json.loads((tmp_path / "verify.json").read_text())["failed"] == [9]
        assert "[FAIL] criterion  9" in capsys.readouterr().out

    def test_verify_pass_exit(self, tmp_path):
        assert main(["verify", "--only", "8"]) == EXIT_OK


class TestConfig:
    def test_flags_override_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"surface": "torus", "res": 8, "k": 2}))
        assert _run(tmp_path, "spectrum", "--config", str(cfg), "--k", "3") == EXIT_OK
        doc, rows = _load(tmp_path, "spectrum")
        assert doc["config"]["res"] == 8 and doc["config"]["k"] == 3
        assert len(rows) == 4

    def test_resolve_names_field(self):
        with pytest.raises(ConfigError) as info:
            resolve_config(ExperimentConfig(command="spectrum", tol=1.0))
        assert info.value.field == "tol"

    def test_defaults(self):
        c = resolve_config(ExperimentConfig(command="sweep", surface="torus"))
        assert c.family == "torus-pinch" and c.schedule == [1, 2, 4, 8, 16] and c.res == 24
        assert resolve_config(ExperimentConfig(command="spectrum", surface="sphere")).res == 4

    def test_seeded_runs_are_reproducible(self):
        cfg = ExperimentConfig(command="maximize", surface="klein", b=1.5, res=6, iters=3, seed=7)
        a, b = run_experiment(cfg), run_experiment(cfg)
        # wall-clock fields are the only expected differences
        for rep in (a, b):
            rep.timings = {}
            for tr in rep.results["traces"]:
                tr["seconds"] = 0.0
        assert report_json(a) == report_json(b)

    def test_json_round_trip(self, tmp_path):
        assert _run(tmp_path, "oracle", "--surface", "torus", "--b", "2") == EXIT_OK
        text = (tmp_path / "oracle.json").read_text()
        assert json.dumps(json.loads(text), indent=2, sort_keys=True, ensure_ascii=False) + "\n" == text
