import csv
import json
import subprocess
import sys

import pytest

from trustdsem.cli import EXIT_DATA, EXIT_NONCONVERGED, EXIT_OK, EXIT_USAGE, main
from trustdsem.pathmodel import read_panel_csv


def run(*argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


@pytest.fixture(scope="module")
def drone_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("drone")
    assert run("simulate", "--task", "drone", "--seed", 3, "--n-participants", 20, "--out", out) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def drone_fit(drone_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    assert run("fit", "--panel", drone_dir / "panel.csv", "--out", out) == EXIT_OK
    return out / "fit.txt"


class TestSimulate:
    def test_default_shapes(self, tmp_path):
        assert run("simulate", "--task", "drone", "--seed", 0, "--out", tmp_path / "d") == EXIT_OK
        p = read_panel_csv(tmp_path / "d" / "panel.csv")
        assert p.n_participants == 194 and set(p.lengths) == {30}
        assert run("simulate", "--task", "driving", "--seed", 0, "--out", tmp_path / "r") == EXIT_OK
        p = read_panel_csv(tmp_path / "r" / "panel.csv")
        assert p.n_participants == 49 and set(p.lengths) == {88}

    def test_byte_reproducible(self, tmp_path, drone_dir):
        run("simulate", "--task", "drone", "--seed", 3, "--n-participants", 20, "--out", tmp_path)
        assert (tmp_path / "panel.csv").read_bytes() == (drone_dir / "panel.csv").read_bytes()
        assert (tmp_path / "manifest.json").read_text().replace(str(tmp_path), "X") == \
            (drone_dir / "manifest.json").read_text().replace(str(drone_dir), "X")

    def test_config_file_and_flags(self, tmp_path):
        cfg = tmp_path / "cohort.cfg"
        cfg.write_text("# small cohort\nn_participants = 4\nphases = 5:0.9,5:0.3\nlearning_rate = 0.5\n")
        assert run("simulate", "--seed", 1, "--config", cfg, "--margin", 0.2, "--out", tmp_path / "o") == EXIT_OK
        p = read_panel_csv(tmp_path / "o" / "panel.csv")
        assert p.n_participants == 4 and set(p.lengths) == {10}
        man = json.loads((tmp_path / "o" / "manifest.json").read_text())
        assert man["resolved"]["agent"] == {"cue_rate": 0.7, "decision_noise": 0.05, "label_margin": 0.2,
                                            "learning_rate": 0.5}
        assert "config" in man["inputs"]

    def test_bad_config_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("colour = blue\n")
        assert run("simulate", "--seed", 1, "--config", cfg, "--out", tmp_path) == EXIT_USAGE


class TestManifest:
    def test_contents(self, drone_dir):
        man = json.loads((drone_dir / "manifest.json").read_text())
        assert man["command"] == "simulate" and man["exit_code"] == 0
        assert set(man["outputs"]) == {"panel.csv"}
        assert man["args"]["seed"] == 3
        text = (drone_dir / "manifest.json").read_text()
        assert text == json.dumps(man, indent=2, sort_keys=True) + "\n"

    def test_rerun_reproduces(self, drone_dir, tmp_path, capsys):
        assert run("--manifest", drone_dir / "manifest.json", "--out", tmp_path) == EXIT_OK
        assert "byte-for-byte" in capsys.readouterr().out
        assert (tmp_path / "panel.csv").read_bytes() == (drone_dir / "panel.csv").read_bytes()

    def test_rerun_detects_drift(self, drone_dir, tmp_path):
        man = json.loads((drone_dir / "manifest.json").read_text())
        man["outputs"]["panel.csv"] = "0" * 64
        path = tmp_path / "m.json"
        path.write_text(json.dumps(man))
        assert run("--manifest", path, "--out", tmp_path / "o") == EXIT_DATA

    def test_fit_rerun(self, drone_fit, tmp_path):
        assert run("--manifest", drone_fit.parent / "manifest.json", "--out", tmp_path) == EXIT_OK


class TestFitAndCompare:
    def test_fit_written(self, drone_fit):
        text = drone_fit.read_text()
        assert "[fit]" in text and "converged=true" in text

    def test_nonconverged_exit(self, drone_dir, tmp_path):
        assert run("fit", "--panel", drone_dir / "panel.csv", "--max-iter", 2, "--out", tmp_path) == EXIT_NONCONVERGED
        assert (tmp_path / "fit.txt").is_file()

    def test_compare_drone(self, drone_dir, drone_fit, tmp_path, capsys):
        assert run("compare", "--panel", drone_dir / "panel.csv", "--fit", drone_fit, "--out", tmp_path) == EXIT_OK
        rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
        assert [r["model"] for r in rows] == ["PM", "AR(1)", "ARMA(1,1)", "SARIMA(1,0,1)[15]"]
        assert "ANOVA" in capsys.readouterr().out
        man = json.loads((tmp_path / "manifest.json").read_text())
        assert man["resolved"]["eval_start"] == 15
        assert set(man["outputs"]) == {"summary.csv", "curves.csv", "stats.csv", "participants.csv", "summary.txt"}

    def test_compare_driving_season(self, tmp_path):
        d = tmp_path / "sim"
        run("simulate", "--task", "driving", "--seed", 2, "--n-participants", 6, "--out", d)
        run("fit", "--task", "driving", "--panel", d / "panel.csv", "--max-iter", 40, "--out", tmp_path / "f")
        assert run("compare", "--task", "driving", "--panel", d / "panel.csv", "--fit", tmp_path / "f" / "fit.txt",
                   "--binary", "--out", tmp_path / "c") == EXIT_OK
        rows = list(csv.DictReader(open(tmp_path / "c" / "summary.csv")))
        assert rows[-1]["model"] == "SARIMA(1,0,1)[4]"
        man = json.loads((tmp_path / "c" / "manifest.json").read_text())
        assert man["resolved"]["eval_start"] == 4 and man["resolved"]["compare"]["binary"] is True


class TestSearch:
    def test_eta1_report(self, drone_dir, tmp_path, capsys):
        assert run("search", "--panel", drone_dir / "panel.csv", "--eta", 1, "--max-iter", 40,
                   "--out", tmp_path) == EXIT_OK
        rows = list(csv.DictReader(open(tmp_path / "search.csv")))
        assert len(rows) == 1 and rows[0]["lag_subset"] == "1" and rows[0]["criterion"] == "aic"
        assert (tmp_path / "best_fit.txt").is_file()
        assert "best lag subset {1}" in capsys.readouterr().out

    def test_eta_too_large(self, drone_dir, tmp_path):
        assert run("search", "--panel", drone_dir / "panel.csv", "--eta", 30, "--out", tmp_path) == EXIT_USAGE


class TestExitCodes:
    def test_usage(self, tmp_path):
        assert run() == EXIT_USAGE
        assert run("simulate", "--out", tmp_path) == EXIT_USAGE
        assert run("fit", "--panel", "x.csv", "--out", tmp_path, "--trust-lags", "a") == EXIT_USAGE

    def test_missing_panel(self, tmp_path):
        assert run("fit", "--panel", tmp_path / "none.csv", "--out", tmp_path) == EXIT_DATA

    def test_malformed_panel(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text("a,b\n1,2\n")
        assert run("fit", "--panel", bad, "--out", tmp_path / "o") == EXIT_DATA

    def test_malformed_fit(self, drone_dir, tmp_path):
        bad = tmp_path / "fit.txt"
        bad.write_text("nonsense\n")
        assert run("compare", "--panel", drone_dir / "panel.csv", "--fit", bad, "--out", tmp_path / "o") == EXIT_DATA

    def test_entry_point(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "trustdsem.cli", "simulate", "--seed", "1", "--n-participants",
                              "2", "--out", str(tmp_path)], capture_output=True, text=True)
        assert res.returncode == 0 and (tmp_path / "panel.csv").is_file()
        res = subprocess.run([sys.executable, "-m", "trustdsem.cli", "bogus"], capture_output=True, text=True)
        assert res.returncode == EXIT_USAGE


class TestWorkedExamples:
    def test_one_row_panel(self, drone_dir, tmp_path):
        lines = (drone_dir / "panel.csv").read_text().splitlines()
        (tmp_path / "one.csv").write_text("\n".join(lines[:2]) + "\n")
        assert run("fit", "--panel", tmp_path / "one.csv", "--out", tmp_path / "o") != EXIT_OK

    def test_fit_twice_identical(self, drone_dir, drone_fit, tmp_path):
        assert run("fit", "--panel", drone_dir / "panel.csv", "--out", tmp_path) == EXIT_OK
        assert (tmp_path / "fit.txt").read_bytes() == drone_fit.read_bytes()

    def test_missing_fit_file(self, drone_dir, tmp_path, capsys):
        code = run("compare", "--panel", drone_dir / "panel.csv", "--fit", tmp_path / "nope.txt", "--out", tmp_path)
        assert code == EXIT_DATA
        assert "fit file not found" in capsys.readouterr().err
