import csv
import hashlib
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from durational import __version__
from durational.cli import THREADS_ENV, load_config, main, resolve_threads
from durational.errors import ConfigError
from durational.events import parse_events

DATA = Path(__file__).parent / "data"
CONFIGS = Path(__file__).parent.parent / "configs"

TWO_ACTORS = """seed = 1
[model]
incidence = []
duration = []
[simulate]
generator = "explicit"
n_actors = 2
window_end = 20.0
"""


def digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def fixture_dir(tmp_path):
    """Copy of the fit fixture so outputs stay out of the source tree."""
    shutil.copytree(DATA / "fixture", tmp_path / "fixture")
    shutil.copy(DATA / "fixture_fit.toml", tmp_path / "fit.toml")
    return tmp_path


class TestSimulate:
    def test_two_actors(self, tmp_path):
        (tmp_path / "sim.toml").write_text(TWO_ACTORS)
        assert main(["simulate", str(tmp_path / "sim.toml"), "--out", str(tmp_path / "o")]) == 0
        s = parse_events(tmp_path / "o" / "events.csv", window_end=20.0, n_actors=2, anchor=False)
        assert s.n_events > 0 and all(e.pair == (0, 1) for e in s.events)

    def test_seed_repeat_and_provenance(self, tmp_path):
        (tmp_path / "sim.toml").write_text(TWO_ACTORS)
        hashes = []
        for k in range(2):
            out = tmp_path / f"o{k}"
            assert main(["simulate", str(tmp_path / "sim.toml"), "--out", str(out)]) == 0
            hashes.append(digest(out / "events.csv"))
        assert hashes[0] == hashes[1]
        side = json.loads((tmp_path / "o0" / "provenance.json").read_text())
        assert side["seed"] == 1 and side["version"] == __version__
        assert len(side["config_sha256"]) == 64
        main(["simulate", str(tmp_path / "sim.toml"), "--out", str(tmp_path / "o2"),
              "--set", "seed=2"])
        assert digest(tmp_path / "o2" / "events.csv") != hashes[0]

    def test_fixture_reproduced(self, tmp_path):
        shutil.copy(DATA / "fixture_simulate.toml", tmp_path / "sim.toml")
        assert main(["simulate", str(tmp_path / "sim.toml")]) == 0
        for name in ("events.csv", "covariates.csv"):
            assert digest(tmp_path / "fixture" / name) == digest(DATA / "fixture" / name)

    def test_study_pipeline(self, tmp_path):
        out = tmp_path / "study"
        assert main(["simulate", str(CONFIGS / "study1_simulate.toml"), "--out", str(out),
                     "--set", "simulate.n_actors=30"]) == 0
        assert main(["fit", str(CONFIGS / "study1_fit.toml"), "--out", str(tmp_path / "fit"),
                     "--set", f'data.events="{out / "events.csv"}"',
                     "--set", f'data.covariates=["{out / "covariates.csv"}"]',
                     "--set", "data.n_actors=30"]) == 0
        stats = [r["stat"] for r in read_csv(tmp_path / "fit" / "coefficients.csv")]
        assert stats == ["ccp", "absdiff:x1", "match:x2", "ni", "absdiff:x1", "match:x2"]


class TestFit:
    def test_golden_coefficients(self, fixture_dir):
        assert main(["fit", str(fixture_dir / "fit.toml")]) == 0
        got = read_csv(fixture_dir / "fit_out" / "coefficients.csv")
        gold = read_csv(DATA / "golden" / "coefficients.csv")
        assert [(r["submodel"], r["stat"]) for r in got] == \
            [(r["submodel"], r["stat"]) for r in gold]
        for a, b in zip(got, gold):
            assert float(a["alpha"]) == pytest.approx(float(b["alpha"]), abs=1e-6)
            assert float(a["se"]) == pytest.approx(float(b["se"]), rel=1e-6)

    def test_outputs(self, fixture_dir):
        assert main(["fit", str(fixture_dir / "fit.toml")]) == 0
        out = fixture_dir / "fit_out"
        base = read_csv(out / "baseline.csv")
        assert len(base) == 6 and {r["submodel"] for r in base} == {"incidence", "duration"}
        pop = read_csv(out / "popularity.csv")
        assert len(pop) == 12 and set(pop[0]) == {"actor", "beta_incidence", "beta_duration"}
        conv = read_csv(out / "convergence.csv")
        assert conv[-1]["converged"] == "1"
        gold = read_csv(DATA / "golden" / "baseline.csv")
        for a, b in zip(base, gold):
            assert float(a["gamma"]) == pytest.approx(float(b["gamma"]), abs=1e-5)

    def test_newton_engine(self, fixture_dir):
        cfg = str(fixture_dir / "fit.toml")
        assert main(["fit", cfg, "--out", str(fixture_dir / "bc")]) == 0
        assert main(["fit", cfg, "--set", 'fit.engine="newton"',
                     "--out", str(fixture_dir / "nr")]) == 0
        for a, b in zip(read_csv(fixture_dir / "bc" / "coefficients.csv"),
                        read_csv(fixture_dir / "nr" / "coefficients.csv")):
            assert abs(float(a["alpha"]) - float(b["alpha"])) <= 1e-3

    def test_rem_mode(self, tmp_path):
        rows = ["i,j,begin,end"] + [f"{i},{j},{t},{t}" for i, j, t in
                                    [(0, 1, 1.0), (1, 2, 2.0), (0, 2, 3.5), (0, 1, 4.0),
                                     (2, 3, 5.0), (0, 3, 6.5), (1, 3, 7.0), (0, 1, 8.0)]]
        (tmp_path / "ev.csv").write_text("\n".join(rows) + "\n")
        (tmp_path / "rem.toml").write_text(
            'output_dir = "out"\n[data]\nevents = "ev.csv"\nwindow_end = 10.0\n'
            'anchor = false\n[model]\nincidence = ["ni"]\nrem = true\n')
        assert main(["fit", str(tmp_path / "rem.toml")]) == 0
        coef = read_csv(tmp_path / "out" / "coefficients.csv")
        assert {r["submodel"] for r in coef} == {"incidence"}
        assert set(read_csv(tmp_path / "out" / "popularity.csv")[0]) == {"actor", "beta_incidence"}
        assert {r["submodel"] for r in read_csv(tmp_path / "out" / "baseline.csv")} == \
            {"incidence"}


class TestSelect:
    def write(self, tmp, body):
        shutil.copytree(DATA / "fixture", tmp / "fixture")
        text = (DATA / "fixture_fit.toml").read_text().split("[model]")[0]
        (tmp / "sel.toml").write_text(text + '[model.change_points]\nrule = "uniform"\n'
                                      'count = 3\n\n[select]\n' + body)
        return str(tmp / "sel.toml")

    def test_one_candidate(self, tmp_path):
        cfg = self.write(tmp_path, 'incidence_base = ["gcp"]\nincidence_candidates = '
                         '["absdiff:x"]\n')
        assert main(["select", cfg]) == 0
        rows = read_csv(tmp_path / "fit_out" / "selection.csv")
        inc = [r for r in rows if r["submodel"] == "incidence"]
        assert len(inc) == 2 and inc[1]["accepted"] == "1"

    def test_empty_candidates(self, tmp_path):
        cfg = self.write(tmp_path, 'incidence_base = ["gcp"]\n')
        assert main(["select", cfg]) == 0
        rows = read_csv(tmp_path / "fit_out" / "selection.csv")
        assert [(r["submodel"], r["stats"]) for r in rows] == [("incidence", "gcp"),
                                                               ("duration", "")]


class TestBench:
    def test_speed_smoke(self, tmp_path):
        (tmp_path / "b.toml").write_text(
            'seed = 1\noutput_dir = "out"\n[bench]\nn_grid = [25]\nguard_grid = [300]\n'
            'window_end = 2000.0\nmemory_limit_gb = 0.02\n')
        assert main(["bench", "speed", str(tmp_path / "b.toml")]) == 0
        rows = read_csv(tmp_path / "out" / "benchmark.csv")
        first = list(rows[0])
        assert first[:6] == ["n_actors", "method", "wall_seconds", "peak_bytes", "status",
                             "nr_estimate_bytes"]
        assert [(r["n_actors"], r["method"], r["status"]) for r in rows] == [
            ("25", "block", "ok"), ("25", "newton", "ok"),
            ("300", "block", "skipped"), ("300", "newton", "NRInfeasible")]

    def test_infeasible_exit_zero(self, tmp_path):
        (tmp_path / "b.toml").write_text(
            'output_dir = "out"\n[bench]\nn_grid = [25]\nguard_grid = []\n'
            'window_end = 2000.0\nmemory_limit_gb = 1e-6\n')
        assert main(["bench", "speed", str(tmp_path / "b.toml")]) == 0
        rows = read_csv(tmp_path / "out" / "benchmark.csv")
        assert rows[1]["status"] == "NRInfeasible" and rows[0]["status"] == "ok"


class TestConfig:
    @pytest.mark.parametrize("old,new", [
        ("output_dir", "bogus = 1\noutput_dir"),
        ("max_iter = 100000", "max_iter = 1.5"),
        ("tol_param = 1e-9", "tol_param = -1.0"),
        ('"gcp"', '"triangles"'),
        ('rule = "uniform"', 'rule = "hourly"'),
    ])
    def test_rejected(self, fixture_dir, old, new):
        text = (fixture_dir / "fit.toml").read_text()
        assert old in text
        (fixture_dir / "bad.toml").write_text(text.replace(old, new, 1))
        assert main(["fit", str(fixture_dir / "bad.toml")]) == 2

    def test_unknown_nested_key(self, tmp_path):
        (tmp_path / "c.toml").write_text("[fit]\nspeed = 3\n")
        with pytest.raises(ConfigError, match="fit.speed"):
            load_config(tmp_path / "c.toml")

    def test_missing_events(self, tmp_path):
        (tmp_path / "c.toml").write_text('[data]\nevents = "nope.csv"\n')
        assert main(["fit", str(tmp_path / "c.toml")]) == 2

    def test_overrides(self, tmp_path):
        (tmp_path / "c.toml").write_text("seed = 1\n[fit]\nmax_iter = 5\n")
        tree = load_config(tmp_path / "c.toml", ["fit.max_iter=9", "seed=4", "output_dir=x"])
        assert tree["fit"]["max_iter"] == 9 and tree["seed"] == 4 and tree["output_dir"] == "x"
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.toml", ["fit.max_iter"])

    def test_threads(self, monkeypatch):
        monkeypatch.delenv(THREADS_ENV, raising=False)
        assert resolve_threads({}) == 1
        monkeypatch.setenv(THREADS_ENV, "3")
        assert resolve_threads({}) == 3
        assert resolve_threads({"threads": 2}) == 2


def test_console_script(tmp_path):
    (tmp_path / "sim.toml").write_text(TWO_ACTORS)
    exe = shutil.which("durational")
    cmd = [exe] if exe else [sys.executable, "-m", "durational.cli"]
    res = subprocess.run(cmd + ["simulate", str(tmp_path / "sim.toml"), "--out",
                                str(tmp_path / "o")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert "interactions among N=2 actors" in res.stdout
