import json
import subprocess
import sys

import numpy as np
import pytest

from k2ie.cli import ExperimentConfig, main, run_benchmark
from k2ie.domain import Domain, load_domain, save_domain
from k2ie.estimators import load_model, save_model
from k2ie.fileio import load_events, save_events
from k2ie.selection import CVPlan

FAST_CV = ["--beta-grid", "1,10", "--gamma-grid", "1,10", "--folds", "2"]


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def simulated(tmp_path):
    out = tmp_path / "sim"
    assert run("simulate", "--dataset", "1d_1", "--trials", 2, "--root-seed", 1, "--out", out) == 0
    return out


def fit(tmp_path, simulated, estimator, *extra):
    path = tmp_path / f"{estimator}.json"
    code = run(
        "fit", "--events", simulated / "events_000.csv", "--domain", simulated / "domain_000.json",
        "--estimator", estimator, "--M", 50, "--out", path, *extra,
    )
    assert code == 0
    return path


class TestSimulate:
    def test_files(self, simulated):
        names = sorted(p.name for p in simulated.iterdir())
        assert names == ["domain_000.json", "domain_001.json", "events_000.csv", "events_001.csv"]
        x = load_events(simulated / "events_000.csv", dim=1)
        assert 20 <= len(x) <= 80
        assert load_domain(simulated / "domain_000.json") == Domain.box([0.0], [50.0])

    def test_byte_identical(self, simulated, tmp_path):
        again = tmp_path / "again"
        run("simulate", "--dataset", "1d_1", "--trials", 2, "--root-seed", 1, "--out", again)
        for name in ("events_000.csv", "events_001.csv"):
            assert (simulated / name).read_bytes() == (again / name).read_bytes()

    def test_custom_lambda_max(self, tmp_path):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({
            "kind": "custom",
            "params": {"value": 2.0, "lambda_max": 8.0},
            "domain": {"dim": 1, "rects": [{"lo": [0.0], "hi": [100.0]}]},
        }))
        out = tmp_path / "c"
        assert run("simulate", "--intensity", spec, "--trials", 1, "--out", out) == 0
        n = len(load_events(out / "events_000.csv"))
        assert abs(n - 200) < 5 * np.sqrt(200)

    def test_bad_bound(self, tmp_path, capsys):
        spec = tmp_path / "spec.json"
        spec.write_text(json.dumps({
            "kind": "custom",
            "params": {"value": 2.0, "lambda_max": 1.0},
            "domain": {"dim": 1, "rects": [{"lo": [0.0], "hi": [1.0]}]},
        }))
        assert run("simulate", "--intensity", spec, "--out", tmp_path / "x") == 2
        assert capsys.readouterr().err.startswith("error: config:")


class TestCvAndFit:
    def test_cv_then_fit(self, simulated, tmp_path):
        cv = tmp_path / "cv.json"
        code = run(
            "cv", "--events", simulated / "events_000.csv", "--domain", simulated / "domain_000.json",
            "--estimator", "k2ie", "--M", 50, "--out", cv, *FAST_CV,
        )
        assert code == 0
        res = json.loads(cv.read_text())
        assert len(res["mean_loss"]) == 2 and res["plan"]["folds"] == 2
        model = load_model(fit(tmp_path, simulated, "k2ie", "--cv-result", cv))
        np.testing.assert_allclose(model.ek.fmap.params.beta, res["selected"]["beta"])

    def test_single_cell(self, simulated, tmp_path, capsys):
        run(
            "cv", "--events", simulated / "events_000.csv", "--domain", simulated / "domain_000.json",
            "--estimator", "kie", "--beta-grid", "3", "--folds", "2",
        )
        res = json.loads(capsys.readouterr().out)
        assert res["selected"]["beta_index"] == 0 and res["selected"]["gamma"] is None

    @pytest.mark.parametrize("estimator", ["k2ie", "kie", "fie"])
    def test_round_trip(self, simulated, tmp_path, capsys, estimator):
        extra = ["--beta", "0.1"] + ([] if estimator == "kie" else ["--gamma", "2"])
        path = fit(tmp_path, simulated, estimator, *extra)
        report = json.loads(capsys.readouterr().out)
        assert report["cpu_seconds"] > 0
        model = load_model(path)
        save_model(model, tmp_path / "copy.json")
        again = load_model(tmp_path / "copy.json")
        x = np.linspace(0, 50, 101)[:, None]
        np.testing.assert_allclose(model.intensity(x), again.intensity(x), rtol=1e-10, atol=1e-12)

    def test_fit_matches_library(self, simulated, tmp_path):
        from k2ie.estimators import fit_k2ie
        from k2ie.features import KernelParams

        path = fit(tmp_path, simulated, "k2ie", "--beta", "0.1", "--gamma", "2")
        x = load_events(simulated / "events_000.csv")
        ref = fit_k2ie(x, Domain.box([0.0], [50.0]), KernelParams([0.1]), 2.0, M=50)
        grid = np.linspace(0, 50, 77)[:, None]
        np.testing.assert_allclose(load_model(path).intensity(grid), ref.intensity(grid), rtol=1e-10, atol=1e-12)

    def test_missing_gamma(self, simulated, tmp_path):
        code = run(
            "fit", "--events", simulated / "events_000.csv", "--domain", simulated / "domain_000.json",
            "--estimator", "k2ie", "--beta", "0.1", "--out", tmp_path / "m.json",
        )
        assert code == 2


class TestEval:
    def test_truth_metrics(self, simulated, tmp_path, capsys):
        path = fit(tmp_path, simulated, "k2ie", "--beta", "0.1", "--gamma", "2")
        capsys.readouterr()
        truth = tmp_path / "truth.json"
        truth.write_text(json.dumps({"kind": "analytic_1d_1", "params": {}}))
        prof = tmp_path / "profile.csv"
        assert run("eval", "--model", path, "--truth", truth, "--profile", prof, "--grid", 200) == 0
        out = json.loads(capsys.readouterr().out)
        assert out["L2"] >= 0 and out["Labs"] <= np.sqrt(out["L2"])
        assert "negativity_ratio" in out
        lines = prof.read_text().splitlines()
        assert lines[0] == "x1,truth,estimate" and len(lines) == 201

    def test_constant_model_zero_error(self, tmp_path, capsys):
        # one event at the centre of [-2, 2] with a single zero frequency gives 2/9 everywhere
        from k2ie.equivalent import build_equivalent_kernel
        from k2ie.estimators import fit_k2ie
        from k2ie.features import FeatureMap, KernelParams

        dom = Domain.box([-2.0], [2.0])
        ek = build_equivalent_kernel(FeatureMap.from_frequencies(KernelParams([1.0]), [[0.0]]), dom, 2.0)
        save_model(fit_k2ie([[0.0]], dom, ek.fmap.params, 2.0, ek=ek), tmp_path / "m.json")
        truth = tmp_path / "t.json"
        truth.write_text(json.dumps({"kind": "constant", "params": {"value": 2 / 9}, "domain": dom.to_dict()}))
        run("eval", "--model", tmp_path / "m.json", "--truth", truth)
        out = json.loads(capsys.readouterr().out)
        assert out["L2"] == pytest.approx(0.0, abs=1e-24)

    def test_heldout_losses(self, simulated, tmp_path, capsys):
        path = fit(tmp_path, simulated, "fie", "--beta", "0.1", "--gamma", "2")
        capsys.readouterr()
        run("eval", "--model", path, "--test", simulated / "events_001.csv", "--cells-per-axis", 10)
        out = json.loads(capsys.readouterr().out)
        assert np.isfinite(out["L_s"]) and np.isfinite(out["L_c"])
        assert "negativity_ratio" not in out

    def test_dimension_mismatch(self, simulated, tmp_path):
        path = fit(tmp_path, simulated, "k2ie", "--beta", "0.1", "--gamma", "2")
        truth = tmp_path / "t.json"
        truth.write_text(json.dumps({"kind": "gp_cox_2d", "params": {}, "seed": 1}))
        assert run("eval", "--model", path, "--truth", truth) == 3


class TestErrors:
    def test_unknown_subcommand(self, capsys):
        assert run("explode") == 2
        err = capsys.readouterr().err
        assert err.startswith("error: config:") and err.count("\n") == 1

    def test_missing_file(self, tmp_path):
        assert run("fit", "--events", tmp_path / "no.csv", "--domain", tmp_path / "no.json",
                   "--estimator", "kie", "--beta", "1", "--out", tmp_path / "m.json") == 3

    def test_malformed_events(self, tmp_path, capsys):
        save_domain(Domain.box([0.0], [1.0]), tmp_path / "d.json")
        (tmp_path / "e.csv").write_text("x1\n0.5\nabc\n")
        code = run("fit", "--events", tmp_path / "e.csv", "--domain", tmp_path / "d.json",
                   "--estimator", "kie", "--beta", "1", "--out", tmp_path / "m.json")
        assert code == 3 and capsys.readouterr().err.startswith("error: data:")

    def test_events_outside_domain(self, tmp_path):
        save_domain(Domain.box([0.0], [1.0]), tmp_path / "d.json")
        save_events(tmp_path / "e.csv", np.array([[0.5], [2.0]]))
        code = run("fit", "--events", tmp_path / "e.csv", "--domain", tmp_path / "d.json",
                   "--estimator", "kie", "--beta", "1", "--out", tmp_path / "m.json")
        assert code == 3

    def test_bad_gamma_grid(self, tmp_path):
        save_domain(Domain.box([0.0], [1.0]), tmp_path / "d.json")
        save_events(tmp_path / "e.csv", np.array([[0.5]]))
        assert run("cv", "--events", tmp_path / "e.csv", "--domain", tmp_path / "d.json",
                   "--estimator", "k2ie", "--gamma-grid", "-1") == 2

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"dataset": "1d_1", "colour": "red"}))
        assert run("benchmark", "--config", cfg, "--out", tmp_path / "b") == 2

    def test_console_script(self):
        proc = subprocess.run([sys.executable, "-m", "k2ie.cli", "fit"], capture_output=True, text=True)
        assert proc.returncode == 2 and proc.stderr.startswith("error: config:")


def small_config(out, **kw):
    base = dict(
        dataset="1d_2",
        estimators=("kie", "k2ie"),
        trials=3,
        M=50,
        cv=CVPlan(beta_grid=(1.0, 10.0), gamma_grid=(1.0, 10.0), folds=2),
        timing=False,
        out=str(out),
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestBenchmark:
    def _run(self, tmp_path, name, *extra):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config(tmp_path / name).to_dict()))
        assert run("benchmark", "--config", cfg, "--out", tmp_path / name, "--no-timing", "--quiet", *extra) == 0
        return tmp_path / name

    def test_outputs(self, tmp_path):
        out = self._run(tmp_path, "a")
        rows = (out / "results.csv").read_text().splitlines()
        assert rows[0] == "estimator,dataset,trial,L2,Labs,cpu_seconds,negativity_ratio,L_s,L_c"
        assert len(rows) == 1 + 3 * 2
        summary = json.loads((out / "summary.json").read_text())["summary"]["1d_2"]
        assert "rho" in summary["k2ie"] and "rho" not in summary["kie"]

    def test_byte_identical(self, tmp_path):
        a, b = self._run(tmp_path, "a"), self._run(tmp_path, "b")
        assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()

    def test_parallel_equals_serial(self, tmp_path, monkeypatch):
        cfg = small_config(tmp_path)
        monkeypatch.setenv("K2IE_THREADS", "1")
        serial = [r.row() for r in run_benchmark(cfg)]
        monkeypatch.setenv("K2IE_THREADS", "3")
        parallel = [r.row() for r in run_benchmark(cfg)]
        assert serial == parallel

    def test_sweep_tags(self, tmp_path):
        cfg = small_config(tmp_path, estimators=("k2ie",), trials=1, sweep_M=(20, 100))
        tags = [r.dataset for r in run_benchmark(cfg)]
        assert tags == ["1d_2/2M=20", "1d_2/2M=100"]

    def test_timing_column(self, tmp_path):
        recs = run_benchmark(small_config(tmp_path, trials=1, timing=True))
        assert all(r.cpu_seconds > 0 for r in recs)

    def test_odd_sweep_rejected(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps(small_config(tmp_path).to_dict()))
        assert run("benchmark", "--config", cfg, "--sweep-M", "21") == 2
