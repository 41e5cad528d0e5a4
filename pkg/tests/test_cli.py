import json

import numpy as np
import pytest

from snds.checkpoint import load_checkpoint
from snds.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main
from snds.config import parse_config
from snds.experiment import OUTPUT_ROOT_ENV, run_experiment

BLOBS_RUN = ["--dataset", "blobs", "--set", "synthetic_n=120", "--set", "test_size=60", "--set", "init_labels=20",
             "--set", "budget=10", "--set", "batch_size=16", "--set", "width=4", "--set", "lr=0.05", "--epochs", "3",
             "--quiet"]


def run_cli(args, capsys):
    code = main(args)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def root(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "runs"))
    monkeypatch.chdir(tmp_path)
    return tmp_path


class TestBound:
    def test_prints_optimum(self, capsys):
        code, out, _ = run_cli(["bound", "--n", "2718.2818", "--dvc", "1000", "--delta", "0.05"], capsys)
        payload = json.loads(out)
        assert code == EXIT_OK and payload["optimal_dvc"] == pytest.approx(1000.0, abs=1e-3)
        assert payload["values"][0]["gap_term"] == pytest.approx((1000 - np.log(0.05)) / 2718.2818, rel=1e-6)

    def test_domain_error_is_runtime(self, capsys):
        code, _, err = run_cli(["bound", "--n", "-1"], capsys)
        assert code == EXIT_RUNTIME and json.loads(err)["error"] == "DomainError"


class TestRun:
    def test_fixed_depth_eight_on_blobs(self, root, capsys):
        code, _, err = run_cli(["run", *BLOBS_RUN, "--mode", "fixed", "--set", "depth.fixed_depth=8",
                                "--cycles", "1", "--output-dir", "fixed8"], capsys)
        assert code == EXIT_OK, err
        out = root / "runs" / "fixed8"
        summary = json.loads((out / "summary.json").read_text())
        assert summary["final_d_max"] == 8 and summary["layers"] == 8
        rows = (out / "cycles.csv").read_text().splitlines()
        assert rows[0] == "cycle,labeled_count,lambda,d_max,mode_depth,test_acc,seconds"
        assert {r.split(",")[3] for r in rows[1:]} == {"8"}
        echoed = parse_config((out / "config.ini").read_text())
        assert echoed.mode == "fixed" and echoed.fixed_depth == 8
        assert (out / "config.ini").read_text().startswith("# snds ")

    def test_rerun_identical_bytes(self, root, capsys):
        for name in ("a", "b"):
            assert run_cli(["run", *BLOBS_RUN, "--cycles", "2", "--strategy", "entropy", "--output-dir", name],
                           capsys)[0] == EXIT_OK
        for artifact in ("cycles.csv", "epochs.csv", "depth.csv", "checkpoint.npz"):
            assert (root / "runs/a" / artifact).read_bytes() == (root / "runs/b" / artifact).read_bytes()

    def test_no_writes_outside_output_dir(self, root, capsys):
        before = {p for p in root.rglob("*")}
        assert run_cli(["run", *BLOBS_RUN, "--output-dir", "only"], capsys)[0] == EXIT_OK
        created = {p for p in root.rglob("*")} - before
        assert created and all(p == root / "runs" or (root / "runs" / "only") in [p, *p.parents] for p in created)

    def test_config_file_and_flag_override(self, root, capsys):
        (root / "exp.ini").write_text("[experiment]\ndataset = blobs\nseed = 4\n[schedule]\ncycles = 3\n")
        code, _, _ = run_cli(["run", "--config", "exp.ini", *BLOBS_RUN[2:], "--cycles", "1", "--output-dir", "o"],
                             capsys)
        assert code == EXIT_OK
        cfg = parse_config((root / "runs/o/config.ini").read_text())
        assert (cfg.seed, cfg.cycles) == (4, 1)

    def test_config_error_exit_one(self, root, capsys):
        code, _, err = run_cli(["run", "--dataset", "blobs", "--set", "schedule.budget=-5"], capsys)
        payload = json.loads(err)
        assert code == EXIT_CONFIG and payload["key"] == "schedule.budget"

    def test_unknown_key_exit_one(self, root, capsys):
        code, _, err = run_cli(["run", "--dataset", "blobs", "--set", "optimizer.warmup=3"], capsys)
        assert code == EXIT_CONFIG and json.loads(err)["key"] == "optimizer.warmup"

    def test_bad_flag_exit_one(self, capsys):
        assert run_cli(["run", "--no-such-flag"], capsys)[0] == EXIT_CONFIG

    def test_runtime_error_exit_two(self, root, capsys):
        (root / "mnist").mkdir()
        code, _, err = run_cli(["run", "--dataset", "mnist", "--set", f"data_dir={root / 'mnist'}"], capsys)
        assert code == EXIT_RUNTIME and json.loads(err)["error"] == "FileNotFoundError"

    def test_partial_results_flushed(self, root, capsys, monkeypatch):
        import snds.active as active

        real = active.ActiveLearner.acquire
        calls = []

        def flaky(self, b):
            calls.append(b)
            if len(calls) == 2:
                raise RuntimeError("scorer died")
            return real(self, b)

        monkeypatch.setattr(active.ActiveLearner, "acquire", flaky)
        code, _, err = run_cli(["run", *BLOBS_RUN, "--cycles", "3", "--output-dir", "partial"], capsys)
        assert code == EXIT_RUNTIME and "cycle 2" in json.loads(err)["message"]
        rows = (root / "runs/partial/cycles.csv").read_text().splitlines()
        assert len(rows) == 2  # header + the completed first cycle


class TestInspect:
    def test_lists_tensors(self, tmp_path, capsys):
        cfg = parse_config("", {"dataset": "blobs", "synthetic_n": "60", "test_size": "30", "init_labels": "20",
                                "budget": "5", "epochs": "2", "width": "4", "strategy": "none"})
        run_experiment(cfg, tmp_path)
        code, out, _ = run_cli(["inspect-checkpoint", str(tmp_path / "checkpoint.npz")], capsys)
        meta = json.loads(out)
        net, q, _ = load_checkpoint(tmp_path / "checkpoint.npz")
        assert code == EXIT_OK and meta["layers"] == net.depth
        assert meta["parameters"] == sum(p.data.size for p in net.parameters())

    def test_missing_file_exit_two(self, tmp_path, capsys):
        assert run_cli(["inspect-checkpoint", str(tmp_path / "none.npz")], capsys)[0] == EXIT_RUNTIME
