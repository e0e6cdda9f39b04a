import csv
import hashlib
import json
import os

import numpy as np
import pytest

from depthflow.cli import main

TINY = {
    "seed": 11,
    "dtype": "float32",
    "mixture": {"components": 4, "radius": 1.0, "scale": 0.2, "dim": 2},
    "teacher_model": {"hidden": 8, "heads": 2, "mlp_ratio": 2, "depth": 2, "cond_dim": 8},
    "student_model": {"hidden": 8, "heads": 2, "mlp_ratio": 2, "steps": 2, "cond_dim": 8},
    "base_train": {"steps": 12, "batch": 16, "lr": 1e-3, "warmup": 4, "log_every": 5},
    "freeflow_train": {"steps": 12, "batch": 8, "lr": 1e-3, "warmup": 4, "log_every": 5},
    "slt_train": {"steps": 12, "batch": 8, "lr": 1e-3, "warmup": 4, "log_every": 5},
    "scout": {"candidates": 9, "scorer": "mixture_logpdf", "class_label": 1, "guidance": 1.5},
    "bench": {"repeats": 30, "warmup": 1, "candidates": 5},
}


def write_config(tmp_path, **overrides):
    data = json.loads(json.dumps(TINY))
    data["out_dir"] = str(tmp_path / "out")
    data.update(overrides)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(data))
    return str(path), data["out_dir"]


def read_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if not (r and r[0].startswith("#"))]
    return rows[0], rows[1:]


def sha(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full pipeline once at a toy size; commands depend on it."""
    tmp_path = tmp_path_factory.mktemp("cli")
    config, out = write_config(tmp_path)
    for command in ("train-base", "distill-freeflow", "distill-slt"):
        assert main([command, "--config", config]) == 0
    return config, out


class TestTrainBase:
    def test_missing_config_file(self, tmp_path, capsys):
        rc = main(["train-base", "--config", str(tmp_path / "missing.json")])
        assert rc == 2
        assert "missing.json" in capsys.readouterr().err

    def test_unknown_key_reported(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text(json.dumps({"bogus_section": 1}))
        assert main(["train-base", "--config", str(path)]) == 2
        assert "bogus_section" in capsys.readouterr().err

    def test_artifacts_written(self, pipeline):
        _, out = pipeline
        for name in ("base_field.ckpt", "base_metrics.csv", "base_loss.png", "base_samples.png"):
            assert os.path.exists(os.path.join(out, name)), name
        header, rows = read_csv(os.path.join(out, "base_metrics.csv"))
        assert header == ["step", "lr", "loss"]
        # cadence: every log_every-th step plus the final step
        assert [int(r[0]) for r in rows] == [0, 5, 10, 11]

    def test_rerun_reproduces_checkpoint_bytes(self, tmp_path, pipeline):
        config, out = pipeline
        first = sha(os.path.join(out, "base_field.ckpt"))
        first_metrics = open(os.path.join(out, "base_metrics.csv")).read()
        other_out = str(tmp_path / "redo")
        assert main(["train-base", "--config", config, "--out", other_out]) == 0
        assert sha(os.path.join(other_out, "base_field.ckpt")) == first
        assert open(os.path.join(other_out, "base_metrics.csv")).read() == first_metrics

    def test_seed_override_changes_output(self, tmp_path, pipeline):
        config, out = pipeline
        other_out = str(tmp_path / "seeded")
        assert main(["train-base", "--config", config, "--seed", "999",
                     "--out", other_out]) == 0
        assert sha(os.path.join(other_out, "base_field.ckpt")) != sha(
            os.path.join(out, "base_field.ckpt"))


class TestDistillCommands:
    def test_dependency_error_names_checkpoint(self, tmp_path, capsys):
        config, _ = write_config(tmp_path)
        rc = main(["distill-freeflow", "--config", config])
        assert rc == 3
        assert "base_field.ckpt" in capsys.readouterr().err
        rc = main(["distill-slt", "--config", config])
        assert rc == 3
        assert "flow_map.ckpt" in capsys.readouterr().err

    def test_freeflow_artifacts(self, pipeline):
        _, out = pipeline
        assert os.path.exists(os.path.join(out, "flow_map.ckpt"))
        header, rows = read_csv(os.path.join(out, "freeflow_metrics.csv"))
        assert header == ["step", "lr", "loss"]
        assert len(rows) == 4

    def test_slt_metrics_schema_and_lambda_zero_column(self, tmp_path, pipeline):
        config, out = pipeline
        header, rows = read_csv(os.path.join(out, "slt_metrics.csv"))
        assert header == ["step", "lr", "loss_output", "loss_patches", "loss_total"]
        assert all(len(r) == 5 for r in rows)

        # lambda = 0 still logs the patch column, weighted to zero
        tmp = tmp_path / "lam0.json"
        data = json.loads(json.dumps(TINY))
        data["out_dir"] = out  # reuse the trained teacher
        data["slt_train"]["lambda_patches"] = 0.0
        tmp.write_text(json.dumps(data))
        out2 = str(tmp_path / "lam0out")
        os.makedirs(out2)
        import shutil

        shutil.copy(os.path.join(out, "flow_map.ckpt"), os.path.join(out2, "flow_map.ckpt"))
        data["out_dir"] = out2
        tmp.write_text(json.dumps(data))
        assert main(["distill-slt", "--config", str(tmp)]) == 0
        header2, rows2 = read_csv(os.path.join(out2, "slt_metrics.csv"))
        assert "loss_patches" in header2
        patches = [float(r[3]) for r in rows2]
        totals = [float(r[4]) for r in rows2]
        outputs = [float(r[2]) for r in rows2]
        assert all(p > 0 for p in patches)
        assert totals == outputs  # lambda 0: total reduces to the output term

    def test_teacher_checkpoint_untouched_by_distill(self, tmp_path, pipeline):
        config, out = pipeline
        before = sha(os.path.join(out, "flow_map.ckpt"))
        redo = str(tmp_path / "redo_slt")
        os.makedirs(redo, exist_ok=True)
        import shutil

        shutil.copy(os.path.join(out, "flow_map.ckpt"), os.path.join(redo, "flow_map.ckpt"))
        assert main(["distill-slt", "--config", config, "--out", redo]) == 0
        assert sha(os.path.join(redo, "flow_map.ckpt")) == before


class TestScoutCommand:
    def test_report_and_sample(self, pipeline):
        config, out = pipeline
        assert main(["scout", "--config", config]) == 0
        header, rows = read_csv(os.path.join(out, "scout_report.csv"))
        assert header == ["index", "score", "selected"]
        assert len(rows) == 9
        selected = [r for r in rows if r[2] == "1"]
        assert len(selected) == 1
        scores = [float(r[1]) for r in rows]
        assert float(selected[0][1]) == max(scores)
        with open(os.path.join(out, "scout_report.csv")) as fh:
            assert fh.read().strip().splitlines()[-1].startswith("# timings")
        sample = np.loadtxt(os.path.join(out, "refined_sample.txt"))
        assert sample.shape == (2,)
        assert os.path.exists(os.path.join(out, "scout_scatter.png"))

    def test_single_candidate_matches_direct_teacher_sample(self, tmp_path, pipeline):
        config, out = pipeline
        from depthflow.checkpoint import load_model

        data = json.loads(open(config).read())
        data["scout"]["candidates"] = 1
        data["out_dir"] = out
        solo = tmp_path / "solo.json"
        solo.write_text(json.dumps(data))
        assert main(["scout", "--config", str(solo)]) == 0
        got = np.loadtxt(os.path.join(out, "refined_sample.txt"))

        teacher = load_model(os.path.join(out, "flow_map.ckpt"))
        z = np.random.default_rng(data["seed"]).standard_normal((1, 2)).astype(np.float32)
        want = teacher.one_step(z, 1.0, np.full(1, data["scout"]["class_label"]),
                                data["scout"]["guidance"])[0]
        assert np.allclose(got, want, atol=1e-7)


class TestBenchCommand:
    def test_report_rows_and_ratio(self, pipeline, capsys):
        config, out = pipeline
        assert main(["bench", "--config", config]) == 0
        header, rows = read_csv(os.path.join(out, "bench_report.csv"))
        assert header == ["strategy", "avg_ms", "std_ms", "runs"]
        names = [r[0] for r in rows]
        assert names == ["teacher-pair", "student-screen", "teacher-refine", "scout-and-refine"]
        assert all(int(r[3]) >= 30 for r in rows)
        assert all(float(r[1]) > 0 for r in rows)
        assert os.path.exists(os.path.join(out, "bench_bars.png"))
        assert "ratio" in capsys.readouterr().out


class TestParamsCommand:
    def test_table_and_reference_rows(self, pipeline, capsys):
        config, out = pipeline
        assert main(["params", "--config", config]) == 0
        output = capsys.readouterr().out
        assert "student/teacher parameter ratio" in output
        assert "675.00M" in output and "4.34M" in output
        header, rows = read_csv(os.path.join(out, "params.csv"))
        assert header == ["model", "hidden", "heads", "params"]
        assert len(rows) == 3

    def test_student_count_invariant_in_rollout_steps(self, tmp_path):
        results = []
        for steps in (2, 6):
            data = json.loads(json.dumps(TINY))
            data["student_model"]["steps"] = steps
            data["out_dir"] = str(tmp_path / f"k{steps}")
            cfg = tmp_path / f"k{steps}.json"
            cfg.write_text(json.dumps(data))
            assert main(["params", "--config", str(cfg)]) == 0
            _, rows = read_csv(os.path.join(data["out_dir"], "params.csv"))
            results.append(int(rows[2][3]))
        assert results[0] == results[1]
