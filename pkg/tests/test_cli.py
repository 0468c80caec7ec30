"""Command-line interface: exit codes, output file contracts, determinism."""
import numpy as np
import pytest

from analysparse import cli, datagen
from analysparse.cli import (EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_OK,
                             EXIT_VALIDATION, main)

TRAIN_CFG = """\
# tiny end-to-end training run
data.p=8
data.L=32
data.sigma=0.5
data.val_L=8
train.eta2=0.01
train.max_itr2=4
train.batch_sz=4
train.max_itr1=200
train.validation_every=2
"""

TRAIN_FILES = ["train_loss.csv", "val_loss.csv", "references.csv",
               "D_hat.csv", "D_hat_sorted_rescaled.csv", "match_report.csv",
               "run_manifest.txt"]


def write_cfg(tmp_path, text, name="run.config"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestGen:
    def test_writes_dataset(self, tmp_path):
        cfg = write_cfg(tmp_path, "data.p=8\ndata.L=5\ndata.sigma=0.5\n")
        rc = main(["gen", "--config", cfg, "--out", str(tmp_path / "o")])
        assert rc == EXIT_OK
        ds = datagen.load(tmp_path / "o" / "dataset.bin")
        assert len(ds) == 5 and ds.config.p == 8

    def test_seed_override_determinism(self, tmp_path):
        cfg = write_cfg(tmp_path, "data.p=8\ndata.L=5\ndata.sigma=0.5\n")
        main(["gen", "--config", cfg, "--out", str(tmp_path / "a"),
              "--seed", "7"])
        main(["gen", "--config", cfg, "--out", str(tmp_path / "b"),
              "--seed", "7"])
        a = (tmp_path / "a" / "dataset.bin").read_bytes()
        b = (tmp_path / "b" / "dataset.bin").read_bytes()
        assert a == b

    def test_missing_key_exits_config(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, "data.p=8\ndata.sigma=0.5\n")
        rc = main(["gen", "--config", cfg, "--out", str(tmp_path / "o")])
        assert rc == EXIT_CONFIG
        assert "data.L" in capsys.readouterr().err

    def test_bad_value_exits_config(self, tmp_path):
        cfg = write_cfg(tmp_path, "data.p=eight\ndata.L=5\ndata.sigma=0.5\n")
        assert main(["gen", "--config", cfg,
                     "--out", str(tmp_path / "o")]) == EXIT_CONFIG

    def test_missing_config_file_exits_config(self, tmp_path):
        assert main(["gen", "--config", str(tmp_path / "nope.config"),
                     "--out", str(tmp_path / "o")]) == EXIT_CONFIG


class TestTrain:
    def test_output_files_and_rerun_identical(self, tmp_path):
        cfg = write_cfg(tmp_path, TRAIN_CFG)
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        assert main(["train", "--config", cfg, "--out", str(out1)]) == EXIT_OK
        assert main(["train", "--config", cfg, "--out", str(out2)]) == EXIT_OK
        for name in TRAIN_FILES:
            assert (out1 / name).exists(), name
            a = (out1 / name).read_text()
            b = (out2 / name).read_text()
            if name == "run_manifest.txt":
                # everything except the timing line is reproducible
                a = [l for l in a.splitlines() if not l.startswith("wall_time")]
                b = [l for l in b.splitlines() if not l.startswith("wall_time")]
            assert a == b, name

    def test_manifest_records_resolved_params(self, tmp_path):
        cfg = write_cfg(tmp_path, TRAIN_CFG)
        out = tmp_path / "r"
        main(["train", "--config", cfg, "--out", str(out)])
        manifest = dict(line.split("=", 1) for line in
                        (out / "run_manifest.txt").read_text().splitlines())
        assert manifest["train.eta2"] == "0.01"
        assert manifest["train.batch_sz"] == "4"
        assert manifest["data.sigma"] == "0.5"
        assert "mean_abs_cosine" in manifest

    def test_csv_headers(self, tmp_path):
        cfg = write_cfg(tmp_path, TRAIN_CFG)
        out = tmp_path / "r"
        main(["train", "--config", cfg, "--out", str(out)])
        assert (out / "train_loss.csv").read_text().splitlines()[0] == \
            "iteration,loss"
        assert (out / "references.csv").read_text().splitlines()[0] == \
            "name,loss"
        d = np.loadtxt(out / "D_hat.csv", delimiter=",", skiprows=1)
        assert d.shape == (8, 8)

    def test_dataset_from_file(self, tmp_path):
        ds = datagen.gen_dataset(datagen.DataConfig(p=8, L=16, sigma=0.5,
                                                    seed=0))
        datagen.save(ds, tmp_path / "d.bin")
        cfg = write_cfg(tmp_path, (
            f"train.dataset={tmp_path / 'd.bin'}\n"
            f"train.val_dataset={tmp_path / 'd.bin'}\n"
            "train.eta2=0.01\ntrain.max_itr2=2\ntrain.batch_sz=4\n"
            "train.max_itr1=100\n"))
        assert main(["train", "--config", cfg,
                     "--out", str(tmp_path / "r")]) == EXIT_OK


class TestDenoise:
    def _write_problem(self, tmp_path, scale=0.3):
        rng = np.random.default_rng(0)
        D = scale * rng.standard_normal((6, 6))
        y = rng.standard_normal(6)
        dpath, ypath = tmp_path / "D.csv", tmp_path / "y.csv"
        cli._write_matrix_csv(dpath, D)
        cli._write_matrix_csv(ypath, y[None, :])
        return dpath, ypath

    def test_outputs_and_gap(self, tmp_path):
        dpath, ypath = self._write_problem(tmp_path)
        out = tmp_path / "o"
        rc = main(["denoise", str(dpath), str(ypath), "--out", str(out),
                   "--tol", "1e-8"])
        assert rc == EXIT_OK
        w = np.loadtxt(out / "w_hat.csv", delimiter=",", skiprows=1)
        assert w.shape == (6,)
        diag = dict(line.split("=", 1) for line in
                    (out / "diagnostics.txt").read_text().splitlines())
        assert diag["converged"] == "True"
        assert float(diag["duality_gap"]) < 1e-6

    def test_zero_dictionary_passthrough(self, tmp_path):
        dpath = tmp_path / "D.csv"
        ypath = tmp_path / "y.csv"
        cli._write_matrix_csv(dpath, np.zeros((4, 4)))
        y = np.array([1.0, -2.0, 3.0, 0.5])
        cli._write_matrix_csv(ypath, y[None, :])
        out = tmp_path / "o"
        assert main(["denoise", str(dpath), str(ypath),
                     "--out", str(out)]) == EXIT_OK
        w = np.loadtxt(out / "w_hat.csv", delimiter=",", skiprows=1)
        assert np.array_equal(w, y)


class TestGradcheck:
    def test_passes_at_default_threshold(self, tmp_path, capsys):
        rc = main(["gradcheck", "--p", "4", "--m", "4", "--iterations", "20",
                   "--seeds", "3", "--out", str(tmp_path / "g")])
        assert rc == EXIT_OK
        assert (tmp_path / "g" / "gradcheck.csv").exists()
        assert "pass" in capsys.readouterr().out

    def test_fails_at_impossible_threshold(self, capsys):
        rc = main(["gradcheck", "--p", "4", "--m", "4", "--iterations", "20",
                   "--seeds", "2", "--threshold", "1e-300"])
        assert rc == EXIT_VALIDATION
        assert "FAIL" in capsys.readouterr().out


class TestExperiment:
    def test_noise_sweep_directories(self, tmp_path):
        cfg = write_cfg(tmp_path, TRAIN_CFG + "experiment.sigmas=0.1 0.5\n")
        out = tmp_path / "e"
        rc = main(["experiment", "noise-sweep", "--config", cfg,
                   "--out", str(out)])
        assert rc == EXIT_OK
        assert (out / "sigma_0.1" / "run_manifest.txt").exists()
        assert (out / "sigma_0.5" / "run_manifest.txt").exists()
        lines = (out / "summary.csv").read_text().splitlines()
        assert lines[0] == ("condition,mean_abs_cosine,final_val_loss,"
                            "final_train_loss,status")
        assert len(lines) == 3

    def test_ablation_arms(self, tmp_path):
        cfg = write_cfg(tmp_path, TRAIN_CFG)
        out = tmp_path / "e"
        assert main(["experiment", "ablation", "--config", cfg,
                     "--out", str(out)]) == EXIT_OK
        proj = dict(line.split("=", 1) for line in
                    (out / "projected" / "run_manifest.txt")
                    .read_text().splitlines())
        unproj = dict(line.split("=", 1) for line in
                      (out / "unprojected" / "run_manifest.txt")
                      .read_text().splitlines())
        assert proj["projection"] == "center-columns"
        assert unproj["projection"] == "none"

    def test_baseline_compare_overlay(self, tmp_path):
        cfg = write_cfg(tmp_path, TRAIN_CFG +
                        "baseline.eta2=0.01\nbaseline.max_itr2=4\n"
                        "baseline.batch_sz=4\nbaseline.inner_max_iter=100\n")
        out = tmp_path / "e"
        assert main(["experiment", "baseline-compare", "--config", cfg,
                     "--out", str(out)]) == EXIT_OK
        assert (out / "baseline" / "run_manifest.txt").exists()
        overlay = (out / "losses_overlay.csv").read_text().splitlines()
        assert overlay[0] == "iteration,projected_loss,baseline_loss"
        assert len(overlay) == 5

    def test_partial_failure_keeps_other_conditions(self, tmp_path):
        # sigma=-1 is invalid and must not take down the other condition
        cfg = write_cfg(tmp_path, TRAIN_CFG + "experiment.sigmas=0.5 -1\n")
        out = tmp_path / "e"
        assert main(["experiment", "noise-sweep", "--config", cfg,
                     "--out", str(out)]) == EXIT_OK
        summary = (out / "summary.csv").read_text()
        assert "failed" in summary
        assert (out / "sigma_0.5" / "run_manifest.txt").exists()

    def test_parallel_matches_serial(self, tmp_path, monkeypatch):
        monkeypatch.setenv("ANALYSPARSE_THREADS", "2")
        cfg = write_cfg(tmp_path, TRAIN_CFG + "experiment.sigmas=0.1 0.5\n")
        serial, par = tmp_path / "s", tmp_path / "p"
        main(["experiment", "noise-sweep", "--config", cfg, "--out",
              str(serial)])
        main(["experiment", "noise-sweep", "--config", cfg, "--out",
              str(par), "--parallel"])
        assert (serial / "summary.csv").read_text() == \
            (par / "summary.csv").read_text()


class TestExitCodeDivergence:
    def test_nonfinite_training_maps_to_exit_3(self, tmp_path, monkeypatch):
        import analysparse.cli as cli_mod
        from analysparse.exceptions import DivergenceError

        def boom(*a, **k):
            raise DivergenceError("non-finite training loss at iteration 0",
                                  iteration=0)
        monkeypatch.setattr(cli_mod, "train", boom)
        cfg = write_cfg(tmp_path, TRAIN_CFG)
        assert main(["train", "--config", cfg,
                     "--out", str(tmp_path / "r")]) == EXIT_DIVERGENCE
