import json
import os

import numpy as np
import pytest
from click.testing import CliRunner

from marc.cli import main
from marc.dump import read_dump


@pytest.fixture()
def runner():
    return CliRunner()


GEN_ARGS = [
    "gen-data", "--classes", "10", "--dim", "8", "--n-max", "120",
    "--imbalance-factor", "100", "--separation", "2.0", "--noise", "1.0",
    "--seed", "0", "--balanced-test", "30",
]


def gen(runner, tmp_path, extra=()):
    out = str(tmp_path / "train.mrcd")
    result = runner.invoke(main, GEN_ARGS + ["--out", out] + list(extra))
    assert result.exit_code == 0, result.output
    return out, str(tmp_path / "train.test.mrcd")


def train(runner, tmp_path, data, epochs="15"):
    model = str(tmp_path / "model.mrcd")
    result = runner.invoke(main, [
        "train", "--data", data, "--epochs", epochs, "--batch-size", "32",
        "--seed", "0", "--out", model,
    ])
    assert result.exit_code == 0, result.output
    return model


class TestGenData:
    def test_writes_train_and_test(self, runner, tmp_path):
        train_path, test_path = gen(runner, tmp_path)
        assert os.path.exists(train_path) and os.path.exists(test_path)
        meta, sections = read_dump(train_path)
        assert meta["k"] == 10 and meta["p"] == 8
        assert meta["class_counts"][0] == 120
        # smallest class: 120 * 100^(-1) rounded
        assert meta["class_counts"][-1] == 1

    def test_deterministic_bytes(self, runner, tmp_path):
        a, _ = gen(runner, tmp_path)
        blob = open(a, "rb").read()
        b, _ = gen(runner, tmp_path)
        assert open(b, "rb").read() == blob

    def test_flat_profile(self, runner, tmp_path):
        out = str(tmp_path / "flat.mrcd")
        result = runner.invoke(main, [
            "gen-data", "--classes", "4", "--dim", "3", "--n-max", "20",
            "--imbalance-factor", "1", "--seed", "1", "--out", out,
        ])
        assert result.exit_code == 0
        meta, _ = read_dump(out)
        assert meta["class_counts"] == [20, 20, 20, 20]

    def test_invalid_spec_nonzero_exit(self, runner, tmp_path):
        result = runner.invoke(main, [
            "gen-data", "--classes", "10", "--dim", "3", "--n-max", "5",
            "--imbalance-factor", "100", "--seed", "0",
            "--out", str(tmp_path / "x.mrcd"),
        ])
        assert result.exit_code != 0

    def test_manifest_emitted(self, runner, tmp_path):
        train_path, _ = gen(runner, tmp_path)
        manifest = json.load(open(train_path + ".manifest.json"))
        assert manifest["command"] == "gen-data"
        assert train_path in manifest["outputs"]


class TestTrain:
    def test_model_dump_and_stdout(self, runner, tmp_path):
        data, _ = gen(runner, tmp_path)
        model = train(runner, tmp_path, data)
        meta, sections = read_dump(model)
        assert sections["clf_weights"].shape == (10, 8)
        assert meta["class_counts"][0] == 120

    def test_zero_epochs_is_initialization(self, runner, tmp_path):
        data, _ = gen(runner, tmp_path)
        m0 = str(tmp_path / "m0.mrcd")
        result = runner.invoke(main, [
            "train", "--data", data, "--epochs", "0", "--seed", "0", "--out", m0,
        ])
        assert result.exit_code == 0
        _, s0 = read_dump(m0)
        assert (s0["clf_bias"] == 0).all()

    def test_seeded_rerun_identical_bytes(self, runner, tmp_path):
        data, _ = gen(runner, tmp_path)
        m1 = train(runner, tmp_path, data)
        blob = open(m1, "rb").read()
        m2 = train(runner, tmp_path, data)
        assert open(m2, "rb").read() == blob


class TestCalibrate:
    def test_writes_calibration_sections(self, runner, tmp_path):
        data, _ = gen(runner, tmp_path)
        model = train(runner, tmp_path, data)
        calib = str(tmp_path / "calib.mrcd")
        result = runner.invoke(main, [
            "calibrate", "--model", model, "--data", data,
            "--epochs", "5", "--seed", "0", "--out", calib,
        ])
        assert result.exit_code == 0, result.output
        assert "->" in result.output
        meta, sections = read_dump(calib)
        assert meta["gamma"] == 1.2  # default
        assert sections["calib_omega"].size == 10
        assert sections["calib_beta"].size == 10

    def test_zero_epochs_identity(self, runner, tmp_path):
        data, _ = gen(runner, tmp_path)
        model = train(runner, tmp_path, data)
        calib = str(tmp_path / "calib0.mrcd")
        result = runner.invoke(main, [
            "calibrate", "--model", model, "--data", data,
            "--epochs", "0", "--out", calib,
        ])
        assert result.exit_code == 0
        _, sections = read_dump(calib)
        assert (sections["calib_omega"] == 1).all()
        assert (sections["calib_beta"] == 0).all()

    def test_class_mismatch_fails(self, runner, tmp_path):
        data, _ = gen(runner, tmp_path)
        model = train(runner, tmp_path, data)
        other = str(tmp_path / "other.mrcd")
        result = runner.invoke(main, [
            "gen-data", "--classes", "4", "--dim", "8", "--n-max", "20",
            "--imbalance-factor", "2", "--seed", "0", "--out", other,
        ])
        assert result.exit_code == 0
        result = runner.invoke(main, [
            "calibrate", "--model", model, "--data", other,
            "--out", str(tmp_path / "c.mrcd"),
        ])
        assert result.exit_code != 0


class TestEval:
    def make_pipeline(self, runner, tmp_path):
        data, test = gen(runner, tmp_path)
        model = train(runner, tmp_path, data)
        calib = str(tmp_path / "calib.mrcd")
        result = runner.invoke(main, [
            "calibrate", "--model", model, "--data", data,
            "--epochs", "10", "--seed", "0", "--out", calib,
        ])
        assert result.exit_code == 0
        return data, test, model, calib

    def test_report_without_calib_has_no_after(self, runner, tmp_path):
        _, test, model, _ = self.make_pipeline(runner, tmp_path)
        report = str(tmp_path / "r.json")
        result = runner.invoke(main, [
            "eval", "--model", model, "--test", test, "--report", report,
        ])
        assert result.exit_code == 0, result.output
        payload = json.load(open(report))
        assert "before" in payload and "after" not in payload

    def test_identity_calib_before_equals_after(self, runner, tmp_path):
        from marc.dump import as_f32, write_dump

        _, test, model, _ = self.make_pipeline(runner, tmp_path)
        ident = str(tmp_path / "ident.mrcd")
        write_dump(ident, {"k": 10}, {
            "calib_omega": as_f32(np.ones(10)),
            "calib_beta": as_f32(np.zeros(10)),
        })
        report = str(tmp_path / "r.json")
        result = runner.invoke(main, [
            "eval", "--model", model, "--calib", ident,
            "--test", test, "--report", report,
        ])
        assert result.exit_code == 0, result.output
        payload = json.load(open(report))
        assert payload["before"] == payload["after"]

    def test_calibrated_eval_improves_balance(self, runner, tmp_path):
        _, test, model, calib = self.make_pipeline(runner, tmp_path)
        report = str(tmp_path / "r.json")
        result = runner.invoke(main, [
            "eval", "--model", model, "--calib", calib,
            "--test", test, "--report", report, "--csv", str(tmp_path / "r.csv"),
        ])
        assert result.exit_code == 0, result.output
        payload = json.load(open(report))
        assert payload["after"]["balanced_acc"] > payload["before"]["balanced_acc"]
        assert (tmp_path / "r.csv").exists()

    def test_conflicting_calib_and_baseline(self, runner, tmp_path):
        _, test, model, calib = self.make_pipeline(runner, tmp_path)
        result = runner.invoke(main, [
            "eval", "--model", model, "--calib", calib, "--baseline", "crt",
            "--test", test, "--report", str(tmp_path / "r.json"),
        ])
        assert result.exit_code != 0

    def test_tau_norm_zero_baseline(self, runner, tmp_path):
        _, test, model, _ = self.make_pipeline(runner, tmp_path)
        report = str(tmp_path / "r.json")
        result = runner.invoke(main, [
            "eval", "--model", model, "--baseline", "tau-norm:0",
            "--test", test, "--report", report,
        ])
        assert result.exit_code == 0, result.output
        payload = json.load(open(report))
        assert "after" in payload  # bias-zeroed variant reported

    def test_crt_baseline_requires_data(self, runner, tmp_path):
        _, test, model, _ = self.make_pipeline(runner, tmp_path)
        result = runner.invoke(main, [
            "eval", "--model", model, "--baseline", "crt",
            "--test", test, "--report", str(tmp_path / "r.json"),
        ])
        assert result.exit_code != 0

    def test_lws_baseline_runs(self, runner, tmp_path):
        data, test, model, _ = self.make_pipeline(runner, tmp_path)
        report = str(tmp_path / "r.json")
        result = runner.invoke(main, [
            "eval", "--model", model, "--baseline", "lws", "--data", data,
            "--epochs", "5", "--test", test, "--report", report,
        ])
        assert result.exit_code == 0, result.output

    def test_figures_rendered(self, runner, tmp_path):
        _, test, model, calib = self.make_pipeline(runner, tmp_path)
        figs = tmp_path / "figs"
        result = runner.invoke(main, [
            "eval", "--model", model, "--calib", calib,
            "--test", test, "--report", str(tmp_path / "r.json"),
            "--figures", str(figs),
        ])
        assert result.exit_code == 0, result.output
        names = {p.name for p in figs.iterdir()}
        assert {"margin_profile.png", "logit_profile.png",
                "class_accuracy.png", "confusion_before.png",
                "confusion_after.png"} <= names

    def test_report_bytes_deterministic(self, runner, tmp_path):
        _, test, model, calib = self.make_pipeline(runner, tmp_path)
        blobs = []
        for name in ("a.json", "b.json"):
            report = str(tmp_path / name)
            result = runner.invoke(main, [
                "eval", "--model", model, "--calib", calib,
                "--test", test, "--report", report,
            ])
            assert result.exit_code == 0
            blobs.append(open(report, "rb").read())
        assert blobs[0] == blobs[1]
