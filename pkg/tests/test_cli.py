import json
import os

import numpy as np
import pytest

from fairvoice.cli import main

CONFIG_TEMPLATE = """
seed = 7
output_dir = "{out}"
backbone = "tinytest"

[synth]
young_pd = 2
young_hc = 6
elderly_pd = 6
elderly_hc = 4
sample_rate = 4000

[train]
epochs = 1
learning_rate = 1e-3
batch_size = 8

[mel]
fft_window = 1024
overlap = 0.75
mel_bins = 64

[policy]
precision_target = 0.5
recall_target = 0.5
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "run.toml"
    cfg_path.write_text(CONFIG_TEMPLATE.format(out=str(root / "out")))
    assert main(["--config", str(cfg_path), "synth"]) == 0
    return root, cfg_path


def corpus_dir(root):
    return root / "out" / "corpus"


class TestSynth:
    def test_outputs_exist(self, workspace):
        root, _ = workspace
        d = corpus_dir(root)
        assert (d / "manifest.csv").exists()
        assert (d / "train.csv").exists()
        assert (d / "test.csv").exists()
        assert (d / "run.json").exists()

    def test_deterministic_manifest(self, workspace, tmp_path):
        root, cfg = workspace
        assert main(["--config", str(cfg), "synth", "--out", str(tmp_path / "c2")]) == 0
        a = (corpus_dir(root) / "manifest.csv").read_text()
        b = (tmp_path / "c2" / "manifest.csv").read_text()
        # Audio paths differ by directory; compare structure.
        strip = lambda text: [line.split(",")[:4] for line in text.splitlines()]
        assert strip(a) == strip(b)

    def test_missing_config_key_exit2(self, tmp_path, capsys):
        bad = tmp_path / "bad.toml"
        bad.write_text('seed = 1\noutput_dir = "x"\n')  # no backbone
        assert main(["--config", str(bad), "synth"]) == 2
        assert "backbone" in capsys.readouterr().err

    def test_zero_counts_exit2(self, tmp_path):
        bad = tmp_path / "zero.toml"
        bad.write_text(
            'seed = 1\noutput_dir = "x"\nbackbone = "tinytest"\n'
            "[synth]\nyoung_pd = 0\nyoung_hc = 0\nelderly_pd = 0\nelderly_hc = 0\n"
        )
        assert main(["--config", str(bad), "synth"]) == 2

    def test_seed_env_override(self, workspace, tmp_path, monkeypatch):
        root, cfg = workspace
        monkeypatch.setenv("FAIRVOICE_SEED", "99")
        assert main(["--config", str(cfg), "synth", "--out", str(tmp_path / "c3")]) == 0
        run = json.loads((tmp_path / "c3" / "run.json").read_text())
        assert run["seed"] == 99


@pytest.fixture(scope="module")
def trained(workspace):
    root, cfg = workspace
    assert main(["--config", str(cfg), "train", "--variant", "plain",
                 "--ensemble", "1"]) == 0
    return root, cfg


class TestTrainEvaluate:

    def test_single_checkpoint_no_bundle(self, trained):
        root, _ = trained
        models = root / "out" / "models"
        assert (models / "plain.ckpt").exists()
        assert (models / "plain.losses.json").exists()
        assert not (models / "plain").exists()

    def test_ensemble_checkpoints(self, workspace):
        root, cfg = workspace
        assert main(["--config", str(cfg), "train", "--variant", "gradcam",
                     "--ensemble", "2"]) == 0
        bundle = root / "out" / "models" / "gradcam"
        assert (bundle / "member_0.ckpt").exists()
        assert (bundle / "member_1.ckpt").exists()
        assert (bundle / "bundle.json").exists()

    def test_resample_logs_ratios(self, workspace, capsys):
        root, cfg = workspace
        assert main(["--config", str(cfg), "train", "--variant", "resample",
                     "--ensemble", "1"]) == 0
        assert "resampled young PD" in capsys.readouterr().out

    def test_evaluate_report(self, trained):
        root, cfg = trained
        ckpt = root / "out" / "models" / "plain.ckpt"
        assert main(["--config", str(cfg), "evaluate", "--model", str(ckpt)]) == 0
        report = json.loads((root / "out" / "eval" / "plain.report.json").read_text())
        assert abs(
            report["delta"] - (report["auprc_elderly"] - report["auprc_young"])
        ) <= 1e-12
        assert (root / "out" / "eval" / "plain.pr_young.txt").exists()
        assert (root / "out" / "eval" / "plain.pr_all.png").exists()

    def test_evaluate_deterministic(self, trained, tmp_path):
        root, cfg = trained
        ckpt = root / "out" / "models" / "plain.ckpt"
        out2 = tmp_path / "eval2"
        assert main(["--config", str(cfg), "evaluate", "--model", str(ckpt),
                     "--out", str(out2)]) == 0
        a = json.loads((root / "out" / "eval" / "plain.report.json").read_text())
        b = json.loads((out2 / "plain.report.json").read_text())
        assert a == b

    def test_group_without_positives_exit5(self, trained, tmp_path):
        root, cfg = trained
        # Truncate the test manifest to HC-only young rows.
        src = (corpus_dir(root) / "test.csv").read_text().splitlines()
        keep = [src[0]] + [l for l in src[1:] if ",HC," in l or "-e-pd-" in l]
        bad = tmp_path / "nopos.csv"
        bad.write_text("\n".join(keep) + "\n")
        ckpt = root / "out" / "models" / "plain.ckpt"
        code = main(["--config", str(cfg), "evaluate", "--model", str(ckpt),
                     "--manifest", str(bad)])
        assert code == 5


class TestDiagnoseScreenVisualize:
    def test_diagnose_features(self, workspace):
        root, cfg = workspace
        ckpt = root / "out" / "models" / "plain.ckpt"
        d = corpus_dir(root)
        assert main([
            "--config", str(cfg), "diagnose-features", "--checkpoint", str(ckpt),
            "--train-manifest", str(d / "train.csv"),
            "--test-manifest", str(d / "test.csv"),
        ]) == 0
        payload = json.loads(
            (root / "out" / "diagnostics" / "feature_distance.json").read_text()
        )
        assert set(payload) == {"train/young", "train/elderly", "test/young", "test/elderly"}
        assert all(v >= 0 for v in payload.values())

    def test_screen_calibrate_and_apply(self, workspace):
        root, cfg = workspace
        preds = root / "out" / "eval" / "plain.predictions.csv"
        assert main(["--config", str(cfg), "screen", "calibrate",
                     "--predictions", str(preds)]) == 0
        policy_path = root / "out" / "screening" / "policy.json"
        policy = json.loads(policy_path.read_text())
        assert policy["t1"] >= policy["t2"]
        assert main(["--config", str(cfg), "screen", "apply",
                     "--predictions", str(preds), "--policy", str(policy_path)]) == 0
        lines = (root / "out" / "screening" / "outcomes.csv").read_text().splitlines()
        assert lines[0] == "subject_id,score,outcome,decided_by_step"
        assert len(lines) > 1

    def test_infeasible_targets_exit6(self, workspace, tmp_path):
        root, cfg = workspace
        strict = tmp_path / "strict.toml"
        strict.write_text(
            cfg.read_text().replace("precision_target = 0.5", "precision_target = 1.0")
            .replace("recall_target = 0.5", "recall_target = 1.0")
        )
        preds = tmp_path / "ties.csv"
        preds.write_text(
            "sample_id,subject_id,age_group,label,score\n"
            "a,sa,young,PD,0.5\nb,sb,young,HC,0.5\nc,sc,young,HC,0.5\n"
        )
        assert main(["--config", str(strict), "screen", "calibrate",
                     "--predictions", str(preds)]) == 6

    def test_visualize_triptychs(self, workspace):
        root, cfg = workspace
        ckpt = root / "out" / "models" / "plain.ckpt"
        assert main([
            "--config", str(cfg), "visualize", "--checkpoint", str(ckpt),
            "--manifest", str(corpus_dir(root) / "test.csv"), "--limit", "2",
        ]) == 0
        vis = root / "out" / "visualizations"
        pngs = sorted(os.listdir(vis))
        sample_ids = {p.split(".")[0] for p in pngs if p.endswith(".png")}
        for sid in sample_ids:
            for suffix in ("input", "saliency", "mask"):
                assert f"{sid}.{suffix}.png" in pngs

    def test_visualize_mask_bilevel_and_deterministic(self, workspace, tmp_path):
        root, cfg = workspace
        ckpt = root / "out" / "models" / "plain.ckpt"
        outs = []
        for d in ("v1", "v2"):
            assert main([
                "--config", str(cfg), "visualize", "--checkpoint", str(ckpt),
                "--manifest", str(corpus_dir(root) / "test.csv"),
                "--limit", "1", "--out", str(tmp_path / d),
            ]) == 0
            outs.append(tmp_path / d)
        from PIL import Image

        masks = [p for p in os.listdir(outs[0]) if p.endswith(".mask.png")]
        assert masks
        vals = set(np.asarray(Image.open(outs[0] / masks[0])).ravel().tolist())
        assert vals <= {0, 255}
        for name in os.listdir(outs[0]):
            if name.endswith(".png"):
                assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
