import json
from pathlib import Path

import numpy as np
import pytest

from sfanet.cli import main
from sfanet.core import Label
from sfanet.datapipe import load_manifest
from sfanet.ensemble import read_score_file
from sfanet.metrics import ScoredSet, save_scored_set
from sfanet.synthetic import make_synthetic_corpus, write_corpus


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    samples = make_synthetic_corpus(12, 12, size=16, seed=1)
    manifest = write_corpus(samples, root)
    return root, manifest


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory, corpus):
    """Tiny trained checkpoints for the predict tests."""
    root, _ = corpus
    ckpt_dir = tmp_path_factory.mktemp("ckpts")
    manifest = str(root / "manifest.csv")
    specs = {
        "sfnet": ["--extractor", "global_stats", "--spatial-dim", "2"],
        "swinatten": [
            "--extractor", "patch_projection", "--patch-size", "4",
            "--spatial-dim", "4", "--freq-dim", "4",
        ],
        "swinfusion": ["--extractor", "tiny_conv", "--spatial-dim", "4"],
        "facecrop_pair": ["--extractor", "tiny_conv", "--spatial-dim", "4"],
    }
    for name, extra in specs.items():
        out = ckpt_dir / name
        code = main(
            [
                "train", "--model", name,
                "--train-manifest", manifest,
                "--output-dir", str(out),
                "--epochs", "1", "--seed", "0",
                "--resolution", "16",
            ]
            + extra
        )
        assert code == 0
    return ckpt_dir


def _labeled_scores_file(tmp_path) -> Path:
    entries = [
        ("r0", 0.9, Label.REAL),
        ("r1", 0.8, Label.REAL),
        ("r2", 0.25, Label.REAL),
        ("f0", 0.6, Label.FAKE),
        ("f1", 0.2, Label.FAKE),
        ("f2", 0.1, Label.FAKE),
    ]
    path = tmp_path / "labeled.csv"
    save_scored_set(ScoredSet.from_entries(entries), path)
    return path


# ---------------------------------------------------------------------------
# Dispatch and exit codes
# ---------------------------------------------------------------------------


def test_unknown_command_exits_2(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 2
    assert "usage" in capsys.readouterr().err.lower()


def test_config_error_exits_2_before_side_effects(tmp_path):
    out = tmp_path / "m.csv"
    code = main(["ingest", "--output", str(out)])  # neither --from-dir nor --from-csv
    assert code == 2
    assert not out.exists()


def test_unknown_config_key_exits_2(tmp_path, corpus):
    root, _ = corpus
    bad = tmp_path / "bad.yaml"
    bad.write_text("eval:\n  thresold: 0.5\n")
    code = main(
        [
            "evaluate", "--scores", str(_labeled_scores_file(tmp_path)),
            "--config", str(bad),
        ]
    )
    assert code == 2


# ---------------------------------------------------------------------------
# ingest
# ---------------------------------------------------------------------------


def test_ingest_from_directory_is_deterministic(tmp_path):
    from PIL import Image

    rng = np.random.default_rng(0)
    for label in ("real", "fake"):
        sub = tmp_path / "data" / label
        sub.mkdir(parents=True)
        for i in range(3):
            arr = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
            Image.fromarray(arr).save(sub / f"{label}{i}.png")
    out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["ingest", "--from-dir", str(tmp_path / "data"), "--output", str(out_a)]) == 0
    assert main(["ingest", "--from-dir", str(tmp_path / "data"), "--output", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    manifest = load_manifest(out_a)
    assert manifest.counts == {"real": 3, "fake": 3}
    assert manifest.samples[0].origin == "data"


def test_ingest_from_csv_validates(tmp_path, corpus):
    root, _ = corpus
    out = tmp_path / "verified.csv"
    code = main(["ingest", "--from-csv", str(root / "manifest.csv"), "--output", str(out)])
    assert code == 0
    assert load_manifest(out).counts == {"real": 12, "fake": 12}


def test_ingest_empty_directory_fails(tmp_path):
    (tmp_path / "nothing" / "real").mkdir(parents=True)
    code = main(
        ["ingest", "--from-dir", str(tmp_path / "nothing"), "--output", str(tmp_path / "x.csv")]
    )
    assert code == 1


# ---------------------------------------------------------------------------
# categorize / cluster / crop
# ---------------------------------------------------------------------------


def test_categorize_fills_categories(tmp_path, corpus, capsys):
    root, _ = corpus
    out = tmp_path / "categorized.csv"
    report = tmp_path / "report.json"
    code = main(
        [
            "categorize", "--manifest", str(root / "manifest.csv"),
            "--output", str(out), "--report", str(report), "--stub-providers",
        ]
    )
    assert code == 0
    manifest = load_manifest(out)
    assert all(s.category is not None for s in manifest.samples)
    payload = json.loads(report.read_text())
    assert payload["uncategorized"] == 0
    assert "config_hash" in payload


def test_cluster_is_deterministic(tmp_path, corpus):
    root, _ = corpus
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    args = [
        "cluster", "--manifest", str(root / "manifest.csv"),
        "--k", "2", "--seed", "0", "--stub-providers",
    ]
    assert main(args + ["--output", str(out_a)]) == 0
    assert main(args + ["--output", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    payload = json.loads(out_a.read_text())
    assert payload["k"] == 2
    assert len(payload["assignment"]) == 12  # fakes only


def test_cluster_dry_run_writes_nothing(tmp_path, corpus):
    root, _ = corpus
    out = tmp_path / "dry.json"
    code = main(
        [
            "cluster", "--manifest", str(root / "manifest.csv"),
            "--k", "2", "--seed", "0", "--output", str(out),
            "--stub-providers", "--dry-run",
        ]
    )
    assert code == 0
    assert not out.exists()


def test_cluster_output_embeds_the_config_hash(tmp_path, corpus):
    root, _ = corpus
    out = tmp_path / "hashed.json"
    assert (
        main(
            [
                "cluster", "--manifest", str(root / "manifest.csv"),
                "--k", "2", "--seed", "0", "--output", str(out), "--stub-providers",
            ]
        )
        == 0
    )
    assert "config_hash" in json.loads(out.read_text())


def test_crop_writes_crops_and_listing(tmp_path, corpus):
    root, _ = corpus
    out_dir = tmp_path / "crops"
    code = main(
        [
            "crop", "--manifest", str(root / "manifest.csv"),
            "--output-dir", str(out_dir), "--stub-providers",
        ]
    )
    assert code == 0
    listing = (out_dir / "crops.csv").read_text().splitlines()
    assert listing[0] == "id,kind,eyes_path,lips_path"
    assert len(listing) == 25
    assert len(list((out_dir / "eyes").glob("*.png"))) == 24


def test_crop_dry_run_writes_nothing(tmp_path, corpus):
    root, _ = corpus
    out_dir = tmp_path / "crops-dry"
    code = main(
        [
            "crop", "--manifest", str(root / "manifest.csv"),
            "--output-dir", str(out_dir), "--stub-providers", "--dry-run",
        ]
    )
    assert code == 0
    assert not out_dir.exists()


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------


def test_schedule_dry_run_prints_six_phases(tmp_path, capsys):
    out = tmp_path / "schedule.json"
    code = main(
        [
            "schedule", "--k", "5", "--epochs", "3", "--finetune", "3",
            "--dry-run", "--output", str(out),
        ]
    )
    assert code == 0
    assert not out.exists()
    lines = capsys.readouterr().out.splitlines()
    phase_lines = [line for line in lines if line.startswith("phase ")]
    assert len(phase_lines) == 6
    assert phase_lines[0] == "phase 1: fold_1 (3 epochs)"
    assert phase_lines[-1] == "phase 6: FULL (3 epochs)"
    assert "total_epochs=18" in lines[0]


def test_schedule_output_round_trips(tmp_path):
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    args = ["schedule", "--k", "2", "--epochs", "1", "--finetune", "2"]
    assert main(args + ["--output", str(out_a)]) == 0
    assert main(args + ["--output", str(out_b)]) == 0
    assert out_a.read_bytes() == out_b.read_bytes()
    from sfanet.trainsched import Schedule

    payload = json.loads(out_a.read_text())
    schedule = Schedule.from_dict(payload)
    schedule.validate(k=2)


def test_schedule_rejects_bad_arguments():
    assert main(["schedule", "--k", "0", "--epochs", "3", "--finetune", "3"]) == 2


# ---------------------------------------------------------------------------
# train / predict
# ---------------------------------------------------------------------------


def test_sequential_train_runs_the_fold_schedule(tmp_path, corpus):
    root, _ = corpus
    manifest = str(root / "manifest.csv")
    assignment = tmp_path / "assignment.json"
    assert (
        main(
            [
                "cluster", "--manifest", manifest, "--k", "2", "--seed", "3",
                "--output", str(assignment), "--stub-providers",
            ]
        )
        == 0
    )
    out_dir = tmp_path / "seq"
    code = main(
        [
            "train", "--model", "swinfusion",
            "--train-manifest", manifest, "--val-manifest", manifest,
            "--output-dir", str(out_dir),
            "--sequential", "--assignment", str(assignment),
            "--epochs-per-phase", "1", "--finetune-epochs", "1",
            "--seed", "0", "--resolution", "16",
            "--extractor", "tiny_conv", "--spatial-dim", "4",
        ]
    )
    assert code == 0
    names = {p.name for p in out_dir.glob("*.ckpt")}
    assert "swinfusion-phase01-epoch01.ckpt" in names
    assert "swinfusion-phase03-epoch01.ckpt" in names
    assert "swinfusion-final.ckpt" in names
    log_lines = (out_dir / "train_log.jsonl").read_text().splitlines()
    assert len(log_lines) >= 3


def test_predict_final_pipeline_and_evaluate(tmp_path, corpus, checkpoints, capsys):
    root, _ = corpus
    manifest = str(root / "manifest.csv")
    scores = tmp_path / "scores.csv"
    code = main(
        [
            "predict", "--manifest", manifest, "--output", str(scores),
            "--pipeline", "final",
            "--swinatten", str(checkpoints / "swinatten" / "swinatten-final.ckpt"),
            "--swinfusion", str(checkpoints / "swinfusion" / "swinfusion-final.ckpt"),
            "--sfnet", str(checkpoints / "sfnet" / "sfnet-final.ckpt"),
            "--stub-providers",
        ]
    )
    assert code == 0
    records = read_score_file(scores)
    assert len(records) == 24
    assert all(r.path_taken == "gated_pair" for r in records)
    assert all(0.0 < r.score_fused < 1.0 for r in records)

    # prediction files need a manifest for labels
    assert main(["evaluate", "--scores", str(scores)]) == 2
    capsys.readouterr()
    code = main(["evaluate", "--scores", str(scores), "--manifest", manifest])
    assert code == 0
    out = capsys.readouterr().out
    assert "accuracy=" in out and "auc=" in out and "threshold=0.300000" in out


def test_predict_facecrop_pipeline(tmp_path, corpus, checkpoints):
    root, _ = corpus
    scores = tmp_path / "fc_scores.csv"
    ckpt = str(checkpoints / "facecrop_pair" / "facecrop_pair-final.ckpt")
    code = main(
        [
            "predict", "--manifest", str(root / "manifest.csv"),
            "--output", str(scores), "--pipeline", "facecrop",
            "--eyes", ckpt, "--lips", ckpt, "--stub-providers",
        ]
    )
    assert code == 0
    records = read_score_file(scores)
    assert all(r.path_taken == "facecrop" for r in records)


def test_train_dry_run_writes_nothing(tmp_path, corpus, capsys):
    root, _ = corpus
    out_dir = tmp_path / "dry-train"
    code = main(
        [
            "train", "--model", "sfnet",
            "--train-manifest", str(root / "manifest.csv"),
            "--output-dir", str(out_dir), "--epochs", "1",
            "--resolution", "16", "--extractor", "global_stats",
            "--spatial-dim", "2", "--dry-run",
        ]
    )
    assert code == 0
    assert not out_dir.exists()
    assert "plan:" in capsys.readouterr().out


def test_predict_dry_run_writes_nothing(tmp_path, corpus, checkpoints):
    root, _ = corpus
    scores = tmp_path / "dry-scores.csv"
    code = main(
        [
            "predict", "--manifest", str(root / "manifest.csv"),
            "--output", str(scores), "--pipeline", "final",
            "--swinatten", str(checkpoints / "swinatten" / "swinatten-final.ckpt"),
            "--swinfusion", str(checkpoints / "swinfusion" / "swinfusion-final.ckpt"),
            "--sfnet", str(checkpoints / "sfnet" / "sfnet-final.ckpt"),
            "--stub-providers", "--dry-run",
        ]
    )
    assert code == 0
    assert not scores.exists()


def test_predict_requires_checkpoints(tmp_path, corpus):
    root, _ = corpus
    code = main(
        [
            "predict", "--manifest", str(root / "manifest.csv"),
            "--output", str(tmp_path / "s.csv"),
        ]
    )
    assert code == 2


# ---------------------------------------------------------------------------
# evaluate / calibrate
# ---------------------------------------------------------------------------


def test_evaluate_labeled_scores_prints_report(tmp_path, capsys):
    scores = _labeled_scores_file(tmp_path)
    code = main(["evaluate", "--scores", str(scores), "--threshold", "0.3"])
    assert code == 0
    out = capsys.readouterr().out
    # reals {0.9, 0.8, 0.25}, fakes {0.6, 0.2, 0.1} at 0.3: TP=2 FN=1 FP=1 TN=2
    assert "accuracy=0.666667" in out
    assert "tp=2" in out and "fn=1" in out


def test_evaluate_output_is_deterministic(tmp_path):
    scores = _labeled_scores_file(tmp_path)
    out_a, out_b = tmp_path / "a.json", tmp_path / "b.json"
    for out in (out_a, out_b):
        assert (
            main(["evaluate", "--scores", str(scores), "--output", str(out)]) == 0
        )
    assert out_a.read_bytes() == out_b.read_bytes()
    payload = json.loads(out_a.read_text())
    assert "config_hash" in payload and "auc" in payload


def test_evaluate_respects_config_file_threshold(tmp_path, capsys, monkeypatch):
    scores = _labeled_scores_file(tmp_path)
    cfg = tmp_path / "run.yaml"
    cfg.write_text("eval:\n  threshold: 0.5\n")
    monkeypatch.setenv("SFANET_CONFIG", str(cfg))
    assert main(["evaluate", "--scores", str(scores)]) == 0
    assert "threshold=0.500000" in capsys.readouterr().out


def test_calibrate_sweep(tmp_path, capsys):
    scores = _labeled_scores_file(tmp_path)
    out = tmp_path / "sweep.csv"
    code = main(
        [
            "calibrate", "--scores", str(scores), "--output", str(out),
            "--grid", "0.1:0.9:0.1",
        ]
    )
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "threshold,tp,fp,tn,fn,accuracy,fpr,fnr,dcf"
    assert len(lines) == 10
    printed = capsys.readouterr().out
    assert "eer=" in printed and "min_dcf=" in printed and "best:" in printed


def test_calibrate_dry_run_writes_nothing(tmp_path):
    scores = _labeled_scores_file(tmp_path)
    out = tmp_path / "sweep.csv"
    assert (
        main(["calibrate", "--scores", str(scores), "--output", str(out), "--dry-run"])
        == 0
    )
    assert not out.exists()
