import json

import numpy as np
import pytest

import progtrack


def test_defaults_resolve():
    cfg = progtrack.parse_config()
    assert cfg["training"]["lambda_iou"] == 2.0
    assert cfg["training"]["lambda_l1"] == 5.0
    assert cfg["training"]["lambda_align"] == 0.1
    assert progtrack.parse_config({}, ["training.mask_ratio.end=0.5"])["training"]["mask_ratio"]["end"] == 0.5


def test_unknown_key_suggests_the_right_one():
    with pytest.raises(progtrack.ParseError, match="lambda_align"):
        progtrack.parse_config({"training": {"lamda_align": 0.2}})


def test_parameter_count_matches_the_default_census():
    assert progtrack.parameter_count() == 37509


def test_generated_sequence_shapes_and_determinism():
    a = progtrack.generate_sequence(length=6, canvas=64, seed=3)
    b = progtrack.generate_sequence(length=6, canvas=64, seed=3)
    assert a["frames"].shape == (6, 64, 64, 3)
    assert a["frames"].dtype == np.uint8
    assert a["boxes"].shape == (6, 4)
    assert a["visible"].dtype == bool
    assert np.array_equal(a["frames"], b["frames"])


def test_metric_examples():
    gts = np.array([[0.5, 0.5, 0.2, 0.2], [0.3, 0.4, 0.1, 0.2]])
    vis = np.array([True, True])
    assert progtrack.success_auc(gts, gts, vis) == pytest.approx(20 / 21)
    assert progtrack.precision_metrics(gts, gts, vis, 128) == (1.0, 1.0)
    half = np.array([[0.375, 0.5, 0.25, 0.5]])
    assert progtrack.success_auc(half, np.array([[0.5, 0.5, 0.5, 0.5]]), np.array([True])) == pytest.approx(10 / 21)
    with pytest.raises(progtrack.UndefinedMetric):
        progtrack.success_auc(gts, gts, np.array([False, False]))


def test_train_then_track(tmp_path):
    dataset = {"sequences": 2, "length": 6, "canvas": 64, "min_size": 8, "max_size": 14}
    config = {
        "model": {"embed_dim": 8, "num_layers": 1, "num_heads": 2, "mlp_ratio": 2.0, "template_res": 16,
                  "search_res": 32, "head_hidden_dim": 8},
        "training": {"epochs": 1, "steps_per_epoch": 2, "batch_size": 2, "max_frame_gap": 3},
        "data": {"train": [dataset], "eval": [dict(dataset, name="plain", seed=9)]},
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    out = tmp_path / "run"
    assert progtrack.main(["-c", path, "-o", out, "train"]) == 0
    manifest = next(out.glob("*.manifest.json"))
    info = progtrack.load_checkpoint(manifest)
    assert info["lineage"] == [info["id"]]
    assert info["parameter_count"] == progtrack.parameter_count(info["model"])

    seq = progtrack.generate_sequence(length=5, canvas=64, seed=4)
    boxes = progtrack.track(str(manifest), seq["frames"], seq["boxes"][:1])
    assert boxes.shape == (5, 4)
    assert np.array_equal(boxes[0], seq["boxes"][0])

    assert progtrack.main(["-c", path, "-o", out, "train"]) == 4
