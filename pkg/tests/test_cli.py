import logging
from pathlib import Path

import numpy as np
import pytest

from xood.cli import main, read_scores_csv
from xood.features import read_feature_csv


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    """A workspace with the full artifact chain built through the CLI."""
    root = tmp_path_factory.mktemp("cli")

    def run(*args):
        return main([str(a) for a in args])

    assert run(
        "gen", "--kind", "blobs", "--count", 240, "--classes", 3,
        "--side", 16, "--seed", 7,
        "--images-out", root / "train.xten", "--labels-out", root / "labels.xten",
    ) == 0
    assert run(
        "gen", "--kind", "uniform", "--count", 60, "--side", 16, "--seed", 99,
        "--images-out", root / "noise.xten",
    ) == 0
    assert run(
        "train", "--images", root / "train.xten", "--labels", root / "labels.xten",
        "--epochs", 2, "--batch-size", 32, "--seed", 7, "--min-accuracy", 0.8,
        "--out", root / "model.xnet",
    ) == 0
    assert run(
        "fit-m", "--model", root / "model.xnet", "--images", root / "train.xten",
        "--labels", root / "labels.xten", "--seed", 7, "--out", root / "mdet",
    ) == 0
    assert run(
        "fit-l", "--model", root / "model.xnet", "--images", root / "train.xten",
        "--labels", root / "labels.xten", "--seed", 7,
        "--lambda-grid", "0.01,1.0", "--out", root / "ldet",
    ) == 0
    assert run(
        "score", "--model", root / "model.xnet", "--detector", root / "mdet",
        "--images", root / "train.xten", "--out", root / "id_scores.csv",
    ) == 0
    assert run(
        "score", "--model", root / "model.xnet", "--detector", root / "mdet",
        "--images", root / "noise.xten", "--out", root / "ood_scores.csv",
    ) == 0
    return root, run


def manifest(path) -> dict[str, str]:
    entries = {}
    for line in Path(path).read_text().splitlines():
        key, _, value = line.partition("=")
        entries[key] = value
    return entries


def test_gen_writes_manifest(ws):
    root, _ = ws
    m = manifest(str(root / "train.xten") + ".manifest")
    assert m["kind"] == "blobs" and m["generated"] == "240"
    assert m["seed"] == "7"


def test_train_manifest_reports_accuracy_and_split(ws):
    root, _ = ws
    m = manifest(str(root / "model.xnet") + ".manifest")
    assert float(m["train_accuracy"]) >= 0.8
    assert int(m["train_images"]) == 192 and int(m["calibration_images"]) == 48


def test_train_is_deterministic(ws, tmp_path):
    root, run = ws
    assert run(
        "train", "--images", root / "train.xten", "--labels", root / "labels.xten",
        "--epochs", 2, "--batch-size", 32, "--seed", 7,
        "--out", tmp_path / "again.xnet",
    ) == 0
    assert (tmp_path / "again.xnet").read_bytes() == (root / "model.xnet").read_bytes()


def test_overwrite_needs_force(ws, tmp_path):
    root, run = ws
    args = (
        "gen", "--kind", "uniform", "--count", 5, "--side", 16,
        "--images-out", tmp_path / "n.xten",
    )
    assert run(*args) == 0
    assert run(*args) == 2  # refuses silently clobbering
    assert run(*args, "--force") == 0


def test_extract_writes_feature_table(ws, tmp_path):
    root, run = ws
    out = tmp_path / "feats.csv"
    assert run(
        "extract", "--model", root / "model.xnet", "--images", root / "noise.xten",
        "--feature-kind", "minmax", "--out", out,
    ) == 0
    names, values = read_feature_csv(out)
    assert names == [
        "layer1_min", "layer1_max", "layer2_min", "layer2_max",
        "layer3_min", "layer3_max",
    ]
    assert values.shape == (60, 6)
    m = manifest(str(out) + ".manifest")
    assert m["rows"] == "60" and m["width"] == "6"


def test_fit_manifests_record_derived_stats(ws):
    root, _ = ws
    m = manifest(root / "mdet" / "run.manifest")
    assert m["dim"] == "6"
    float(m["threshold"])  # parseable
    l = manifest(root / "ldet" / "run.manifest")
    assert float(l["selected_lambda"]) in (0.01, 1.0)
    assert l["folds"] == "5"


def test_fit_m_warns_on_distortion_seed(ws, tmp_path, caplog):
    root, run = ws
    with caplog.at_level(logging.WARNING):
        assert run(
            "fit-m", "--model", root / "model.xnet",
            "--images", root / "train.xten", "--labels", root / "labels.xten",
            "--seed", 7, "--distortion-seed", 3, "--out", tmp_path / "m2",
        ) == 0
    assert any("ignored" in r.message for r in caplog.records)


def test_scores_file_shape(ws):
    root, _ = ws
    scores = read_scores_csv(root / "id_scores.csv")
    assert scores.shape == (240,)
    assert np.isfinite(scores).all()


def test_eval_table_and_append(ws, tmp_path):
    root, run = ws
    out = tmp_path / "metrics.csv"
    assert run(
        "eval", "--id-scores", root / "id_scores.csv",
        "--ood-scores", root / "ood_scores.csv",
        "--method", "xood-m", "--id-name", "blobs", "--ood-names", "uniform",
        "--out", out,
    ) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "in_dist,out_dist,method,auroc,tnr95,det_acc,fpr95"
    assert len(lines) == 2
    first = lines[1].split(",")
    assert first[:3] == ["blobs", "uniform", "xood-m"]
    auroc = float(first[3])
    assert 0.9 <= auroc <= 1.0  # uniform noise is easy
    assert float(first[6]) == pytest.approx(1.0 - float(first[4]), abs=1e-6)

    assert run(
        "eval", "--id-scores", root / "id_scores.csv",
        "--ood-scores", root / "ood_scores.csv",
        "--method", "msp", "--out", out, "--append",
    ) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 3 and lines[2].split(",")[2] == "msp"


def test_eval_average_row_for_multiple_ood_sets(ws, tmp_path):
    root, run = ws
    out = tmp_path / "metrics.csv"
    assert run(
        "eval", "--id-scores", root / "id_scores.csv",
        "--ood-scores", root / "ood_scores.csv",
        "--ood-scores", root / "ood_scores.csv",
        "--method", "xood-m", "--out", out,
    ) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 4
    assert lines[3].split(",")[1] == "average"
    # average of two identical rows equals the row
    assert lines[3].split(",")[3] == lines[1].split(",")[3]


def test_eval_name_count_mismatch_is_config_error(ws, tmp_path):
    root, run = ws
    assert run(
        "eval", "--id-scores", root / "id_scores.csv",
        "--ood-scores", root / "ood_scores.csv",
        "--ood-names", "a,b", "--out", tmp_path / "m.csv",
    ) == 2


def test_distort_round_trip(ws, tmp_path):
    root, run = ws
    assert run(
        "distort", "--kind", "mixup", "--images", root / "train.xten",
        "--labels", root / "labels.xten", "--seed", 5,
        "--images-out", tmp_path / "mix.xten", "--labels-out", tmp_path / "mix_l.xten",
    ) == 0
    from xood.datasets import load_images_any, load_labels_any

    ds = load_images_any(tmp_path / "mix.xten")
    assert ds.images.shape == (240, 1, 16, 16)
    labels = load_labels_any(tmp_path / "mix_l.xten", 240)
    assert labels.min() >= 0 and labels.max() <= 2
    # unknown family is a config error
    assert run(
        "distort", "--kind", "wobble", "--images", root / "train.xten",
        "--images-out", tmp_path / "w.xten",
    ) == 2


def test_hist_outputs(ws, tmp_path):
    root, run = ws
    out = tmp_path / "hists"
    assert run(
        "hist", "--model", root / "model.xnet", "--id-images", root / "train.xten",
        "--ood-images", root / "noise.xten", "--bins", 10, "--out", out,
    ) == 0
    summary = (out / "hist_summary.csv").read_text().splitlines()
    assert summary[0] == "layer,stat,id_p01,id_p99,ood_outside_fraction"
    assert len(summary) == 7  # 3 layers x (min, max)
    for layer in (1, 2, 3):
        lines = (out / f"hist_layer{layer}.csv").read_text().splitlines()
        assert lines[0] == "stat,population,bin_left,bin_right,count"
        assert len(lines) == 1 + 2 * 2 * 10  # stats x populations x bins
        counts = sum(int(l.split(",")[4]) for l in lines[1:])
        assert counts == 2 * (240 + 60)  # every image once per stat


def test_bench_reports_overheads(ws, tmp_path):
    root, run = ws
    out = tmp_path / "bench.csv"
    assert run(
        "bench", "--model", root / "model.xnet", "--images", root / "noise.xten",
        "--detector-m", root / "mdet", "--detector-l", root / "ldet",
        "--repeats", 3, "--out", out,
    ) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "method,mean_seconds,ci99_seconds,overhead"
    methods = [l.split(",")[0] for l in lines[1:]]
    assert methods == ["baseline", "xood-m", "xood-l"]
    assert lines[1].split(",")[3] == "0%"
    for line in lines[1:]:
        assert float(line.split(",")[1]) > 0.0


def test_config_file_defaults_cli_overrides(ws, tmp_path):
    root, run = ws
    cfg = tmp_path / "train.cfg"
    cfg.write_text("epochs=1\nbatch-size=16\n# comment\n\nseed=7\n")
    out = tmp_path / "m.xnet"
    assert run(
        "train", "--config", cfg, "--images", root / "train.xten",
        "--labels", root / "labels.xten", "--epochs", 2, "--out", out,
    ) == 0
    m = manifest(str(out) + ".manifest")
    assert m["epochs"] == "2"  # CLI wins
    assert m["batch-size"] == "16"  # config fills the gap
    cfg.write_text("nonsense=1\n")
    assert run(
        "train", "--config", cfg, "--images", root / "train.xten",
        "--labels", root / "labels.xten", "--out", tmp_path / "m2.xnet",
    ) == 2


def test_missing_required_option_is_config_error(ws):
    _, run = ws
    assert run("gen", "--kind", "blobs", "--count", 5) == 2


def test_unreadable_inputs_are_data_errors(ws, tmp_path):
    root, run = ws
    junk = tmp_path / "junk.xten"
    junk.write_bytes(b"ZZZZ")
    assert run(
        "extract", "--model", root / "model.xnet", "--images", junk,
        "--out", tmp_path / "f.csv",
    ) == 3
    assert run(
        "score", "--model", root / "model.xnet", "--detector", root / "mdet",
        "--images", tmp_path / "does-not-exist.xten", "--out", tmp_path / "s.csv",
    ) == 3


def test_accuracy_floor_is_numerical_error(ws, tmp_path):
    root, run = ws
    # epochs=0 keeps the random initialization, far below the floor
    assert run(
        "train", "--images", root / "train.xten", "--labels", root / "labels.xten",
        "--epochs", 0, "--min-accuracy", 0.9, "--out", tmp_path / "bad.xnet",
    ) == 4


def test_unknown_flag_exits_2(ws):
    _, run = ws
    assert run("gen", "--wat", "7") == 2
