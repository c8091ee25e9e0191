import json
import os

import pytest
from context import beamx

import pandas as pd

from beamx.benchmark_result import MetricsReport
from beamx.channel import load_dataset
import beamx.cli
from beamx.cli import main, manifest_path
from beamx.errors import TrainingDivergedError
from beamx.params import FeatureDims, init_params, load_checkpoint
from beamx.trainer import TrainLog

TINY = {"model": {"hidden_dim": 8, "readout_hidden": 8, "depth": 1, "mlp_hidden": 16},
        "train": {"batch_size": 8, "val_fraction": 0.25}}


@pytest.fixture
def workdir(tmp_path):
    config = tmp_path / "tiny.json"
    config.write_text(json.dumps(TINY))
    return tmp_path


def _gen(workdir, name="train.jsonl", k=3, n=4, count=16, seed=0):
    out = str(workdir / name)
    assert main(["gen-data", "--k", str(k), "--n", str(n), "--count", str(count), "--seed", str(seed),
                 "--out", out]) == 0
    return out


def test_gen_data_writes_dataset_and_manifest(workdir):
    out = _gen(workdir)
    dataset = load_dataset(out)
    with open(manifest_path(out)) as file:
        manifest = json.load(file)

    assert len(dataset) == 16
    assert dataset.header.k_users == 3
    assert manifest["command"] == "gen-data"
    assert manifest["seeds"]["channel"] == 0
    assert manifest["outputs"]["dataset"] == out
    assert manifest["versions"]["beamx"] == beamx.__version__


@pytest.mark.parametrize(
    "argv",
    [
        ["gen-data", "--k", "3", "--n", "4", "--count", "5"],
        ["gen-data", "--k", "3", "--n", "4", "--count", "0", "--out", "x.jsonl"],
        ["ablate", "--recipe", "dropout", "--dataset", "x.jsonl", "--out", "y.json"],
        ["fly"],
    ],
)
def test_usage_errors(argv):
    assert main(argv) == 2


def test_label_with_unknown_utility(workdir):
    dataset = _gen(workdir)

    assert main(["label", "--dataset", dataset, "--utility", "throughput", "--out", str(workdir / "l.jsonl")]) == 2


def test_label_with_bad_settings(workdir):
    dataset = _gen(workdir)

    assert main(["label", "--dataset", dataset, "--utility", "srm", "--settings", "{max_iter",
                 "--out", str(workdir / "l.jsonl")]) == 2


def test_missing_dataset_is_a_usage_error(workdir):
    assert main(["train", "--dataset", str(workdir / "none.jsonl"), "--out", str(workdir / "m.json")]) == 2


def test_supervised_training_needs_labels(workdir):
    dataset = _gen(workdir)

    assert main(["train", "--dataset", dataset, "--learning", "sup", "--config", str(workdir / "tiny.json"),
                 "--epochs", "1", "--out", str(workdir / "m.json")]) == 2


def test_eval_needs_exactly_one_predictor(workdir):
    dataset = _gen(workdir)

    assert main(["eval", "--dataset", dataset, "--out", str(workdir / "r.json")]) == 2


def test_train_then_eval(workdir):
    train_set = _gen(workdir)
    test_set = _gen(workdir, "test.jsonl", count=4, seed=1)
    labels = str(workdir / "test.labels.jsonl")
    checkpoint = str(workdir / "gcn.ckpt.json")
    report_path = str(workdir / "report.json")

    assert main(["label", "--dataset", test_set, "--utility", "srm", "--out", labels]) == 0
    assert main(["train", "--dataset", train_set, "--model", "gcn", "--config", str(workdir / "tiny.json"),
                 "--epochs", "1", "--out", checkpoint]) == 0
    assert main(["eval", "--checkpoint", checkpoint, "--dataset", test_set, "--labels", labels,
                 "--no-timing", "--out", report_path]) == 0

    log = TrainLog.load(str(workdir / "gcn.ckpt.trainlog.jsonl"))
    report = MetricsReport.load(report_path)
    radar = pd.read_csv(str(workdir / "report.radar.csv"))
    assert log.epochs == 1
    assert report.feasibility_rate == 100.0
    assert report.evaluated_samples == 4
    assert report.training_samples == 12
    assert report.epochs_to_converge == 1
    assert "optimality" in set(radar["axis"])
    assert os.path.exists(manifest_path(checkpoint))
    assert os.path.exists(manifest_path(report_path))


def test_solver_eval(workdir):
    dataset = _gen(workdir, count=3)
    out = str(workdir / "mrt.json")

    assert main(["eval", "--solver", "mrt", "--dataset", dataset, "--no-timing", "--out", out]) == 0
    assert MetricsReport.load(out).metadata["model_id"] == "mrt"


def test_mlp_checkpoint_rejects_other_dimensions(workdir):
    train_set = _gen(workdir)
    other = _gen(workdir, "k5.jsonl", k=5, count=3)
    checkpoint = str(workdir / "mlp.ckpt.json")

    assert main(["train", "--dataset", train_set, "--model", "mlp", "--config", str(workdir / "tiny.json"),
                 "--epochs", "1", "--out", checkpoint]) == 0
    assert main(["eval", "--checkpoint", checkpoint, "--dataset", other, "--no-timing",
                 "--out", str(workdir / "r.json")]) == 2


def test_scale_eval_reports_every_setting(workdir):
    train_set = _gen(workdir)
    k2 = _gen(workdir, "k2.jsonl", k=2, count=3, seed=2)
    k5 = _gen(workdir, "k5.jsonl", k=5, count=3, seed=5)
    checkpoint = str(workdir / "resgat.ckpt.json")
    out = str(workdir / "scale.json")

    assert main(["train", "--dataset", train_set, "--model", "resgat", "--config", str(workdir / "tiny.json"),
                 "--epochs", "1", "--out", checkpoint]) == 0
    assert main(["scale-eval", "--checkpoint", checkpoint, "--datasets", k2, k5, "--base-dataset", train_set,
                 "--no-timing", "--out", out]) == 0
    report = MetricsReport.load(out)
    assert [row.k_users for row in report.scalability] == [2, 5]
    assert all(row.applicable for row in report.scalability)


def test_scale_eval_reports_na_rows_for_mlp(workdir):
    train_set = _gen(workdir)
    sets = [_gen(workdir, f"k{k}.jsonl", k=k, count=3, seed=k) for k in (2, 3, 4)]
    checkpoint = str(workdir / "mlp.ckpt.json")
    out = str(workdir / "scale.json")

    assert main(["train", "--dataset", train_set, "--model", "mlp", "--config", str(workdir / "tiny.json"),
                 "--epochs", "1", "--out", checkpoint]) == 0
    assert main(["scale-eval", "--checkpoint", checkpoint, "--datasets", *sets, "--no-timing", "--out", out]) == 0
    report = MetricsReport.load(out)
    assert [row.applicable for row in report.scalability] == [False, True, False]
    assert report.scalability[0].optimality is None
    assert report.metadata["k_users"] == 3


def test_scale_eval_without_matching_base(workdir):
    train_set = _gen(workdir)
    other = _gen(workdir, "k5.jsonl", k=5, count=3)
    checkpoint = str(workdir / "mlp.ckpt.json")

    assert main(["train", "--dataset", train_set, "--model", "mlp", "--config", str(workdir / "tiny.json"),
                 "--epochs", "1", "--out", checkpoint]) == 0
    assert main(["scale-eval", "--checkpoint", checkpoint, "--datasets", other, "--no-timing",
                 "--out", str(workdir / "scale.json")]) == 2


def test_diverged_training_keeps_last_finite_checkpoint(workdir, monkeypatch):
    train_set = _gen(workdir)
    checkpoint = str(workdir / "gcn.ckpt.json")

    def diverge(model_config, train_config, dataset, labels=None):
        dims = FeatureDims.infer(model_config, dataset.header.k_users, dataset.header.n_antennas)
        raise TrainingDivergedError(3, init_params(model_config, dims, seed=0), "loss diverged in epoch 3")

    monkeypatch.setattr(beamx.cli, "train", diverge)
    assert main(["train", "--dataset", train_set, "--model", "gcn", "--config", str(workdir / "tiny.json"),
                 "--out", checkpoint]) == 1
    saved = load_checkpoint(checkpoint)
    assert saved.metadata["diverged_at_epoch"] == 3
    assert saved.params.equals(init_params(saved.config, saved.dims, seed=0))
    assert os.path.exists(manifest_path(checkpoint))
