from contextlib import contextmanager

import pytest
from context import beamx
import beamx.benchmark

import numpy as np

from beamx.baselines import label_dataset
from beamx.benchmark import Benchmark, inference_time, model_predictor, solver_predictor
from beamx.channel import DatasetHeader, generate_dataset
from beamx.errors import ConfigError
from beamx.objectives import UtilitySpec
from beamx.params import Checkpoint, FeatureDims, ModelConfig, init_params
from beamx.trainer import TrainConfig, make_checkpoint, train

SPEC = UtilitySpec(kind="srm")


@pytest.fixture(scope="module")
def test_set():
    return generate_dataset(DatasetHeader(k_users=3, n_antennas=4, count=8, seed=21))


@pytest.fixture(scope="module")
def labels(test_set):
    return label_dataset(test_set, SPEC, "wmmse")


def _checkpoint(preset, K=3, N=4, **overrides):
    config = ModelConfig.preset(preset, hidden_dim=8, readout_hidden=8, depth=2, mlp_hidden=16, **overrides)
    dims = FeatureDims.infer(config, K, N)
    return Checkpoint(config=config, dims=dims, params=init_params(config, dims, seed=0), metadata={"seed": 0})


def test_wmmse_scores_itself_at_full_optimality(test_set, labels):
    report = Benchmark(test_set, SPEC, labels=labels).run_solver("wmmse", time_inference=False)

    assert report.optimality == pytest.approx(100.0)
    assert report.feasibility_rate == 100.0
    assert report.stability_at(10.0) == 100.0
    assert report.inference_ms is None


def test_mrt_is_below_wmmse(test_set, labels):
    report = Benchmark(test_set, SPEC, labels=labels).run_solver("mrt", time_inference=False)

    assert report.optimality < 100.0
    assert report.metadata["model_id"] == "mrt"


def test_af_model_is_always_feasible(test_set, labels):
    for preset in ("gcn", "gat", "resgat", "mlp"):
        report = Benchmark(test_set, SPEC, labels=labels).run_model(_checkpoint(preset), time_inference=False)

        assert report.feasibility_rate == 100.0
        assert report.optimality is not None
        assert report.evaluated_samples == 8


def test_report_without_labels(test_set):
    report = Benchmark(test_set, SPEC).run_model(_checkpoint("gcn"), time_inference=False)

    assert report.optimality is None
    assert report.stability == {}
    assert report.feasibility_rate == 100.0


def test_scalability_rows():
    bench_set = generate_dataset(DatasetHeader(k_users=3, n_antennas=4, count=2, seed=0))
    settings = [
        (f"K{K}", generate_dataset(DatasetHeader(k_users=K, n_antennas=4, count=2, seed=K)), None)
        for K in (2, 4)
    ]
    gnn = Benchmark(bench_set, SPEC).run_model(_checkpoint("resgat"), scalability_sets=settings, time_inference=False)
    mlp = Benchmark(bench_set, SPEC).run_model(_checkpoint("mlp"), scalability_sets=settings, time_inference=False)

    assert [r.applicable for r in gnn.scalability] == [True, True]
    assert all(r.feasibility == 100.0 for r in gnn.scalability)
    assert [r.applicable for r in mlp.scalability] == [False, False]
    assert mlp.scalability[0].optimality is None


def test_inference_time(test_set):
    mean, p95 = inference_time(model_predictor(_checkpoint("gcn")), test_set.samples[:3], 10.0, repetitions=2)

    assert 0.0 < mean <= p95
    with pytest.raises(ConfigError):
        inference_time(model_predictor(_checkpoint("gcn")), [], 10.0)


def test_inference_time_runs_on_one_blas_thread(test_set, monkeypatch):
    events = []

    @contextmanager
    def limits(limits=None, user_api=None):
        events.append(("enter", limits))
        yield
        events.append(("exit", limits))

    def predictor(samples, power_budget):
        events.append(("call", len(samples)))
        return []

    monkeypatch.setattr(beamx.benchmark, "threadpool_limits", limits)
    inference_time(predictor, test_set.samples[:2], 10.0, repetitions=1)

    assert events[0] == ("enter", 1)
    assert events[-1] == ("exit", 1)
    assert [e for e in events if e[0] == "call"] == [("call", 1)] * 3


def test_label_kind_must_match(test_set, labels):
    with pytest.raises(ConfigError):
        Benchmark(test_set, UtilitySpec(kind="mmr"), labels=labels)


def test_solver_must_handle_utility():
    with pytest.raises(ConfigError):
        solver_predictor("wmmse", UtilitySpec(kind="eem"))


def test_training_log_feeds_efficiency(test_set, labels):
    log = [{"epoch": 1, "val_utility": 2.0}, {"epoch": 2, "val_utility": 4.0}]
    report = Benchmark(test_set, SPEC, labels=labels).run_model(_checkpoint("gcn"), train_log=log,
                                                               time_inference=False)

    assert report.epochs_to_converge == 2
    assert np.isfinite(report.optimality)


@pytest.mark.slow
def test_scalability_to_unseen_user_counts():
    def channels(K, count, seed):
        return generate_dataset(DatasetHeader(k_users=K, n_antennas=16, count=count, seed=seed))

    train_set = channels(8, 1000, 30)
    base = channels(8, 200, 31)
    settings = [(f"K{K}", d, label_dataset(d, SPEC, "wmmse")) for K, d in ((7, channels(7, 200, 37)),
                                                                          (9, channels(9, 200, 39)))]
    base_labels = label_dataset(base, SPEC, "wmmse")
    reports = {}
    for preset in ("resgat", "mlp"):
        config = ModelConfig.preset(preset)
        train_config = TrainConfig(epochs=60 if preset == "resgat" else 2)
        params, log = train(config, train_config, train_set, show_progress=False)
        checkpoint = make_checkpoint(config, train_config, train_set, params, log)
        reports[preset] = Benchmark(base, SPEC, labels=base_labels).run_model(
            checkpoint, scalability_sets=settings, time_inference=False)

    gnn = reports["resgat"]
    assert all(row.applicable and row.feasibility == 100.0 for row in gnn.scalability)
    assert all(abs(row.optimality - gnn.optimality) <= 10.0 for row in gnn.scalability)
    assert [row.applicable for row in reports["mlp"].scalability] == [False, False]
    assert all(row.optimality is None for row in reports["mlp"].scalability)
