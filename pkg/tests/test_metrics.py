import pytest
from context import beamx

import numpy as np

from beamx import metrics
from beamx.benchmark_result import (
    MetricsReport,
    ScalabilityRow,
    compare_reports,
    emit_report,
    read_radar_csv,
    stability_dict,
)
from beamx.errors import ConfigError
from beamx.metrics import Metrics


def test_optimality_drops_infeasible_samples_from_both_means():
    objectives = np.array([9.0, 1.0, 8.0])
    labels = np.array([10.0, 100.0, 10.0])
    feasible = np.array([True, False, True])

    assert metrics.optimality(objectives, labels, feasible) == pytest.approx(85.0)


def test_optimality_ignores_invalid_labels():
    objectives = np.array([5.0, 5.0])
    labels = np.array([10.0, np.nan])

    assert metrics.optimality(objectives, labels, [True, True]) == pytest.approx(50.0)


def test_optimality_undefined_without_feasible_samples():
    assert metrics.optimality([1.0, 2.0], [2.0, 2.0], [False, False]) is None


def test_feasibility_rate():
    assert metrics.feasibility_rate([1.0, 10.0, 10.5, 11.0], 10.0) == 50.0
    assert metrics.feasibility_rate([], 10.0) is None


def test_stability_is_monotone_in_n():
    rng = np.random.default_rng(0)
    labels = rng.uniform(5.0, 10.0, size=200)
    objectives = labels * rng.uniform(0.4, 1.0, size=200)
    feasible = rng.uniform(size=200) > 0.1
    curve = metrics.stability_curve(objectives, labels, feasible, [1.0, 5.0, 10.0, 20.0, 50.0, 99.9])
    values = [curve[n] for n in sorted(curve)]

    assert all(a <= b for a, b in zip(values, values[1:]))
    assert curve[99.9] == 100.0


@pytest.mark.parametrize("n", [0.0, 100.0, -5.0])
def test_stability_threshold_range(n):
    with pytest.raises(ConfigError):
        metrics.stability([1.0], [1.0], [True], n)


def test_training_efficiency():
    log = [{"epoch": e, "val_utility": v} for e, v in enumerate([1.0, 5.0, 9.95, 10.0, 9.0], start=1)]

    assert metrics.training_efficiency(log) == (None, 3)
    assert metrics.training_efficiency([]) == (None, None)


def test_timing_summary():
    mean, p95 = metrics.timing_summary(list(range(1, 101)))

    assert mean == pytest.approx(50.5)
    assert p95 == pytest.approx(95.05)


def test_normalization():
    assert Metrics.normalize("optimality", 95.0) == pytest.approx(0.95)
    assert Metrics.normalize("optimality", 120.0) == 1.0
    assert Metrics.normalize("inference", 1.0) == pytest.approx(0.5)
    assert Metrics.normalize("training_efficiency", 50.0, {"max_epochs": 100.0}) == pytest.approx(0.5)
    assert Metrics.normalize("stability", None) is None
    assert Metrics.check_axes(["optimality", "stability"])
    assert not Metrics.check_axes(["accuracy"])


def _report():
    return MetricsReport(
        optimality=97.5,
        feasibility_rate=100.0,
        inference_ms=0.8,
        inference_p95_ms=1.1,
        scalability=[
            ScalabilityRow("K7", 7, 16, 10.0, 96.0, 100.0),
            ScalabilityRow("K9", 9, 16, 10.0, 94.0, 100.0),
            ScalabilityRow("mlp-K9", 9, 16, 10.0, None, None, applicable=False),
        ],
        training_samples=1600,
        epochs_to_converge=42,
        stability=stability_dict({5.0: 80.0, 10.0: 95.0}),
        evaluated_samples=500,
        metadata={"model_id": "resgat"},
    )


def test_report_round_trip(tmp_path):
    report = _report()
    path = str(tmp_path / "report.json")
    report.save(path)
    loaded = MetricsReport.load(path)

    assert loaded == report
    assert loaded.scalability_score == pytest.approx(95.0)
    assert loaded.stability_at(10) == 95.0


def test_undefined_metrics_stay_null():
    report = MetricsReport(optimality=float("nan"), feasibility_rate=100.0)
    d = report.to_dict()

    assert d["optimality"] is None
    assert d["inference_ms"] is None
    assert report.axis_values()["stability"] is None


def test_radar_csv(tmp_path):
    path = str(tmp_path / "radar.csv")
    emit_report(_report(), path, format="csv")
    radar = read_radar_csv(path)

    assert list(radar["axis"]) == Metrics.axes
    row = radar.set_index("axis").loc["optimality"]
    assert row["normalized"] == pytest.approx(0.975)
    with pytest.raises(ConfigError):
        emit_report(_report(), path, format="xml")


def test_dataframes_and_comparison():
    frames = _report().get_dataframes()

    assert len(frames["scalability"]) == 3
    assert list(frames["stability"]["n"]) == [5.0, 10.0]
    table = compare_reports({"a": _report(), "b": MetricsReport(optimality=90.0)})
    assert list(table["variant"]) == ["a", "b"]
    assert table.set_index("variant").loc["b", "optimality"] == 90.0
