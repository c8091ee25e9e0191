"""
Evaluation harness: runs a trained model (or a classical scheme) over test
sets and fills a MetricsReport with the six evaluation axes.
"""
import logging
import time
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from threadpoolctl import threadpool_limits

import beamx.metrics as _metrics
from beamx import baselines
from beamx.benchmark_result import MetricsReport, ScalabilityRow, stability_dict
from beamx.channel import ChannelDataset, ChannelSample
from beamx.defaults import (
    default_feasibility_tol,
    default_stability_curve,
    default_stability_n,
    default_timing_repetitions,
)
from beamx.errors import ConfigError, DimensionError
from beamx.gnn import predict
from beamx.graphrep import build_graph
from beamx.methods import check_solver
from beamx.objectives import BeamMatrix, UtilitySpec, utility_numpy
from beamx.params import Checkpoint
from beamx.problem import BeamformingProblem

Predictor = Callable[[Sequence[ChannelSample], float], List[BeamMatrix]]


def model_predictor(checkpoint: Checkpoint) -> Predictor:
    """Maps channel samples to beam matrices through the checkpointed model."""
    config, params, dims = checkpoint.config, checkpoint.params.tensors(), checkpoint.dims

    def run(samples: Sequence[ChannelSample], power_budget: float) -> List[BeamMatrix]:
        if config.is_mlp:
            return predict(config, params, samples, power_budget, dims=dims)
        graphs = [build_graph(s, config.representation, config.edge_feature_mode) for s in samples]
        return predict(config, params, graphs, power_budget)

    return run


def solver_predictor(name: str, spec: UtilitySpec, settings: Optional[Dict] = None) -> Predictor:
    if not check_solver([name], spec.kind):
        raise ConfigError(f"solver '{name}' cannot handle utility '{spec.kind}'")

    def run(samples: Sequence[ChannelSample], power_budget: float) -> List[BeamMatrix]:
        problem_spec = UtilitySpec(kind=spec.kind, sigma2=spec.sigma2, power_budget=power_budget,
                                   circuit_power=spec.circuit_power)
        solver = baselines.make_solver(name, problem_spec, settings)
        return [
            BeamMatrix.create(baselines.solve(BeamformingProblem(s, problem_spec), solver).W, power_budget)
            for s in samples
        ]

    return run


def inference_time(predictor: Predictor, samples: Sequence[ChannelSample], power_budget: float,
                   repetitions: int = default_timing_repetitions) -> Tuple[float, float]:
    """
    Wall time per sample in ms, (mean, p95) over samples x repetitions.

    Samples are timed one at a time in this thread after one warm-up call,
    with BLAS pools held to a single thread.
    """
    samples = list(samples)
    if not samples:
        raise ConfigError("cannot time an empty test set")
    if repetitions < 1:
        raise ConfigError(f"repetitions must be >= 1, got {repetitions}")
    times = []
    with threadpool_limits(limits=1):
        predictor(samples[:1], power_budget)
        for _ in range(repetitions):
            for sample in samples:
                start = time.perf_counter()
                predictor([sample], power_budget)
                times.append(1000.0 * (time.perf_counter() - start))
    return _metrics.timing_summary(times)


class Benchmark:
    """
    Scores beam matrices against labels on one test set.

    Attributes:
        dataset (ChannelDataset): test channels.
        labels (LabelSet, optional): objective labels; without them the
            optimality and stability axes stay undefined.
        spec (UtilitySpec): utility being evaluated, P and sigma2 from the dataset.
    """

    def __init__(self, dataset: ChannelDataset, spec: UtilitySpec, labels: Optional[baselines.LabelSet] = None,
                 stability_n: float = default_stability_n, stability_ns: Sequence[float] = default_stability_curve,
                 repetitions: int = default_timing_repetitions, feasibility_tol: float = default_feasibility_tol) -> None:
        self.dataset = dataset
        self.spec = UtilitySpec(kind=spec.kind, sigma2=dataset.header.sigma2,
                                power_budget=dataset.header.power_budget,
                                circuit_power=spec.circuit_power).validate()
        if labels is not None and labels.spec.kind != spec.kind:
            raise ConfigError(f"labels are {labels.spec.kind} values, evaluating {spec.kind}")
        if labels is not None and len(labels) != len(dataset):
            raise ConfigError(f"{len(labels)} labels for {len(dataset)} samples")
        self.labels = labels
        self.stability_n = stability_n
        self.stability_ns = sorted(set(float(n) for n in stability_ns) | {float(stability_n)})
        self.repetitions = repetitions
        self.feasibility_tol = feasibility_tol

    def score(self, beams: Sequence[BeamMatrix], dataset: Optional[ChannelDataset] = None,
              labels: Optional[baselines.LabelSet] = None) -> Dict:
        """Objectives, feasibility and label-based metrics of given beams."""
        dataset = self.dataset if dataset is None else dataset
        labels = labels if labels is not None else (self.labels if dataset is self.dataset else None)
        power_budget = dataset.header.power_budget
        spec = UtilitySpec(kind=self.spec.kind, sigma2=dataset.header.sigma2, power_budget=power_budget,
                           circuit_power=self.spec.circuit_power)
        powers = np.array([b.power for b in beams])
        feasible = powers <= power_budget * (1.0 + self.feasibility_tol)
        objectives = np.array([utility_numpy(s.H, b.W, spec) for s, b in zip(dataset.samples, beams)])
        out = {
            "objectives": objectives,
            "feasible": feasible,
            "feasibility_rate": _metrics.feasibility_rate(powers, power_budget, self.feasibility_tol),
            "optimality": None,
            "stability": {},
            "invalid_labels": 0,
        }
        if labels is not None:
            values = labels.aligned(dataset.sample_ids)
            out["invalid_labels"] = int(np.sum(~np.isfinite(values)))
            out["optimality"] = _metrics.optimality(objectives, values, feasible)
            out["stability"] = _metrics.stability_curve(objectives, values, feasible, self.stability_ns)
        return out

    def scalability_eval(self, predictor: Predictor,
                         settings: Sequence[Tuple[str, ChannelDataset, Optional[baselines.LabelSet]]]) -> List[ScalabilityRow]:
        """
        Optimality and feasibility on every (descriptor, dataset, labels)
        setting. A model that cannot run on a setting gives an N/A row.
        """
        rows = []
        for setting, dataset, labels in settings:
            header = dataset.header
            try:
                beams = predictor(dataset.samples, header.power_budget)
            except DimensionError as e:
                logging.info(f"scalability setting {setting} not applicable: {e}")
                rows.append(ScalabilityRow(setting=setting, k_users=header.k_users, n_antennas=header.n_antennas,
                                           power_budget=header.power_budget, optimality=None, feasibility=None,
                                           applicable=False))
                continue
            scored = self.score(beams, dataset, labels)
            rows.append(ScalabilityRow(setting=setting, k_users=header.k_users, n_antennas=header.n_antennas,
                                       power_budget=header.power_budget, optimality=scored["optimality"],
                                       feasibility=scored["feasibility_rate"]))
        return rows

    def run(self, predictor: Predictor, metadata: Optional[Dict] = None, train_log=None,
            scalability_sets: Sequence = (), time_inference: bool = True) -> MetricsReport:
        """Full six-axis report of a predictor on the test set."""
        beams = predictor(self.dataset.samples, self.spec.power_budget)
        scored = self.score(beams)
        report = MetricsReport(
            optimality=scored["optimality"],
            feasibility_rate=scored["feasibility_rate"],
            stability=stability_dict(scored["stability"]),
            stability_n=self.stability_n,
            evaluated_samples=len(self.dataset),
            invalid_labels=scored["invalid_labels"],
            metadata=dict(metadata or {}),
        )
        report.metadata.setdefault("utility", self.spec.kind)
        report.metadata.setdefault("power_budget", self.spec.power_budget)
        report.metadata.setdefault("k_users", self.dataset.header.k_users)
        report.metadata.setdefault("n_antennas", self.dataset.header.n_antennas)
        if time_inference:
            report.inference_ms, report.inference_p95_ms = inference_time(
                predictor, self.dataset.samples, self.spec.power_budget, self.repetitions
            )
        if train_log is not None:
            report.training_samples, report.epochs_to_converge = _metrics.training_efficiency(train_log)
        if scalability_sets:
            report.scalability = self.scalability_eval(predictor, scalability_sets)
        logging.info(
            f"Evaluated {report.metadata.get('model_id', 'model')}: optimality {report.optimality}, "
            f"feasibility {report.feasibility_rate}"
        )
        return report

    def run_model(self, checkpoint: Checkpoint, train_log=None, scalability_sets: Sequence = (),
                  time_inference: bool = True) -> MetricsReport:
        metadata = {
            "model_id": checkpoint.config.model_id,
            "constraint_mode": checkpoint.config.constraint_mode,
            **{k: v for k, v in checkpoint.metadata.items() if k in ("seed", "utility", "learning", "dataset_id")},
        }
        report = self.run(model_predictor(checkpoint), metadata, train_log, scalability_sets, time_inference)
        if report.training_samples is None:
            report.training_samples = checkpoint.metadata.get("train_samples")
        return report

    def run_solver(self, name: str, settings: Optional[Dict] = None, time_inference: bool = True) -> MetricsReport:
        metadata = {"model_id": name, "constraint_mode": "exact"}
        return self.run(solver_predictor(name, self.spec, settings), metadata, time_inference=time_inference)
