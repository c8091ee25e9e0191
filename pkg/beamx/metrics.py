import logging
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from beamx.defaults import default_convergence_rel, default_epochs, default_feasibility_tol
from beamx.errors import ConfigError


class Metrics:
    """
    The six evaluation axes of a learned beamformer.

        label                   value
    [1] optimality ........... 100 * mean(objective) / mean(label), feasible samples only
    [2] feasibility .......... % of outputs with ||W||_F^2 <= P (1 + tol)
    [3] inference ............ mean wall time per sample, ms
    [4] scalability .......... mean optimality over unseen settings (K or P)
    [5] training_efficiency .. training samples and epochs to converge
    [6] stability ............ % of feasible outputs within n% of their label

    For radar charts every axis is mapped to [0, 1] with the constants in
    `normalization`: percentages are divided by 100 (and clipped), the
    inference time t becomes ref / (ref + t), the epochs e become
    1 - e / max_epochs. Undefined metrics stay None.
    """

    axes = ["optimality", "feasibility", "inference", "scalability", "training_efficiency", "stability"]
    normalization = {
        "optimality": 100.0,
        "feasibility": 100.0,
        "inference_ref_ms": 1.0,
        "scalability": 100.0,
        "max_epochs": float(default_epochs),
        "stability": 100.0,
    }

    def __init__(self) -> None:
        pass

    @staticmethod
    def check_axes(axes: Iterable[str]) -> bool:
        for axis in axes:
            if axis not in Metrics.axes:
                logging.warning(msg=f"Metric '{axis}' is not one of the evaluation axes {Metrics.axes}.")
                return False
        return True

    @staticmethod
    def normalize(axis: str, value: Optional[float], constants: Optional[Mapping[str, float]] = None) -> Optional[float]:
        """Radar value in [0, 1] of a raw metric, None stays None."""
        if value is None:
            return None
        c = dict(Metrics.normalization, **(constants or {}))
        if axis == "inference":
            return float(c["inference_ref_ms"] / (c["inference_ref_ms"] + value))
        if axis == "training_efficiency":
            return float(np.clip(1.0 - value / c["max_epochs"], 0.0, 1.0))
        return float(np.clip(value / c[axis], 0.0, 1.0))


def _valid_mask(objectives, labels, feasible) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    objectives = np.asarray(objectives, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    feasible = np.asarray(feasible, dtype=bool)
    if not objectives.shape == labels.shape == feasible.shape:
        raise ConfigError(f"shape mismatch: {objectives.shape} objectives, {labels.shape} labels, {feasible.shape} flags")
    mask = feasible & np.isfinite(labels) & np.isfinite(objectives)
    return objectives, labels, mask


def optimality(objectives, labels, feasible) -> Optional[float]:
    """
    100 * mean(objective) / mean(label) over samples that are feasible and
    carry a valid label. Infeasible samples drop out of both means.

    Returns:
        the percentage, or None when no sample qualifies.
    """
    objectives, labels, mask = _valid_mask(objectives, labels, feasible)
    if not mask.any():
        return None
    denominator = labels[mask].mean()
    if denominator == 0:
        logging.warning("optimality undefined: the mean label is zero")
        return None
    return float(100.0 * objectives[mask].mean() / denominator)


def feasibility_rate(powers, power_budget: float, tol: float = default_feasibility_tol) -> Optional[float]:
    powers = np.asarray(powers, dtype=np.float64)
    if powers.size == 0:
        return None
    return float(100.0 * np.mean(powers <= power_budget * (1.0 + tol)))


def stability(objectives, labels, feasible, n: float) -> Optional[float]:
    """
    % of feasible samples whose objective loses at most n% against the label.
    """
    if not 0 < n < 100:
        raise ConfigError(f"stability n must lie in (0, 100), got {n}")
    objectives, labels, mask = _valid_mask(objectives, labels, feasible)
    if not mask.any():
        return None
    within = objectives[mask] >= (1.0 - n / 100.0) * labels[mask]
    return float(100.0 * within.mean())


def stability_curve(objectives, labels, feasible, ns: Sequence[float]) -> Dict[float, Optional[float]]:
    return {float(n): stability(objectives, labels, feasible, n) for n in ns}


def training_efficiency(log, relative: float = default_convergence_rel) -> Tuple[Optional[int], Optional[int]]:
    """
    (samples used, epochs to converge) of a training run, where the
    convergence epoch is the first whose validation utility is within
    `relative` of the best.

    Args:
        log: a TrainLog, or a sequence of per-epoch dicts with "epoch" and
            "val_utility".
    """
    records = log.records if hasattr(log, "records") else list(log)
    samples = getattr(log, "train_samples", None)
    values = [(int(r["epoch"]), r["val_utility"]) for r in records
              if r.get("val_utility") is not None and np.isfinite(r["val_utility"])]
    if not values:
        return samples, None
    best = max(v for _, v in values)
    threshold = best - relative * abs(best)
    epoch = min(e for e, v in values if v >= threshold)
    return samples, epoch


def timing_summary(times_ms: Union[List[float], np.ndarray]) -> Tuple[float, float]:
    """(mean, p95) of per-sample times in ms."""
    times_ms = np.asarray(times_ms, dtype=np.float64)
    return float(times_ms.mean()), float(np.percentile(times_ms, 95))
