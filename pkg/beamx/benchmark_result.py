import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np
import pandas as pd

from beamx.defaults import default_stability_n
from beamx.errors import ConfigError
from beamx.metrics import Metrics

REPORT_FORMAT = "beamx-report/1"
REPORT_FORMATS = ("json", "csv")


@dataclass
class ScalabilityRow:
    """
    One unseen setting of a scalability sweep.

    applicable is False when the model cannot run on the setting at all
    (mlp baseline on new dimensions); its metrics are then None.
    """

    setting: str
    k_users: int
    n_antennas: int
    power_budget: float
    optimality: Optional[float]
    feasibility: Optional[float]
    applicable: bool = True


def _clean(value):
    """NaN -> None, numpy scalars -> Python."""
    if value is None:
        return None
    value = float(value)
    return None if not np.isfinite(value) else value


@dataclass
class MetricsReport:
    """
    Evaluation of one model (or classical scheme) on one test set.

    Undefined metrics are None and serialize as null, never as 0.
    """

    optimality: Optional[float] = None
    feasibility_rate: Optional[float] = None
    inference_ms: Optional[float] = None
    inference_p95_ms: Optional[float] = None
    scalability: List[ScalabilityRow] = field(default_factory=list)
    training_samples: Optional[int] = None
    epochs_to_converge: Optional[int] = None
    stability: Dict[str, Optional[float]] = field(default_factory=dict)
    stability_n: float = default_stability_n
    evaluated_samples: int = 0
    invalid_labels: int = 0
    metadata: Dict = field(default_factory=dict)
    manifest: Optional[str] = None

    def stability_at(self, n: float) -> Optional[float]:
        return self.stability.get(_stability_key(n))

    @property
    def scalability_score(self) -> Optional[float]:
        values = [r.optimality for r in self.scalability if r.applicable and r.optimality is not None]
        return float(np.mean(values)) if values else None

    def axis_values(self) -> Dict[str, Optional[float]]:
        """Raw value of each radar axis."""
        return {
            "optimality": self.optimality,
            "feasibility": self.feasibility_rate,
            "inference": self.inference_ms,
            "scalability": self.scalability_score,
            "training_efficiency": None if self.epochs_to_converge is None else float(self.epochs_to_converge),
            "stability": self.stability_at(self.stability_n),
        }

    def to_dict(self) -> dict:
        d = asdict(self)
        d["format"] = REPORT_FORMAT
        for key in ("optimality", "feasibility_rate", "inference_ms", "inference_p95_ms"):
            d[key] = _clean(d[key])
        d["stability"] = {k: _clean(v) for k, v in self.stability.items()}
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "MetricsReport":
        d = dict(d)
        if d.pop("format", REPORT_FORMAT) != REPORT_FORMAT:
            raise ConfigError("not a metrics report")
        d["scalability"] = [ScalabilityRow(**row) for row in d.get("scalability", [])]
        return cls(**d)

    def save(self, path: str) -> None:
        with open(path, "w") as file:
            json.dump(self.to_dict(), file, indent=2)

    @classmethod
    def load(cls, path: str) -> "MetricsReport":
        with open(path) as file:
            return cls.from_dict(json.load(file))

    def get_dataframes(self) -> Dict[str, pd.DataFrame]:
        """
        Tabular views of the report:
            "radar"       one row per axis: raw value, normalized value, constant
            "scalability" one row per unseen setting
            "stability"   the stability curve
        """
        constants = self.metadata.get("normalization", {})
        norm = dict(Metrics.normalization, **constants)
        raw = self.axis_values()
        radar = pd.DataFrame([
            {
                "axis": axis,
                "value": raw[axis],
                "normalized": Metrics.normalize(axis, raw[axis], constants),
                "normalization": _constant_of(axis, norm),
            }
            for axis in Metrics.axes
        ])
        scalability = pd.DataFrame([asdict(r) for r in self.scalability],
                                   columns=[f for f in ScalabilityRow.__dataclass_fields__])
        stability = pd.DataFrame(
            [{"n": float(k), "stability": v} for k, v in sorted(self.stability.items(), key=lambda kv: float(kv[0]))],
            columns=["n", "stability"],
        )
        return {"radar": radar, "scalability": scalability, "stability": stability}

    def summary(self) -> str:
        def fmt(v, unit="%"):
            return "n/a" if v is None else f"{v:.2f}{unit}"

        lines = [
            f"model        {self.metadata.get('model_id', '?')}",
            f"optimality   {fmt(self.optimality)}",
            f"feasibility  {fmt(self.feasibility_rate)}",
            f"inference    {fmt(self.inference_ms, ' ms')}",
            f"stability@{self.stability_n:g} {fmt(self.stability_at(self.stability_n))}",
        ]
        if self.epochs_to_converge is not None:
            lines.append(f"converged at epoch {self.epochs_to_converge} with {self.training_samples} samples")
        for row in self.scalability:
            value = f"{fmt(row.optimality)} / {fmt(row.feasibility)}" if row.applicable else "N/A"
            lines.append(f"  {row.setting:<16} {value}")
        return "\n".join(lines)


def _stability_key(n: float) -> str:
    return f"{float(n):g}"


def _constant_of(axis: str, norm: Mapping[str, float]) -> float:
    if axis == "inference":
        return norm["inference_ref_ms"]
    if axis == "training_efficiency":
        return norm["max_epochs"]
    return norm[axis]


def emit_report(report: MetricsReport, path: str, format: str = "json") -> None:
    """
    json: the full report. csv: the radar table, one row per axis, with
    undefined values left empty.
    """
    if format not in REPORT_FORMATS:
        raise ConfigError(f"Unknown report format '{format}'. Available formats: {REPORT_FORMATS}")
    if format == "json":
        report.save(path)
    else:
        report.get_dataframes()["radar"].to_csv(path, index=False)
    logging.info(f"Wrote {format} report to {path}")


def read_radar_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path)


def compare_reports(reports: Mapping[str, MetricsReport]) -> pd.DataFrame:
    """Joint table of several variants, one row per variant."""
    rows = []
    for name, report in reports.items():
        row = {"variant": name}
        row.update(report.axis_values())
        row["feasibility"] = report.feasibility_rate
        row["inference_p95_ms"] = report.inference_p95_ms
        row["epochs_to_converge"] = report.epochs_to_converge
        rows.append(row)
    return pd.DataFrame(rows)


def stability_dict(curve: Mapping[float, Optional[float]]) -> Dict[str, Optional[float]]:
    return {_stability_key(n): v for n, v in curve.items()}
