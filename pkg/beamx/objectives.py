"""
System utilities and training losses.

Beams are kept in "row" layout: row u of (Wr, Wi) is the beamformer w_k of
user u, i.e. the transpose of the complex N×K matrix W. Several samples are
packed user by user, so one tape evaluation covers a whole mini-batch.

The received gain of user k from the beam of user j is
g_kj = sum_n H[k, n] W[n, j], and

    rate_k = log2(1 + |g_kk|^2 / (sum_{j != k} |g_kj|^2 + sigma2)).
"""
import math
from dataclasses import asdict, dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from typing_extensions import Literal

from beamx import diffcore as dc
from beamx.defaults import default_circuit_power, default_power_budget, default_sigma2
from beamx.diffcore import Tensor
from beamx.errors import ConfigError, ShapeError

UTILITIES = ("srm", "eem", "mmr")
FEASIBILITY_TOL = 1e-9


@dataclass(frozen=True)
class UtilitySpec:
    """
    Attributes:
        kind (str): "srm" (sum rate), "eem" (energy efficiency) or "mmr" (max-min rate).
        sigma2 (float): noise power.
        power_budget (float): P.
        circuit_power (float): Pc, only used by eem.
    """

    kind: Literal["srm", "eem", "mmr"] = "srm"
    sigma2: float = default_sigma2
    power_budget: float = default_power_budget
    circuit_power: float = default_circuit_power

    def validate(self) -> "UtilitySpec":
        if self.kind not in UTILITIES:
            raise ConfigError(f"Unknown utility '{self.kind}'. Available utilities: {UTILITIES}")
        for name in ("sigma2", "power_budget", "circuit_power"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "UtilitySpec":
        return cls(**d).validate()

    def __str__(self) -> str:
        return self.kind


@dataclass
class BeamMatrix:
    """
    A beamforming decision for one sample.

    Attributes:
        W (np.ndarray): complex N×K, column k serves user k.
        raw_power (float): ||W_raw||_F^2 before any projection.
        power_budget (float): P the decision was made for.
    """

    W: np.ndarray
    raw_power: float
    power_budget: float

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.W) ** 2))

    @property
    def feasible(self) -> bool:
        return is_feasible(self.power, self.power_budget, FEASIBILITY_TOL)

    @classmethod
    def create(cls, W: np.ndarray, power_budget: float, raw_power: Optional[float] = None) -> "BeamMatrix":
        W = np.asarray(W, dtype=np.complex128)
        if W.ndim != 2 or not np.all(np.isfinite(W)):
            raise ShapeError(f"beam matrix must be a finite 2-d array, got shape {W.shape}")
        power = float(np.sum(np.abs(W) ** 2))
        return cls(W=W, raw_power=power if raw_power is None else float(raw_power), power_budget=float(power_budget))


def is_feasible(power: float, power_budget: float, tol: float = FEASIBILITY_TOL) -> bool:
    return bool(power <= power_budget * (1.0 + tol))


def _graph_power(Wr: Tensor, Wi: Tensor, user_graph: np.ndarray, num_graphs: int) -> Tensor:
    per_user = dc.sum(dc.add(dc.square(Wr), dc.square(Wi)), axis=1)
    per_graph = dc.segment_reduce(dc.reshape(per_user, (-1, 1)), user_graph, num_graphs, "sum")
    return dc.reshape(per_graph, (num_graphs,))


@dataclass
class BeamBatch:
    """
    Beams of a packed mini-batch on the tape.

    Attributes:
        Wr, Wi (Tensor): (num_users, N) real and imaginary parts, row layout.
        k_users (tuple): users per sample.
        raw_power (np.ndarray): ||W_raw||_F^2 per sample.
        power_budget (float): P.
    """

    Wr: Tensor
    Wi: Tensor
    k_users: Tuple[int, ...]
    raw_power: np.ndarray
    power_budget: float

    def __post_init__(self) -> None:
        self.k_users = tuple(int(k) for k in self.k_users)
        self.user_graph = np.repeat(np.arange(len(self.k_users)), self.k_users)
        if self.Wr.shape != self.Wi.shape or self.Wr.shape[0] != self.user_graph.shape[0]:
            raise ShapeError(f"beam rows {self.Wr.shape}/{self.Wi.shape} do not fit users {self.k_users}")
        self.power = _graph_power(self.Wr, self.Wi, self.user_graph, self.num_graphs)

    @property
    def num_graphs(self) -> int:
        return len(self.k_users)

    @property
    def num_users(self) -> int:
        return int(self.user_graph.shape[0])

    @property
    def feasible(self) -> np.ndarray:
        return self.power.numpy() <= self.power_budget * (1.0 + FEASIBILITY_TOL)

    def to_matrices(self) -> List[BeamMatrix]:
        W = self.Wr.numpy() + 1j * self.Wi.numpy()
        bounds = np.cumsum((0,) + self.k_users)
        return [
            BeamMatrix(W=W[bounds[g]:bounds[g + 1]].T.copy(), raw_power=float(self.raw_power[g]),
                       power_budget=self.power_budget)
            for g in range(self.num_graphs)
        ]

    @classmethod
    def from_matrices(cls, matrices: Sequence[np.ndarray], power_budget: float, requires_grad: bool = False) -> "BeamBatch":
        rows = np.concatenate([np.asarray(W, dtype=np.complex128).T for W in matrices], axis=0)
        make = Tensor.parameter if requires_grad else Tensor.constant
        raw = np.array([np.sum(np.abs(W) ** 2) for W in matrices], dtype=np.float64)
        return cls(
            Wr=make(rows.real.copy()),
            Wi=make(rows.imag.copy()),
            k_users=tuple(np.shape(W)[1] for W in matrices),
            raw_power=raw,
            power_budget=float(power_budget),
        )

    @classmethod
    def from_matrix(cls, W: np.ndarray, power_budget: float = default_power_budget) -> "BeamBatch":
        return cls.from_matrices([W], power_budget)


Beams = Union[BeamBatch, BeamMatrix, np.ndarray]


def as_beam_batch(W: Beams, power_budget: float = default_power_budget) -> BeamBatch:
    if isinstance(W, BeamBatch):
        return W
    if isinstance(W, BeamMatrix):
        return BeamBatch.from_matrices([W.W], W.power_budget)
    return BeamBatch.from_matrix(np.asarray(W), power_budget)


def _pair_index(k_users: Sequence[int]):
    """Row pairs (k, j) of every sample, k the receiving user."""
    rows_k, rows_j, offset = [], [], 0
    for K in k_users:
        k, j = np.divmod(np.arange(K * K), K)
        rows_k.append(offset + k)
        rows_j.append(offset + j)
        offset += K
    rows_k = np.concatenate(rows_k).astype(np.int64)
    rows_j = np.concatenate(rows_j).astype(np.int64)
    return rows_k, rows_j, rows_k == rows_j


def user_rates(H: np.ndarray, W: Beams, sigma2: float) -> Tensor:
    """
    Achievable rate of every user in bits per channel use.

    Args:
        H: complex (num_users, N) channel rows; one K×N sample or several
            stacked in the order of the beam rows.
        W: a BeamBatch, a BeamMatrix or a complex N×K matrix.
        sigma2: noise power.

    Returns:
        Tensor of shape (num_users,).
    """
    beams = as_beam_batch(W)
    H = np.asarray(H, dtype=np.complex128)
    if H.shape != beams.Wr.shape:
        raise ShapeError(f"channel rows {H.shape} do not match beam rows {beams.Wr.shape}")
    rows_k, rows_j, diag = _pair_index(beams.k_users)
    Hr, Hi = H.real[rows_k], H.imag[rows_k]
    Wr, Wi = dc.gather(beams.Wr, rows_j), dc.gather(beams.Wi, rows_j)
    g_re = dc.sum(dc.sub(dc.mul(Wr, Hr), dc.mul(Wi, Hi)), axis=1)
    g_im = dc.sum(dc.add(dc.mul(Wi, Hr), dc.mul(Wr, Hi)), axis=1)
    gain = dc.add(dc.square(g_re), dc.square(g_im))

    signal = dc.gather(gain, np.nonzero(diag)[0])
    cross = np.nonzero(~diag)[0]
    interference = dc.segment_reduce(
        dc.reshape(dc.gather(gain, cross), (-1, 1)), rows_k[cross], beams.num_users, "sum"
    )
    den = dc.add(dc.reshape(interference, (beams.num_users,)), float(sigma2))
    # log(sig + den) - log(den) keeps the gradient finite at zero signal
    return dc.scale(dc.sub(dc.log(dc.add(signal, den)), dc.log(den)), 1.0 / math.log(2.0))


def _per_graph(rates: Tensor, beams: Optional[BeamBatch], mode: str) -> Tensor:
    if beams is None:
        return dc.sum(rates) if mode == "sum" else dc.min(rates)
    column = dc.reshape(rates, (-1, 1))
    if mode == "sum":
        out = dc.segment_reduce(column, beams.user_graph, beams.num_graphs, "sum")
    else:
        # segment max of -rates keeps the first argmin as subgradient
        out = dc.neg(dc.segment_reduce(dc.neg(column), beams.user_graph, beams.num_graphs, "max"))
    return dc.reshape(out, (beams.num_graphs,))


def sum_rate(rates: Tensor, beams: Optional[BeamBatch] = None) -> Tensor:
    """Sum of rates; per sample when beams is given."""
    return _per_graph(rates, beams, "sum")


def min_rate(rates: Tensor, beams: Optional[BeamBatch] = None) -> Tensor:
    return _per_graph(rates, beams, "min")


def energy_efficiency(rates: Tensor, W: Beams, circuit_power: float = default_circuit_power) -> Tensor:
    """Sum rate over consumed plus circuit power, per sample."""
    beams = as_beam_batch(W)
    total = sum_rate(rates, beams)
    return dc.div(total, dc.add(beams.power, float(circuit_power)))


def utility_value(spec: UtilitySpec, H: np.ndarray, W: Beams) -> Tensor:
    """The utility of spec.kind per sample, shape (num_graphs,)."""
    beams = as_beam_batch(W, spec.power_budget)
    rates = user_rates(H, beams, spec.sigma2)
    if spec.kind == "srm":
        return sum_rate(rates, beams)
    if spec.kind == "mmr":
        return min_rate(rates, beams)
    if spec.kind == "eem":
        return energy_efficiency(rates, beams, spec.circuit_power)
    raise ConfigError(f"Unknown utility '{spec.kind}'. Available utilities: {UTILITIES}")


def rates_numpy(H: np.ndarray, W: np.ndarray, sigma2: float) -> np.ndarray:
    """Per-user rates of one sample without a tape."""
    G = np.abs(np.asarray(H) @ np.asarray(W)) ** 2
    signal = np.diag(G)
    interference = G.sum(axis=1) - signal
    return np.log2(1.0 + signal / (interference + sigma2))


def utility_numpy(H: np.ndarray, W: np.ndarray, spec: UtilitySpec) -> float:
    rates = rates_numpy(H, W, spec.sigma2)
    if spec.kind == "srm":
        return float(rates.sum())
    if spec.kind == "mmr":
        return float(rates.min())
    if spec.kind == "eem":
        return float(rates.sum() / (np.sum(np.abs(W) ** 2) + spec.circuit_power))
    raise ConfigError(f"Unknown utility '{spec.kind}'. Available utilities: {UTILITIES}")


# ---------------------------------------------------------------- losses


def _power_of(W) -> Tensor:
    if isinstance(W, Tensor):
        return W
    return as_beam_batch(W).power


def loss_unsupervised(utility: Tensor) -> Tensor:
    """-utility, averaged over the samples of a batch."""
    return dc.neg(dc.mean(utility))


def loss_supervised(utility: Tensor, label) -> Tensor:
    """Mean of (utility - label)^2; labels are objective values."""
    label = np.broadcast_to(np.asarray(label, dtype=np.float64), utility.shape).copy()
    if not np.all(np.isfinite(label)):
        raise ConfigError("supervised labels must be finite")
    return dc.mean(dc.square(dc.sub(utility, Tensor.constant(label))))


def loss_penalty(utility: Tensor, W, power_budget: float, rho: float) -> Tensor:
    """-utility + rho * max(0, ||W||_F^2 - P)^2, averaged over samples.

    W is a BeamBatch / beam matrix, or directly the per-sample power tensor.
    """
    if not rho > 0:
        raise ConfigError(f"penalty weight rho must be positive, got {rho}")
    violation = dc.clamp_min(dc.sub(_power_of(W), float(power_budget)), 0.0)
    per_sample = dc.add(dc.neg(utility), dc.scale(dc.square(violation), rho))
    return dc.mean(per_sample)


def loss_lagrangian(utility: Tensor, W, power_budget: float, lam: float) -> Tensor:
    """-utility + lambda * (||W||_F^2 - P), averaged over samples; lambda is not trained here."""
    if lam < 0:
        raise ConfigError(f"Lagrange multiplier must be non-negative, got {lam}")
    slack = dc.sub(_power_of(W), float(power_budget))
    return dc.mean(dc.add(dc.neg(utility), dc.scale(slack, float(lam))))


def dual_update(lam: float, violation: float, eta_dual: float) -> float:
    """Projected dual ascent step: max(0, lambda + eta * violation)."""
    if not eta_dual > 0:
        raise ConfigError(f"eta_dual must be positive, got {eta_dual}")
    return max(0.0, float(lam) + float(eta_dual) * float(violation))
