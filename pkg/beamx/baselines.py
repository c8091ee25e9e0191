"""
Classical beamforming schemes: MRT and zero forcing in closed form, the
WMMSE block-coordinate ascent for sum rate, and a projected-gradient oracle
for any utility. They score learned models and produce the labels.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import jax
import jax.numpy as jnp
import jaxopt
import numpy as np
import scipy.linalg as la
from tqdm.auto import tqdm

from beamx import diffcore as dc
from beamx.channel import ChannelDataset
from beamx.defaults import (
    default_bisection_steps,
    default_pga_lr,
    default_pga_restarts,
    default_pga_steps,
    default_seed,
    default_wmmse_maxiter,
    default_wmmse_tol,
)
from beamx.diffcore import Tape, Tensor
from beamx.errors import ConfigError, DatasetFormatError, DomainError, SolverError
from beamx.objectives import BeamBatch, BeamMatrix, UtilitySpec, utility_value
from beamx.problem import BeamformingProblem
from beamx.solver import IterativeSolver, SolverResult, State, run_solver


def _fit_power(W: np.ndarray, power_budget: float) -> np.ndarray:
    power = np.sum(np.abs(W) ** 2)
    if power > power_budget:
        W = W * np.sqrt(power_budget / power)
    return W


def mrt(H: np.ndarray, power_budget: float) -> np.ndarray:
    """Maximum ratio transmission: W = c H^H with ||W||_F^2 = P."""
    H = np.asarray(H, dtype=np.complex128)
    norm = np.sum(np.abs(H) ** 2)
    if norm == 0:
        raise SolverError("MRT is undefined for an all-zero channel")
    return np.sqrt(power_budget / norm) * H.conj().T


def zero_forcing(H: np.ndarray, power_budget: float) -> np.ndarray:
    """
    W = H^H (H H^H)^-1, scaled by one scalar to ||W||_F^2 = P.

    Raises:
        SolverError: K > N or H not of full row rank.
    """
    H = np.asarray(H, dtype=np.complex128)
    K, N = H.shape
    if K > N:
        raise SolverError(f"zero forcing needs K <= N, got K={K}, N={N}")
    if np.linalg.matrix_rank(H) < K:
        raise SolverError("zero forcing needs a channel of full row rank")
    W = H.conj().T @ la.inv(H @ H.conj().T)
    return W * np.sqrt(power_budget / np.sum(np.abs(W) ** 2))


class ClosedFormSolver(IterativeSolver):
    """MRT or ZF as a one-iteration solver."""

    max_iter = 1

    def __init__(self, scheme: str) -> None:
        super().__init__(label=scheme)
        self.scheme = {"mrt": mrt, "zf": zero_forcing}[scheme]

    def init_point(self, problem: BeamformingProblem):
        return self.scheme(problem.H, problem.power_budget)

    def update(self, x, state: State, problem: BeamformingProblem):
        state.iter_num += 1
        state.converged = True
        return x, state


def _spectral_power(eigvals: np.ndarray, coeffs_sq: np.ndarray, mu: float) -> float:
    return float(np.sum(coeffs_sq / (eigvals + mu) ** 2))


class WMMSE(IterativeSolver):
    """
    Weighted MMSE for sum-rate maximization.

    Each iteration updates the receivers u_k, the weights v_k = 1 / e_k and
    the beams w_k = v_k conj(u_k) (A + mu I)^-1 h_k^H, with
    A = sum_j v_j |u_j|^2 h_j^H h_j and mu >= 0 chosen by bisection so the
    power budget holds. Started from MRT.
    """

    label = "wmmse"

    def __init__(self, max_iter: int = default_wmmse_maxiter, tol: float = default_wmmse_tol,
                 bisection_steps: int = default_bisection_steps) -> None:
        super().__init__(params=dict(max_iter=max_iter, tol=tol, bisection_steps=bisection_steps))
        self.max_iter = max_iter
        self.tol = tol
        self.bisection_steps = bisection_steps

    def init_point(self, problem: BeamformingProblem):
        if problem.spec.kind != "srm":
            raise ConfigError(f"WMMSE maximizes the sum rate, not {problem.spec.kind}")
        return mrt(problem.H, problem.power_budget)

    def transmit_update(self, H: np.ndarray, u: np.ndarray, v: np.ndarray, power_budget: float):
        """Beams for fixed receivers and weights; returns (W, mu)."""
        c = v * np.abs(u) ** 2
        A = H.conj().T @ (c[:, None] * H)
        A = 0.5 * (A + A.conj().T)
        B = H.conj().T * (v * u.conj())[None, :]
        eigvals, Q = la.eigh(A)
        eigvals = np.clip(eigvals, 0.0, None)
        coeffs = Q.conj().T @ B
        coeffs_sq = np.sum(np.abs(coeffs) ** 2, axis=1)
        null = eigvals <= 1e-12 * max(eigvals.max(), 1.0)

        if not np.any(null & (coeffs_sq > 1e-24)):
            inv = np.where(null, 0.0, 1.0 / np.where(null, 1.0, eigvals))
            W0 = Q @ (inv[:, None] * coeffs)
            if np.sum(np.abs(W0) ** 2) <= power_budget:
                return W0, 0.0

        mu_hi = 1.0
        while _spectral_power(eigvals, coeffs_sq, mu_hi) > power_budget:
            mu_hi *= 2.0
        mu_lo = 0.0
        for _ in range(self.bisection_steps):
            mu = 0.5 * (mu_lo + mu_hi)
            if _spectral_power(eigvals, coeffs_sq, mu) > power_budget:
                mu_lo = mu
            else:
                mu_hi = mu
        factor = la.cho_factor(A + mu_hi * np.eye(A.shape[0]))
        return la.cho_solve(factor, B), mu_hi

    def update(self, x, state: State, problem: BeamformingProblem):
        H, sigma2 = problem.H, problem.spec.sigma2
        G = H @ x
        received = np.sum(np.abs(G) ** 2, axis=1) + sigma2
        u = np.diag(G).conj() / received
        e = np.real(1.0 - u * np.diag(G))
        v = 1.0 / np.maximum(e, 1e-300)
        W, mu = self.transmit_update(H, u, v, problem.power_budget)
        W = _fit_power(W, problem.power_budget)
        objective = problem.f(W)
        improvement = objective - state.objective
        state.iter_num += 1
        state.extra["mu"] = mu
        state.converged = abs(improvement) < self.tol
        state.track(W, objective)
        return W, state

    def stop_criterion(self, x, state: State, problem: BeamformingProblem) -> bool:
        return state.converged or state.iter_num >= self.max_iter


def wmmse_srm(H: np.ndarray, power_budget: float, sigma2: float, max_iter: int = default_wmmse_maxiter,
              tol: float = default_wmmse_tol) -> SolverResult:
    problem = BeamformingProblem(H, UtilitySpec(kind="srm", sigma2=sigma2, power_budget=power_budget))
    return run_solver(WMMSE(max_iter=max_iter, tol=tol), problem)


_project_ball = jax.jit(jax.vmap(jaxopt.projection.projection_l2_ball, in_axes=(0, None)))


class ProjectedGradient(IterativeSolver):
    """
    Gradient ascent on W with projection onto ||W||_F^2 <= P after every
    step. All restarts run as one batch on a single tape; the iterate is the
    (restarts, 2KN) array of stacked [Re W^T, Im W^T].
    """

    label = "pga"

    def __init__(self, restarts: int = default_pga_restarts, steps: int = default_pga_steps,
                 lr: float = default_pga_lr, seed: int = default_seed) -> None:
        if restarts < 1:
            raise ConfigError(f"restarts must be >= 1, got {restarts}")
        if steps < 0 or not lr > 0:
            raise ConfigError(f"need steps >= 0 and lr > 0, got {steps}, {lr}")
        super().__init__(params=dict(restarts=restarts, steps=steps, lr=lr, seed=seed))
        self.restarts, self.max_iter, self.lr, self.seed = restarts, steps, lr, seed

    def init_point(self, problem: BeamformingProblem):
        K, N = problem.H.shape
        key = jax.random.fold_in(jax.random.PRNGKey(self.seed), max(problem.sample_id, 0))
        x = np.array(jax.random.normal(key, (self.restarts, 2 * K * N), dtype=jnp.float64))
        scale = np.sqrt(problem.power_budget) / np.linalg.norm(x, axis=1, keepdims=True)
        return x * scale

    def _split(self, x: np.ndarray, K: int, N: int):
        R = x.shape[0]
        Wr = x[:, :K * N].reshape(R * K, N)
        Wi = x[:, K * N:].reshape(R * K, N)
        return Wr, Wi

    def _evaluate(self, x: np.ndarray, problem: BeamformingProblem, with_grad: bool):
        K, N = problem.H.shape
        R = x.shape[0]
        Wr, Wi = self._split(x, K, N)
        H_rows = np.tile(problem.H, (R, 1))
        with Tape() as tape:
            Wr_t, Wi_t = Tensor.parameter(Wr), Tensor.parameter(Wi)
            beams = BeamBatch(Wr=Wr_t, Wi=Wi_t, k_users=(K,) * R,
                              raw_power=np.zeros(R), power_budget=problem.power_budget)
            utility = utility_value(problem.spec, H_rows, beams)
            total = dc.sum(utility)
        values = utility.numpy().copy()
        if not with_grad:
            return values, None
        grads = dc.backward(tape, total)
        g = np.concatenate([grads[Wr_t].reshape(R, K * N), grads[Wi_t].reshape(R, K * N)], axis=1)
        return values, g

    def as_matrix(self, x, problem: BeamformingProblem) -> np.ndarray:
        K, N = problem.H.shape
        Wr, Wi = self._split(np.atleast_2d(x), K, N)
        return (Wr[:K] + 1j * Wi[:K]).T

    def _track(self, x: np.ndarray, values: np.ndarray, state: State, problem: BeamformingProblem) -> None:
        best = int(np.argmax(values))
        if values[best] > state.best_objective:
            state.best_W = self.as_matrix(x[best], problem)
        state.best_objective = max(state.best_objective, float(values[best]))
        state.objective = state.best_objective

    def init_state(self, problem: BeamformingProblem, x_init) -> State:
        state = State(iter_num=0)
        values, _ = self._evaluate(x_init, problem, with_grad=False)
        self._track(x_init, values, state, problem)
        return state

    def update(self, x, state: State, problem: BeamformingProblem):
        _, g = self._evaluate(x, problem, with_grad=True)
        stepped = x + self.lr * g
        x = np.asarray(_project_ball(jnp.asarray(stepped), np.sqrt(problem.power_budget)))
        values, _ = self._evaluate(x, problem, with_grad=False)
        state.iter_num += 1
        self._track(x, values, state, problem)
        state.converged = state.iter_num >= self.max_iter
        return x, state

    def stop_criterion(self, x, state: State, problem: BeamformingProblem) -> bool:
        return state.iter_num >= self.max_iter


def pga_oracle(H: np.ndarray, power_budget: float, spec: UtilitySpec, restarts: int = default_pga_restarts,
               steps: int = default_pga_steps, lr: float = default_pga_lr, seed: int = default_seed,
               sample_id: int = 0) -> SolverResult:
    """Best projected-gradient solution over random full-power restarts."""
    spec = UtilitySpec(kind=spec.kind, sigma2=spec.sigma2, power_budget=power_budget,
                       circuit_power=spec.circuit_power)
    problem = BeamformingProblem(H, spec, sample_id=sample_id)
    result = run_solver(ProjectedGradient(restarts=restarts, steps=steps, lr=lr, seed=seed), problem)
    result.W = _fit_power(result.W, power_budget)
    result.objective = problem.f(result.W)
    return result


def make_solver(name: str, spec: UtilitySpec, settings: Optional[Dict] = None) -> IterativeSolver:
    """Instantiate a registered scheme with optional settings."""
    settings = dict(settings or {})
    if name == "wmmse":
        if spec.kind != "srm":
            raise ConfigError(f"the wmmse solver only handles srm, got {spec.kind}; use pga")
        return WMMSE(**settings)
    if name == "pga":
        return ProjectedGradient(**settings)
    if name in ("mrt", "zf"):
        return ClosedFormSolver(name)
    raise ConfigError(f"Unknown solver '{name}'")


def solve(problem: BeamformingProblem, solver: IterativeSolver) -> SolverResult:
    """run_solver with the zero-forcing fallback to MRT."""
    try:
        return run_solver(solver, problem)
    except SolverError as e:
        if solver.label != "zf":
            raise
        logging.info(f"zero forcing failed on sample {problem.sample_id} ({e}), falling back to MRT")
        return run_solver(ClosedFormSolver("mrt"), problem)


# ---------------------------------------------------------------- labels

LABEL_FORMAT = "beamx-labels/1"


@dataclass
class Label:
    sample_id: int
    objective: Optional[float]
    solver: str
    valid: bool


@dataclass
class LabelSet:
    """
    Objective-value labels of a dataset.

    Attributes:
        solver (str): scheme that produced the labels.
        settings (dict): its hyperparameters.
        spec (UtilitySpec): utility the labels are values of.
        labels (list): one Label per sample, in dataset order.
    """

    solver: str
    settings: Dict
    spec: UtilitySpec
    labels: List[Label] = field(default_factory=list)
    manifest: Optional[str] = None

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def invalid_count(self) -> int:
        return sum(not label.valid for label in self.labels)

    def values(self) -> np.ndarray:
        """Objectives with NaN for invalid labels."""
        return np.array([l.objective if l.valid else np.nan for l in self.labels], dtype=np.float64)

    def by_sample(self) -> Dict[int, Label]:
        return {l.sample_id: l for l in self.labels}

    def aligned(self, sample_ids: List[int]) -> np.ndarray:
        """Label values in the order of sample_ids, NaN where invalid."""
        table = self.by_sample()
        missing = [s for s in sample_ids if s not in table]
        if missing:
            raise ConfigError(f"no label for samples {missing[:5]}")
        return np.array([table[s].objective if table[s].valid else np.nan for s in sample_ids], dtype=np.float64)


def label_dataset(dataset: ChannelDataset, spec: UtilitySpec, solver_choice: str = "wmmse",
                  settings: Optional[Dict] = None) -> LabelSet:
    """
    Solve every sample and keep the objective value as its label. A sample on
    which the solver fails gets an invalid label instead of aborting the run.
    """
    spec = UtilitySpec(kind=spec.kind, sigma2=dataset.header.sigma2, power_budget=dataset.header.power_budget,
                       circuit_power=spec.circuit_power).validate()
    solver = make_solver(solver_choice, spec, settings)
    labels = []
    for sample in tqdm(dataset.samples, desc=f"labelling with {solver_choice}", leave=False):
        problem = BeamformingProblem(sample, spec)
        try:
            result = solve(problem, solver)
            objective = float(result.objective)
            valid = bool(np.isfinite(objective))
        except (SolverError, DomainError, la.LinAlgError) as e:
            logging.warning(f"{solver_choice} failed on sample {sample.sample_id}: {e}")
            objective, valid = None, False
        if not valid:
            logging.warning(f"sample {sample.sample_id} gets an invalid label")
            objective = None
        labels.append(Label(sample_id=sample.sample_id, objective=objective, solver=solver.label, valid=valid))
    label_set = LabelSet(solver=solver.label, settings=solver.settings(), spec=spec, labels=labels)
    logging.info(f"Labelled {len(labels)} samples with {solver_choice}, {label_set.invalid_count} invalid")
    return label_set


def write_labels(path: str, label_set: LabelSet, manifest: Optional[str] = None) -> None:
    head = {
        "format": LABEL_FORMAT,
        "solver": label_set.solver,
        "settings": label_set.settings,
        "utility": label_set.spec.to_dict(),
        "count": len(label_set),
    }
    manifest = manifest or label_set.manifest
    if manifest is not None:
        head["manifest"] = manifest
    with open(path, "w") as file:
        file.write(json.dumps(head) + "\n")
        for l in label_set.labels:
            file.write(json.dumps(asdict(l)) + "\n")
    logging.info(f"Wrote {len(label_set)} labels to {path}")


def read_labels(path: str) -> LabelSet:
    with open(path) as file:
        lines = [(n, line) for n, line in enumerate(file, start=1) if line.strip()]
    if not lines:
        raise DatasetFormatError(path, 1, "empty label file")
    try:
        records = [(n, json.loads(line)) for n, line in lines]
    except json.JSONDecodeError as e:
        raise DatasetFormatError(path, e.lineno, f"invalid JSON ({e.msg})") from None
    n, head = records[0]
    if not isinstance(head, dict) or head.get("format") != LABEL_FORMAT:
        raise DatasetFormatError(path, n, "first line must be the label header")
    try:
        spec = UtilitySpec.from_dict(head["utility"])
    except (KeyError, TypeError, ConfigError) as e:
        raise DatasetFormatError(path, n, f"bad utility in header: {e}") from None
    labels = []
    for n, obj in records[1:]:
        try:
            objective = obj["objective"]
            labels.append(Label(sample_id=int(obj["sample_id"]),
                                objective=None if objective is None else float(objective),
                                solver=str(obj["solver"]), valid=bool(obj["valid"])))
        except (KeyError, TypeError, ValueError):
            raise DatasetFormatError(path, n, "label line must hold sample_id, objective, solver, valid") from None
    if len(labels) != head.get("count", len(labels)):
        raise DatasetFormatError(path, len(lines) + 1, f"header announces {head['count']} labels, found {len(labels)}")
    return LabelSet(solver=head["solver"], settings=head.get("settings", {}), spec=spec, labels=labels,
                    manifest=head.get("manifest"))


def evaluate_solver(name: str, dataset: ChannelDataset, spec: UtilitySpec,
                    settings: Optional[Dict] = None) -> List[BeamMatrix]:
    """Beam matrices of a classical scheme over a dataset, for the evaluation harness."""
    spec = UtilitySpec(kind=spec.kind, sigma2=dataset.header.sigma2, power_budget=dataset.header.power_budget,
                       circuit_power=spec.circuit_power)
    solver = make_solver(name, spec, settings)
    out = []
    for sample in tqdm(dataset.samples, desc=name, leave=False):
        result = solve(BeamformingProblem(sample, spec), solver)
        out.append(BeamMatrix.create(result.W, spec.power_budget))
    return out
