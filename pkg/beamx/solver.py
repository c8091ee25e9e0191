import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np

from beamx.problem import BeamformingProblem


@dataclass
class SolverResult:
    """
    Outcome of a classical solver on one problem.

    Attributes:
        W (np.ndarray): complex N×K beam matrix, within the power budget.
        objective (float): utility of W.
        iterations (int): iterations performed.
        converged (bool): False when the iteration limit stopped the solver.
        trace (list): objective after every iteration (initial point first).
        solver (str): label of the solver.
        wall_time (float): seconds spent.
    """

    W: np.ndarray
    objective: float
    iterations: int
    converged: bool
    trace: List[float] = field(default_factory=list)
    solver: str = ""
    wall_time: float = 0.0


class State:
    iter_num: int
    objective: float
    best_objective: float
    best_W: Optional[np.ndarray]
    converged: bool

    def __init__(self, iter_num: int = 0, objective: float = -np.inf) -> None:
        self.iter_num = iter_num
        self.objective = objective
        self.best_objective = -np.inf
        self.best_W = None
        self.converged = False
        self.extra: Dict[str, Any] = {}

    def track(self, W: np.ndarray, objective: float) -> None:
        self.objective = objective
        if objective > self.best_objective:
            self.best_objective = objective
            self.best_W = W


class IterativeSolver:
    """
    Base class of the classical beamforming schemes.

    Subclasses implement init_point, update and (optionally) stop_criterion;
    run_solver drives the loop.
    """

    label: str = "solver"
    max_iter: int = 1

    def __init__(self, params: Optional[Dict[str, Any]] = None, label: Optional[str] = None) -> None:
        """
        Args:
            params: hyperparameters of the scheme.
            label: name used in label files and reports.
        """
        self.params = dict(params or {})
        if label is not None:
            self.label = label

    def init_point(self, problem: BeamformingProblem):
        """Initial iterate of the scheme."""
        raise NotImplementedError

    def init_state(self, problem: BeamformingProblem, x_init) -> State:
        state = State(iter_num=0)
        state.track(self.as_matrix(x_init, problem), problem.f(self.as_matrix(x_init, problem)))
        return state

    def update(self, x, state: State, problem: BeamformingProblem):
        """One iteration; returns the new iterate and state."""
        raise NotImplementedError

    def stop_criterion(self, x, state: State, problem: BeamformingProblem) -> bool:
        return state.iter_num >= self.max_iter

    def as_matrix(self, x, problem: BeamformingProblem) -> np.ndarray:
        """The N×K beam matrix an iterate stands for."""
        return x

    def settings(self) -> Dict[str, Any]:
        return dict(self.params)

    def __str__(self) -> str:
        return self.label


def run_solver(solver: IterativeSolver, problem: BeamformingProblem, x_init=None) -> SolverResult:
    """
    Run an IterativeSolver until its stop criterion holds and return the best
    iterate seen.
    """
    start = time.perf_counter()
    x = solver.init_point(problem) if x_init is None else x_init
    state = solver.init_state(problem, x)
    trace = [state.objective]
    while not solver.stop_criterion(x, state, problem):
        x, state = solver.update(x, state, problem)
        trace.append(state.objective)
    if not state.converged:
        logging.warning(f"{solver.label} did not converge on {problem} within {state.iter_num} iterations")
    W = state.best_W if state.best_W is not None else solver.as_matrix(x, problem)
    return SolverResult(
        W=np.asarray(W, dtype=np.complex128),
        objective=float(state.best_objective),
        iterations=state.iter_num,
        converged=state.converged,
        trace=[float(t) for t in trace],
        solver=solver.label,
        wall_time=time.perf_counter() - start,
    )
