"""
Training of the beamforming models.

The hand-built tape produces the gradients; Adam comes from optax and the
optimizer state lives in a flax TrainState. The Lagrange multiplier of ldm
training is kept outside the optimizer and only moves by dual updates.
"""
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Tuple

import jax
import jax.numpy as jnp
import numpy as np
import optax
import pandas as pd
from flax.training import train_state
from tqdm.auto import tqdm
from typing_extensions import Literal

from beamx import diffcore as dc
from beamx.baselines import LabelSet, label_dataset
from beamx.benchmark import Benchmark
from beamx.benchmark_result import MetricsReport, compare_reports
from beamx.channel import ChannelDataset, split
from beamx.defaults import (
    default_adam_eps,
    default_batch_size,
    default_betas,
    default_epochs,
    default_eta_dual,
    default_lr,
    default_patience,
    default_rho_cap,
    default_rho_every,
    default_rho_growth,
    default_rho_init,
    default_seed,
    default_val_fraction,
)
from beamx.diffcore import Tape, Tensor
from beamx.errors import ConfigError, DomainError, TrainingDivergedError
from beamx.gnn import forward_batch, mlp_forward_batch, project_rows
from beamx.graphrep import batch_graphs, build_graph
from beamx.objectives import (
    BeamBatch,
    UtilitySpec,
    dual_update,
    loss_lagrangian,
    loss_penalty,
    loss_supervised,
    loss_unsupervised,
    utility_value,
)
from beamx.params import Checkpoint, FeatureDims, ModelConfig, ParamSet, init_params
from beamx.recipes import Variant, recipe_variants

LEARNING_MODES = ("unsupervised", "supervised")
TRAINLOG_FORMAT = "beamx-trainlog/1"


@dataclass(frozen=True)
class TrainConfig:
    """
    Attributes:
        utility (UtilitySpec): what to maximize; P and sigma2 are taken from the dataset.
        learning (str): unsupervised (loss = -utility) or supervised (squared error to labels).
        batch_size, epochs, lr, betas, adam_eps: optimizer settings.
        rho_init, rho_growth, rho_every, rho_cap: penalty weight schedule of pm training.
        eta_dual (float): dual step of ldm training.
        seed (int): initialization and shuffling seed.
        patience (int): epochs without validation improvement before stopping.
        val_fraction (float): share of the training set held out for validation.
    """

    utility: UtilitySpec = field(default_factory=UtilitySpec)
    learning: Literal["unsupervised", "supervised"] = "unsupervised"
    batch_size: int = default_batch_size
    epochs: int = default_epochs
    lr: float = default_lr
    betas: Tuple[float, float] = default_betas
    adam_eps: float = default_adam_eps
    rho_init: float = default_rho_init
    rho_growth: float = default_rho_growth
    rho_every: int = default_rho_every
    rho_cap: float = default_rho_cap
    eta_dual: float = default_eta_dual
    seed: int = default_seed
    patience: int = default_patience
    val_fraction: float = default_val_fraction

    def validate(self) -> "TrainConfig":
        self.utility.validate()
        if self.learning not in LEARNING_MODES:
            raise ConfigError(f"learning must be one of {LEARNING_MODES}, got {self.learning}")
        if not self.lr > 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not (self.rho_init > 0 and self.rho_growth >= 1 and self.rho_every >= 1 and self.eta_dual > 0):
            raise ConfigError("bad penalty/dual schedule")
        if not 0 < self.val_fraction < 1:
            raise ConfigError(f"val_fraction must lie in (0, 1), got {self.val_fraction}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        return self

    def rho(self, epoch: int) -> float:
        """Penalty weight of epoch (1-based): doubled every rho_every epochs, capped."""
        return float(min(self.rho_init * self.rho_growth ** ((epoch - 1) // self.rho_every), self.rho_cap))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "utility" in d and isinstance(d["utility"], dict):
            d["utility"] = UtilitySpec.from_dict(d["utility"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        try:
            return cls(**d).validate()
        except TypeError as e:
            raise ConfigError(f"bad train config: {e}") from None


@dataclass
class TrainLog:
    """Per-epoch records: train_loss, val_utility, val_utility_raw, feasibility, lam, rho, wall_time."""

    records: List[Dict] = field(default_factory=list)
    train_samples: int = 0
    stopped_early: bool = False
    best_epoch: Optional[int] = None

    @property
    def epochs(self) -> int:
        return len(self.records)

    def append(self, **record) -> None:
        self.records.append(record)

    def column(self, key: str) -> List:
        return [r.get(key) for r in self.records]

    def save(self, path: str, header: Optional[Dict] = None) -> None:
        """JSON Lines: a header object, then one object per epoch."""
        head = {"format": TRAINLOG_FORMAT, "train_samples": self.train_samples,
                "stopped_early": self.stopped_early, "best_epoch": self.best_epoch, **(header or {})}
        with open(path, "w") as file:
            file.write(json.dumps(head) + "\n")
            for record in self.records:
                file.write(json.dumps(record) + "\n")

    @classmethod
    def load(cls, path: str) -> "TrainLog":
        with open(path) as file:
            lines = [json.loads(line) for line in file if line.strip()]
        if not lines or lines[0].get("format") != TRAINLOG_FORMAT:
            raise ConfigError(f"{path} is not a training log")
        head = lines[0]
        return cls(records=lines[1:], train_samples=int(head.get("train_samples", 0)),
                   stopped_early=bool(head.get("stopped_early", False)), best_epoch=head.get("best_epoch"))


def create_train_state(params: ParamSet, config: TrainConfig) -> train_state.TrainState:
    tx = optax.adam(learning_rate=config.lr, b1=config.betas[0], b2=config.betas[1], eps=config.adam_eps)
    arrays = {name: jnp.asarray(a) for name, a in params.arrays.items()}
    return train_state.TrainState.create(apply_fn=None, params=arrays, tx=tx)


@jax.jit
def adam_step(state: train_state.TrainState, grads: Dict[str, jnp.ndarray]) -> train_state.TrainState:
    """One bias-corrected Adam update of every parameter array."""
    return state.apply_gradients(grads=grads)


def _params_of(state: train_state.TrainState, lam: float) -> ParamSet:
    return ParamSet(arrays={k: np.array(v, dtype=np.float64) for k, v in state.params.items()}, lam=float(lam))


class _Data:
    """Samples with their graphs (or raw channels) and labels."""

    def __init__(self, config: ModelConfig, dataset: ChannelDataset, labels: Optional[np.ndarray]) -> None:
        self.samples = dataset.samples
        self.graphs = None if config.is_mlp else [
            build_graph(s, config.representation, config.edge_feature_mode) for s in dataset.samples
        ]
        self.labels = labels

    def __len__(self) -> int:
        return len(self.samples)

    def channel_rows(self, idx) -> np.ndarray:
        return np.concatenate([self.samples[i].H for i in idx], axis=0)


def _forward(config: ModelConfig, params, data: _Data, idx, power_budget: float, dims: FeatureDims) -> BeamBatch:
    if config.is_mlp:
        return mlp_forward_batch(config, params, [data.samples[i] for i in idx], power_budget, dims)
    return forward_batch(config, params, batch_graphs([data.graphs[i] for i in idx]), power_budget)


def _batch_loss(config: ModelConfig, tconfig: TrainConfig, spec: UtilitySpec, utility, beams: BeamBatch,
                labels: Optional[np.ndarray], rho: float, lam: float):
    if tconfig.learning == "supervised":
        loss = loss_supervised(utility, labels)
        zero = Tensor.constant(np.zeros(utility.shape))
        if config.constraint_mode == "pm":
            loss = dc.add(loss, loss_penalty(zero, beams, spec.power_budget, rho))
        elif config.constraint_mode == "ldm":
            loss = dc.add(loss, loss_lagrangian(zero, beams, spec.power_budget, lam))
        return loss
    if config.constraint_mode == "pm":
        return loss_penalty(utility, beams, spec.power_budget, rho)
    if config.constraint_mode == "ldm":
        return loss_lagrangian(utility, beams, spec.power_budget, lam)
    return loss_unsupervised(utility)


def validate_epoch(config: ModelConfig, params: ParamSet, data: _Data, spec: UtilitySpec,
                   dims: FeatureDims) -> Dict[str, float]:
    """
    Validation utility with beams projected onto the budget (for measurement
    only), utility as emitted, and feasibility as emitted.
    """
    idx = np.arange(len(data))
    beams = _forward(config, params.tensors(), data, idx, spec.power_budget, dims)
    H = data.channel_rows(idx)
    raw_utility = utility_value(spec, H, beams).numpy()
    feasible = beams.feasible
    Wr, Wi = project_rows(beams.Wr, beams.Wi, beams.k_users, spec.power_budget, "ball")
    projected = BeamBatch(Wr=Wr, Wi=Wi, k_users=beams.k_users, raw_power=beams.raw_power,
                          power_budget=spec.power_budget)
    utility = utility_value(spec, H, projected).numpy()
    return {
        "val_utility": float(utility.mean()),
        "val_utility_raw": float(raw_utility.mean()),
        "feasibility": float(100.0 * feasible.mean()),
    }


def train(model_config: ModelConfig, train_config: TrainConfig, dataset: ChannelDataset,
          labels: Optional[LabelSet] = None, show_progress: bool = True) -> Tuple[ParamSet, TrainLog]:
    """
    Mini-batch training with early stopping on the validation utility.

    Returns:
        the parameters of the best validation epoch and the training log.

    Raises:
        ConfigError: supervised learning without labels.
        TrainingDivergedError: the loss became NaN; carries the last finite parameters.
    """
    model_config.validate()
    train_config.validate()
    header = dataset.header
    spec = UtilitySpec(kind=train_config.utility.kind, sigma2=header.sigma2, power_budget=header.power_budget,
                       circuit_power=train_config.utility.circuit_power).validate()
    if train_config.learning == "supervised":
        if labels is None:
            raise ConfigError("supervised learning needs labels")
        if labels.spec.kind != spec.kind:
            raise ConfigError(f"labels are {labels.spec.kind} values, training {spec.kind}")

    train_ds, val_ds = split(dataset, 1.0 - train_config.val_fraction, seed=train_config.seed)
    train_labels = None
    if train_config.learning == "supervised":
        values = labels.aligned(train_ds.sample_ids)
        keep = np.nonzero(np.isfinite(values))[0]
        if keep.size < len(values):
            logging.warning(f"Dropping {len(values) - keep.size} training samples with invalid labels")
        train_ds = train_ds.subset(keep)
        train_labels = values[keep]
    train_data = _Data(model_config, train_ds, train_labels)
    val_data = _Data(model_config, val_ds, None)

    dims = FeatureDims.infer(model_config, header.k_users, header.n_antennas)
    params = init_params(model_config, dims, seed=train_config.seed)
    state = create_train_state(params, train_config)
    lam = params.lam
    best, best_value, best_epoch, since_best = params, -np.inf, None, 0
    log = TrainLog(train_samples=len(train_data))
    key = jax.random.PRNGKey(train_config.seed)
    n, bs = len(train_data), train_config.batch_size

    logging.info(
        f"Training {model_config.model_id} on {n} samples ({len(val_data)} validation), "
        f"{train_config.learning} {spec.kind}, P={spec.power_budget:g}"
    )
    epochs = tqdm(range(1, train_config.epochs + 1), desc=model_config.model_id, disable=not show_progress)
    for epoch in epochs:
        start = time.perf_counter()
        rho = train_config.rho(epoch)
        perm = np.asarray(jax.random.permutation(jax.random.fold_in(key, epoch), n))
        losses = []
        for b in range(0, n, bs):
            idx = perm[b:b + bs]
            last_finite = _params_of(state, lam)
            try:
                with Tape() as tape:
                    tensors = {name: Tensor.parameter(np.asarray(a), name=name) for name, a in state.params.items()}
                    beams = _forward(model_config, tensors, train_data, idx, spec.power_budget, dims)
                    utility = utility_value(spec, train_data.channel_rows(idx), beams)
                    batch_labels = None if train_labels is None else train_labels[idx]
                    loss = _batch_loss(model_config, train_config, spec, utility, beams, batch_labels, rho, lam)
                value = loss.item()
            except DomainError as e:
                value, cause = float("nan"), e
            else:
                cause = None
            if not np.isfinite(value):
                message = f"loss diverged in epoch {epoch}" + (f" ({cause})" if cause else "")
                logging.critical(message)
                raise TrainingDivergedError(epoch, last_finite, message)
            grads = dc.backward(tape, loss)
            grad_tree = {name: jnp.asarray(grads.get(t, np.zeros(t.shape))) for name, t in tensors.items()}
            state = adam_step(state, grad_tree)
            if model_config.constraint_mode == "ldm":
                violation = float(np.mean(beams.power.numpy() - spec.power_budget))
                lam = dual_update(lam, violation, train_config.eta_dual)
            losses.append(value)

        current = _params_of(state, lam)
        metrics = validate_epoch(model_config, current, val_data, spec, dims)
        log.append(epoch=epoch, train_loss=float(np.mean(losses)), lam=float(lam), rho=rho,
                   wall_time=time.perf_counter() - start, **metrics)
        logging.debug(f"epoch {epoch}: loss {np.mean(losses):.4f}, val {metrics['val_utility']:.4f}, "
                      f"feasible {metrics['feasibility']:.1f}%, lambda {lam:.4f}")
        if metrics["val_utility"] > best_value:
            best, best_value, best_epoch, since_best = current, metrics["val_utility"], epoch, 0
        else:
            since_best += 1
            if since_best >= train_config.patience:
                logging.info(f"Early stop after epoch {epoch}, best epoch {best_epoch}")
                log.stopped_early = True
                break
    log.best_epoch = best_epoch
    logging.info(f"Finished {model_config.model_id}: best validation utility {best_value:.4f} at epoch {best_epoch}")
    return best, log


def make_checkpoint(model_config: ModelConfig, train_config: TrainConfig, dataset: ChannelDataset,
                    params: ParamSet, log: TrainLog, dataset_id: str = "") -> Checkpoint:
    header = dataset.header
    best = next((r for r in log.records if r["epoch"] == log.best_epoch), {})
    return Checkpoint(
        config=model_config,
        dims=FeatureDims.infer(model_config, header.k_users, header.n_antennas),
        params=params,
        metadata={
            "utility": train_config.utility.kind,
            "learning": train_config.learning,
            "seed": train_config.seed,
            "epochs": log.epochs,
            "best_epoch": log.best_epoch,
            "val_utility": best.get("val_utility"),
            "train_samples": log.train_samples,
            "power_budget": header.power_budget,
            "dataset_id": dataset_id,
            "train_config": train_config.to_dict(),
        },
    )


# ---------------------------------------------------------------- ablation


@dataclass
class AblationResult:
    recipe: str
    reports: Dict[str, MetricsReport]
    checkpoints: Dict[str, Checkpoint]
    logs: Dict[str, TrainLog]

    @property
    def table(self) -> pd.DataFrame:
        return compare_reports(self.reports)


def _default_solver(kind: str) -> str:
    return "wmmse" if kind == "srm" else "pga"


def _run_variant(args) -> Tuple[str, Checkpoint, TrainLog, MetricsReport]:
    variant, base_model, base_train, dataset, test_set, train_labels, test_labels, show_progress = args
    model_config = ModelConfig.preset(variant.preset, **{**base_model, **variant.model})
    train_config = TrainConfig.from_dict({**base_train.to_dict(), **variant.train})
    if variant.power_budget is not None and variant.power_budget != dataset.header.power_budget:
        dataset = dataset.with_power(variant.power_budget)
        test_set = test_set.with_power(variant.power_budget)
        solver = _default_solver(train_config.utility.kind)
        test_labels = label_dataset(test_set, train_config.utility, solver)
        train_labels = label_dataset(dataset, train_config.utility, solver) \
            if train_config.learning == "supervised" else None
    params, log = train(model_config, train_config, dataset, labels=train_labels, show_progress=show_progress)
    checkpoint = make_checkpoint(model_config, train_config, dataset, params, log)
    report = Benchmark(test_set, train_config.utility, labels=test_labels).run_model(checkpoint, train_log=log)
    report.metadata["variant"] = variant.name
    return variant.name, checkpoint, log, report


def ablate(recipe: str, dataset: ChannelDataset, test_set: ChannelDataset, train_config: TrainConfig,
           test_labels: Optional[LabelSet] = None, train_labels: Optional[LabelSet] = None,
           model_overrides: Optional[Dict] = None, jobs: int = 1) -> AblationResult:
    """
    Train every variant of a recipe with the shared seed and data and
    evaluate them on the shared test set.

    Missing labels are computed with the default solver of the utility
    (wmmse for srm, pga otherwise).
    """
    variants: List[Variant] = recipe_variants(recipe)
    train_config.validate()
    solver = _default_solver(train_config.utility.kind)
    if test_labels is None:
        test_labels = label_dataset(test_set, train_config.utility, solver)
    needs_train_labels = any(v.train.get("learning", train_config.learning) == "supervised" for v in variants)
    if needs_train_labels and train_labels is None:
        train_labels = label_dataset(dataset, train_config.utility, solver)
    jobs = max(1, int(jobs))
    tasks = [(v, dict(model_overrides or {}), train_config, dataset, test_set, train_labels, test_labels, jobs == 1)
             for v in variants]
    logging.info(f"Ablation '{recipe}': {len(tasks)} variants on {jobs} worker(s)")
    if jobs == 1:
        results = [_run_variant(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_variant, tasks))
    return AblationResult(
        recipe=recipe,
        reports={name: report for name, _, _, report in results},
        checkpoints={name: ckpt for name, ckpt, _, _ in results},
        logs={name: log for name, _, log, _ in results},
    )
