"""
Model configuration, parameter store and checkpoints.

Parameter shapes depend on the configuration and the feature dimensions
only, never on the number of users, so one ParamSet evaluates on graphs of
any size (the mlp baseline being the deliberate exception).
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Tuple

import jax
import jax.numpy as jnp
import numpy as np
from typing_extensions import Literal

from beamx.defaults import (
    default_depth,
    default_heads,
    default_hidden_dim,
    default_lambda_init,
    default_leaky_alpha,
    default_mlp_hidden,
    default_readout_hidden,
    default_seed,
)
from beamx.diffcore import Tensor
from beamx.errors import ConfigError, DatasetFormatError
from beamx.graphrep import BIPARTITE, EDGE_FEATURE_MODES, LINK_GRAPH, REPRESENTATIONS

AGGREGATIONS = ("mean", "sum", "max", "attention", "none")
CONSTRAINT_MODES = ("af", "pm", "ldm")
AF_KINDS = ("ball", "full")
BASELINE_MODELS = ("none", "mlp")
CHECKPOINT_FORMAT = "beamx-checkpoint/1"

MODEL_PRESETS = {
    "gcn": dict(aggregation="mean", residual=False),
    "gat": dict(aggregation="attention", heads=4, residual=False),
    "resgat": dict(aggregation="attention", heads=4, residual=True),
    "mlp": dict(baseline_model="mlp"),
}


@dataclass(frozen=True)
class ModelConfig:
    """
    Architecture knobs.

    Attributes:
        representation (str): graph the model runs on, link_graph or bipartite.
        depth (int): number of message-passing layers.
        hidden_dim (int): node feature width after the first layer.
        heads (int): attention heads, hidden_dim must be divisible by heads.
        aggregation (str): mean, sum, max, attention or none.
        residual (bool): identity skip on layers whose input width is hidden_dim.
        readout_hidden (int): hidden width of the readout MLP.
        constraint_mode (str): af projects the output, pm and ldm rely on the loss.
        leaky_alpha (float): negative slope of every leaky ReLU.
        baseline_model (str): "mlp" swaps the GNN for a dense network on flattened H.
        af_kind (str): "ball" scales down only when over budget, "full" always scales to P.
        edge_feature_mode (str): "correlation" adds channel correlation on link-graph edges.
        mlp_hidden (int): hidden width of the mlp baseline.
    """

    representation: Literal["link_graph", "bipartite"] = LINK_GRAPH
    depth: int = default_depth
    hidden_dim: int = default_hidden_dim
    heads: int = default_heads
    aggregation: Literal["mean", "sum", "max", "attention", "none"] = "mean"
    residual: bool = False
    readout_hidden: int = default_readout_hidden
    constraint_mode: Literal["af", "pm", "ldm"] = "af"
    leaky_alpha: float = default_leaky_alpha
    baseline_model: Literal["none", "mlp"] = "none"
    af_kind: Literal["ball", "full"] = "ball"
    edge_feature_mode: Literal["none", "correlation"] = "none"
    mlp_hidden: int = default_mlp_hidden

    def validate(self) -> "ModelConfig":
        checks = [
            (self.representation in REPRESENTATIONS, f"representation must be one of {REPRESENTATIONS}"),
            (self.aggregation in AGGREGATIONS, f"aggregation must be one of {AGGREGATIONS}"),
            (self.constraint_mode in CONSTRAINT_MODES, f"constraint_mode must be one of {CONSTRAINT_MODES}"),
            (self.af_kind in AF_KINDS, f"af_kind must be one of {AF_KINDS}"),
            (self.baseline_model in BASELINE_MODELS, f"baseline_model must be one of {BASELINE_MODELS}"),
            (self.edge_feature_mode in EDGE_FEATURE_MODES, f"edge_feature_mode must be one of {EDGE_FEATURE_MODES}"),
            (self.depth >= 1, f"depth must be >= 1, got {self.depth}"),
            (self.hidden_dim >= 1, f"hidden_dim must be >= 1, got {self.hidden_dim}"),
            (self.heads >= 1, f"heads must be >= 1, got {self.heads}"),
            (self.readout_hidden >= 1, f"readout_hidden must be >= 1, got {self.readout_hidden}"),
            (self.mlp_hidden >= 1, f"mlp_hidden must be >= 1, got {self.mlp_hidden}"),
            (self.leaky_alpha >= 0, f"leaky_alpha must be non-negative, got {self.leaky_alpha}"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)
        if self.aggregation == "attention" and self.hidden_dim % self.heads != 0:
            raise ConfigError(f"hidden_dim {self.hidden_dim} is not divisible by heads {self.heads}")
        return self

    @property
    def is_mlp(self) -> bool:
        return self.baseline_model == "mlp"

    @property
    def relations(self) -> Tuple[str, ...]:
        return ("link",) if self.representation == LINK_GRAPH else ("user", "antenna")

    @property
    def model_id(self) -> str:
        if self.is_mlp:
            return "mlp"
        parts = [self.representation, self.aggregation, f"L{self.depth}", f"d{self.hidden_dim}"]
        if self.aggregation == "attention":
            parts.append(f"h{self.heads}")
        if self.residual:
            parts.append("res")
        parts.append(self.constraint_mode)
        return "-".join(parts)

    @classmethod
    def preset(cls, name: str, **overrides) -> "ModelConfig":
        """gcn, gat, resgat or mlp, with overrides applied on top."""
        if name not in MODEL_PRESETS:
            raise ConfigError(f"Unknown model '{name}'. Available models: {sorted(MODEL_PRESETS)}")
        return cls(**{**MODEL_PRESETS[name], **overrides}).validate()

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        try:
            return cls(**d).validate()
        except TypeError as e:
            raise ConfigError(f"bad model config: {e}") from None


@dataclass(frozen=True)
class FeatureDims:
    """Widths of the graph inputs; k_users/n_antennas pin the mlp baseline."""

    node_dim: int
    edge_dim: int
    n_antennas: int
    k_users: int

    @classmethod
    def infer(cls, config: ModelConfig, k_users: int, n_antennas: int) -> "FeatureDims":
        if config.representation == BIPARTITE:
            return cls(node_dim=2, edge_dim=2, n_antennas=n_antennas, k_users=k_users)
        edge_dim = 1 if config.edge_feature_mode == "correlation" else 0
        return cls(node_dim=2 * n_antennas, edge_dim=edge_dim, n_antennas=n_antennas, k_users=k_users)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ParamSet:
    """
    Named flat parameter arrays plus the Lagrange multiplier of ldm training.

    The multiplier is not part of `arrays` so that the optimizer never
    touches it; it only moves through dual updates.
    """

    arrays: Dict[str, np.ndarray]
    lam: float = default_lambda_init

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def names(self) -> List[str]:
        return sorted(self.arrays)

    @property
    def count(self) -> int:
        return int(sum(a.size for a in self.arrays.values()))

    def tensors(self, trainable: bool = False) -> Dict[str, Tensor]:
        make = Tensor.parameter if trainable else Tensor.constant
        return {name: make(a, name=name) if trainable else make(a) for name, a in self.arrays.items()}

    def with_arrays(self, arrays) -> "ParamSet":
        return ParamSet(arrays={k: np.array(v, dtype=np.float64) for k, v in arrays.items()}, lam=self.lam)

    def with_lam(self, lam: float) -> "ParamSet":
        return ParamSet(arrays=self.arrays, lam=float(lam))

    def equals(self, other: "ParamSet") -> bool:
        return self.lam == other.lam and self.names() == other.names() and all(
            np.array_equal(self.arrays[k], other.arrays[k]) for k in self.arrays
        )


def param_shapes(config: ModelConfig, dims: FeatureDims) -> Dict[str, Tuple[int, ...]]:
    """The full parameter layout of a model."""
    config.validate()
    d, rh = config.hidden_dim, config.readout_hidden
    shapes: Dict[str, Tuple[int, ...]] = {}
    if config.is_mlp:
        K, N, h = dims.k_users, dims.n_antennas, config.mlp_hidden
        shapes.update({
            "mlp.W1": (2 * K * N, h), "mlp.b1": (h,),
            "mlp.W2": (h, h), "mlp.b2": (h,),
            "mlp.W3": (h, 2 * N * K), "mlp.b3": (2 * N * K,),
        })
        return shapes

    in_dim = dims.node_dim
    if config.representation == BIPARTITE:
        shapes["embed"] = (dims.node_dim, d)
        in_dim = d
    for layer in range(config.depth):
        for rel in config.relations:
            prefix = f"layer{layer}.{rel}"
            if config.aggregation == "attention":
                shapes[f"{prefix}.U"] = (in_dim, d)
                dh = d // config.heads
                for head in range(config.heads):
                    shapes[f"{prefix}.a_src_{head}"] = (dh, 1)
                    shapes[f"{prefix}.a_dst_{head}"] = (dh, 1)
            elif config.aggregation != "none":
                shapes[f"{prefix}.W_neigh"] = (in_dim, d)
                shapes[f"{prefix}.b_msg"] = (d,)
            if config.aggregation != "none":
                if dims.edge_dim > 0:
                    shapes[f"{prefix}.W_edge"] = (dims.edge_dim, d)
                shapes[f"{prefix}.W_agg"] = (d, d)
            shapes[f"{prefix}.W_self"] = (in_dim, d)
            shapes[f"{prefix}.b_upd"] = (d,)
        in_dim = d

    if config.representation == LINK_GRAPH:
        shapes.update({"readout.W1": (d, rh), "readout.b1": (rh,),
                       "readout.W2": (rh, 2 * dims.n_antennas), "readout.b2": (2 * dims.n_antennas,)})
    else:
        shapes.update({"readout.W1": (2 * d, rh), "readout.b1": (rh,),
                       "readout.W2": (rh, 2), "readout.b2": (2,)})
    return shapes


def glorot_bound(shape: Tuple[int, ...]) -> float:
    fan_in, fan_out = shape[0], shape[1] if len(shape) > 1 else 1
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _is_bias(name: str) -> bool:
    leaf = name.rsplit(".", 1)[-1]
    return leaf.startswith("b")


def init_params(config: ModelConfig, dims: FeatureDims, seed: int = default_seed) -> ParamSet:
    """
    Glorot-uniform weights, zero biases, lambda = 0.1.

    Every parameter draws from its own key, fold_in(PRNGKey(seed), i) with i
    its position in sorted-name order.
    """
    shapes = param_shapes(config, dims)
    key = jax.random.PRNGKey(seed)
    arrays = {}
    for i, name in enumerate(sorted(shapes)):
        shape = shapes[name]
        if _is_bias(name):
            arrays[name] = np.zeros(shape)
            continue
        bound = glorot_bound(shape)
        draw = jax.random.uniform(jax.random.fold_in(key, i), shape, dtype=jnp.float64, minval=-bound, maxval=bound)
        arrays[name] = np.array(draw, dtype=np.float64)
    logging.info(f"Initialized {config.model_id} with {sum(a.size for a in arrays.values())} parameters")
    return ParamSet(arrays=arrays, lam=default_lambda_init)


@dataclass
class Checkpoint:
    config: ModelConfig
    dims: FeatureDims
    params: ParamSet
    metadata: dict = field(default_factory=dict)


def save_checkpoint(path: str, checkpoint: Checkpoint) -> None:
    """JSON with the config, every parameter (shape + flat data) and training metadata."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": checkpoint.config.to_dict(),
        "feature_dims": checkpoint.dims.to_dict(),
        "lambda": checkpoint.params.lam,
        "params": {
            name: {"shape": list(a.shape), "data": a.reshape(-1).tolist()}
            for name, a in sorted(checkpoint.params.arrays.items())
        },
        "metadata": checkpoint.metadata,
    }
    with open(path, "w") as file:
        json.dump(payload, file)
    logging.info(f"Saved checkpoint {checkpoint.config.model_id} to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path) as file:
        try:
            payload = json.load(file)
        except json.JSONDecodeError as e:
            raise DatasetFormatError(path, e.lineno, f"invalid checkpoint JSON ({e.msg})") from None
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise DatasetFormatError(path, 1, f"not a checkpoint (format {payload.get('format')!r})")
    config = ModelConfig.from_dict(payload["config"])
    dims = FeatureDims(**payload["feature_dims"])
    arrays = {
        name: np.array(entry["data"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["params"].items()
    }
    expected = param_shapes(config, dims)
    for name, shape in expected.items():
        if name not in arrays or arrays[name].shape != tuple(shape):
            raise DatasetFormatError(path, 1, f"parameter {name} missing or of wrong shape")
    return Checkpoint(config=config, dims=dims, params=ParamSet(arrays=arrays, lam=float(payload["lambda"])),
                      metadata=payload.get("metadata", {}))
