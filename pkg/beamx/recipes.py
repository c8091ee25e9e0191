"""
Ablation recipes: named families of model/training variants trained on the
same data with the same seed and evaluated on the same test set.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

from beamx.errors import ConfigError


@dataclass(frozen=True)
class Variant:
    """
    One arm of an ablation.

    Attributes:
        name (str): row label in the comparison table.
        preset (str): model preset the variant starts from (gcn, gat, resgat, mlp).
        model (dict): ModelConfig overrides on top of the preset.
        train (dict): TrainConfig overrides.
        power_budget (float, optional): train and test under this budget instead of the dataset's.
    """

    name: str
    preset: str = "resgat"
    model: Dict = field(default_factory=dict)
    train: Dict = field(default_factory=dict)
    power_budget: Optional[float] = None


def _mp_vs_attention_vs_residual() -> List[Variant]:
    return [Variant("gcn", "gcn"), Variant("gat", "gat"), Variant("resgat", "resgat")]


def _message_passing() -> List[Variant]:
    return [
        Variant("no-mp", "gcn", {"aggregation": "none"}),
        Variant("mp-mean", "gcn"),
        Variant("mp-attention", "gat"),
        Variant("mp-attention-residual", "resgat"),
    ]


def _heads() -> List[Variant]:
    return [Variant(f"heads-{h}", "resgat", {"heads": h}) for h in (1, 2, 4, 8)]


def _depth() -> List[Variant]:
    return [
        Variant(f"depth-{depth}-{'res' if residual else 'plain'}", "gat", {"depth": depth, "residual": residual})
        for residual in (True, False)
        for depth in range(1, 7)
    ]


def _constraints() -> List[Variant]:
    return [
        Variant(f"{mode}-P{power:g}", "resgat", {"constraint_mode": mode}, power_budget=power)
        for power in (1.0, 10.0, 100.0)
        for mode in ("af", "pm", "ldm")
    ]


def _learning() -> List[Variant]:
    return [
        Variant("unsupervised", "resgat", train={"learning": "unsupervised"}),
        Variant("supervised", "resgat", train={"learning": "supervised"}),
    ]


RECIPES: Dict[str, Callable[[], List[Variant]]] = {
    "mp-vs-attention-vs-residual": _mp_vs_attention_vs_residual,
    "heads": _heads,
    "depth": _depth,
    "message-passing": _message_passing,
    "constraints": _constraints,
    "learning": _learning,
}


def recipe_variants(name: str) -> List[Variant]:
    if name not in RECIPES:
        raise ConfigError(f"Unknown recipe '{name}'. Available recipes: {sorted(RECIPES)}")
    return RECIPES[name]()
