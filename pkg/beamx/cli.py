"""
Command-line entry point.

    beamx gen-data --k 4 --n 8 --count 2500 --out train.jsonl
    beamx label --dataset train.jsonl --utility srm --solver wmmse --out train.labels.jsonl
    beamx train --dataset train.jsonl --model resgat --utility srm --out resgat.ckpt.json
    beamx eval --checkpoint resgat.ckpt.json --dataset test.jsonl --labels test.labels.jsonl --out report.json
    beamx scale-eval --checkpoint resgat.ckpt.json --datasets k7.jsonl k9.jsonl --out scale.json
    beamx ablate --recipe heads --dataset train.jsonl --out heads.json --jobs 4

Every output gets a run manifest next to it (`<out>.manifest.json`) holding
the command line, the resolved configuration, seeds, inputs and outputs.
"""
import argparse
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Dict, List, Optional, Sequence

import jax
import numpy as np
import pandas as pd

import beamx
from beamx.baselines import label_dataset, read_labels, write_labels
from beamx.benchmark import Benchmark
from beamx.benchmark_result import emit_report
from beamx.channel import DatasetHeader, generate_dataset, load_dataset, save_dataset, split
from beamx.defaults import (
    default_circuit_power,
    default_power_budget,
    default_seed,
    default_sigma2,
    default_stability_n,
    default_timing_repetitions,
)
from beamx.errors import ConfigError, DatasetFormatError, PermutationError, TrainingDivergedError
from beamx.graphrep import LINK_GRAPH
from beamx.methods import available_solvers
from beamx.objectives import UTILITIES, UtilitySpec
from beamx.params import MODEL_PRESETS, Checkpoint, FeatureDims, ModelConfig, load_checkpoint, save_checkpoint
from beamx.recipes import RECIPES
from beamx.trainer import TrainConfig, TrainLog, ablate, make_checkpoint, train

LEARNING_FLAGS = {"sup": "supervised", "unsup": "unsupervised"}
USAGE_ERRORS = (ConfigError, DatasetFormatError, PermutationError)


@dataclass
class RunManifest:
    command: str
    argv: List[str]
    config: Dict = field(default_factory=dict)
    seeds: Dict = field(default_factory=dict)
    inputs: Dict = field(default_factory=dict)
    outputs: Dict = field(default_factory=dict)
    versions: Dict = field(default_factory=dict)
    started: str = ""
    finished: str = ""


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


def _versions() -> Dict[str, str]:
    return {
        "beamx": beamx.__version__,
        "jax": jax.__version__,
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "python": platform.python_version(),
    }


def manifest_path(out: str) -> str:
    return f"{out}.manifest.json"


def write_manifest(out: str, manifest: RunManifest) -> str:
    path = manifest_path(out)
    manifest.finished = _now()
    with open(path, "w") as file:
        json.dump(asdict(manifest), file, indent=2)
    logging.debug(f"Wrote run manifest {path}")
    return path


def _sidecar(out: str, suffix: str) -> str:
    root, _ = os.path.splitext(out)
    return f"{root}{suffix}"


def _read_json_config(path: Optional[str]) -> Dict:
    if path is None:
        return {}
    try:
        with open(path) as file:
            config = json.load(file)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as e:
        raise DatasetFormatError(path, e.lineno, f"invalid JSON ({e.msg})") from None
    if not isinstance(config, dict):
        raise ConfigError(f"{path} must hold a JSON object with optional 'model' and 'train' sections")
    unknown = set(config) - {"model", "train"}
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")
    return config


def _load(path: str):
    if not os.path.exists(path):
        raise ConfigError(f"dataset {path} not found")
    return load_dataset(path)


def _utility(kind: str, circuit_power: float, header: DatasetHeader) -> UtilitySpec:
    return UtilitySpec(kind=kind, sigma2=header.sigma2, power_budget=header.power_budget,
                       circuit_power=circuit_power).validate()


def _train_config(args, file_config: Dict, utility: UtilitySpec) -> TrainConfig:
    """defaults -> --config file -> flags."""
    values = {**TrainConfig().to_dict(), **file_config.get("train", {})}
    values["utility"] = utility.to_dict()
    if getattr(args, "learning", None) is not None:
        values["learning"] = LEARNING_FLAGS[args.learning]
    if args.seed is not None:
        values["seed"] = args.seed
    if args.epochs is not None:
        values["epochs"] = args.epochs
    return TrainConfig.from_dict(values)


def _model_config(args, file_config: Dict) -> ModelConfig:
    overrides = dict(file_config.get("model", {}))
    if getattr(args, "constraint", None) is not None:
        overrides["constraint_mode"] = args.constraint
    if getattr(args, "representation", None) is not None:
        overrides["representation"] = args.representation
    return ModelConfig.preset(args.model, **overrides)


def _truncate(dataset, count: Optional[int]):
    if count is None:
        return dataset
    if not 1 <= count <= len(dataset):
        raise ConfigError(f"--train-count must lie in [1, {len(dataset)}], got {count}")
    return dataset.subset(range(count))


def check_compatible(checkpoint: Checkpoint, header: DatasetHeader, allow_mlp_mismatch: bool = False) -> None:
    """A checkpoint that cannot run on a dataset at all is a usage error."""
    config, dims = checkpoint.config, checkpoint.dims
    if config.is_mlp:
        if not allow_mlp_mismatch and (header.k_users, header.n_antennas) != (dims.k_users, dims.n_antennas):
            raise ConfigError(
                f"mlp checkpoint is fixed to K={dims.k_users}, N={dims.n_antennas}; "
                f"dataset has K={header.k_users}, N={header.n_antennas}"
            )
    elif config.representation == LINK_GRAPH and header.n_antennas != dims.n_antennas:
        raise ConfigError(
            f"link-graph checkpoint expects N={dims.n_antennas} antennas, dataset has N={header.n_antennas}"
        )


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, manifest: RunManifest) -> None:
    header = DatasetHeader(k_users=args.k, n_antennas=args.n, sigma2=args.sigma2, power_budget=args.p,
                           count=args.count, seed=args.seed).validate()
    manifest.config = {"header": header.to_dict()}
    manifest.seeds = {"channel": header.seed}
    dataset = generate_dataset(header)
    save_dataset(args.out, dataset, manifest=manifest_path(args.out))
    manifest.outputs = {"dataset": args.out}
    print(f"{len(dataset)} channels K={header.k_users} N={header.n_antennas} P={header.power_budget:g} -> {args.out}")


def cmd_label(args, manifest: RunManifest) -> None:
    dataset = _load(args.dataset)
    spec = _utility(args.utility, args.circuit_power, dataset.header)
    try:
        settings = json.loads(args.settings) if args.settings else None
    except json.JSONDecodeError as e:
        raise ConfigError(f"--settings is not valid JSON: {e.msg}") from None
    labels = label_dataset(dataset, spec, args.solver, settings)
    write_labels(args.out, labels, manifest=manifest_path(args.out))
    manifest.config = {"utility": spec.to_dict(), "solver": args.solver, "settings": labels.settings}
    manifest.seeds = {"channel": dataset.header.seed}
    manifest.inputs = {"dataset": args.dataset}
    manifest.outputs = {"labels": args.out}
    values = labels.values()
    print(f"{len(labels)} labels ({labels.invalid_count} invalid), mean {spec.kind} {np.nanmean(values):.4f} -> {args.out}")


def cmd_train(args, manifest: RunManifest) -> None:
    file_config = _read_json_config(args.config)
    dataset = _truncate(_load(args.dataset), args.train_count)
    spec = _utility(args.utility, args.circuit_power, dataset.header)
    model_config = _model_config(args, file_config)
    train_config = _train_config(args, file_config, spec)
    labels = None
    if train_config.learning == "supervised":
        if args.labels is None:
            raise ConfigError("--learning sup needs --labels")
        labels = read_labels(args.labels)
    elif args.labels is not None:
        logging.info("--labels ignored for unsupervised learning")

    manifest.config = {"model": model_config.to_dict(), "train": train_config.to_dict(), "preset": args.model}
    manifest.seeds = {"train": train_config.seed, "channel": dataset.header.seed}
    manifest.inputs = {"dataset": args.dataset, "labels": args.labels, "config": args.config}

    try:
        params, log = train(model_config, train_config, dataset, labels=labels)
    except TrainingDivergedError as e:
        header = dataset.header
        save_checkpoint(args.out, Checkpoint(
            config=model_config,
            dims=FeatureDims.infer(model_config, header.k_users, header.n_antennas),
            params=e.params,
            metadata={"diverged_at_epoch": e.epoch, "utility": spec.kind, "seed": train_config.seed,
                      "train_config": train_config.to_dict(), "manifest": manifest_path(args.out)},
        ))
        manifest.outputs = {"checkpoint": args.out}
        write_manifest(args.out, manifest)
        logging.critical(f"kept the last finite parameters in {args.out}")
        raise
    checkpoint = make_checkpoint(model_config, train_config, dataset, params, log, dataset_id=args.dataset)
    checkpoint.metadata["manifest"] = manifest_path(args.out)
    save_checkpoint(args.out, checkpoint)
    log_path = _sidecar(args.out, ".trainlog.jsonl")
    log.save(log_path, header={"manifest": manifest_path(args.out), "model_id": model_config.model_id})
    manifest.outputs = {"checkpoint": args.out, "train_log": log_path}
    best = checkpoint.metadata.get("val_utility")
    best = "n/a" if best is None else f"{best:.4f}"
    print(f"{model_config.model_id}: {log.epochs} epochs, best epoch {log.best_epoch}, "
          f"validation {spec.kind} {best} -> {args.out}")


def _emit(report, out: str, manifest: RunManifest) -> None:
    report.manifest = manifest_path(out)
    emit_report(report, out, "json")
    csv_path = _sidecar(out, ".radar.csv")
    emit_report(report, csv_path, "csv")
    manifest.outputs = {"report": out, "radar": csv_path}
    print(report.summary())


def cmd_eval(args, manifest: RunManifest) -> None:
    if (args.checkpoint is None) == (args.solver is None):
        raise ConfigError("give exactly one of --checkpoint and --solver")
    dataset = _load(args.dataset)
    labels = read_labels(args.labels) if args.labels else None
    manifest.inputs = {"dataset": args.dataset, "labels": args.labels, "checkpoint": args.checkpoint}
    manifest.seeds = {"channel": dataset.header.seed}
    if args.checkpoint is not None:
        checkpoint = load_checkpoint(args.checkpoint)
        check_compatible(checkpoint, dataset.header)
        kind = args.utility or checkpoint.metadata.get("utility", "srm")
        train_utility = checkpoint.metadata.get("train_config", {}).get("utility", {})
        circuit_power = train_utility.get("circuit_power", args.circuit_power)
        spec = _utility(kind, circuit_power, dataset.header)
        bench = Benchmark(dataset, spec, labels=labels, stability_n=args.stability_n, repetitions=args.repetitions)
        log_path = _sidecar(args.checkpoint, ".trainlog.jsonl")
        train_log = TrainLog.load(log_path) if os.path.exists(log_path) else None
        report = bench.run_model(checkpoint, train_log=train_log, time_inference=not args.no_timing)
        manifest.config = {"model": checkpoint.config.to_dict(), "utility": spec.to_dict()}
    else:
        spec = _utility(args.utility or "srm", args.circuit_power, dataset.header)
        bench = Benchmark(dataset, spec, labels=labels, stability_n=args.stability_n, repetitions=args.repetitions)
        report = bench.run_solver(args.solver, time_inference=not args.no_timing)
        manifest.config = {"solver": args.solver, "utility": spec.to_dict()}
    manifest.config.update({"stability_n": args.stability_n, "repetitions": args.repetitions})
    _emit(report, args.out, manifest)


def _pick_base(checkpoint: Checkpoint, datasets: Sequence, label_paths: Sequence[str]):
    """First setting the checkpoint runs on as trained, with its labels."""
    for i, dataset in enumerate(datasets):
        try:
            check_compatible(checkpoint, dataset.header)
        except ConfigError:
            continue
        return dataset, (read_labels(label_paths[i]) if label_paths else None)
    dims = checkpoint.dims
    raise ConfigError(
        f"none of --datasets matches the checkpoint (K={dims.k_users}, N={dims.n_antennas}); give --base-dataset"
    )


def cmd_scale_eval(args, manifest: RunManifest) -> None:
    checkpoint = load_checkpoint(args.checkpoint)
    label_paths = args.labels or []
    if label_paths and len(label_paths) != len(args.datasets):
        raise ConfigError(f"{len(label_paths)} label files for {len(args.datasets)} datasets")

    datasets = []
    for path in args.datasets:
        dataset = _load(path)
        check_compatible(checkpoint, dataset.header, allow_mlp_mismatch=True)
        datasets.append(dataset)
    if args.base_dataset:
        base = _load(args.base_dataset)
        check_compatible(checkpoint, base.header)
        base_labels = read_labels(args.base_labels) if args.base_labels else None
    else:
        base, base_labels = _pick_base(checkpoint, datasets, label_paths)
        if args.base_labels:
            base_labels = read_labels(args.base_labels)
    kind = args.utility or checkpoint.metadata.get("utility", "srm")
    spec = _utility(kind, args.circuit_power, base.header)

    settings = []
    for i, dataset in enumerate(datasets):
        labels = read_labels(label_paths[i]) if label_paths else None
        header = dataset.header
        settings.append((f"K{header.k_users}-N{header.n_antennas}-P{header.power_budget:g}", dataset, labels))
    bench = Benchmark(base, spec, labels=base_labels, stability_n=args.stability_n, repetitions=args.repetitions)
    report = bench.run_model(checkpoint, scalability_sets=settings, time_inference=not args.no_timing)
    manifest.config = {"model": checkpoint.config.to_dict(), "utility": spec.to_dict()}
    manifest.inputs = {"checkpoint": args.checkpoint, "datasets": args.datasets, "labels": label_paths,
                       "base_dataset": args.base_dataset, "base_labels": args.base_labels}
    _emit(report, args.out, manifest)


def cmd_ablate(args, manifest: RunManifest) -> None:
    file_config = _read_json_config(args.config)
    dataset = _load(args.dataset)
    if args.test_dataset:
        test_set = _load(args.test_dataset)
    else:
        dataset, test_set = split(dataset, args.test_split, seed=dataset.header.seed)
    dataset = _truncate(dataset, args.train_count)
    spec = _utility(args.utility, args.circuit_power, dataset.header)
    train_config = _train_config(args, file_config, spec)
    test_labels = read_labels(args.test_labels) if args.test_labels else None
    train_labels = read_labels(args.labels) if args.labels else None
    manifest.config = {"recipe": args.recipe, "train": train_config.to_dict(),
                       "model_overrides": file_config.get("model", {}), "jobs": args.jobs}
    manifest.seeds = {"train": train_config.seed, "channel": dataset.header.seed}
    manifest.inputs = {"dataset": args.dataset, "test_dataset": args.test_dataset,
                       "labels": args.labels, "test_labels": args.test_labels, "config": args.config}

    result = ablate(args.recipe, dataset, test_set, train_config, test_labels=test_labels,
                    train_labels=train_labels, model_overrides=file_config.get("model"), jobs=args.jobs)
    payload = {
        "recipe": args.recipe,
        "manifest": manifest_path(args.out),
        "reports": {name: report.to_dict() for name, report in result.reports.items()},
    }
    with open(args.out, "w") as file:
        json.dump(payload, file, indent=2)
    table_path = _sidecar(args.out, ".csv")
    table = result.table
    table.to_csv(table_path, index=False)
    manifest.outputs = {"reports": args.out, "table": table_path}
    print(table.to_string(index=False))


# ---------------------------------------------------------------- parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"])


def _add_training(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--utility", choices=UTILITIES, default="srm")
    parser.add_argument("--circuit-power", type=float, default=default_circuit_power)
    parser.add_argument("--config", help="JSON file with 'model' and 'train' overrides")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--train-count", type=int, help="use only the first n training samples")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamx", description="Learned MU-MISO beamforming: data, training, evaluation.")
    parser.add_argument("--version", action="version", version=f"beamx {beamx.__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="draw a Rayleigh channel dataset")
    p.add_argument("--k", type=int, required=True, help="users")
    p.add_argument("--n", type=int, required=True, help="antennas")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--p", type=float, default=default_power_budget, help="power budget")
    p.add_argument("--sigma2", type=float, default=default_sigma2)
    p.add_argument("--seed", type=int, default=default_seed)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("label", help="objective labels from a classical solver")
    p.add_argument("--dataset", required=True)
    p.add_argument("--utility", choices=UTILITIES, required=True)
    p.add_argument("--solver", choices=available_solvers, default="wmmse")
    p.add_argument("--settings", help="solver settings as a JSON object")
    p.add_argument("--circuit-power", type=float, default=default_circuit_power)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=sorted(MODEL_PRESETS), default="resgat")
    p.add_argument("--representation", choices=["link_graph", "bipartite"])
    p.add_argument("--constraint", choices=["af", "pm", "ldm"])
    p.add_argument("--learning", choices=sorted(LEARNING_FLAGS), default="unsup")
    p.add_argument("--labels")
    _add_training(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    for name, helptext in (("eval", "evaluate a checkpoint or a classical solver"),
                           ("scale-eval", "evaluate a checkpoint on unseen settings")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--utility", choices=UTILITIES, help="defaults to the checkpoint's utility")
        p.add_argument("--circuit-power", type=float, default=default_circuit_power)
        p.add_argument("--stability-n", type=float, default=default_stability_n)
        p.add_argument("--repetitions", type=int, default=default_timing_repetitions)
        p.add_argument("--no-timing", action="store_true")
        p.add_argument("--out", required=True)
    eval_parser, scale_parser = sub.choices["eval"], sub.choices["scale-eval"]
    eval_parser.add_argument("--checkpoint")
    eval_parser.add_argument("--solver", choices=available_solvers)
    eval_parser.add_argument("--dataset", required=True)
    eval_parser.add_argument("--labels")
    eval_parser.set_defaults(func=cmd_eval)
    scale_parser.add_argument("--checkpoint", required=True)
    scale_parser.add_argument("--datasets", nargs="+", required=True)
    scale_parser.add_argument("--labels", nargs="+")
    scale_parser.add_argument("--base-dataset", help="in-distribution test set; defaults to the first of --datasets the checkpoint was trained for")
    scale_parser.add_argument("--base-labels")
    scale_parser.set_defaults(func=cmd_scale_eval)

    p = sub.add_parser("ablate", help="train and compare the variants of a recipe")
    p.add_argument("--recipe", choices=sorted(RECIPES), required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--test-dataset")
    p.add_argument("--test-split", type=float, default=0.8, help="train share when no --test-dataset is given")
    p.add_argument("--labels", help="training labels, for supervised variants")
    p.add_argument("--test-labels")
    p.add_argument("--jobs", type=int, default=1)
    _add_training(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    for p in sub.choices.values():
        _add_common(p)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one command. Returns 0 on success, 1 on a runtime failure, 2 on a usage error."""
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(asctime)s %(levelname)s %(message)s")
    manifest = RunManifest(command=args.command, argv=argv, versions=_versions(), started=_now())
    try:
        args.func(args, manifest)
    except USAGE_ERRORS as e:
        logging.error(str(e))
        print(f"beamx {args.command}: error: {e}", file=sys.stderr)
        return 2
    except TrainingDivergedError as e:
        logging.critical(f"training diverged in epoch {e.epoch}: {e}")
        return 1
    except Exception as e:
        logging.exception(f"beamx {args.command} failed: {e}")
        return 1
    write_manifest(args.out, manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
