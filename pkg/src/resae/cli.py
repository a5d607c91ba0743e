"""Command-line entry points for reproducible experiment runs.

Every command reads one JSON config document, fills in all defaults, and
echoes the fully resolved config into the output directory, so a run can be
re-executed exactly from its own artifacts.  Exit codes: 0 success, 2 usage
or config error, 3 training failed with a non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .evaluation import (
    NRMSE_DEFINITION,
    compare,
    evaluate_model,
    grid_search,
    residual_sensitivity,
)
from .network import NetworkSpec, build_network
from .training import (
    LossSpec,
    Regularizer,
    TrainConfig,
    TrainingDiverged,
    default_loss_for,
    make_spec,
    train_model,
)


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG = {
    "dataset": {
        "source": "simulate",          # simulate | csv | spatial-field
        "n": 1000,
        "seed": 7,
        "noise_sd": 100.0,
        "path": None,
        "targets": ["y"],
        "task": "regression",
        "stratify_column": None,
        "target_bins": None,
        "delimiter": ",",
        "correlation_length": 0.15,
        "n_bumps": 4,
        "spatial_noise_sd": 0.5,
        "with_coordinates": True,
    },
    "network": {
        "nnode": [32, 16, 8, 4],
        "activation": "elu",
        "output_activation": "linear",
        "dropout_rate": 0.1,
        "residual": "full",
        "residual_post_op": "activation_batchnorm",
        "output_option": 1,
        "batchnorm": True,
        "elu_alpha": 1.0,
        "dropout_placement": "code",
    },
    "training": {
        "batch_size": 100,
        "max_epochs": 300,
        "learning_rate": 0.001,
        "optimizer": "adam",
        "momentum": 0.9,
        "adam_beta1": 0.9,
        "adam_beta2": 0.999,
        "adam_epsilon": 1e-8,
        "early_stop_patience": 50,
        "seed": 1,
        "shuffle": True,
    },
    "loss": {
        "reconstruction_weight": 1.0,
        "regularizer": "none",
        "coefficient": 0.0,
    },
    "n_seeds": 5,
    "stratify": False,
    "grid": {
        "batch_sizes": None,
        "nnodes": None,
        "activations": None,
        "output_options": None,
    },
    "out_dir": "runs/out",
}


def _merge(defaults: dict, override: dict, path: str = "") -> dict:
    out = {}
    for key, default in defaults.items():
        if key in override:
            value = override[key]
            if isinstance(default, dict) and isinstance(value, dict):
                out[key] = _merge(default, value, f"{path}{key}.")
            else:
                out[key] = value
        else:
            out[key] = default
    unknown = set(override) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(path + k for k in unknown)}")
    return out


def load_config(path: str | None) -> dict:
    if path is None:
        return _merge(DEFAULT_CONFIG, {})
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(user, dict):
        raise ConfigError("config document must be a JSON object")
    return _merge(DEFAULT_CONFIG, user)


def build_dataset(cfg: dict):
    d = cfg["dataset"]
    if d["source"] == "simulate":
        return data_mod.generate_simulated(n=int(d["n"]), seed=int(d["seed"]),
                                           noise_sd=float(d["noise_sd"]))
    if d["source"] == "csv":
        if not d["path"]:
            raise ConfigError("dataset.path is required for source=csv")
        return data_mod.load_csv(d["path"], d["targets"], d["task"],
                                 stratify_column=d["stratify_column"],
                                 target_bins=d["target_bins"],
                                 delimiter=d["delimiter"])
    if d["source"] == "spatial-field":
        pair = data_mod.generate_spatial_field(
            n=int(d["n"]), seed=int(d["seed"]),
            correlation_length=float(d["correlation_length"]),
            n_bumps=int(d["n_bumps"]), noise_sd=float(d["spatial_noise_sd"]))
        return pair.with_coordinates if d["with_coordinates"] else pair.plain
    raise ConfigError(f"unknown dataset source {d['source']!r}")


def build_spec(cfg: dict, dataset) -> NetworkSpec:
    n = cfg["network"]
    residual = n["residual"]
    if not isinstance(residual, str):
        residual = int(residual)
    try:
        spec = make_spec(dataset, n["nnode"],
                         acts=n["activation"],
                         output_activation=n["output_activation"],
                         dropout_rate=float(n["dropout_rate"]),
                         residual=residual,
                         residual_post_op=n["residual_post_op"],
                         output_option=int(n["output_option"]),
                         use_batchnorm=bool(n["batchnorm"]),
                         elu_alpha=float(n["elu_alpha"]),
                         dropout_placement=n["dropout_placement"])
        spec.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid network config: {exc}") from None
    return spec


def build_train_config(cfg: dict) -> TrainConfig:
    t = cfg["training"]
    try:
        tc = TrainConfig(batch_size=int(t["batch_size"]),
                         max_epochs=int(t["max_epochs"]),
                         learning_rate=float(t["learning_rate"]),
                         optimizer=t["optimizer"],
                         momentum=float(t["momentum"]),
                         adam_beta1=float(t["adam_beta1"]),
                         adam_beta2=float(t["adam_beta2"]),
                         adam_epsilon=float(t["adam_epsilon"]),
                         early_stop_patience=int(t["early_stop_patience"]),
                         seed=int(t["seed"]),
                         shuffle=bool(t["shuffle"]))
        tc.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid training config: {exc}") from None
    return tc


def build_regularizer(cfg: dict) -> Regularizer:
    reg = Regularizer(kind=cfg["loss"]["regularizer"],
                      coefficient=float(cfg["loss"]["coefficient"]))
    try:
        reg.validate()
    except ValueError as exc:
        raise ConfigError(f"invalid loss config: {exc}") from None
    return reg


def build_loss(cfg: dict, dataset, spec: NetworkSpec) -> LossSpec:
    return default_loss_for(dataset.task, spec.output_option,
                            float(cfg["loss"]["reconstruction_weight"]))


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _prepare_out_dir(cfg: dict, override: str | None) -> Path:
    out = Path(override) if override else Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    cfg["out_dir"] = str(out)
    return out


def _apply_overrides(cfg: dict, args) -> None:
    if getattr(args, "seed", None) is not None:
        cfg["training"]["seed"] = args.seed
    if getattr(args, "n_seeds", None) is not None:
        cfg["n_seeds"] = args.n_seeds
    residual = getattr(args, "residual", None)
    if residual is not None:
        if residual == "on":
            cfg["network"]["residual"] = "full"
        elif residual == "off":
            cfg["network"]["residual"] = "off"
        else:
            try:
                cfg["network"]["residual"] = int(residual)
            except ValueError:
                raise ConfigError(f"--residual must be on, off, or an integer, "
                                  f"got {residual!r}") from None


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    ds = data_mod.generate_simulated(n=args.n, seed=args.seed, noise_sd=args.noise_sd)
    rows = np.column_stack([ds.features, ds.targets])
    header = ",".join(ds.feature_names + ds.target_names)
    try:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc}", file=sys.stderr)
        return 2
    print(f"wrote {ds.n_rows} rows to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    out = _prepare_out_dir(cfg, args.out)
    dataset = build_dataset(cfg)
    spec = build_spec(cfg, dataset)
    train_cfg = build_train_config(cfg)
    regularizer = build_regularizer(cfg)
    loss = build_loss(cfg, dataset, spec)
    _write_json(out / "config.json", cfg)
    _write_json(out / "dataset.json", dataset.manifest())

    split_idx = data_mod.split(dataset, seed=train_cfg.seed, stratify=cfg["stratify"])
    parameter_count = build_network(spec, rng=0).count_parameters()
    try:
        model = train_model(dataset, split_idx, spec, train_cfg,
                            regularizer=regularizer, loss=loss)
    except TrainingDiverged as exc:
        _write_json(out / "metrics.json", {
            "config": cfg, "converged": False, "seed": train_cfg.seed,
            "parameter_count": parameter_count, "diagnostic": str(exc)})
        print(f"error: {exc}", file=sys.stderr)
        return 3

    model.history.to_csv(out / "history.csv")
    payload = model.to_dict()
    payload["config"] = cfg
    _write_json(out / "model.json", payload)
    metrics = {
        "config": cfg,
        "converged": True,
        "seed": train_cfg.seed,
        "parameter_count": model.network.count_parameters(),
        "best_epoch": model.history.best_epoch,
        "epochs_run": len(model.history),
        "definitions": {"nrmse": NRMSE_DEFINITION},
        "validation": evaluate_model(model, dataset, split_idx.validation).to_dict(),
        "test": evaluate_model(model, dataset, split_idx.test).to_dict(),
    }
    _write_json(out / "metrics.json", metrics)
    print(f"run artifacts in {out}")
    return 0


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    out = _prepare_out_dir(cfg, args.out)
    dataset = build_dataset(cfg)
    spec = build_spec(cfg, dataset)
    train_cfg = build_train_config(cfg)
    _write_json(out / "config.json", cfg)
    report = compare(dataset, spec, train_cfg, n_seeds=int(cfg["n_seeds"]),
                     regularizer=build_regularizer(cfg),
                     loss=build_loss(cfg, dataset, spec),
                     stratify=cfg["stratify"])
    payload = report.to_dict()
    payload["config"] = cfg
    _write_json(out / "report.json", payload)
    report.write_runs_csv(out / "runs.csv")
    print(f"comparison artifacts in {out}")
    return 0


def cmd_grid(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    out = _prepare_out_dir(cfg, args.out)
    dataset = build_dataset(cfg)
    spec = build_spec(cfg, dataset)
    train_cfg = build_train_config(cfg)
    grid_axes = {k: v for k, v in cfg["grid"].items() if v}
    if not grid_axes:
        raise ConfigError("grid config is empty: set at least one of batch_sizes, "
                          "nnodes, activations, output_options")
    _write_json(out / "config.json", cfg)
    result = grid_search(dataset, spec, train_cfg, grid_axes,
                         n_seeds=int(cfg["n_seeds"]),
                         regularizer=build_regularizer(cfg),
                         loss=build_loss(cfg, dataset, spec),
                         stratify=cfg["stratify"])
    payload = result.to_dict()
    payload["config"] = cfg
    _write_json(out / "report.json", payload)
    result.write_cells_csv(out / "grid.csv")
    if set(grid_axes) == {"batch_sizes"}:
        result.write_curve_csv(out / "curve.csv")
    print(f"grid artifacts in {out}; best cell: {result.best().label}")
    return 0


def cmd_sensitivity(args) -> int:
    cfg = load_config(args.config)
    _apply_overrides(cfg, args)
    out = _prepare_out_dir(cfg, args.out)
    dataset = build_dataset(cfg)
    spec = build_spec(cfg, dataset)
    train_cfg = build_train_config(cfg)
    _write_json(out / "config.json", cfg)
    result = residual_sensitivity(dataset, spec, train_cfg,
                                  n_seeds=int(cfg["n_seeds"]),
                                  regularizer=build_regularizer(cfg),
                                  loss=build_loss(cfg, dataset, spec),
                                  stratify=cfg["stratify"])
    payload = result.to_dict()
    payload["config"] = cfg
    _write_json(out / "report.json", payload)
    result.write_csv(out / "sensitivity.csv")
    print(f"sensitivity artifacts in {out}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _positive_int(value: str) -> int:
    n = int(value)
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {n}")
    return n


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="resae",
        description="Nested-residual autoencoder experiments on tabular data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate the simulated benchmark as CSV")
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--noise-sd", type=float, default=100.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    for name, fn, help_text in (
            ("train", cmd_train, "train one network and write model/history/metrics"),
            ("compare", cmd_compare, "residual vs regular arms over shared seeds"),
            ("grid", cmd_grid, "factorial grid search ranked by validation metric"),
            ("sensitivity", cmd_sensitivity, "sweep the number of outermost shortcuts")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON config file (defaults used if omitted)")
        p.add_argument("--out", help="output directory (overrides config out_dir)")
        p.add_argument("--seed", type=int, help="override training seed")
        p.add_argument("--n-seeds", type=_positive_int, help="override number of seeds")
        p.add_argument("--residual", help="on, off, or number of outermost shortcuts")
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
