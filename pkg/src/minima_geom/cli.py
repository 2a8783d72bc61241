"""Command-line surface: geometry tables, training, studies, sharpness,
landscapes, and safety metrics.

Resolution order for every option: built-in default, then the JSON config
file (--config), then explicit flags (flags win). Each invocation stages
its outputs in memory and writes them only after the computation finished,
together with a manifest.json recording the fully resolved configuration
and a git-style content hash of every input file; a failed run leaves no
partial outputs.

Exit codes: 0 success, 2 validation error, 3 check-mode mismatch,
4 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (generate_dataset, ingest_predictions, load_dataset,
                   save_dataset)
from .experiments import (EPOCH_LOGGED, MATCHED_CONTROLS, TARGET_LOSS,
                          StudyConfig, aggregate, run_epoch_logged_study,
                          run_matched_controls, run_target_loss_study,
                          write_aggregate_csv, write_runs_csv)
from .geometry import (CSV_COLUMNS, check_against_reference, minima_table,
                       write_table_csv)
from .hashing import file_sha1
from .landscape import (DEFAULT_EXTENT, DEFAULT_RESOLUTION, NORMALIZATIONS,
                        export_grid, network_landscape)
from .mlp import (LOSS_KINDS, TOY_WIDTHS, kaiming_init, load_checkpoint,
                  save_checkpoint)
from .objectives import get_objective, list_objectives
from .optim import OptimizerSpec
from .safety import DEFAULT_BINS, evaluation_report
from .sharpness import DEFAULT_K, DEFAULT_RHO, sharpness_report
from .training import RunBatch
from .validation import NumericError

__all__ = ["main"]

STUDY_KINDS = (EPOCH_LOGGED, TARGET_LOSS, MATCHED_CONTROLS)
DEFAULT_OUT = "minima_geom_out"

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_CHECK_FAILED = 3
EXIT_RUNTIME = 4


class CliError(Exception):
    """Carries the process exit code alongside the message."""

    def __init__(self, message: str, exit_code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.exit_code = exit_code


def _load_config(path) -> dict:
    if path is None:
        return {}
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise CliError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise CliError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise CliError(f"config file {path} must hold a JSON object")
    return cfg


def _resolve(args, config: dict, name: str, default):
    """Flag beats config beats default; flags left at None defer."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in config:
        return config[name]
    return default


def _out_dir(args, config: dict) -> Path:
    out = _resolve(args, config, "out", None)
    if out is None:
        out = os.environ.get("MINIMA_GEOM_OUT", DEFAULT_OUT)
    return Path(out)


def _hash_inputs(paths) -> dict:
    hashes = {}
    for p in paths:
        if p is None:
            continue
        try:
            hashes[str(p)] = file_sha1(p)
        except OSError as e:
            raise CliError(f"cannot read input {p}: {e}")
    return hashes


def _flush(out_dir: Path, outputs: dict, manifest: dict, verbose: bool) -> None:
    """Write every staged output plus the manifest; nothing before this."""
    manifest = dict(manifest)
    manifest["package_version"] = __version__
    manifest["outputs"] = sorted(outputs)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, writer in sorted(outputs.items()):
            writer(out_dir / name)
        with open(out_dir / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as e:
        raise CliError(f"failed writing outputs to {out_dir}: {e}", EXIT_RUNTIME)
    if verbose:
        names = ", ".join(sorted(outputs) + ["manifest.json"])
        print(f"wrote {out_dir}: {names}", file=sys.stderr)


def _text_writer(text: str):
    return lambda path: Path(path).write_text(text)


def _json_writer(obj):
    return _text_writer(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_inputs(checkpoint_path, dataset_path):
    try:
        params = load_checkpoint(checkpoint_path)
    except (OSError, ValueError) as e:
        raise CliError(f"bad checkpoint {checkpoint_path}: {e}")
    try:
        dataset = load_dataset(dataset_path)
    except (OSError, ValueError) as e:
        raise CliError(f"bad dataset {dataset_path}: {e}")
    return params, dataset


def cmd_geometry(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    function = _resolve(args, config, "function", None)
    if function is not None:
        try:
            get_objective(function)
        except ValueError as e:
            raise CliError(str(e))
    rows = minima_table()
    if args.check:
        mismatches = check_against_reference(rows)
        if mismatches:
            for m in mismatches:
                print(f"mismatch: {m}", file=sys.stderr)
            print(f"{len(mismatches)} table cells off reference", file=sys.stderr)
            return EXIT_CHECK_FAILED
        print(f"all {len(rows)} reference rows reproduced", file=sys.stderr)
    emit = rows if function is None else [r for r in rows if r.function == function]
    outputs = {"minima_table.csv": lambda p: write_table_csv(emit, p)}
    manifest = {
        "command": "geometry",
        "config": {"function": function, "check": bool(args.check),
                   "columns": list(CSV_COLUMNS)},
        "inputs": _hash_inputs([args.config]),
    }
    _flush(out_dir, outputs, manifest, args.verbose)
    return EXIT_OK


def _optimizer_from(args, config: dict) -> OptimizerSpec:
    opt_cfg = config.get("optimizer", {})
    if not isinstance(opt_cfg, dict):
        raise CliError("config field 'optimizer' must be an object")
    spec = OptimizerSpec(
        kind=_resolve(args, opt_cfg, "optimizer_kind", opt_cfg.get("kind", "adam")),
        learning_rate=_resolve(args, opt_cfg, "learning_rate",
                               opt_cfg.get("learning_rate", 1e-3)),
        momentum=opt_cfg.get("momentum", 0.9),
        sam_rho=_resolve(args, opt_cfg, "sam_rho", opt_cfg.get("sam_rho")),
        weight_decay=_resolve(args, opt_cfg, "weight_decay",
                              opt_cfg.get("weight_decay", 0.0)),
    )
    try:
        return spec.validate()
    except ValueError as e:
        raise CliError(str(e))


def cmd_train(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    objective = _resolve(args, config, "objective", None)
    if objective is None:
        raise CliError("an objective is required (--objective or config)")
    seed = int(_resolve(args, config, "seed", 0))
    scale = float(_resolve(args, config, "scale", 1.0))
    n_samples = int(_resolve(args, config, "n_samples", 10_000))
    epochs = int(_resolve(args, config, "epochs", 10_000))
    loss = _resolve(args, config, "loss", "mse")
    dtype = _resolve(args, config, "dtype", "float32")
    spec = _optimizer_from(args, config)
    try:
        obj = get_objective(objective)
        if loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}")
        if scale <= 0 or n_samples < 1 or epochs < 0:
            raise ValueError("scale must be > 0, n_samples >= 1, epochs >= 0")
    except ValueError as e:
        raise CliError(str(e))
    n_samples = max(1, int(round(n_samples * scale)))
    epochs = max(1, int(round(epochs * scale))) if epochs else 0

    dataset = generate_dataset(obj, n_samples, seed, "train")
    init = kaiming_init(TOY_WIDTHS, np.random.default_rng(seed))
    batch = RunBatch(TOY_WIDTHS, init.flat, dataset.inputs[None],
                     dataset.targets[None], spec, loss=loss, dtype=np.dtype(dtype))
    with np.errstate(all="ignore"):
        for _ in range(epochs):
            batch.step()
        final_loss = float(batch.evaluate()[0])
    if not np.isfinite(final_loss):
        raise CliError(f"training diverged (loss {final_loss})", EXIT_RUNTIME)
    params = batch.extract(0)

    resolved = {"objective": objective, "seed": seed, "scale": scale,
                "n_samples": n_samples, "epochs": epochs, "loss": loss,
                "dtype": dtype,
                "optimizer": {"kind": spec.kind, "learning_rate": spec.learning_rate,
                              "momentum": spec.momentum, "sam_rho": spec.sam_rho,
                              "weight_decay": spec.weight_decay}}
    outputs = {
        "model.ckpt": lambda p: save_checkpoint(params, p),
        "train_dataset.csv": lambda p: save_dataset(dataset, p),
        "train.json": _json_writer({"final_train_loss": final_loss,
                                    "dataset_id": dataset.dataset_id(),
                                    "config": resolved}),
    }
    manifest = {"command": "train", "config": resolved,
                "inputs": _hash_inputs([args.config])}
    _flush(out_dir, outputs, manifest, args.verbose)
    return EXIT_OK


def cmd_study(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    study_kind = _resolve(args, config, "study", EPOCH_LOGGED)
    if study_kind not in STUDY_KINDS:
        raise CliError(f"study must be one of {STUDY_KINDS}, got {study_kind!r}")
    scale = float(_resolve(args, config, "scale", 1.0))
    jobs = int(_resolve(args, config, "jobs", 1))
    if jobs < 1:
        raise CliError("jobs must be >= 1")

    cfg_fields = {k: v for k, v in config.items()
                  if k not in ("study", "scale", "jobs", "out")}
    if "seed" in cfg_fields:
        cfg_fields["base_seed"] = cfg_fields.pop("seed")
    for name, key in (("objective", "objective"), ("seed", "base_seed"),
                      ("n_runs", "n_runs"), ("rho", "rho"),
                      ("k_perturb", "k_perturb")):
        val = getattr(args, name, None)
        if val is not None:
            cfg_fields[key] = val
    if "objective" not in cfg_fields:
        raise CliError("an objective is required (--objective or config)")
    try:
        study_cfg = StudyConfig.from_dict(cfg_fields).scaled(scale)
        study_cfg.validate()
    except (ValueError, TypeError) as e:
        raise CliError(str(e))

    runner = {EPOCH_LOGGED: run_epoch_logged_study,
              TARGET_LOSS: run_target_loss_study,
              MATCHED_CONTROLS: run_matched_controls}[study_kind]
    try:
        records = runner(study_cfg, jobs=jobs)
    except NumericError as e:
        raise CliError(f"study failed: {e}", EXIT_RUNTIME)
    rows = aggregate(records)

    resolved = {"study": study_kind, "scale": scale, "jobs": jobs,
                "study_config": study_cfg.to_dict()}
    outputs = {
        "runs.csv": lambda p: write_runs_csv(records, p),
        "aggregate.csv": lambda p: write_aggregate_csv(rows, p),
    }
    manifest = {"command": "study", "config": resolved,
                "inputs": _hash_inputs([args.config])}
    _flush(out_dir, outputs, manifest, args.verbose)
    if args.verbose:
        n_ok = sum(1 for r in records if r.status == "ok")
        print(f"{len(records)} records ({n_ok} ok)", file=sys.stderr)
    return EXIT_OK


def cmd_sharpness(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    ckpt = _resolve(args, config, "checkpoint", None)
    data_path = _resolve(args, config, "dataset", None)
    if ckpt is None or data_path is None:
        raise CliError("--checkpoint and --dataset are required")
    rho = float(_resolve(args, config, "rho", DEFAULT_RHO))
    k = int(_resolve(args, config, "k_perturb", DEFAULT_K))
    seed = int(_resolve(args, config, "seed", 0))
    loss = _resolve(args, config, "loss", "mse")
    params, dataset = _load_inputs(ckpt, data_path)
    inputs = _hash_inputs([args.config, ckpt, data_path])
    try:
        report = sharpness_report(params, dataset, loss, rho=rho, k=k, seed=seed,
                                  checkpoint_hash=inputs[str(ckpt)])
    except (ValueError, NumericError) as e:
        raise CliError(f"sharpness failed: {e}", EXIT_RUNTIME)
    resolved = {"checkpoint": str(ckpt), "dataset": str(data_path), "rho": rho,
                "k_perturb": k, "seed": seed, "loss": loss}
    outputs = {"sharpness.json": _text_writer(report.to_json() + "\n")}
    manifest = {"command": "sharpness", "config": resolved, "inputs": inputs}
    _flush(out_dir, outputs, manifest, args.verbose)
    return EXIT_OK


def cmd_landscape(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    ckpt = _resolve(args, config, "checkpoint", None)
    data_path = _resolve(args, config, "dataset", None)
    if ckpt is None or data_path is None:
        raise CliError("--checkpoint and --dataset are required")
    resolution = int(_resolve(args, config, "resolution", DEFAULT_RESOLUTION))
    extent = float(_resolve(args, config, "extent", DEFAULT_EXTENT))
    normalization = _resolve(args, config, "normalization", "per_neuron")
    seed = int(_resolve(args, config, "seed", 0))
    loss = _resolve(args, config, "loss", "mse")
    params, dataset = _load_inputs(ckpt, data_path)
    try:
        grid = network_landscape(params, dataset, loss, seed=seed,
                                 normalization=normalization,
                                 resolution=resolution, extent=extent)
    except ValueError as e:
        raise CliError(str(e))
    resolved = {"checkpoint": str(ckpt), "dataset": str(data_path),
                "resolution": resolution, "extent": extent,
                "normalization": normalization, "seed": seed, "loss": loss}
    outputs = {
        "landscape.csv": lambda p: export_grid(grid, p),
        "landscape_meta.json": _json_writer(grid.metadata()),
    }
    manifest = {"command": "landscape", "config": resolved,
                "inputs": _hash_inputs([args.config, ckpt, data_path])}
    _flush(out_dir, outputs, manifest, args.verbose)
    return EXIT_OK


def cmd_metrics(args) -> int:
    config = _load_config(args.config)
    out_dir = _out_dir(args, config)
    pred = _resolve(args, config, "pred", None)
    if pred is None:
        raise CliError("--pred is required")
    pred_b = _resolve(args, config, "pred_b", None)
    bins = int(_resolve(args, config, "bins", DEFAULT_BINS))
    try:
        records = ingest_predictions(pred)
        records_b = ingest_predictions(pred_b) if pred_b else None
        report = evaluation_report(records, n_bins=bins, records_b=records_b)
    except (OSError, ValueError) as e:
        raise CliError(str(e))
    resolved = {"pred": str(pred), "pred_b": str(pred_b) if pred_b else None,
                "bins": bins}
    outputs = {"metrics.json": _text_writer(report.to_json() + "\n")}
    manifest = {"command": "metrics", "config": resolved,
                "inputs": _hash_inputs([args.config, pred, pred_b])}
    _flush(out_dir, outputs, manifest, args.verbose)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--out", help="output directory (env MINIMA_GEOM_OUT)")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="minima-geom",
        description="Loss-landscape geometry, sharpness, and study harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("geometry", parents=[common],
                       help="analytic minima table, optionally checked "
                            "against the embedded reference")
    p.add_argument("function", nargs="?", choices=list_objectives(),
                   help="restrict the table to one function")
    p.add_argument("--check", action="store_true",
                   help="verify against the embedded reference values")
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("train", parents=[common], help="train one network")
    p.add_argument("--objective", choices=list_objectives())
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--scale", type=float)
    p.add_argument("--optimizer", dest="optimizer_kind", choices=("adam", "sgd"))
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--sam-rho", dest="sam_rho", type=float)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--loss", choices=list(LOSS_KINDS))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("study", parents=[common],
                       help="multi-run studies with CSV outputs")
    p.add_argument("--study", choices=list(STUDY_KINDS))
    p.add_argument("--objective", choices=list_objectives())
    p.add_argument("--n-runs", dest="n_runs", type=int)
    p.add_argument("--scale", type=float)
    p.add_argument("--jobs", type=int)
    p.add_argument("--rho", type=float, help="sharpness perturbation radius")
    p.add_argument("--k-perturb", dest="k_perturb", type=int)
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("sharpness", parents=[common],
                       help="sharpness report for a checkpoint on a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--rho", type=float)
    p.add_argument("--k-perturb", dest="k_perturb", type=int)
    p.add_argument("--loss", choices=list(LOSS_KINDS))
    p.set_defaults(func=cmd_sharpness)

    p = sub.add_parser("landscape", parents=[common],
                       help="2D loss-surface grid around a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--dataset")
    p.add_argument("--resolution", type=int)
    p.add_argument("--extent", type=float)
    p.add_argument("--normalization", choices=list(NORMALIZATIONS))
    p.add_argument("--loss", choices=list(LOSS_KINDS))
    p.set_defaults(func=cmd_landscape)

    p = sub.add_parser("metrics", parents=[common],
                       help="calibration and disagreement over predictions")
    p.add_argument("--pred", help="prediction records (.jsonl or .csv)")
    p.add_argument("--pred-b", dest="pred_b",
                   help="second prediction set for disagreement")
    p.add_argument("--bins", type=int)
    p.set_defaults(func=cmd_metrics)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:  # anything unplanned is a runtime failure
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
