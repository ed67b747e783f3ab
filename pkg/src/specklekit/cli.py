"""Command-line entry point.

Subcommands::

    specklekit simulate  config.json --out DIR
    specklekit train     config.json MANIFEST --out DIR [--resume CKPT]
    specklekit apply     INPUT OUTPUT --method JSON [--alpha A]
    specklekit evaluate  MANIFEST config.json --out DIR [--split val]
    specklekit bench     IMAGE config.json --out REPORT.json

Configs are strict JSON: unknown keys are rejected, and every run writes
the fully resolved configuration next to its outputs before heavy work
begins.  Exit codes: 0 success, 2 configuration error, 3 I/O error,
4 numeric divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset, evaluate, net, train as train_mod
from .errors import ConfigError, DatasetError, InputError, ShapeError, \
    SpeckleKitError, TrainingDivergedError
from .grid import read_image, write_image_like, write_s2sf
from .loss import LossConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DIVERGED = 4


def _load_config(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise InputError(f"config not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc


def _check_keys(doc: dict, allowed, context: str):
    extra = set(doc) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {context}: {sorted(extra)}")


def _dataclass_from(doc: dict, cls, context: str):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    _check_keys(doc, fields, context)
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"{context}: {exc}") from exc


def _apply_threads(threads):
    """Limit BLAS pools when threadpoolctl is available; returns the value
    recorded in the resolved config."""
    if threads is None:
        threads = os.cpu_count()
    try:
        import threadpoolctl
        threadpoolctl.threadpool_limits(limits=threads)
    except ImportError:
        pass
    return threads


def _write_resolved_config(out_dir, doc: dict):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    doc = _load_config(args.config)
    allowed = {f.name for f in dataclasses.fields(dataset.DatasetConfig)}
    _check_keys(doc, allowed | {"seed"}, "simulate config")
    seed = doc.pop("seed", 0)
    cfg = _dataclass_from(doc, dataset.DatasetConfig, "simulate config")
    threads = _apply_threads(args.threads)
    n_images = (cfg.train_phantoms * cfg.train_instances
                + (cfg.val_phantoms + cfg.test_phantoms) * cfg.eval_instances)
    if n_images > 2000:
        print(f"note: generating {n_images} images; this may take a while",
              file=sys.stderr)
    resolved = dataclasses.asdict(cfg)
    resolved.update({"seed": seed, "command": "simulate", "threads": threads})
    _write_resolved_config(args.out, resolved)
    manifest_path = dataset.generate_dataset(cfg, seed, args.out)
    print(manifest_path)
    return EXIT_OK


def _train_config_from(doc: dict) -> train_mod.TrainConfig:
    _check_keys(doc, {"epochs", "lr", "batch", "crop", "seed",
                      "checkpoint_every", "network", "loss"}, "train config")
    network = _dataclass_from(doc.get("network", {}), net.NetworkSpec,
                              "network config")
    loss_doc = dict(doc.get("loss", {}))
    if "lambda" in loss_doc:  # JSON spelling of the weighting factor
        loss_doc["lam"] = loss_doc.pop("lambda")
    loss_cfg = _dataclass_from(loss_doc, LossConfig, "loss config")
    scalar = {k: v for k, v in doc.items() if k not in ("network", "loss")}
    return train_mod.TrainConfig(network=network, loss=loss_cfg, **scalar)


def cmd_train(args) -> int:
    doc = _load_config(args.config)
    cfg = _train_config_from(doc)
    threads = _apply_threads(args.threads)
    manifest = dataset.load_manifest(args.manifest, "train")
    resolved = dataclasses.asdict(cfg)
    resolved.update({"command": "train", "threads": threads,
                     "manifest": str(args.manifest),
                     "resume": str(args.resume) if args.resume else None})
    _write_resolved_config(args.out, resolved)
    ckpt = train_mod.train(manifest, cfg, args.out, resume=args.resume,
                           log=lambda msg: print(msg, file=sys.stderr))
    print(ckpt)
    return EXIT_OK


def cmd_apply(args) -> int:
    method_doc = _method_json(args.method)
    name, fn = evaluate.resolve_method(method_doc)
    alpha = args.alpha
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError("alpha must be in [0, 1]")
    img = read_image(args.input)
    filtered = fn(img)
    blended = img.with_values((1.0 - alpha) * filtered.values
                              + alpha * img.values)
    write_image_like(args.output, blended, args.input)
    return EXIT_OK


def _method_json(text: str) -> dict:
    """Method argument: inline JSON or a path to a JSON file."""
    text = text.strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed method JSON: {exc}") from exc
    return _load_config(text)


def cmd_evaluate(args) -> int:
    doc = _load_config(args.config)
    _check_keys(doc, {"methods", "regions"}, "evaluate config")
    if "methods" not in doc or not doc["methods"]:
        raise ConfigError("evaluate config needs a nonempty 'methods' list")
    regions = [_dataclass_from(r, evaluate.RegionSpecRect, "region")
               for r in doc.get("regions", [])]
    threads = _apply_threads(args.threads)
    manifest = dataset.load_manifest(args.manifest, args.split)
    resolved = {"command": "evaluate", "threads": threads,
                "split": args.split, "manifest": str(args.manifest), **doc}
    _write_resolved_config(args.out, resolved)
    report = evaluate.evaluate_corpus(manifest, doc["methods"], regions)
    json_path, csv_path = evaluate.write_report(report, args.out)
    print(json_path)
    print(csv_path)
    return EXIT_OK


def cmd_bench(args) -> int:
    doc = _load_config(args.config)
    _check_keys(doc, {"methods", "warmups", "reps"}, "bench config")
    if "methods" not in doc or not doc["methods"]:
        raise ConfigError("bench config needs a nonempty 'methods' list")
    warmups = doc.get("warmups", 1)
    reps = doc.get("reps", 5)
    threads = _apply_threads(args.threads)
    img = read_image(args.image)
    results = {}
    for spec in doc["methods"]:
        name, fn = evaluate.resolve_method(spec)
        results[name] = evaluate.bench_runtime(fn, img, warmups, reps)
    report = {"image": str(args.image),
              "width_px": img.width_px, "height_px": img.height_px,
              "warmups": warmups, "reps": reps, "threads": threads,
              "methods": results}
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(out)
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specklekit",
        description="Simulate speckle corpora, train the despeckling "
                    "network, and compare against classical filters.")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread budget (default: machine cores)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a dataset")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("train", help="train the despeckling network")
    p.add_argument("config")
    p.add_argument("manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--resume", default=None)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("apply", help="filter one image, optionally blending")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--method", required=True,
                   help="tagged JSON (inline or a file path)")
    p.add_argument("--alpha", type=float, default=0.0,
                   help="blend: (1-alpha)*filtered + alpha*original")
    p.set_defaults(fn=cmd_apply)

    p = sub.add_parser("evaluate", help="score methods on a val/test split")
    p.add_argument("manifest")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="val", choices=["val", "test"])
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("bench", help="time methods on one image")
    p.add_argument("image")
    p.add_argument("config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (DatasetError, InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ShapeError, SpeckleKitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
