"""Command-line interface: train, evaluate, predict, params.

Every artifact-producing command writes a run manifest into its output
directory before doing real work, so a crashed run still leaves an
inspectable record of what was attempted. Failures map to stable exit
codes: 2 configuration, 3 data, 4 resource, 5 numerical, 1 anything
else raised deliberately by the package.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from ._version import __version__
from .augment import AugmentationConfig
from .data import (
    SegmentationDataset,
    dataset_fingerprint,
    index_dataset,
    load_split,
    save_split,
    GENERATE_PREFIX,
)
from .errors import (
    ConfigurationError,
    DataError,
    EffiSegNetError,
    NumericalError,
    ResourceError,
)
from .metrics import evaluate
from .model import EffiSegNet, build_model, count_parameters
from .training import (
    TrainConfig,
    config_hash,
    fit,
    load_model_from_checkpoint,
    resolve_device,
)
from .variants import VARIANT_NAMES, get_variant

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RESOURCE = 4
EXIT_NUMERICAL = 5

_TRAIN_CONFIG_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)}
_PIPELINE_KEYS = {"data_root", "split", "out", "augmentation", "weight_cache"}
_AUG_FIELDS = {f.name for f in dataclasses.fields(AugmentationConfig)}


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def write_run_manifest(out_dir: Path, command: str, payload: dict) -> Path:
    """Record what a command is about to do; updated again on success."""
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "argv": sys.argv[1:],
        "package_version": __version__,
        "created_at": _now(),
        **payload,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return path


def _update_manifest(path: Path, updates: dict) -> None:
    manifest = json.loads(path.read_text())
    manifest.update(updates)
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n")


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        try:
            payload = yaml.safe_load(text)
        except yaml.YAMLError as err:
            raise ConfigurationError(f"config file {path} is not valid YAML: {err}") from err
    else:
        try:
            payload = json.loads(text)
        except ValueError as err:
            raise ConfigurationError(f"config file {path} is not valid JSON: {err}") from err
    if not isinstance(payload, dict):
        raise ConfigurationError(f"config file {path} must hold a mapping")
    return payload


def _build_augmentation(raw) -> AugmentationConfig:
    if raw is None or raw is True:
        return AugmentationConfig()
    if raw is False:
        raise ConfigurationError("augmentation: false belongs in the 'augment' key")
    if not isinstance(raw, dict):
        raise ConfigurationError("augmentation section must be a mapping")
    unknown = sorted(set(raw) - _AUG_FIELDS)
    if unknown:
        raise ConfigurationError(f"unknown augmentation key: {unknown[0]}")
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
    return AugmentationConfig(**kwargs)


def _merge_train_config(args) -> dict:
    merged: dict = {}
    if args.config:
        merged.update(load_config_file(args.config))
    unknown = sorted(set(merged) - _TRAIN_CONFIG_FIELDS - _PIPELINE_KEYS)
    if unknown:
        raise ConfigurationError(f"unknown config key: {unknown[0]}")
    overrides = {
        "variant": args.variant,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "seed": args.seed,
        "lr_initial": args.lr_initial,
        "lr_final": args.lr_final,
        "weight_decay": args.weight_decay,
        "device": args.device,
        "data_root": args.data_root,
        "split": args.split,
        "out": args.out,
        "weight_cache": args.weight_cache,
    }
    merged.update({k: v for k, v in overrides.items() if v is not None})
    if args.no_pretrained:
        merged["pretrained"] = False
    if args.no_augment:
        merged["augment"] = False
    for key in ("data_root", "split", "out"):
        if key not in merged:
            raise ConfigurationError(f"missing required setting: {key}")
    return merged


def _coerce_batch_size(value):
    if isinstance(value, str) and value != "auto":
        try:
            return int(value)
        except ValueError as err:
            raise ConfigurationError(f"batch_size must be an int or 'auto', got {value!r}") from err
    return value


def cmd_train(args) -> Path:
    merged = _merge_train_config(args)
    aug_raw = merged.pop("augmentation", None)
    data_root = merged.pop("data_root")
    split_spec = merged.pop("split")
    out_dir = Path(merged.pop("out"))
    weight_cache = merged.pop("weight_cache", None)
    if "batch_size" in merged:
        merged["batch_size"] = _coerce_batch_size(merged["batch_size"])
    if "betas" in merged and isinstance(merged["betas"], list):
        merged["betas"] = tuple(merged["betas"])
    try:
        cfg = TrainConfig(**merged)
    except TypeError as err:
        raise ConfigurationError(f"bad training config: {err}") from err
    augmentation = _build_augmentation(aug_raw) if cfg.augment else None

    manifest_path = write_run_manifest(
        out_dir,
        "train",
        {
            "config": dataclasses.asdict(cfg),
            "config_hash": config_hash(cfg),
            "data_root": str(data_root),
            "split": str(split_spec),
            "augmentation": dataclasses.asdict(augmentation) if augmentation else None,
        },
    )

    index = index_dataset(data_root)
    split = load_split(index, split_spec)
    split_path = save_split(split, out_dir / "split.json")
    _update_manifest(
        manifest_path,
        {
            "dataset_fingerprint": dataset_fingerprint(index),
            "resolved_split": str(split_path),
            "n_train": len(split.train),
            "n_validation": len(split.validation),
            "n_test": len(split.test),
        },
    )

    model = build_model(
        cfg.variant,
        pretrained=cfg.pretrained,
        seed=cfg.seed,
        cache_dir=weight_cache,
    )
    train_ds = SegmentationDataset(index, split.train, cfg.variant, augmentation, seed=cfg.seed)
    val_ds = SegmentationDataset(index, split.validation, cfg.variant, augmentation=None)
    run = fit(model, train_ds, val_ds, cfg, out_dir)

    _update_manifest(
        manifest_path,
        {
            "completed_at": _now(),
            "best_epoch": run.best_epoch,
            "best_val_mdice": run.best_val_mdice,
            "batch_size": run.batch_size,
        },
    )
    print(
        f"trained {cfg.variant} for {cfg.epochs} epochs; "
        f"best epoch {run.best_epoch} (val mDice {run.best_val_mdice:.4f})"
    )
    print(f"history: {run.history_path}")
    print(f"best checkpoint: {run.best_checkpoint}")
    return out_dir


def cmd_evaluate(args) -> Path:
    out_dir = Path(args.out)
    manifest_path = write_run_manifest(
        out_dir,
        "evaluate",
        {
            "checkpoint": str(args.checkpoint),
            "data_root": str(args.data_root),
            "split": str(args.split),
            "partition": args.partition,
            "threshold": args.threshold,
        },
    )
    device = resolve_device(args.device)
    model, ckpt_manifest = load_model_from_checkpoint(
        args.checkpoint, device=device, expected_variant=args.variant
    )
    index = index_dataset(args.data_root)
    split = load_split(index, args.split)
    ids = getattr(split, args.partition)
    report = evaluate(
        model, index, ids,
        threshold=args.threshold, batch_size=args.batch_size, device=device,
    )
    json_path, csv_path = report.save(out_dir)
    _update_manifest(
        manifest_path,
        {
            "completed_at": _now(),
            "dataset_fingerprint": dataset_fingerprint(index),
            "checkpoint_manifest": ckpt_manifest,
            "n_images": report.n_images,
        },
    )
    print(report.csv_header())
    print(report.csv_row())
    print(f"report: {json_path}")
    return out_dir


def cmd_predict(args) -> list[Path]:
    out_dir = Path(args.out)
    write_run_manifest(
        out_dir,
        "predict",
        {
            "checkpoint": str(args.checkpoint),
            "inputs": [str(p) for p in args.images],
            "threshold": args.threshold,
            "save_probabilities": bool(args.probs),
        },
    )
    device = resolve_device(args.device)
    model, _ = load_model_from_checkpoint(args.checkpoint, device=device)
    resolution = model.variant.resolution
    written: list[Path] = []
    from .data import _open_rgb, normalize_image  # noqa: PLC0415

    with torch.no_grad():
        for image_path in args.images:
            image_path = Path(image_path)
            img = _open_rgb(image_path)
            original_size = img.size
            resized = img.resize((resolution, resolution), Image.LANCZOS)
            arr = np.asarray(resized, dtype=np.float32) / 255.0
            batch = normalize_image(arr)[None].to(device)
            probs = model(batch)[0, 0].cpu().numpy()
            mask = (probs >= args.threshold).astype(np.uint8) * 255
            mask_img = Image.fromarray(mask, mode="L").resize(original_size, Image.NEAREST)
            mask_path = out_dir / f"{image_path.stem}_mask.png"
            mask_img.save(mask_path)
            written.append(mask_path)
            if args.probs:
                probs_path = out_dir / f"{image_path.stem}_probs.npy"
                np.save(probs_path, probs)
                written.append(probs_path)
            print(f"{image_path.name} -> {mask_path}")
    manifest_path = out_dir / "manifest.json"
    _update_manifest(manifest_path, {"completed_at": _now(), "outputs": [str(p) for p in written]})
    return written


def format_millions(n: int) -> str:
    m = n / 1e6
    return f"{m:.1f}M" if m >= 1 else f"{m:.2f}M"


def cmd_params(args) -> list[dict]:
    names = list(VARIANT_NAMES) if args.variant == "all" else [get_variant(args.variant).name]
    rows = []
    print(f"{'variant':<8}{'pretrained':<22}{'random':<22}{'random/pretrained':<18}")
    for name in names:
        with torch.device("meta"):
            model = EffiSegNet(name, pretrained=False)
        counts = count_parameters(model)
        rows.append(
            {
                "variant": name,
                "pretrained": counts.pretrained,
                "random": counts.random,
                "ratio": counts.ratio,
            }
        )
        pre = f"{format_millions(counts.pretrained)} ({counts.pretrained})"
        rnd = f"{format_millions(counts.random)} ({counts.random})"
        print(f"{name:<8}{pre:<22}{rnd:<22}{counts.ratio * 100:.2f}%")
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="effisegnet",
        description="EfficientNet-backboned binary segmentation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="enable info logging")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="train a model from a config file and/or flags")
    train.add_argument("--config", help="YAML or JSON config file")
    train.add_argument("--data-root", help="dataset root with images/ and masks/")
    train.add_argument("--split", help=f"split file or '{GENERATE_PREFIX}<seed>'")
    train.add_argument("--out", help="output directory for this run")
    train.add_argument("--variant", choices=VARIANT_NAMES)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", help="positive int or 'auto'")
    train.add_argument("--seed", type=int)
    train.add_argument("--lr-initial", type=float)
    train.add_argument("--lr-final", type=float)
    train.add_argument("--weight-decay", type=float)
    train.add_argument("--device", help="cpu, cuda, or auto")
    train.add_argument("--weight-cache", help="directory of cached backbone weights")
    train.add_argument("--no-pretrained", action="store_true", help="train from scratch")
    train.add_argument("--no-augment", action="store_true", help="disable augmentation")
    train.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", help="evaluate a checkpoint on a split partition")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data-root", required=True)
    ev.add_argument("--split", required=True)
    ev.add_argument("--partition", default="test", choices=("train", "validation", "test"))
    ev.add_argument("--out", required=True)
    ev.add_argument("--variant", choices=VARIANT_NAMES, help="refuse other variants")
    ev.add_argument("--batch-size", type=int, default=8)
    ev.add_argument("--threshold", type=float, default=0.5)
    ev.add_argument("--device", default="cpu")
    ev.set_defaults(func=cmd_evaluate)

    pred = sub.add_parser("predict", help="write binary masks for images")
    pred.add_argument("images", nargs="+", metavar="IMAGE")
    pred.add_argument("--checkpoint", required=True)
    pred.add_argument("--out", required=True)
    pred.add_argument("--threshold", type=float, default=0.5)
    pred.add_argument("--probs", action="store_true", help="also save probability maps (.npy)")
    pred.add_argument("--device", default="cpu")
    pred.set_defaults(func=cmd_predict)

    params = sub.add_parser("params", help="print the parameter partition per variant")
    params.add_argument("variant", nargs="?", default="all")
    params.set_defaults(func=cmd_params)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        args.func(args)
    except ConfigurationError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except ResourceError as err:
        print(f"resource error: {err}", file=sys.stderr)
        return EXIT_RESOURCE
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EffiSegNetError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


def entrypoint() -> None:
    sys.exit(main())
