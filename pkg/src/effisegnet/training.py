"""Training loop, cosine schedule, checkpointing, and batch-size search."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from ._version import __version__
from .errors import (
    CheckpointError,
    ConfigurationError,
    ContractError,
    NumericalError,
    ResourceError,
)
from .losses import combined_loss
from .metrics import per_image_overlap
from .model import EffiSegNet, FusionHeadConfig, build_model
from .variants import get_variant

log = logging.getLogger(__name__)

HISTORY_COLUMNS = ("epoch", "lr", "train_loss", "val_loss", "val_mdice")


@dataclass
class TrainConfig:
    """Hyperparameters of one training run."""

    variant: str = "b4"
    pretrained: bool = True
    epochs: int = 300
    batch_size: int | str = 8
    max_batch_size: int = 64
    lr_initial: float = 1e-4
    lr_final: float = 1e-5
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    dice_smooth: float = 1e-6
    seed: int = 42
    augment: bool = True
    device: str = "cpu"
    num_workers: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be positive, got {self.epochs}")
        if isinstance(self.batch_size, str):
            if self.batch_size != "auto":
                raise ConfigurationError(
                    f"batch_size must be a positive int or 'auto', got {self.batch_size!r}"
                )
        elif self.batch_size < 1:
            raise ConfigurationError(f"batch_size must be positive, got {self.batch_size}")
        if self.max_batch_size < 1:
            raise ConfigurationError("max_batch_size must be positive")
        if not 0.0 < self.lr_final <= self.lr_initial:
            raise ConfigurationError(
                f"need 0 < lr_final <= lr_initial, got {self.lr_final} > {self.lr_initial}"
            )
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.num_workers < 0:
            raise ConfigurationError("num_workers must be non-negative")
        get_variant(self.variant)


def config_hash(cfg: TrainConfig) -> str:
    """Stable digest of a config for manifests and reproducibility checks."""
    payload = json.dumps(dataclasses.asdict(cfg), sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """Cosine-annealed learning rate for ``epoch`` in [0, epochs].

    lr(e) = lr_final + (lr_initial - lr_final)/2 * (1 + cos(pi*e/E)),
    evaluated so that lr(0) == lr_initial and lr(E) == lr_final exactly.
    """
    if not 0 <= epoch <= cfg.epochs:
        raise ContractError(f"epoch {epoch} outside schedule range [0, {cfg.epochs}]")
    weight = 0.5 * (1.0 + math.cos(math.pi * epoch / cfg.epochs))
    return cfg.lr_initial * weight + cfg.lr_final * (1.0 - weight)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    lr: float
    train_loss: float
    val_loss: float
    val_mdice: float


@dataclass
class TrainingRun:
    """Everything ``fit`` produced: history and checkpoint locations."""

    history: list[EpochRecord]
    best_epoch: int
    best_val_mdice: float
    history_path: Path
    best_checkpoint: Path
    last_checkpoint: Path
    batch_size: int


def _atomic_write_bytes(path: Path, payload: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def _atomic_torch_save(obj, path: Path) -> str:
    tmp = path.with_name(path.name + ".tmp")
    torch.save(obj, tmp)
    digest = hashlib.sha256(tmp.read_bytes()).hexdigest()
    os.replace(tmp, path)
    return digest


def save_checkpoint(
    model: EffiSegNet,
    path: str | Path,
    *,
    epoch: int,
    seed: int,
    pretrained: bool,
    cfg_hash: str = "",
    metrics: dict | None = None,
) -> Path:
    """Persist model weights plus a JSON manifest sidecar.

    The weights file is written atomically (temp file then rename) and
    the manifest records its sha256, so a truncated or tampered file is
    detected at load time.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "state_dict": model.state_dict(),
        "variant": model.variant.name,
        "head_config": dataclasses.asdict(model.head_cfg),
    }
    digest = _atomic_torch_save(payload, path)
    manifest = {
        "format": 1,
        "variant": model.variant.name,
        "epoch": epoch,
        "seed": seed,
        "pretrained_backbone": pretrained,
        "config_hash": cfg_hash,
        "metrics": metrics or {},
        "weights_sha256": digest,
        "package_version": __version__,
        "created_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    _atomic_write_bytes(path.with_suffix(".json"), (json.dumps(manifest, indent=2) + "\n").encode())
    return path


def load_checkpoint(path: str | Path, expected_variant: str | None = None) -> tuple[dict, dict]:
    """Read a checkpoint and its manifest, verifying integrity.

    Returns (payload, manifest). Raises :class:`CheckpointError` on a
    missing manifest, digest mismatch, unreadable weights, or a variant
    that differs from ``expected_variant``.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    manifest_path = path.with_suffix(".json")
    if not manifest_path.is_file():
        raise CheckpointError(f"checkpoint manifest not found: {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except ValueError as err:
        raise CheckpointError(f"unreadable manifest {manifest_path}: {err}") from err
    recorded = manifest.get("weights_sha256")
    actual = hashlib.sha256(path.read_bytes()).hexdigest()
    if recorded != actual:
        raise CheckpointError(
            f"checkpoint {path} digest mismatch: manifest records {recorded}, file is {actual} "
            "(truncated or corrupted write?)"
        )
    if expected_variant is not None and manifest.get("variant") != expected_variant:
        raise CheckpointError(
            f"checkpoint {path} holds variant {manifest.get('variant')!r}, "
            f"refusing to load as {expected_variant!r}"
        )
    import pickle

    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except (RuntimeError, OSError, ValueError, EOFError, pickle.UnpicklingError) as err:
        raise CheckpointError(f"failed to deserialize checkpoint {path}: {err}") from err
    if manifest.get("variant") != payload.get("variant"):
        raise CheckpointError(
            f"manifest/payload variant mismatch in {path}: "
            f"{manifest.get('variant')!r} vs {payload.get('variant')!r}"
        )
    return payload, manifest


def load_model_from_checkpoint(
    path: str | Path,
    device: str | torch.device = "cpu",
    expected_variant: str | None = None,
) -> tuple[EffiSegNet, dict]:
    """Rebuild a model from a checkpoint; returns (model, manifest)."""
    payload, manifest = load_checkpoint(path, expected_variant=expected_variant)
    head_cfg = FusionHeadConfig(**payload["head_config"])
    model = build_model(payload["variant"], pretrained=False, head_cfg=head_cfg)
    model.load_state_dict(payload["state_dict"], strict=True)
    model = model.to(device)
    model.eval()
    return model, manifest


def _is_oom(err: BaseException) -> bool:
    text = str(err).lower()
    return isinstance(err, MemoryError) or "out of memory" in text or "allocate memory" in text


def make_memory_probe(model: nn.Module, resolution: int, device: str | torch.device = "cpu"):
    """Probe callable for :func:`find_max_batch_size`.

    Runs one forward/backward at the candidate batch size and reports
    whether it fit in memory; non-memory failures propagate.
    """

    def probe(batch_size: int) -> bool:
        model.zero_grad(set_to_none=True)
        try:
            images = torch.zeros(batch_size, 3, resolution, resolution, device=device)
            target = torch.zeros(batch_size, 1, resolution, resolution, device=device)
            loss = combined_loss(model(images), target)
            loss.backward()
            return True
        except (RuntimeError, MemoryError) as err:
            if _is_oom(err):
                return False
            raise
        finally:
            model.zero_grad(set_to_none=True)
            if torch.cuda.is_available():
                torch.cuda.empty_cache()

    return probe


def find_max_batch_size(probe, upper_bound: int) -> int:
    """Largest batch size in [1, upper_bound] for which ``probe`` succeeds.

    Bisection: at most ceil(log2(upper_bound)) + 1 probes. Assumes
    feasibility is monotone in the batch size. Raises
    :class:`ResourceError` when even a batch of 1 fails.
    """
    if upper_bound < 1:
        raise ContractError(f"upper_bound must be at least 1, got {upper_bound}")
    lo, hi, best = 1, upper_bound, 0
    while lo <= hi:
        mid = (lo + hi) // 2
        if probe(mid):
            best = mid
            lo = mid + 1
        else:
            hi = mid - 1
    if best == 0:
        raise ResourceError(
            "even a batch size of 1 does not fit; reduce the resolution or variant"
        )
    return best


def resolve_device(spec: str) -> torch.device:
    if spec == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(spec)


def _collate(dataset, indices, device):
    pairs = [dataset[int(i)] for i in indices]
    images = torch.stack([p[0] for p in pairs]).to(device)
    masks = torch.stack([p[1] for p in pairs]).to(device)
    return images, masks


def _format_float(x: float) -> str:
    return repr(float(x))


def _write_history(path: Path, history: list[EpochRecord]) -> None:
    lines = [",".join(HISTORY_COLUMNS)]
    for rec in history:
        lines.append(
            ",".join(
                [str(rec.epoch)]
                + [_format_float(v) for v in (rec.lr, rec.train_loss, rec.val_loss, rec.val_mdice)]
            )
        )
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def _validation_pass(model, dataset, batch_size, device, smooth):
    model.eval()
    loss_sum = 0.0
    dices = []
    n = len(dataset)
    with torch.no_grad():
        for start in range(0, n, batch_size):
            idx = range(start, min(start + batch_size, n))
            images, masks = _collate(dataset, idx, device)
            probs = model(images)
            loss_sum += float(combined_loss(probs, masks, smooth=smooth)) * len(idx)
            for prob, mask in zip(probs.cpu(), masks.cpu()):
                dice, _ = per_image_overlap(prob, mask)
                dices.append(dice)
    return loss_sum / n, float(np.mean(dices))


def fit(
    model: EffiSegNet,
    train_dataset,
    val_dataset,
    cfg: TrainConfig,
    out_dir: str | Path,
) -> TrainingRun:
    """Train ``model`` and leave history plus best/last checkpoints in ``out_dir``.

    Per epoch: set the cosine LR, one pass over a seeded shuffle of the
    training set, then a validation pass (combined loss and mean
    per-image Dice at threshold 0.5). The best checkpoint is the first
    epoch achieving the highest validation mDice. Identical seeds and
    configs reproduce the history file byte for byte on a fixed
    platform.
    """
    cfg.validate()
    if len(train_dataset) == 0 or len(val_dataset) == 0:
        raise ContractError("fit needs non-empty train and validation datasets")
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    device = resolve_device(cfg.device)
    cfg_digest = config_hash(cfg)

    torch.manual_seed(cfg.seed)
    model = model.to(device)
    optimizer = torch.optim.AdamW(
        model.parameters(),
        lr=cfg.lr_initial,
        betas=cfg.betas,
        eps=cfg.eps,
        weight_decay=cfg.weight_decay,
    )

    if cfg.batch_size == "auto":
        probe = make_memory_probe(model, train_dataset[0][0].shape[-1], device)
        batch_size = find_max_batch_size(probe, min(cfg.max_batch_size, len(train_dataset)))
        log.info("auto-selected batch size %d", batch_size)
    else:
        batch_size = int(cfg.batch_size)

    history: list[EpochRecord] = []
    history_path = out_dir / "history.csv"
    best_path = ckpt_dir / "best.pt"
    last_path = ckpt_dir / "last.pt"
    best_mdice = -1.0
    best_epoch = -1
    n = len(train_dataset)

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        for group in optimizer.param_groups:
            group["lr"] = lr
        if hasattr(train_dataset, "set_epoch"):
            train_dataset.set_epoch(epoch)
        order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(n)

        model.train()
        loss_sum = 0.0
        for step, start in enumerate(range(0, n, batch_size)):
            idx = order[start:start + batch_size]
            try:
                images, masks = _collate(train_dataset, idx, device)
                optimizer.zero_grad(set_to_none=True)
                loss = combined_loss(model(images), masks, smooth=cfg.dice_smooth)
                loss.backward()
                optimizer.step()
            except NumericalError as err:
                raise NumericalError(f"epoch {epoch} step {step}: {err}") from err
            except (RuntimeError, MemoryError) as err:
                if _is_oom(err):
                    raise ResourceError(
                        f"out of memory at epoch {epoch} step {step} "
                        f"(batch size {batch_size}); lower batch_size or use 'auto'"
                    ) from err
                raise
            loss_sum += float(loss.detach()) * len(idx)

        train_loss = loss_sum / n
        val_loss, val_mdice = _validation_pass(
            model, val_dataset, batch_size, device, cfg.dice_smooth
        )
        history.append(EpochRecord(epoch, lr, train_loss, val_loss, val_mdice))
        _write_history(history_path, history)

        metrics = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_mdice": val_mdice,
        }
        if val_mdice > best_mdice:
            best_mdice = val_mdice
            best_epoch = epoch
            save_checkpoint(
                model, best_path,
                epoch=epoch, seed=cfg.seed, pretrained=cfg.pretrained,
                cfg_hash=cfg_digest, metrics=metrics,
            )
        save_checkpoint(
            model, last_path,
            epoch=epoch, seed=cfg.seed, pretrained=cfg.pretrained,
            cfg_hash=cfg_digest, metrics=metrics,
        )
        log.info(
            "epoch %d/%d lr %.3g train %.4f val %.4f mdice %.4f",
            epoch + 1, cfg.epochs, lr, train_loss, val_loss, val_mdice,
        )

    return TrainingRun(
        history=history,
        best_epoch=best_epoch,
        best_val_mdice=best_mdice,
        history_path=history_path,
        best_checkpoint=best_path,
        last_checkpoint=last_path,
        batch_size=batch_size,
    )
