"""Binary segmentation metrics and the evaluation loop.

Two aggregation styles coexist. F1, precision and recall are
micro-aggregated: one confusion matrix over every pixel of every image.
mDice and mIoU are per-image means: computed on each image, then
averaged. Reports record both so numbers are never compared across
styles by accident.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .errors import ContractError

AGGREGATION_NOTE = (
    "f1/precision/recall are micro-aggregated over all pixels; "
    "mdice/miou are means of per-image scores"
)

CSV_COLUMNS = ("model", "f1", "mdice", "miou", "precision", "recall")


@dataclass(frozen=True)
class ConfusionCounts:
    """Pixel confusion counts at a fixed threshold."""

    tp: int
    fp: int
    fn: int
    tn: int

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn


def _as_bool_arrays(pred_probs, gt, threshold: float):
    p = pred_probs.detach().cpu().numpy() if torch.is_tensor(pred_probs) else np.asarray(pred_probs)
    g = gt.detach().cpu().numpy() if torch.is_tensor(gt) else np.asarray(gt)
    if p.shape != g.shape:
        raise ContractError(
            f"prediction shape {p.shape} does not match ground truth shape {g.shape}"
        )
    if not np.logical_or(g == 0, g == 1).all():
        raise ContractError("ground truth must be binary (values 0 or 1)")
    return p >= threshold, g > 0.5


def confusion_counts(pred_probs, gt, threshold: float = 0.5) -> ConfusionCounts:
    """Count tp/fp/fn/tn for a probability map against a binary mask.

    A pixel counts as predicted-foreground when its probability is
    greater than or equal to ``threshold``.
    """
    pred, target = _as_bool_arrays(pred_probs, gt, threshold)
    tp = int(np.logical_and(pred, target).sum())
    fp = int(np.logical_and(pred, ~target).sum())
    fn = int(np.logical_and(~pred, target).sum())
    tn = int(np.logical_and(~pred, ~target).sum())
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


def precision_recall_f1(counts: ConfusionCounts) -> tuple[float, float, float]:
    """Micro precision, recall and F1 from aggregate counts.

    When tp + fp + fn == 0 (nothing predicted, nothing to find) all
    three are 1. Otherwise a metric whose denominator is 0 is 0.
    """
    if counts.tp + counts.fp + counts.fn == 0:
        return 1.0, 1.0, 1.0
    precision = counts.tp / (counts.tp + counts.fp) if counts.tp + counts.fp else 0.0
    recall = counts.tp / (counts.tp + counts.fn) if counts.tp + counts.fn else 0.0
    if precision + recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    return precision, recall, f1


def overlap_from_counts(counts: ConfusionCounts) -> tuple[float, float]:
    """(dice, iou) for one image's counts; both 1 when image and mask are empty."""
    denom = counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 1.0, 1.0
    dice = 2.0 * counts.tp / (2.0 * counts.tp + counts.fp + counts.fn)
    iou = counts.tp / denom
    return dice, iou


def per_image_overlap(pred_probs, gt, threshold: float = 0.5) -> tuple[float, float]:
    """Dice and IoU of a single prediction/mask pair."""
    return overlap_from_counts(confusion_counts(pred_probs, gt, threshold))


@dataclass
class MetricsReport:
    """Evaluation result over a set of images."""

    model: str
    threshold: float
    counts: ConfusionCounts
    f1: float
    precision: float
    recall: float
    mdice: float
    miou: float
    per_image: list[dict] = field(default_factory=list)
    aggregation: str = AGGREGATION_NOTE

    @property
    def n_images(self) -> int:
        return len(self.per_image)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["counts"] = dataclasses.asdict(self.counts)
        d["n_images"] = self.n_images
        return d

    def csv_header(self) -> str:
        return ",".join(CSV_COLUMNS)

    def csv_row(self) -> str:
        values = (self.f1, self.mdice, self.miou, self.precision, self.recall)
        return ",".join([self.model] + [f"{v:.4f}" for v in values])

    def save(self, out_dir: str | Path) -> tuple[Path, Path]:
        """Write report.json and report.csv into ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        json_path = out_dir / "report.json"
        csv_path = out_dir / "report.csv"
        json_path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        csv_path.write_text(self.csv_header() + "\n" + self.csv_row() + "\n")
        return json_path, csv_path


def summarize(
    model_name: str,
    image_ids: list[str],
    image_counts: list[ConfusionCounts],
    threshold: float = 0.5,
) -> MetricsReport:
    """Build a report from per-image confusion counts."""
    if not image_counts:
        raise ContractError("cannot summarize an empty evaluation")
    if len(image_ids) != len(image_counts):
        raise ContractError("one id per image is required")
    total = ConfusionCounts(0, 0, 0, 0)
    per_image = []
    dices = []
    ious = []
    for image_id, counts in zip(image_ids, image_counts):
        total = total + counts
        dice, iou = overlap_from_counts(counts)
        dices.append(dice)
        ious.append(iou)
        per_image.append({"id": image_id, "dice": dice, "iou": iou})
    precision, recall, f1 = precision_recall_f1(total)
    return MetricsReport(
        model=model_name,
        threshold=threshold,
        counts=total,
        f1=f1,
        precision=precision,
        recall=recall,
        mdice=float(np.mean(dices)),
        miou=float(np.mean(ious)),
        per_image=per_image,
    )


def evaluate(
    model,
    index,
    ids: list[str],
    threshold: float = 0.5,
    batch_size: int = 8,
    device: str | torch.device = "cpu",
) -> MetricsReport:
    """Run ``model`` over ``ids`` from a sample index and report metrics."""
    from .data import SegmentationDataset

    if not ids:
        raise ContractError("evaluation needs at least one image id")
    dataset = SegmentationDataset(index, ids, model.variant, augmentation=None)
    model = model.to(device)
    model.eval()
    image_counts: list[ConfusionCounts] = []
    with torch.no_grad():
        for start in range(0, len(dataset), batch_size):
            chunk = [dataset[i] for i in range(start, min(start + batch_size, len(dataset)))]
            images = torch.stack([c[0] for c in chunk]).to(device)
            masks = torch.stack([c[1] for c in chunk])
            probs = model(images).cpu()
            for prob, mask in zip(probs, masks):
                image_counts.append(confusion_counts(prob, mask, threshold))
    return summarize(f"effisegnet-{model.variant.name}", list(ids), image_counts, threshold)
