"""Dataset indexing, splits, and deterministic preprocessing.

The on-disk layout is ``<root>/images`` and ``<root>/masks`` with
samples matched by filename stem. Preprocessing is fixed: Lanczos
resize to the variant's square resolution, scale to [0, 1], then
ImageNet normalization; masks resize with nearest neighbor and
binarize at 0.5. Augmentation, when enabled, runs between resizing
and normalization.
"""

from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torch import Tensor
from torch.utils.data import Dataset

from .augment import AugmentationConfig, augment
from .errors import ConfigurationError, ContractError, DataError
from .variants import VariantConfig, get_variant

log = logging.getLogger(__name__)

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
IMAGE_EXTENSIONS = (".jpg", ".jpeg", ".png")
SPLIT_PROPORTIONS = (0.8, 0.1, 0.1)
GENERATE_PREFIX = "generate:"


@dataclass(frozen=True)
class SampleRecord:
    id: str
    image_path: Path
    mask_path: Path


@dataclass
class SampleIndex:
    """Sorted id -> file mapping for one dataset root."""

    root: Path
    records: list[SampleRecord]
    by_id: dict[str, SampleRecord] = field(init=False)

    def __post_init__(self) -> None:
        self.by_id = {r.id: r for r in self.records}

    def __len__(self) -> int:
        return len(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]


def _scan_files(directory: Path) -> dict[str, Path]:
    files = {}
    for path in sorted(directory.iterdir()):
        if path.suffix.lower() in IMAGE_EXTENSIONS and path.is_file():
            if path.stem in files:
                raise DataError(f"duplicate stem {path.stem!r} under {directory}")
            files[path.stem] = path
    return files


def index_dataset(root: str | Path) -> SampleIndex:
    """Scan ``<root>/images`` and ``<root>/masks`` into a sorted index.

    Every image must have a mask with the same stem and vice versa;
    orphans on either side are an error naming the offending ids.
    """
    root = Path(root)
    images_dir = root / "images"
    masks_dir = root / "masks"
    for directory in (images_dir, masks_dir):
        if not directory.is_dir():
            raise DataError(f"missing dataset directory: {directory}")
    images = _scan_files(images_dir)
    masks = _scan_files(masks_dir)
    unmatched_images = sorted(set(images) - set(masks))
    unmatched_masks = sorted(set(masks) - set(images))
    if unmatched_images or unmatched_masks:
        raise DataError(
            f"unpaired samples under {root}: images without masks "
            f"{unmatched_images[:5]}, masks without images {unmatched_masks[:5]}"
        )
    if not images:
        raise DataError(f"no samples found under {root}")
    records = [
        SampleRecord(id=stem, image_path=images[stem], mask_path=masks[stem])
        for stem in sorted(images)
    ]
    log.info("indexed %d samples under %s", len(records), root)
    return SampleIndex(root=root, records=records)


@dataclass
class DatasetSplit:
    """Disjoint train/validation/test id lists over one index."""

    train: list[str]
    validation: list[str]
    test: list[str]

    def __post_init__(self) -> None:
        sets = [set(self.train), set(self.validation), set(self.test)]
        if any(len(s) != len(ids) for s, ids in zip(sets, (self.train, self.validation, self.test))):
            raise DataError("a split partition contains duplicate ids")
        if (sets[0] & sets[1]) or (sets[0] & sets[2]) or (sets[1] & sets[2]):
            overlap = sorted((sets[0] & sets[1]) | (sets[0] & sets[2]) | (sets[1] & sets[2]))
            raise DataError(f"split partitions overlap: {overlap[:5]}")

    def to_dict(self) -> dict:
        return {"train": list(self.train), "validation": list(self.validation), "test": list(self.test)}


def generate_split(index: SampleIndex, seed: int) -> DatasetSplit:
    """Seeded 80:10:10 shuffle split of the index ids."""
    n = len(index)
    if n < 3:
        raise DataError(f"cannot split {n} samples three ways")
    ids = np.array(index.ids)
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(SPLIT_PROPORTIONS[0] * n))
    n_val = max(1, int(round(SPLIT_PROPORTIONS[1] * n)))
    n_train = min(n_train, n - n_val - 1)
    shuffled = ids[order]
    return DatasetSplit(
        train=list(shuffled[:n_train]),
        validation=list(shuffled[n_train:n_train + n_val]),
        test=list(shuffled[n_train + n_val:]),
    )


def _read_split_file(path: Path) -> dict:
    if not path.is_file():
        raise DataError(f"split file not found: {path}")
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        payload = yaml.safe_load(text)
    else:
        try:
            payload = json.loads(text)
        except ValueError as err:
            raise DataError(f"split file {path} is not valid JSON: {err}") from err
    if not isinstance(payload, dict):
        raise DataError(f"split file {path} must hold a mapping of partitions")
    return payload


def load_split(index: SampleIndex, spec: str | Path) -> DatasetSplit:
    """Resolve a split spec against an index.

    ``spec`` is either a JSON/YAML file with keys ``train``,
    ``validation`` and ``test`` (ids must exist in the index), or
    ``generate:<seed>`` for a seeded 80:10:10 shuffle.
    """
    if isinstance(spec, str) and spec.startswith(GENERATE_PREFIX):
        try:
            seed = int(spec[len(GENERATE_PREFIX):])
        except ValueError as err:
            raise ConfigurationError(f"bad generated-split spec {spec!r}") from err
        return generate_split(index, seed)
    payload = _read_split_file(Path(spec))
    missing_keys = [k for k in ("train", "validation", "test") if k not in payload]
    if missing_keys:
        raise DataError(f"split file {spec} lacks partitions: {missing_keys}")
    known = set(index.by_id)
    for part in ("train", "validation", "test"):
        ids = payload[part]
        if not isinstance(ids, list):
            raise DataError(f"split partition {part!r} must be a list of ids")
        unknown = sorted(set(map(str, ids)) - known)
        if unknown:
            raise DataError(f"split partition {part!r} names unknown ids: {unknown[:5]}")
    return DatasetSplit(
        train=[str(i) for i in payload["train"]],
        validation=[str(i) for i in payload["validation"]],
        test=[str(i) for i in payload["test"]],
    )


def save_split(split: DatasetSplit, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(split.to_dict(), indent=2) + "\n")
    return path


def _open_rgb(source) -> Image.Image:
    if isinstance(source, Image.Image):
        img = source
    elif isinstance(source, (str, Path)):
        try:
            img = Image.open(source)
            img.load()
        except OSError as err:
            raise DataError(f"unreadable image {source}: {err}") from err
    elif isinstance(source, np.ndarray):
        if source.ndim != 3 or source.shape[2] != 3:
            raise DataError(f"image array must be HxWx3, got shape {source.shape}")
        if source.dtype != np.uint8:
            raise DataError(f"image array must be uint8, got {source.dtype}")
        return Image.fromarray(source, mode="RGB")
    else:
        raise DataError(f"unsupported image source type {type(source).__name__}")
    if img.mode != "RGB":
        raise DataError(f"expected an RGB image, got mode {img.mode!r}")
    return img


def _open_mask(source) -> Image.Image:
    if isinstance(source, Image.Image):
        img = source
    elif isinstance(source, (str, Path)):
        try:
            img = Image.open(source)
            img.load()
        except OSError as err:
            raise DataError(f"unreadable mask {source}: {err}") from err
    elif isinstance(source, np.ndarray):
        if source.ndim != 2:
            raise DataError(f"mask array must be HxW, got shape {source.shape}")
        arr = (np.asarray(source) > 0.5).astype(np.uint8) * 255
        return Image.fromarray(arr, mode="L")
    else:
        raise DataError(f"unsupported mask source type {type(source).__name__}")
    if img.mode != "L":
        img = img.convert("L")
    return img


def resize_pair(image, mask, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Resize to a square: Lanczos for the image, nearest for the mask.

    Returns float32 arrays, image HxWx3 in [0, 1] and mask HxW in {0, 1}.
    """
    img = _open_rgb(image).resize((resolution, resolution), Image.LANCZOS)
    msk = _open_mask(mask).resize((resolution, resolution), Image.NEAREST)
    image_arr = np.asarray(img, dtype=np.float32) / 255.0
    mask_arr = (np.asarray(msk, dtype=np.float32) / 255.0 > 0.5).astype(np.float32)
    return image_arr, mask_arr


def normalize_image(image: np.ndarray) -> Tensor:
    """HxWx3 [0, 1] array -> ImageNet-normalized 3xHxW float tensor."""
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    arr = (np.asarray(image, dtype=np.float32) - mean) / std
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))


def denormalize_image(tensor: Tensor) -> np.ndarray:
    """Inverse of :func:`normalize_image`."""
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32).reshape(3, 1, 1)
    std = np.asarray(IMAGENET_STD, dtype=np.float32).reshape(3, 1, 1)
    arr = tensor.detach().cpu().numpy() * std + mean
    return np.ascontiguousarray(arr.transpose(1, 2, 0))


def preprocess(image, mask, variant: str | VariantConfig) -> tuple[Tensor, Tensor]:
    """Deterministic eval-time pipeline: resize, scale, normalize.

    Returns a (3, R, R) normalized image tensor and an (1, R, R) binary
    float mask tensor, R being the variant resolution.
    """
    variant = get_variant(variant)
    image_arr, mask_arr = resize_pair(image, mask, variant.resolution)
    return normalize_image(image_arr), torch.from_numpy(mask_arr)[None]


def _sample_rng(run_seed: int, epoch: int, sample_id: str) -> np.random.Generator:
    # crc32 keeps the stream independent of PYTHONHASHSEED
    return np.random.default_rng(
        np.random.SeedSequence([run_seed, epoch, zlib.crc32(sample_id.encode("utf-8"))])
    )


class SegmentationDataset(Dataset):
    """Image/mask pairs for one split, optionally augmented.

    Augmentation draws derive from (run seed, epoch, sample id), so a
    sample's transform is reproducible regardless of loader worker
    count or iteration order. Call :meth:`set_epoch` once per epoch to
    advance the streams.
    """

    def __init__(
        self,
        index: SampleIndex,
        ids: list[str],
        variant: str | VariantConfig,
        augmentation: AugmentationConfig | None = None,
        seed: int = 0,
    ):
        unknown = sorted(set(ids) - set(index.by_id))
        if unknown:
            raise DataError(f"ids not present in index: {unknown[:5]}")
        if not ids:
            raise ContractError("a dataset needs at least one id")
        self.records = [index.by_id[i] for i in ids]
        self.variant = get_variant(variant)
        self.augmentation = augmentation
        self.seed = seed
        self.epoch = 0

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> tuple[Tensor, Tensor]:
        record = self.records[i]
        image_arr, mask_arr = resize_pair(
            record.image_path, record.mask_path, self.variant.resolution
        )
        if self.augmentation is not None:
            rng = _sample_rng(self.seed, self.epoch, record.id)
            image_arr, mask_arr = augment(image_arr, mask_arr, self.augmentation, rng)
        return normalize_image(image_arr), torch.from_numpy(mask_arr)[None]


def dataset_fingerprint(index: SampleIndex) -> str:
    """Stable digest of the indexed files (relative path and size)."""
    import hashlib

    h = hashlib.sha256()
    for record in index.records:
        for path in (record.image_path, record.mask_path):
            rel = path.relative_to(index.root)
            h.update(f"{rel}:{path.stat().st_size}\n".encode("utf-8"))
    return h.hexdigest()
