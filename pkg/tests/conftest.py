"""Shared fixtures: synthetic blob datasets and small model helpers."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import torch
from PIL import Image


def blob_sample(rng: np.random.Generator, size: int) -> tuple[np.ndarray, np.ndarray]:
    """One synthetic sample: a bright textured ellipse on a darker background.

    Returns (uint8 HxWx3 image, uint8 HxW mask in {0, 255}).
    """
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    cy, cx = rng.uniform(0.3, 0.7, 2)
    ry, rx = rng.uniform(0.12, 0.3, 2)
    inside = ((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2 <= 1.0
    base = rng.uniform(0.15, 0.35)
    chan = rng.uniform(-0.05, 0.05, 3)
    lift = rng.uniform(0.3, 0.5)
    img = base + chan[None, None, :] + lift * inside[..., None]
    img = np.clip(img + rng.normal(0.0, 0.03, img.shape), 0.0, 1.0)
    return (img * 255).astype(np.uint8), inside.astype(np.uint8) * 255


def write_blob_root(root: Path, n: int, size: int, seed: int = 0) -> Path:
    """Materialize ``n`` blob samples under ``root`` in the dataset layout."""
    rng = np.random.default_rng(seed)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for i in range(n):
        img, mask = blob_sample(rng, size)
        Image.fromarray(img, mode="RGB").save(root / "images" / f"blob{i:03d}.png")
        Image.fromarray(mask, mode="L").save(root / "masks" / f"blob{i:03d}.png")
    return root


@pytest.fixture(scope="session")
def blob_root_tiny(tmp_path_factory) -> Path:
    """Six 64px blob samples shared across fast tests."""
    root = tmp_path_factory.mktemp("blobs64")
    return write_blob_root(root, n=6, size=64, seed=0)


@pytest.fixture(scope="session")
def blob_root_224(tmp_path_factory) -> Path:
    """Ten 224px blob samples for end-to-end and acceptance runs."""
    root = tmp_path_factory.mktemp("blobs224")
    return write_blob_root(root, n=10, size=224, seed=0)


class ArrayPairDataset(torch.utils.data.Dataset):
    """In-memory (image, mask) tensors; stands in for the disk dataset."""

    def __init__(self, images: torch.Tensor, masks: torch.Tensor):
        assert len(images) == len(masks)
        self.images = images
        self.masks = masks

    def __len__(self) -> int:
        return len(self.images)

    def __getitem__(self, i: int):
        return self.images[i], self.masks[i]


def synthetic_tensor_dataset(n: int, size: int, seed: int = 0) -> ArrayPairDataset:
    """Normalized-ish random images with blob masks, straight to tensors."""
    rng = np.random.default_rng(seed)
    images = []
    masks = []
    for _ in range(n):
        img, mask = blob_sample(rng, size)
        images.append(torch.from_numpy(img.astype(np.float32) / 255.0).permute(2, 0, 1))
        masks.append(torch.from_numpy((mask > 127).astype(np.float32))[None])
    return ArrayPairDataset(torch.stack(images), torch.stack(masks))
