"""Training-time augmentation: flips, color jitter, affine and elastic warps.

All transforms act on float32 numpy pairs: an HxWx3 image in [0, 1] and
an HxW binary mask. Geometric transforms are inverse coordinate maps:
each output pixel looks up a source location, bilinearly (image) or by
nearest neighbor (mask) for affine warps, and with a Lanczos-windowed
kernel (image) for the elastic warp. The mask is re-binarized after any
interpolation; a sample's draws come from the generator passed in, in a
fixed documented order, so a fixed seed reproduces the sample exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import gaussian_filter

from .errors import ConfigurationError, ContractError

LANCZOS_TAPS = 3


@dataclass(frozen=True)
class AugmentationConfig:
    """Draw ranges for one augmentation pass.

    Scalar ``*_limit`` fields are symmetric half-widths: a contrast
    limit of 0.2 draws a multiplier from U(0.8, 1.2), a hue limit of
    0.01 a shift of up to one percent of the hue circle.
    """

    hflip_prob: float = 0.5
    vflip_prob: float = 0.5
    brightness_range: tuple[float, float] = (0.6, 1.6)
    contrast_limit: float = 0.2
    saturation_limit: float = 0.1
    hue_limit: float = 0.01
    scale_range: tuple[float, float] = (0.5, 1.5)
    translate_frac: float = 0.125
    rotate_range: tuple[float, float] = (-90.0, 90.0)
    elastic_sigma: float = 50.0
    elastic_alpha: float = 1.0

    def __post_init__(self) -> None:
        for name in ("hflip_prob", "vflip_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigurationError(f"{name} must be in [0, 1], got {p}")
        for name in ("brightness_range", "scale_range", "rotate_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ConfigurationError(f"{name} is ill-ordered: ({lo}, {hi})")
        if self.brightness_range[0] < 0:
            raise ConfigurationError("brightness multipliers must be non-negative")
        if self.scale_range[0] <= 0:
            raise ConfigurationError("scale multipliers must be positive")
        for name in ("contrast_limit", "saturation_limit", "translate_frac"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        if not 0.0 <= self.hue_limit <= 0.5:
            raise ConfigurationError("hue_limit is a fraction of the hue circle in [0, 0.5]")
        if self.elastic_alpha != 0 and self.elastic_sigma <= 0:
            raise ConfigurationError("elastic_sigma must be positive when elastic_alpha is nonzero")

    @classmethod
    def identity(cls) -> "AugmentationConfig":
        """A config whose every draw leaves the sample unchanged."""
        return cls(
            hflip_prob=0.0,
            vflip_prob=0.0,
            brightness_range=(1.0, 1.0),
            contrast_limit=0.0,
            saturation_limit=0.0,
            hue_limit=0.0,
            scale_range=(1.0, 1.0),
            translate_frac=0.0,
            rotate_range=(0.0, 0.0),
            elastic_alpha=0.0,
        )


def _check_pair(image: np.ndarray, mask: np.ndarray) -> None:
    if image.ndim != 3 or image.shape[2] != 3:
        raise ContractError(f"image must be HxWx3, got shape {image.shape}")
    if mask.shape != image.shape[:2]:
        raise ContractError(
            f"mask shape {mask.shape} does not match image plane {image.shape[:2]}"
        )


def color_jitter(
    image: np.ndarray,
    brightness: float = 1.0,
    contrast: float = 1.0,
    saturation: float = 1.0,
    hue: float = 0.0,
) -> np.ndarray:
    """Photometric jitter on an HxWx3 float image in [0, 1].

    Applied in a fixed order (brightness, contrast, saturation, hue);
    factors of exactly 1 (or a hue shift of 0) are skipped so identity
    parameters return the input bit-for-bit.
    """
    import torchvision.transforms.functional as TF

    t = torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1)))
    if brightness != 1.0:
        t = TF.adjust_brightness(t, brightness)
    if contrast != 1.0:
        t = TF.adjust_contrast(t, contrast)
    if saturation != 1.0:
        t = TF.adjust_saturation(t, saturation)
    if hue != 0.0:
        t = TF.adjust_hue(t, hue)
    return np.ascontiguousarray(t.numpy().transpose(1, 2, 0))


def affine_source_coords(
    h: int,
    w: int,
    scale: float = 1.0,
    angle_deg: float = 0.0,
    translate: tuple[float, float] = (0.0, 0.0),
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse coordinate maps (src_y, src_x) for a centered affine warp.

    Forward model: rotate by ``angle_deg`` about the image center, scale
    about the center, then translate by ``translate`` = (tx, ty) pixels.
    Output arrays give, for each destination pixel, the source location
    to sample.
    """
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ty_grid, tx_grid = np.meshgrid(np.arange(h, dtype=np.float64),
                                   np.arange(w, dtype=np.float64), indexing="ij")
    tx_off, ty_off = translate
    dx = (tx_grid - cx - tx_off) / scale
    dy = (ty_grid - cy - ty_off) / scale
    rad = math.radians(-angle_deg)
    ca, sa = math.cos(rad), math.sin(rad)
    src_x = ca * dx - sa * dy + cx
    src_y = sa * dx + ca * dy + cy
    return src_y, src_x


def elastic_source_coords(
    h: int,
    w: int,
    sigma: float,
    alpha: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Inverse coordinate maps for an elastic warp.

    Per-axis displacement fields are unit-variance Gaussian noise
    smoothed with ``gaussian_filter(sigma)`` and scaled by ``alpha``
    pixels. The y field is drawn first.
    """
    dy = gaussian_filter(rng.standard_normal((h, w)), sigma) * alpha
    dx = gaussian_filter(rng.standard_normal((h, w)), sigma) * alpha
    ty_grid, tx_grid = np.meshgrid(np.arange(h, dtype=np.float64),
                                   np.arange(w, dtype=np.float64), indexing="ij")
    return ty_grid + dy, tx_grid + dx


def _expand_weights(weights: np.ndarray, arr: np.ndarray) -> np.ndarray:
    return weights[..., None] if arr.ndim == 3 else weights


def warp_nearest(
    arr: np.ndarray,
    src_y: np.ndarray,
    src_x: np.ndarray,
    fill: float = 0.0,
    edge_clamp: bool = False,
) -> np.ndarray:
    """Nearest-neighbor gather; rounds half to even (np.rint)."""
    h, w = arr.shape[:2]
    iy = np.rint(src_y).astype(np.int64)
    ix = np.rint(src_x).astype(np.int64)
    if edge_clamp:
        return arr[np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)]
    valid = (iy >= 0) & (iy < h) & (ix >= 0) & (ix < w)
    gathered = arr[np.clip(iy, 0, h - 1), np.clip(ix, 0, w - 1)]
    out = np.where(_expand_weights(valid, arr), gathered, np.asarray(fill, dtype=arr.dtype))
    return out.astype(arr.dtype, copy=False)


def warp_bilinear(
    arr: np.ndarray,
    src_y: np.ndarray,
    src_x: np.ndarray,
    fill: float = 0.0,
) -> np.ndarray:
    """Bilinear gather with constant fill outside the source frame."""
    h, w = arr.shape[:2]
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = (src_y - y0).astype(np.float64)
    fx = (src_x - x0).astype(np.float64)
    out = np.zeros(src_y.shape + arr.shape[2:], dtype=np.float64)
    total = np.zeros(src_y.shape, dtype=np.float64)
    for oy, wy in ((0, 1.0 - fy), (1, fy)):
        for ox, wx in ((0, 1.0 - fx), (1, fx)):
            yy, xx = y0 + oy, x0 + ox
            valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            weight = wy * wx * valid
            gathered = arr[np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)]
            out += _expand_weights(weight, arr) * gathered
            total += weight
    out += _expand_weights(1.0 - total, arr) * fill
    return out.astype(arr.dtype, copy=False)


def _lanczos_weight(t: np.ndarray, a: int = LANCZOS_TAPS) -> np.ndarray:
    return np.where(np.abs(t) < a, np.sinc(t) * np.sinc(t / a), 0.0)


def warp_lanczos(
    arr: np.ndarray,
    src_y: np.ndarray,
    src_x: np.ndarray,
    a: int = LANCZOS_TAPS,
) -> np.ndarray:
    """Separable Lanczos gather with edge clamping.

    Per-axis tap weights are renormalized to sum to 1 so constant
    regions pass through exactly; results are clipped to the source
    array's value range to suppress ringing overshoot.
    """
    h, w = arr.shape[:2]
    y0 = np.floor(src_y).astype(np.int64)
    x0 = np.floor(src_x).astype(np.int64)
    fy = src_y - y0
    fx = src_x - x0
    taps = np.arange(1 - a, a + 1)
    wy = _lanczos_weight(fy[None, :, :] - taps[:, None, None], a)
    wx = _lanczos_weight(fx[None, :, :] - taps[:, None, None], a)
    wy /= wy.sum(axis=0)
    wx /= wx.sum(axis=0)
    out = np.zeros(src_y.shape + arr.shape[2:], dtype=np.float64)
    for i, ky in enumerate(taps):
        row = np.clip(y0 + ky, 0, h - 1)
        for j, kx in enumerate(taps):
            col = np.clip(x0 + kx, 0, w - 1)
            out += _expand_weights(wy[i] * wx[j], arr) * arr[row, col]
    lo, hi = float(arr.min()), float(arr.max())
    return np.clip(out, lo, hi).astype(arr.dtype, copy=False)


def augment(
    image: np.ndarray,
    mask: np.ndarray,
    cfg: AugmentationConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Apply one augmentation draw to an image/mask pair.

    Draw order is fixed: horizontal flip, vertical flip, jitter factors
    (brightness, contrast, saturation, hue), affine parameters (scale,
    angle, tx, ty), then the elastic fields when elastic_alpha is
    nonzero. Geometry is shared between image and mask; photometric
    jitter touches only the image.
    """
    _check_pair(image, mask)
    image = np.asarray(image, dtype=np.float32)
    mask = np.asarray(mask, dtype=np.float32)

    if rng.uniform() < cfg.hflip_prob:
        image, mask = image[:, ::-1], mask[:, ::-1]
    if rng.uniform() < cfg.vflip_prob:
        image, mask = image[::-1], mask[::-1]

    brightness = rng.uniform(*cfg.brightness_range)
    contrast = 1.0 + rng.uniform(-cfg.contrast_limit, cfg.contrast_limit)
    saturation = 1.0 + rng.uniform(-cfg.saturation_limit, cfg.saturation_limit)
    hue = rng.uniform(-cfg.hue_limit, cfg.hue_limit)
    image = color_jitter(image, brightness, contrast, saturation, hue)

    h, w = mask.shape
    scale = rng.uniform(*cfg.scale_range)
    angle = rng.uniform(*cfg.rotate_range)
    tx = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * w
    ty = rng.uniform(-cfg.translate_frac, cfg.translate_frac) * h
    src_y, src_x = affine_source_coords(h, w, scale=scale, angle_deg=angle, translate=(tx, ty))
    image = warp_bilinear(image, src_y, src_x, fill=0.0)
    mask = warp_nearest(mask, src_y, src_x, fill=0.0)

    if cfg.elastic_alpha != 0.0:
        src_y, src_x = elastic_source_coords(h, w, cfg.elastic_sigma, cfg.elastic_alpha, rng)
        image = warp_lanczos(image, src_y, src_x)
        mask = warp_nearest(mask, src_y, src_x, edge_clamp=True)

    mask = (mask > 0.5).astype(np.float32)
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)
