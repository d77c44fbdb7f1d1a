"""Segmentation model: full-scale additive fusion over an EfficientNet trunk.

Every encoder stage (plus the raw input) is projected to a common narrow
width with a 3x3 conv + BatchNorm, upsampled back to input resolution
with nearest-neighbor interpolation, and summed. Projection happens
before upsampling so the 3x3 convs run at low resolution. The fused map
is refined by two ghost modules and reduced to a single sigmoid logit
map by a 1x1 conv.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import Tensor, nn

from .encoder import Encoder, StagePyramid, build_encoder
from .errors import ContractError, ShapeError
from .variants import VariantConfig, get_variant


@dataclass(frozen=True)
class FusionHeadConfig:
    """Widths and kernel sizes of the randomly initialized decoder."""

    fused_channels: int = 32
    projection_kernel: int = 3
    ghost_kernel: int = 3
    ghost_cheap_kernel: int = 3
    ghost_ratio: int = 2

    def __post_init__(self) -> None:
        if self.fused_channels < self.ghost_ratio:
            raise ContractError(
                f"fused width {self.fused_channels} cannot be split by "
                f"ghost ratio {self.ghost_ratio}"
            )
        if self.fused_channels % self.ghost_ratio:
            raise ContractError(
                f"fused width {self.fused_channels} must be divisible by "
                f"ghost ratio {self.ghost_ratio}"
            )


class StageProjection(nn.Module):
    """3x3 conv (no bias) + BatchNorm mapping one stage to the fused width.

    The BatchNorm offset subsumes a conv bias, so the conv carries none.
    """

    def __init__(self, in_channels: int, cfg: FusionHeadConfig = FusionHeadConfig()):
        super().__init__()
        self.in_channels = in_channels
        self.conv = nn.Conv2d(
            in_channels,
            cfg.fused_channels,
            kernel_size=cfg.projection_kernel,
            padding=cfg.projection_kernel // 2,
            bias=False,
        )
        self.bn = nn.BatchNorm2d(cfg.fused_channels)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"projection expects NCHW input with {self.in_channels} channels, "
                f"got {tuple(x.shape)}"
            )
        return self.bn(self.conv(x))


class GhostModule(nn.Module):
    """Cheap feature expansion: a primary conv plus depthwise ghost features.

    The primary conv produces ``out_channels // ratio`` intrinsic maps;
    a depthwise conv derives the remaining maps from them, and the two
    halves are concatenated. Both halves are BN + ReLU.
    """

    def __init__(self, channels: int = 32, cfg: FusionHeadConfig = FusionHeadConfig()):
        super().__init__()
        init_channels = channels // cfg.ghost_ratio
        cheap_channels = channels - init_channels
        self.channels = channels
        self.primary_conv = nn.Sequential(
            nn.Conv2d(
                channels,
                init_channels,
                kernel_size=cfg.ghost_kernel,
                padding=cfg.ghost_kernel // 2,
                bias=False,
            ),
            nn.BatchNorm2d(init_channels),
            nn.ReLU(inplace=True),
        )
        self.cheap_operation = nn.Sequential(
            nn.Conv2d(
                init_channels,
                cheap_channels,
                kernel_size=cfg.ghost_cheap_kernel,
                padding=cfg.ghost_cheap_kernel // 2,
                groups=init_channels,
                bias=False,
            ),
            nn.BatchNorm2d(cheap_channels),
            nn.ReLU(inplace=True),
        )

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeError(
                f"ghost module expects NCHW input with {self.channels} channels, "
                f"got {tuple(x.shape)}"
            )
        intrinsic = self.primary_conv(x)
        ghost = self.cheap_operation(intrinsic)
        return torch.cat([intrinsic, ghost], dim=1)


def upsample_to_input(feature_map: Tensor, size: tuple[int, int]) -> Tensor:
    """Nearest-neighbor upsample of an NCHW map to ``size`` (h, w).

    Source pixel for output (y, x) is (floor(y*h_in/h_out),
    floor(x*w_in/w_out)). A map already at ``size`` comes back
    value-identical.
    """
    if feature_map.ndim != 4:
        raise ShapeError(f"expected an NCHW map, got shape {tuple(feature_map.shape)}")
    h, w = feature_map.shape[-2:]
    th, tw = size
    if th < h or tw < w:
        raise ContractError(
            f"refusing to downsample: map is {h}x{w}, target is {th}x{tw}"
        )
    if (th, tw) == (h, w):
        return feature_map
    return F.interpolate(feature_map, size=(th, tw), mode="nearest")


class FullScaleFusion(nn.Module):
    """Project every pyramid level to a common width and sum at full scale.

    Stage 0 is the raw input (3 channels, already at output resolution);
    stages 1..5 are the encoder maps, each projected then upsampled.
    """

    def __init__(self, stage_channels: tuple[int, ...], cfg: FusionHeadConfig = FusionHeadConfig()):
        super().__init__()
        self.projections = nn.ModuleList(
            StageProjection(c, cfg) for c in (3, *stage_channels)
        )

    def forward(self, pyramid: StagePyramid) -> Tensor:
        if pyramid.depth != len(self.projections) - 1:
            raise ContractError(
                f"fusion needs {len(self.projections) - 1} encoder stages, "
                f"got {pyramid.depth}"
            )
        size = pyramid.stage0_input.shape[-2:]
        fused = self.projections[0](pyramid.stage0_input)
        for projection, stage in zip(self.projections[1:], pyramid.stages):
            fused = fused + upsample_to_input(projection(stage), size)
        return fused


class EffiSegNet(nn.Module):
    """Binary segmentation network: encoder, full-scale fusion, ghost head.

    ``forward`` maps an NCHW image batch to per-pixel foreground
    probabilities of shape (N, 1, H, W), strictly inside (0, 1).
    """

    def __init__(
        self,
        variant: str | VariantConfig,
        pretrained: bool = False,
        head_cfg: FusionHeadConfig | None = None,
        cache_dir=None,
    ):
        super().__init__()
        variant = get_variant(variant)
        head_cfg = head_cfg or FusionHeadConfig(fused_channels=variant.fused_channels)
        self.variant = variant
        self.head_cfg = head_cfg
        self.encoder: Encoder = build_encoder(variant, pretrained=pretrained, cache_dir=cache_dir)
        self.fusion = FullScaleFusion(variant.stage_channels, head_cfg)
        self.ghost1 = GhostModule(head_cfg.fused_channels, head_cfg)
        self.ghost2 = GhostModule(head_cfg.fused_channels, head_cfg)
        self.head = nn.Conv2d(head_cfg.fused_channels, 1, kernel_size=1, bias=True)

    def forward(self, batch: Tensor) -> Tensor:
        pyramid = self.encoder(batch)
        fused = self.fusion(pyramid)
        refined = self.ghost2(self.ghost1(fused))
        return torch.sigmoid(self.head(refined))


def build_model(
    variant: str | VariantConfig,
    pretrained: bool = False,
    head_cfg: FusionHeadConfig | None = None,
    seed: int | None = None,
    device: str | torch.device | None = None,
    cache_dir=None,
) -> EffiSegNet:
    """Construct an :class:`EffiSegNet`, optionally seeding initialization.

    With ``seed`` given, all randomly initialized weights (the whole
    network when ``pretrained`` is False, the decoder otherwise) are
    reproducible for a fixed torch version.
    """
    if seed is not None:
        torch.manual_seed(seed)
    model = EffiSegNet(variant, pretrained=pretrained, head_cfg=head_cfg, cache_dir=cache_dir)
    if device is not None:
        model = model.to(device)
    return model


@dataclass(frozen=True)
class ParamCount:
    """Learnable parameter partition: backbone vs randomly initialized."""

    pretrained: int
    random: int

    @property
    def total(self) -> int:
        return self.pretrained + self.random

    @property
    def ratio(self) -> float:
        return self.random / self.pretrained


def count_parameters(model: EffiSegNet) -> ParamCount:
    """Split the model's learnable parameters into backbone and decoder.

    The backbone partition is everything under the encoder trunk
    (initialized from pretrained weights when requested); the rest is
    always randomly initialized.
    """
    pretrained = 0
    random = 0
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        if name.startswith("encoder."):
            pretrained += p.numel()
        else:
            random += p.numel()
    return ParamCount(pretrained=pretrained, random=random)
