"""Registry of the eight EfficientNet-backboned model variants.

Each variant is a frozen record of everything that differs between
model sizes: the torchvision backbone to instantiate, the channel
widths of the five encoder stages the decoder taps, and the square
training resolution the backbone was pretrained at.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class VariantConfig:
    """Static description of one model variant."""

    name: str
    backbone: str
    resolution: int
    stage_channels: tuple[int, int, int, int, int]
    pretrained_source: str
    fused_channels: int = 32

    def __post_init__(self) -> None:
        if len(self.stage_channels) != 5:
            raise ConfigurationError(
                f"variant {self.name!r} must define 5 stage channel widths, "
                f"got {len(self.stage_channels)}"
            )
        if self.resolution <= 0:
            raise ConfigurationError(
                f"variant {self.name!r} has non-positive resolution {self.resolution}"
            )
        if self.fused_channels <= 0:
            raise ConfigurationError(
                f"variant {self.name!r} has non-positive fused width {self.fused_channels}"
            )


def _variant(name, resolution, stage_channels):
    tv_name = name.upper()
    return VariantConfig(
        name=name,
        backbone=f"efficientnet_{name}",
        resolution=resolution,
        stage_channels=stage_channels,
        pretrained_source=f"torchvision:EfficientNet_{tv_name}_Weights.IMAGENET1K_V1",
    )


VARIANTS: dict[str, VariantConfig] = {
    v.name: v
    for v in (
        _variant("b0", 224, (16, 24, 40, 112, 320)),
        _variant("b1", 240, (16, 24, 40, 112, 320)),
        _variant("b2", 260, (16, 24, 48, 120, 352)),
        _variant("b3", 300, (24, 32, 48, 136, 384)),
        _variant("b4", 380, (24, 32, 56, 160, 448)),
        _variant("b5", 456, (24, 40, 64, 176, 512)),
        _variant("b6", 528, (32, 40, 72, 200, 576)),
        _variant("b7", 600, (32, 48, 80, 224, 640)),
    )
}

VARIANT_NAMES: tuple[str, ...] = tuple(VARIANTS)


def get_variant(name: str | VariantConfig) -> VariantConfig:
    """Look up a variant by name ("b0".."b7", case-insensitive).

    Accepts an already-resolved VariantConfig unchanged so call sites can
    take either form.
    """
    if isinstance(name, VariantConfig):
        return name
    key = str(name).strip().lower()
    if key not in VARIANTS:
        known = ", ".join(VARIANT_NAMES)
        raise ConfigurationError(f"unknown variant {name!r}; expected one of: {known}")
    return VARIANTS[key]
