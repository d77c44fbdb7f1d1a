"""EfficientNet trunk wrapper exposing a five-stage feature pyramid.

The torchvision EfficientNet ``features`` stack is kept whole (stem,
inverted-residual blocks, and the final 1x1 expansion conv), which is
what the pretrained parameter partition counts. The decoder taps the
five maps produced just before each further downsampling, at strides
2, 4, 8, 16 and 32; the 1/32 tap is the last inverted-residual block
output, so the trailing expansion conv carries pretrained weights but
does not feed the decoder.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path

import torch
from torch import Tensor, nn

from .errors import ShapeError, WeightLoadError
from .variants import VariantConfig, get_variant

log = logging.getLogger(__name__)

WEIGHT_CACHE_ENV = "EFFISEGNET_WEIGHT_CACHE"
DEFAULT_WEIGHT_CACHE = Path.home() / ".cache" / "effisegnet" / "weights"

# torchvision ``features`` indices whose outputs sit just before the next
# stride-2 downsampling; identical across b0..b7.
STAGE_TAP_INDICES: tuple[int, int, int, int, int] = (1, 2, 3, 5, 7)


@dataclass
class StagePyramid:
    """The encoder's view of one batch: the input plus five stage maps.

    ``stages[s]`` has stride ``2**(s+1)`` relative to ``stage0_input``
    (odd sizes round up), so a 380px input yields maps at 190, 95, 48,
    24 and 12 px.
    """

    stage0_input: Tensor
    stages: list[Tensor]

    @property
    def depth(self) -> int:
        return len(self.stages)


class Encoder(nn.Module):
    """EfficientNet feature trunk returning a :class:`StagePyramid`."""

    def __init__(self, variant: VariantConfig, features: nn.Sequential):
        super().__init__()
        self.variant = variant
        self.features = features
        self._last_tap = STAGE_TAP_INDICES[-1]

    def forward(self, batch: Tensor) -> StagePyramid:
        if batch.ndim != 4 or batch.shape[1] != 3:
            raise ShapeError(
                f"encoder expects an NCHW batch with 3 channels, got {tuple(batch.shape)}"
            )
        taps = set(STAGE_TAP_INDICES)
        stages: list[Tensor] = []
        x = batch
        for i, block in enumerate(self.features):
            x = block(x)
            if i in taps:
                stages.append(x)
            if i == self._last_tap:
                break
        return StagePyramid(stage0_input=batch, stages=stages)


def _build_features(variant: VariantConfig) -> nn.Sequential:
    import torchvision.models as tvm

    factory = getattr(tvm, variant.backbone, None)
    if factory is None:
        raise WeightLoadError(f"torchvision has no backbone named {variant.backbone!r}")
    return factory(weights=None).features


def _weight_cache_dir(cache_dir: str | Path | None) -> Path:
    if cache_dir is not None:
        return Path(cache_dir)
    return Path(os.environ.get(WEIGHT_CACHE_ENV, DEFAULT_WEIGHT_CACHE)).expanduser()


def _load_cached_weights(features: nn.Sequential, variant: VariantConfig, path: Path) -> None:
    manifest_path = path.with_suffix(".json")
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text())
        except ValueError as err:
            raise WeightLoadError(f"unreadable weight manifest {manifest_path}: {err}") from err
        cached_variant = manifest.get("variant")
        if cached_variant is not None and cached_variant != variant.name:
            raise WeightLoadError(
                f"cached weights at {path} are for variant {cached_variant!r}, "
                f"not {variant.name!r}"
            )
    import pickle

    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
        features.load_state_dict(state, strict=True)
    except (RuntimeError, OSError, KeyError, ValueError, pickle.UnpicklingError, EOFError) as err:
        raise WeightLoadError(f"failed to load cached backbone weights {path}: {err}") from err


def _load_torchvision_weights(features: nn.Sequential, variant: VariantConfig) -> None:
    from torchvision.models import get_weight

    enum_name = variant.pretrained_source.split(":", 1)[1]
    try:
        weights = get_weight(enum_name)
        full_state = weights.get_state_dict(progress=False, check_hash=True)
    except Exception as err:  # download/IO failures surface as many types
        raise WeightLoadError(
            f"could not fetch pretrained weights {variant.pretrained_source} "
            f"({err}); place a state dict at "
            f"$({WEIGHT_CACHE_ENV})/{variant.name}.pt to run offline"
        ) from err
    prefix = "features."
    state = {k[len(prefix):]: v for k, v in full_state.items() if k.startswith(prefix)}
    features.load_state_dict(state, strict=True)


def export_backbone_weights(
    variant: str | VariantConfig,
    dest: str | Path,
    features: nn.Sequential | None = None,
) -> Path:
    """Save a backbone's ``features`` state dict plus a JSON sidecar.

    Writes ``<dest>/<variant>.pt`` in the layout ``build_encoder`` reads
    from the weight cache, so the result makes pretrained construction
    work offline.
    """
    variant = get_variant(variant)
    if features is None:
        encoder = build_encoder(variant, pretrained=True)
        features = encoder.features
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    path = dest / f"{variant.name}.pt"
    torch.save(features.state_dict(), path)
    path.with_suffix(".json").write_text(
        json.dumps({"variant": variant.name, "source": variant.pretrained_source}, indent=2)
        + "\n"
    )
    return path


def build_encoder(
    variant: str | VariantConfig,
    pretrained: bool = False,
    cache_dir: str | Path | None = None,
) -> Encoder:
    """Construct the trunk for ``variant``, optionally with pretrained weights.

    Pretrained weights resolve in order: a ``<variant>.pt`` state dict in
    the cache directory (``cache_dir`` argument, else $EFFISEGNET_WEIGHT_CACHE,
    else ~/.cache/effisegnet/weights), then the torchvision hub. Any
    failure raises :class:`WeightLoadError` naming the attempted source.
    """
    variant = get_variant(variant)
    features = _build_features(variant)
    if pretrained:
        cached = _weight_cache_dir(cache_dir) / f"{variant.name}.pt"
        if cached.exists():
            _load_cached_weights(features, variant, cached)
            log.info("loaded %s backbone weights from cache %s", variant.name, cached)
        else:
            _load_torchvision_weights(features, variant)
            log.info("loaded %s backbone weights from %s", variant.name, variant.pretrained_source)
    return Encoder(variant, features)


def expected_stage_channels(variant: str | VariantConfig) -> tuple[int, ...]:
    """Channel widths of the five pyramid stages, shallow to deep."""
    return get_variant(variant).stage_channels
