import pytest

from effisegnet import ConfigurationError, VARIANT_NAMES, VARIANTS, VariantConfig, get_variant

EXPECTED_RESOLUTIONS = {
    "b0": 224, "b1": 240, "b2": 260, "b3": 300,
    "b4": 380, "b5": 456, "b6": 528, "b7": 600,
}

EXPECTED_STAGE_CHANNELS = {
    "b0": (16, 24, 40, 112, 320),
    "b1": (16, 24, 40, 112, 320),
    "b2": (16, 24, 48, 120, 352),
    "b3": (24, 32, 48, 136, 384),
    "b4": (24, 32, 56, 160, 448),
    "b5": (24, 40, 64, 176, 512),
    "b6": (32, 40, 72, 200, 576),
    "b7": (32, 48, 80, 224, 640),
}


def test_registry_covers_all_eight_variants():
    assert VARIANT_NAMES == tuple(f"b{i}" for i in range(8))


@pytest.mark.parametrize("name", VARIANT_NAMES)
def test_variant_static_fields(name):
    v = VARIANTS[name]
    assert v.resolution == EXPECTED_RESOLUTIONS[name]
    assert v.stage_channels == EXPECTED_STAGE_CHANNELS[name]
    assert v.backbone == f"efficientnet_{name}"
    assert v.fused_channels == 32
    assert name.upper() in v.pretrained_source


def test_lookup_is_case_insensitive_and_idempotent():
    v = get_variant("B4")
    assert v.name == "b4"
    assert get_variant(v) is v


def test_unknown_variant_names_the_candidates():
    with pytest.raises(ConfigurationError, match="b0.*b7"):
        get_variant("b8")


def test_variant_validation_rejects_bad_records():
    with pytest.raises(ConfigurationError, match="5 stage"):
        VariantConfig("x", "efficientnet_x", 224, (16, 24, 40), "src")
    with pytest.raises(ConfigurationError, match="resolution"):
        VariantConfig("x", "efficientnet_x", 0, (16, 24, 40, 112, 320), "src")
