import math

import numpy as np
import pytest
import torch

from effisegnet import ContractError, NumericalError, bce_loss, combined_loss, dice_loss

from oracles import pixel_loop_combined_loss


def test_dice_is_zero_on_perfect_prediction():
    target = torch.zeros(1, 1, 4, 4)
    target[..., :2, :] = 1.0
    assert float(dice_loss(target, target, smooth=0.0)) == pytest.approx(0.0, abs=1e-12)
    # smoothing keeps the empty/empty case defined instead of 0/0
    empty = torch.zeros(1, 1, 4, 4)
    assert float(dice_loss(empty, empty, smooth=1e-6)) == pytest.approx(0.0, abs=1e-12)


def test_dice_uniform_half_probabilities():
    # p = 0.5 everywhere, half the pixels foreground:
    # 1 - 2*(0.5*K)/(0.5*2K + K) = 0.5 for any K
    probs = torch.full((1, 1, 6, 6), 0.5)
    target = torch.zeros(1, 1, 6, 6)
    target[..., :3, :] = 1.0
    assert float(dice_loss(probs, target, smooth=0.0)) == pytest.approx(0.5, rel=1e-12)


def test_bce_closed_form_at_half():
    probs = torch.full((2, 1, 3, 3), 0.5)
    target = torch.zeros(2, 1, 3, 3)
    target[0] = 1.0
    assert float(bce_loss(probs, target)) == pytest.approx(math.log(2.0), rel=1e-6)


def test_bce_saturated_probabilities_stay_finite():
    probs = torch.tensor([[[[0.0, 1.0], [1.0, 0.0]]]])
    target = torch.tensor([[[[1.0, 0.0], [1.0, 0.0]]]])
    value = float(bce_loss(probs, target))
    assert math.isfinite(value)
    # two of four pixels are maximally wrong: mean near -log(1e-7)/2,
    # modulo float32 rounding of the upper clamp bound
    assert value == pytest.approx(-math.log(1e-7) / 2.0, rel=2e-2)


def test_combined_matches_pixel_loop_reference():
    rng = np.random.default_rng(5)
    for _ in range(10):
        probs = rng.uniform(0.001, 0.999, (1, 1, 6, 6))
        target = (rng.uniform(size=(1, 1, 6, 6)) > 0.5).astype(np.float64)
        ours = float(
            combined_loss(torch.from_numpy(probs), torch.from_numpy(target), smooth=1e-6)
        )
        ref = pixel_loop_combined_loss(probs, target, smooth=1e-6)
        assert ours == pytest.approx(ref, rel=1e-10)


def test_loss_precondition_errors():
    with pytest.raises(ContractError):
        dice_loss(torch.rand(1, 1, 4, 4), torch.rand(1, 1, 4, 5))
    with pytest.raises(ContractError):
        bce_loss(torch.rand(0), torch.rand(0))


def test_non_finite_probabilities_raise_numerical_error():
    probs = torch.full((1, 1, 2, 2), float("nan"))
    target = torch.zeros(1, 1, 2, 2)
    with pytest.raises(NumericalError, match="dice"):
        combined_loss(probs, target)


def test_combined_is_mean_of_parts():
    gen = torch.Generator().manual_seed(9)
    probs = (torch.rand(1, 1, 5, 5, generator=gen) * 0.98 + 0.01).double()
    target = (torch.rand(1, 1, 5, 5, generator=gen) > 0.5).double()
    combined = float(combined_loss(probs, target))
    # float64 end to end, so the composition must agree to rounding noise
    parts = 0.5 * (float(dice_loss(probs, target)) + float(bce_loss(probs, target)))
    assert combined == pytest.approx(parts, rel=1e-12)
