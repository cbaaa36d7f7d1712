import numpy as np
import pytest

from slatpaint.core import Rng, gaussian_grid
from slatpaint.errors import DimensionError, EmptyStructureError, SamplingError
from slatpaint.flownet import STAGE_SLAT, STAGE_SPARSE, zero_net
from slatpaint.sampler import SamplerConfig, denoise_once, euler_sample, generate_asset
from slatpaint.shapes import SLAT_CHANNELS, SPARSE_CHANNELS, decode_occupancy


def test_straight_field_recovers_x0_exactly():
    rng = Rng(0)
    x0 = rng.standard_normal((5, 3))
    eps = rng.standard_normal((5, 3))
    field = lambda x, t: eps - x0
    for steps in (1, 2, 7, 12, 50):
        out = euler_sample(field, eps.copy(), config=SamplerConfig(steps=steps))
        assert np.abs(out - x0).max() <= 1e-12


def test_linear_field_closed_form():
    out = euler_sample(lambda x, t: x, np.array(1.0), config=SamplerConfig(steps=12))
    assert abs(float(out) - (11.0 / 12.0) ** 12) < 1e-6
    assert abs(float(out) - 0.35200) < 1e-5


def test_single_step_definition():
    field = lambda x, t: np.full_like(x, 2.0) * t
    x_t = np.array([3.0, -1.0])
    out = euler_sample(field, x_t, config=SamplerConfig(steps=1))
    assert np.array_equal(out, x_t - 1.0 * field(x_t, 1.0))


def test_denoise_once_cases():
    assert float(denoise_once(lambda x, t: np.array(0.5), np.array(2.0))) == 1.5
    x = np.array([1.0, 2.0])
    assert np.array_equal(denoise_once(lambda x, t: np.zeros_like(x), x), x)
    rng = Rng(3)
    x0, eps = rng.standard_normal(6), rng.standard_normal(6)
    out = denoise_once(lambda x, t: eps - x0, eps.copy())
    assert np.abs(out - x0).max() <= 1e-12


def test_sampler_config_validation():
    with pytest.raises(DimensionError):
        SamplerConfig(steps=0)
    with pytest.raises(DimensionError):
        SamplerConfig(t_start=0.5, t_end=0.7)


def test_nan_velocity_raises_with_step_index():
    calls = []

    def field(x, t):
        calls.append(t)
        return np.full_like(x, np.nan) if len(calls) >= 3 else np.zeros_like(x)

    with pytest.raises(SamplingError) as err:
        euler_sample(field, np.zeros(4), config=SamplerConfig(steps=6))
    assert err.value.step == 2


def test_zero_net_generation_thresholds_the_seed():
    net_s = zero_net(STAGE_SPARSE, SPARSE_CHANNELS, 5)
    net_l = zero_net(STAGE_SLAT, SLAT_CHANNELS, 5)
    config = SamplerConfig(steps=12, seed=123)
    asset = generate_asset(net_s, net_l, 0, config, side=8)
    seed_grid = gaussian_grid(Rng(123).child("sparse_seed"), (8, 8, 8), SPARSE_CHANNELS)
    expected = decode_occupancy(seed_grid)
    assert np.array_equal(asset.positions, expected)
    # zero-velocity latents decode to the clipped affine color map of noise
    assert asset.count == expected.shape[0]


def test_generation_deterministic():
    net_s = zero_net(STAGE_SPARSE, SPARSE_CHANNELS, 5)
    net_l = zero_net(STAGE_SLAT, SLAT_CHANNELS, 5)
    a = generate_asset(net_s, net_l, 1, SamplerConfig(seed=7), side=8)
    b = generate_asset(net_s, net_l, 1, SamplerConfig(seed=7), side=8)
    assert np.array_equal(a.occupancy, b.occupancy)
    assert np.array_equal(a.color, b.color)


def test_empty_structure_error():
    # a net with a large positive bias on the occupancy channel pushes every
    # logit far negative after one step of x - v
    net_s = zero_net(STAGE_SPARSE, SPARSE_CHANNELS, 5)
    net_s.params["b3"] = np.array([50.0, 0.0, 0.0, 0.0])
    net_l = zero_net(STAGE_SLAT, SLAT_CHANNELS, 5)
    with pytest.raises(EmptyStructureError):
        generate_asset(net_s, net_l, 0, SamplerConfig(seed=5), side=8)
