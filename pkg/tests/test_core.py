import numpy as np
import pytest

from slatpaint.core import (
    FeatureGrid,
    MomentStats,
    Rng,
    SpectralCoeffs,
    derive_seed,
    gaussian_grid,
    irfft3,
    moments,
    rfft3,
    spectral_weight,
)
from slatpaint.errors import DegenerateSampleError, DimensionError, SizeError


def _random_grid(seed, side=8, channels=2):
    return gaussian_grid(Rng(seed), (side,) * 3, channels)


def _coeff_inner(a, b, side):
    """Reduced-bin inner product with symmetry weights (per channel summed)."""
    w = spectral_weight(side)[..., None]
    return float(np.sum(w * (a.real * b.real + a.imag * b.imag)))


# ------------------------------------------------------------------- FFT

def test_constant_grid_is_dc_only():
    grid = FeatureGrid(np.ones((4, 4, 4, 1)))
    coeffs = rfft3(grid).data[..., 0]
    dc = coeffs[0, 0, 0]
    assert abs(dc.imag) < 1e-12
    rest = coeffs.copy()
    rest[0, 0, 0] = 0
    assert np.abs(rest).max() < 1e-12
    # orthonormal scaling: DC = sum / D^(3/2)
    assert dc.real == pytest.approx(4**3 / 4**1.5, abs=1e-12)


def test_roundtrip_identity_random_grids():
    for seed in range(20):
        side = [4, 8, 16][seed % 3]
        channels = 1 + seed % 4
        grid = _random_grid(seed, side, channels)
        back = irfft3(rfft3(grid))
        assert np.abs(back.data - grid.data).max() < 1e-10


def test_cosine_mode_matches_brute_force_dft():
    side = 8
    x = np.arange(side)
    data = np.cos(2 * np.pi * x / side)[:, None, None, None] * np.ones((1, side, side, 1))
    grid = FeatureGrid(data)
    coeffs = rfft3(grid).data[..., 0]

    # brute-force DFT oracle over all reduced bins
    oracle = np.zeros((side, side, side // 2 + 1), dtype=complex)
    g = data[..., 0]
    for kx in range(side):
        for ky in range(side):
            for kz in range(side // 2 + 1):
                acc = 0.0
                for ix in range(side):
                    for iy in range(side):
                        for iz in range(side):
                            phase = -2j * np.pi * (kx * ix + ky * iy + kz * iz) / side
                            acc += g[ix, iy, iz] * np.exp(phase)
                oracle[kx, ky, kz] = acc / side**1.5
    assert np.abs(coeffs - oracle).max() < 1e-9

    mags = np.abs(coeffs)
    nonzero = np.argwhere(mags > 1e-9)
    # frequency +-1 along x: stored bins (1, 0, 0) and (7, 0, 0)
    assert sorted(map(tuple, nonzero)) == [(1, 0, 0), (side - 1, 0, 0)]


def test_fft_linearity():
    g1, g2 = _random_grid(1), _random_grid(2)
    a, b = 1.7, -0.3
    lhs = rfft3(FeatureGrid(a * g1.data + b * g2.data)).data
    rhs = a * rfft3(g1).data + b * rfft3(g2).data
    assert np.abs(lhs - rhs).max() < 1e-10


def test_adjoint_identity():
    for seed in range(20):
        side = 8
        g = _random_grid(seed, side, 1)
        c_src = rfft3(_random_grid(seed + 100, side, 1))
        lhs = float(np.sum(irfft3(c_src).data * g.data))
        rhs = _coeff_inner(c_src.data, rfft3(g).data, side)
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_parseval():
    for seed in range(20):
        side = [4, 8, 16][seed % 3]
        g = _random_grid(seed, side, 2)
        c = rfft3(g).data
        energy = float(np.sum(spectral_weight(side)[..., None] * np.abs(c) ** 2))
        assert energy == pytest.approx(float(np.sum(g.data**2)), abs=1e-9)


def test_self_conjugate_bins_have_zero_imag():
    g = _random_grid(5, 8, 1)
    c = rfft3(g).data[..., 0]
    for kx in (0, 4):
        for ky in (0, 4):
            for kz in (0, 4):
                assert abs(c[kx, ky, kz].imag) < 1e-12


def test_non_power_of_two_rejected():
    grid = FeatureGrid(np.zeros((12, 12, 12, 1)))
    with pytest.raises(DimensionError):
        rfft3(grid)


def test_irfft3_zero_and_dc():
    side = 4
    zero = SpectralCoeffs(np.zeros((side, side, side // 2 + 1, 1), dtype=complex), side)
    assert np.abs(irfft3(zero).data).max() == 0.0
    # single DC coefficient: constant grid, verified via the round trip
    dc = np.zeros((side, side, side // 2 + 1, 1), dtype=complex)
    dc[0, 0, 0, 0] = 3.0
    grid = irfft3(SpectralCoeffs(dc, side))
    assert np.ptp(grid.data) < 1e-12
    back = rfft3(grid).data
    assert back[0, 0, 0, 0] == pytest.approx(3.0, abs=1e-10)


def test_spectral_coeffs_shape_validation():
    with pytest.raises(DimensionError):
        SpectralCoeffs(np.zeros((4, 4, 4, 1), dtype=complex), side=4)


def test_grid_validation():
    with pytest.raises(DimensionError):
        FeatureGrid(np.zeros((4, 4, 2, 1)))
    bad = np.zeros((4, 4, 4, 1))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(DimensionError):
        FeatureGrid(bad)


# --------------------------------------------------------------- moments

def test_moments_pm_one():
    m = moments([-1.0, 1.0])
    assert (m.mu, m.sigma, m.gamma, m.kappa) == (0.0, 1.0, 0.0, 1.0)


def test_moments_standard_normal_large_sample():
    x = Rng(1234).standard_normal(10**6)
    m = moments(x)
    assert abs(m.mu) < 0.02
    assert abs(m.sigma - 1.0) < 0.02
    assert abs(m.gamma) < 0.02
    assert abs(m.kappa - 3.0) < 0.02


def test_moments_degenerate_and_size_errors():
    with pytest.raises(DegenerateSampleError):
        moments([2.5, 2.5, 2.5])
    with pytest.raises(SizeError):
        moments([1.0])


def test_moments_affine_property():
    x = Rng(7).standard_normal(500) * 1.3 + 0.2
    base = moments(x)
    for a, b in [(2.0, 1.0), (-0.5, 3.0), (0.1, -2.0)]:
        m = moments(a * x + b)
        assert m.mu == pytest.approx(a * base.mu + b, rel=1e-9, abs=1e-12)
        assert m.sigma == pytest.approx(abs(a) * base.sigma, rel=1e-9)
        assert m.gamma == pytest.approx(np.sign(a) * base.gamma, rel=1e-9)
        assert m.kappa == pytest.approx(base.kappa, rel=1e-9)


def test_moments_kurtosis_lower_bound():
    for seed in range(10):
        x = Rng(seed).uniform(-1, 1, 50)
        m = moments(x)
        assert m.sigma > 0
        assert m.kappa >= 1.0


# ------------------------------------------------------------------- rng

def test_gaussian_grid_reproducible_and_distinct():
    g1 = gaussian_grid(Rng(99), (16, 16, 16), 4)
    g2 = gaussian_grid(Rng(99), (16, 16, 16), 4)
    assert np.array_equal(g1.data, g2.data)
    g3 = gaussian_grid(Rng(100), (16, 16, 16), 4)
    frac_diff = np.mean(g1.data != g3.data)
    assert frac_diff > 0.99


def test_gaussian_grid_sigma_band():
    g = gaussian_grid(Rng(5), (16, 16, 16), 4)
    assert 0.97 <= moments(g.data).sigma <= 1.03


def test_rng_children_are_independent_and_stable():
    r = Rng(42)
    c1 = r.child("a").standard_normal(8)
    c2 = r.child("b").standard_normal(8)
    assert not np.array_equal(c1, c2)
    again = Rng(42).child("a").standard_normal(8)
    assert np.array_equal(c1, again)


def test_derive_seed_is_frozen():
    # sha256-based derivation: these values must never change across
    # platforms or releases (manifests depend on them)
    assert derive_seed(0, "x") == 5154572919779615919
    assert derive_seed(123, "asset/0") == derive_seed(123, "asset/0")
    assert derive_seed(123, "asset/0") != derive_seed(123, "asset/1")
