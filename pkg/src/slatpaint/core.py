"""Deterministic numerics foundation: dense feature grids, counter-based
seeded randomness, 3D real FFTs with a fixed orthonormal normalization, and
four-moment sample statistics.

Conventions fixed here and relied upon repo-wide:

* ``rfft3`` / ``irfft3`` are orthonormal: forward and inverse each carry a
  ``D^(-3/2)`` factor, so the inverse transform is the adjoint of the forward
  one (up to the reduced-bin symmetry weights, see ``spectral_weight``).
* Sample statistics use the population (biased, 1/n) convention, matching the
  N(0, I) target statistics of the seed regularizer without a finite-sample
  correction.
* Randomness comes from the Philox counter-based generator (Philox4x64-10 as
  shipped by numpy), keyed directly with the 64-bit seed.  Identical seeds
  give bit-identical streams on every platform.  Child streams are derived by
  SHA-256 hashing of ``"{seed}/{label}"`` rather than by splitting state, so
  forked streams are reproducible from the manifest alone.
* Everything numerical is float64; lower precision appears only in
  checkpoint storage (see ``flownet``).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSampleError, DimensionError, SizeError

__all__ = [
    "FeatureGrid",
    "SpectralCoeffs",
    "MomentStats",
    "Rng",
    "rfft3",
    "irfft3",
    "spectral_weight",
    "moments",
    "moments_of",
    "gaussian_grid",
    "derive_seed",
]


def _check_power_of_two(d: int):
    if d < 1 or (d & (d - 1)) != 0:
        raise DimensionError(f"grid side must be a power of two, got {d}")


@dataclass(frozen=True)
class FeatureGrid:
    """Dense D x D x D x C real-valued field, row-major (x, y, z, c).

    The array is frozen on construction; operations return new grids.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 4:
            raise DimensionError(f"expected (D, D, D, C) data, got shape {arr.shape}")
        dx, dy, dz, _ = arr.shape
        if not (dx == dy == dz):
            raise DimensionError(f"grid must be cubic, got {arr.shape[:3]}")
        if not np.all(np.isfinite(arr)):
            raise DimensionError("grid data contains non-finite entries")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape[:3]

    @property
    def channels(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class SpectralCoeffs:
    """Complex coefficients of the real-input 3D transform of a FeatureGrid.

    Stored shape is (D, D, D//2 + 1, C): the last spatial axis is reduced by
    the real-signal Hermitian symmetry.
    """

    data: np.ndarray
    side: int

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.complex128)
        d = self.side
        if arr.ndim != 4 or arr.shape[:3] != (d, d, d // 2 + 1):
            raise DimensionError(
                f"expected ({d}, {d}, {d // 2 + 1}, C) coefficients, got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise DimensionError("coefficients contain non-finite entries")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.side,) * 3

    @property
    def channels(self) -> int:
        return self.data.shape[3]


@dataclass(frozen=True)
class MomentStats:
    """First- to fourth-order statistics of a flat sample.

    ``sigma`` is the population standard deviation, ``kappa`` is plain
    (non-excess) kurtosis, so a standard normal targets (0, 1, 0, 3).
    """

    mu: float
    sigma: float
    gamma: float
    kappa: float


class Rng:
    """Counter-based random stream (numpy Philox) with named child forks.

    Instances must not be shared across concurrent tasks; fork per task with
    :meth:`child`.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        key = np.array([self.seed, 0], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, label: str) -> "Rng":
        """Derive an independent stream named by ``label``."""
        return Rng(derive_seed(self.seed, label))

    def standard_normal(self, shape) -> np.ndarray:
        return self._gen.standard_normal(shape)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size)

    def __repr__(self):
        return f"Rng(seed={self.seed})"


def derive_seed(seed: int, label: str) -> int:
    """Hash (seed, label) to a fresh 64-bit seed. Used for all stream forks."""
    digest = hashlib.sha256(f"{int(seed)}/{label}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def rfft3(grid: FeatureGrid) -> SpectralCoeffs:
    """Orthonormal real-input 3D FFT, applied independently per channel.

    Requires a power-of-two side so inverse sizes are unambiguous and the
    radix-2 path is exact enough for the 1e-10 round-trip guarantee.
    """
    d = grid.dims[0]
    _check_power_of_two(d)
    coeffs = np.fft.rfftn(grid.data, axes=(0, 1, 2), norm="ortho")
    return SpectralCoeffs(coeffs, side=d)


def irfft3(coeffs: SpectralCoeffs) -> FeatureGrid:
    """Inverse of :func:`rfft3` (orthonormal, real output)."""
    d = coeffs.side
    _check_power_of_two(d)
    data = np.fft.irfftn(coeffs.data, s=(d, d, d), axes=(0, 1, 2), norm="ortho")
    return FeatureGrid(data)


def spectral_weight(side: int) -> np.ndarray:
    """Symmetry weights of the reduced-bin inner product, shape (D, D, D//2+1).

    A stored bin with 0 < kz < D/2 represents itself and its unstored
    conjugate mirror, so it carries weight 2; bins in the kz = 0 and
    kz = D/2 planes are stored in full and carry weight 1.  With these
    weights, sum(w * |rfft3(g)|^2) equals ||g||^2 (Parseval).
    """
    _check_power_of_two(side)
    kz = np.arange(side // 2 + 1)
    w = np.full(side // 2 + 1, 2.0)
    w[kz == 0] = 1.0
    w[kz == side // 2] = 1.0
    return np.broadcast_to(w[None, None, :], (side, side, side // 2 + 1)).copy()


def moments(values) -> MomentStats:
    """Population mean, standard deviation, skewness, and kurtosis of a flat
    sample.

    Raises SizeError for fewer than two values and DegenerateSampleError when
    all values are identical (sigma = 0 makes gamma and kappa undefined).
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if x.size < 2:
        raise SizeError(f"need at least 2 values, got {x.size}")
    mu = float(np.mean(x))
    centered = x - mu
    var = float(np.mean(centered**2))
    if var == 0.0:
        raise DegenerateSampleError("all values identical; sigma = 0")
    sigma = float(np.sqrt(var))
    gamma = float(np.mean(centered**3)) / sigma**3
    kappa = float(np.mean(centered**4)) / sigma**4
    return MomentStats(mu=mu, sigma=sigma, gamma=gamma, kappa=kappa)


def moments_of(grid: FeatureGrid) -> MomentStats:
    """Moments of every entry of a grid, flattened."""
    return moments(grid.data)


def gaussian_grid(rng: Rng, dims, channels: int) -> FeatureGrid:
    """I.i.d. standard-normal grid, reproducible from the rng seed."""
    d = int(dims[0]) if not np.isscalar(dims) else int(dims)
    shape = (d, d, d, int(channels))
    return FeatureGrid(rng.standard_normal(shape))
