"""Rectified-flow Euler sampling, the single-step denoised prediction, and
the two-stage generation pipeline.

Time convention (fixed repo-wide): noise lives at t = 1, data at t = 0, and
sampling integrates x <- x - dt * v(x, t) from t_start = 1 down to t_end = 0
in uniform steps.  The one-step denoised prediction is
D(x) = x - 1.0 * v(x, 1.0), the x0-estimate implied by the interpolation
x(t) = (1 - t) x0 + t eps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FeatureGrid, Rng, gaussian_grid
from .errors import DimensionError, EmptyStructureError, SamplingError
from .flownet import VectorFieldNet, forward
from .shapes import (
    SLAT_CHANNELS,
    SPARSE_CHANNELS,
    SparseLatent,
    VoxelAsset,
    asset_from_structure,
    decode_colors,
    decode_occupancy,
)

__all__ = [
    "SamplerConfig",
    "euler_sample",
    "denoise_once",
    "generate_asset",
]


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 12
    t_start: float = 1.0
    t_end: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise DimensionError(f"steps must be >= 1, got {self.steps}")
        if not (0.0 <= self.t_end < self.t_start <= 1.0):
            raise DimensionError(
                f"need 0 <= t_end < t_start <= 1, got ({self.t_start}, {self.t_end})"
            )


def _as_field(net_or_field, class_id):
    """Normalize the velocity source to a callable (state, t) -> velocity."""
    if isinstance(net_or_field, VectorFieldNet):
        net = net_or_field
        return lambda state, t: forward(net, state, t, class_id)
    return net_or_field


def _values(state):
    if isinstance(state, FeatureGrid):
        return state.data
    if isinstance(state, SparseLatent):
        return state.values
    return np.asarray(state, dtype=np.float64)


def _rebuild(template, values):
    if isinstance(template, FeatureGrid):
        return FeatureGrid(values)
    if isinstance(template, SparseLatent):
        return template.with_values(values)
    return values


def euler_sample(net_or_field, x_t, class_id=None, config: SamplerConfig = SamplerConfig()):
    """Integrate the velocity field from t_start down to t_end.

    ``net_or_field`` is either a VectorFieldNet (then ``class_id`` is
    required) or any callable (state, t) -> velocity for oracle fields; the
    state may be a FeatureGrid, a SparseLatent, or a bare array.
    """
    field = _as_field(net_or_field, class_id)
    dt = (config.t_start - config.t_end) / config.steps
    state = x_t
    for k in range(config.steps):
        t = config.t_start - k * dt
        vel = field(state, t)
        new_vals = _values(state) - dt * _values(vel)
        if not np.all(np.isfinite(new_vals)):
            raise SamplingError(f"non-finite state after step {k} (t={t:.4f})", step=k)
        state = _rebuild(state, new_vals)
    return state


def denoise_once(net_or_field, x_t, class_id=None):
    """One-step denoised prediction D(x) = x - 1.0 * v(x, 1.0)."""
    field = _as_field(net_or_field, class_id)
    vel = field(x_t, 1.0)
    est = _values(x_t) - 1.0 * _values(vel)
    if not np.all(np.isfinite(est)):
        raise SamplingError("non-finite denoised prediction", step=0)
    return _rebuild(x_t, est)


def generate_asset(
    net_s: VectorFieldNet,
    net_l: VectorFieldNet,
    class_id: int,
    config: SamplerConfig = SamplerConfig(),
    side: int = 16,
) -> VoxelAsset:
    """Two-stage generation: sample a sparse-structure grid, decode the
    active voxel set, then sample per-voxel latents on it and decode colors.

    Deterministic given (checkpoints, class, config.seed); raises
    EmptyStructureError when stage one decodes to no voxels.
    """
    rng = Rng(config.seed)
    x_t = gaussian_grid(rng.child("sparse_seed"), (side,) * 3, SPARSE_CHANNELS)
    grid = euler_sample(net_s, x_t, class_id, config)
    positions = decode_occupancy(grid)
    if positions.shape[0] == 0:
        raise EmptyStructureError(
            f"sparse stage produced no active voxels (class {class_id}, seed {config.seed})"
        )
    z_t = SparseLatent(
        positions,
        rng.child("slat_seed").standard_normal((positions.shape[0], SLAT_CHANNELS)),
        side,
    )
    slat = euler_sample(net_l, z_t, class_id, config)
    return asset_from_structure(positions, decode_colors(slat), side, class_id)
