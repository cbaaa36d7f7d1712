"""Procedural ground-truth generator: parameterized colored voxel shapes,
their encodings into sparse-structure grids and structured latents, and the
half-volume mask protocol used by the inpainting benchmark.

The toy encoder/decoder pair here is analytic and lossless on occupancy, so
reconstruction losses downstream have exact targets.  Voxel centers sit at
integer coordinates 0..N-1; the grid center of an N=16 grid is 7.5.

Encodings (fixed repo-wide):

* sparse-structure grid, C_S = 4 channels: channel 0 is an occupancy logit
  (+1 occupied / -1 empty), channels 1-3 are RGB mapped to [-1, 1] on
  occupied voxels and 0 elsewhere.
* structured latent, C_L = 8 channels per active voxel: channels 0-2 are RGB
  mapped to [-1, 1], channels 3-7 are reserved capacity left at 0.
"""

from __future__ import annotations

import colorsys
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FeatureGrid, Rng
from .errors import DimensionError, ParameterError

__all__ = [
    "FAMILIES",
    "SPARSE_CHANNELS",
    "SLAT_CHANNELS",
    "ShapeFamily",
    "VoxelAsset",
    "SparseLatent",
    "RegionMask",
    "generate_asset",
    "encode_sparse_target",
    "decode_occupancy",
    "encode_slat_target",
    "decode_colors",
    "asset_from_structure",
    "make_half_mask",
    "full_preserved_mask",
    "AssetRecord",
    "write_manifest",
    "read_manifest",
    "asset_from_record",
    "manifest_hash",
    "export_ply",
    "export_raw_grid",
    "load_raw_grid",
]

FAMILIES = ("sphere", "box", "ellipsoid", "torus", "two_lobe")
SPARSE_CHANNELS = 4
SLAT_CHANNELS = 8
MIN_OCCUPIED = 32

# (legal range, sampling range) per numeric parameter, per family.  Sampling
# ranges are strictly inside the legal ones and were chosen so every sampled
# shape clears the MIN_OCCUPIED floor on a 16^3 grid.
_CENTER = ("cx", "cy", "cz")
_PARAM_RANGES = {
    "sphere": {"radius": ((0.5, 14.0), (3.5, 6.5))},
    "box": {k: ((0.5, 8.0), (2.5, 6.0)) for k in ("hx", "hy", "hz")},
    "ellipsoid": {k: ((0.5, 8.0), (2.5, 6.5)) for k in ("ax", "ay", "az")},
    "torus": {"major": ((1.0, 7.0), (3.5, 5.5)), "minor": ((0.5, 3.0), (1.2, 2.5))},
    "two_lobe": {"radius": ((1.0, 6.0), (2.5, 4.0)), "offset": ((0.5, 6.0), (2.0, 4.0))},
}
_COLOR_RANGES = {"hue": ((0.0, 1.0), (0.0, 1.0)), "sat": ((0.0, 1.0), (0.6, 1.0)),
                 "val": ((0.0, 1.0), (0.6, 1.0))}
_CENTER_JITTER = 1.5


@dataclass(frozen=True)
class ShapeFamily:
    """One of the five procedural families plus (optionally) fixed parameters.

    Parameters left out of ``params`` are sampled from the documented ranges
    at generation time; explicit values are validated against the wider legal
    ranges (so e.g. a box spanning the full grid is constructible).
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FAMILIES:
            raise ParameterError(f"unknown family {self.kind!r}; pick one of {FAMILIES}")

    @property
    def class_id(self) -> int:
        return FAMILIES.index(self.kind)


@dataclass(frozen=True)
class VoxelAsset:
    """Colored occupancy on an N^3 grid. Colors are meaningful (and kept in
    [0, 1]) exactly on occupied voxels; empty voxels carry zeros."""

    occupancy: np.ndarray
    color: np.ndarray
    class_id: int

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        col = np.asarray(self.color, dtype=np.float64)
        n = occ.shape[0]
        if occ.shape != (n, n, n):
            raise DimensionError(f"occupancy must be cubic, got {occ.shape}")
        if col.shape != (n, n, n, 3):
            raise DimensionError(f"color must be (N, N, N, 3), got {col.shape}")
        col = np.where(occ[..., None], col, 0.0)
        occ, col = occ.copy(), col.copy()
        occ.flags.writeable = False
        col.flags.writeable = False
        object.__setattr__(self, "occupancy", occ)
        object.__setattr__(self, "color", col)

    @property
    def side(self) -> int:
        return self.occupancy.shape[0]

    @property
    def positions(self) -> np.ndarray:
        """Occupied voxel coordinates, lexicographic order, shape (L, 3)."""
        return np.argwhere(self.occupancy)

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())


@dataclass(frozen=True)
class SparseLatent:
    """Set of (position, feature vector) pairs on an N^3 grid.

    Positions are unique integer voxel coordinates in lexicographic order;
    values are one feature row per position.
    """

    positions: np.ndarray
    values: np.ndarray
    side: int

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.int64)
        val = np.asarray(self.values, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise DimensionError(f"positions must be (L, 3), got {pos.shape}")
        if val.ndim != 2 or val.shape[0] != pos.shape[0]:
            raise DimensionError(
                f"values must be (L, C) aligned with positions, got {val.shape}"
            )
        if pos.size and (pos.min() < 0 or pos.max() >= self.side):
            raise DimensionError("positions outside the grid")
        if not np.all(np.isfinite(val)):
            raise DimensionError("latent values contain non-finite entries")
        pos, val = pos.copy(), val.copy()
        pos.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "values", val)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray) -> "SparseLatent":
        return SparseLatent(self.positions, values, self.side)


@dataclass(frozen=True)
class RegionMask:
    """Boolean voxel partition: True = preserved (conditioned), False =
    inpaint region."""

    preserved: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.preserved, dtype=bool)
        n = arr.shape[0]
        if arr.shape != (n, n, n):
            raise DimensionError(f"mask must be cubic, got {arr.shape}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "preserved", arr)

    @property
    def side(self) -> int:
        return self.preserved.shape[0]

    @property
    def inpaint(self) -> np.ndarray:
        return ~self.preserved

    @property
    def inpaint_count(self) -> int:
        return int(self.inpaint.sum())

    @property
    def preserved_count(self) -> int:
        return int(self.preserved.sum())


def _coord_grids(n: int):
    return np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")


def _check_range(kind: str, name: str, value: float, legal) -> float:
    lo, hi = legal
    if not (lo <= value <= hi):
        raise ParameterError(
            f"{kind}.{name} = {value} outside legal range [{lo}, {hi}]"
        )
    return float(value)


def _resolve_params(rng: Rng, family: ShapeFamily, side: int) -> dict:
    kind = family.kind
    out = {}
    for name, (legal, sample) in _PARAM_RANGES[kind].items():
        if name in family.params:
            out[name] = _check_range(kind, name, family.params[name], legal)
        else:
            out[name] = float(rng.uniform(*sample))
    center_default = (side - 1) / 2.0
    for name in _CENTER:
        if name in family.params:
            out[name] = _check_range(kind, name, family.params[name], (0.0, side - 1.0))
        else:
            out[name] = center_default + float(rng.uniform(-_CENTER_JITTER, _CENTER_JITTER))
    if kind == "two_lobe":
        if "axis" in family.params:
            axis = int(family.params["axis"])
            if axis not in (0, 1, 2):
                raise ParameterError(f"two_lobe.axis must be 0, 1 or 2, got {axis}")
            out["axis"] = axis
        else:
            out["axis"] = int(rng.integers(0, 3))
    if kind == "torus" and out["minor"] >= out["major"]:
        raise ParameterError("torus.minor must be smaller than torus.major")
    for name, (legal, sample) in _COLOR_RANGES.items():
        if name in family.params:
            out[name] = _check_range(kind, name, family.params[name], legal)
        else:
            out[name] = float(rng.uniform(*sample))
    known = set(_PARAM_RANGES[kind]) | set(_CENTER) | set(_COLOR_RANGES) | (
        {"axis"} if kind == "two_lobe" else set()
    )
    extra = set(family.params) - known
    if extra:
        raise ParameterError(f"unknown parameters for {kind}: {sorted(extra)}")
    return out


def _occupancy_from_params(kind: str, p: dict, side: int) -> np.ndarray:
    x, y, z = _coord_grids(side)
    dx, dy, dz = x - p["cx"], y - p["cy"], z - p["cz"]
    if kind == "sphere":
        return dx**2 + dy**2 + dz**2 <= p["radius"] ** 2
    if kind == "box":
        return (np.abs(dx) <= p["hx"]) & (np.abs(dy) <= p["hy"]) & (np.abs(dz) <= p["hz"])
    if kind == "ellipsoid":
        return (dx / p["ax"]) ** 2 + (dy / p["ay"]) ** 2 + (dz / p["az"]) ** 2 <= 1.0
    if kind == "torus":
        ring = np.sqrt(dx**2 + dy**2) - p["major"]
        return ring**2 + dz**2 <= p["minor"] ** 2
    if kind == "two_lobe":
        offset = np.zeros(3)
        offset[p["axis"]] = p["offset"]
        d1 = (dx - offset[0]) ** 2 + (dy - offset[1]) ** 2 + (dz - offset[2]) ** 2
        d2 = (dx + offset[0]) ** 2 + (dy + offset[1]) ** 2 + (dz + offset[2]) ** 2
        return (d1 <= p["radius"] ** 2) | (d2 <= p["radius"] ** 2)
    raise ParameterError(f"unknown family {kind!r}")


def generate_asset(rng: Rng, family: ShapeFamily, side: int = 16) -> VoxelAsset:
    """Deterministically generate one colored asset from (rng seed, family).

    Missing family parameters are drawn from the documented sampling ranges;
    the occupancy predicate is evaluated at voxel centers (integer coords).
    """
    params = _resolve_params(rng, family, side)
    occ = _occupancy_from_params(family.kind, params, side)
    count = int(occ.sum())
    if count < MIN_OCCUPIED:
        raise ParameterError(
            f"degenerate {family.kind}: only {count} occupied voxels (< {MIN_OCCUPIED})"
        )
    rgb = colorsys.hsv_to_rgb(params["hue"], params["sat"], params["val"])
    color = np.zeros((side, side, side, 3))
    color[occ] = rgb
    return VoxelAsset(occupancy=occ, color=color, class_id=family.class_id)


def resolve_family(rng: Rng, family: ShapeFamily, side: int = 16) -> ShapeFamily:
    """Same sampling as generate_asset, but returns the fully resolved family
    (used to freeze manifests)."""
    return ShapeFamily(family.kind, _resolve_params(rng, family, side))


def encode_sparse_target(asset: VoxelAsset) -> FeatureGrid:
    """Toy encoder into the 4-channel sparse-structure grid."""
    n = asset.side
    data = np.zeros((n, n, n, SPARSE_CHANNELS))
    data[..., 0] = np.where(asset.occupancy, 1.0, -1.0)
    data[..., 1:4] = np.where(asset.occupancy[..., None], asset.color * 2.0 - 1.0, 0.0)
    return FeatureGrid(data)


def decode_occupancy(grid: FeatureGrid, threshold: float = 0.0) -> np.ndarray:
    """Active voxel coordinates: positions where channel 0 > threshold.

    Returns an (L, 3) int array in lexicographic order; may be empty.
    """
    return np.argwhere(grid.data[..., 0] > threshold)


def encode_slat_target(asset: VoxelAsset) -> SparseLatent:
    """Toy encoder into the 8-channel structured latent on occupied voxels."""
    pos = asset.positions
    values = np.zeros((pos.shape[0], SLAT_CHANNELS))
    values[:, 0:3] = asset.color[tuple(pos.T)] * 2.0 - 1.0
    return SparseLatent(pos, values, asset.side)


def decode_colors(slat: SparseLatent) -> np.ndarray:
    """Inverse of the color part of encode_slat_target, clipped to [0, 1]."""
    return np.clip((slat.values[:, 0:3] + 1.0) / 2.0, 0.0, 1.0)


def asset_from_structure(
    positions: np.ndarray, colors: np.ndarray, side: int, class_id: int
) -> VoxelAsset:
    """Assemble a VoxelAsset from active positions and per-position colors."""
    occ = np.zeros((side, side, side), dtype=bool)
    col = np.zeros((side, side, side, 3))
    if positions.size:
        occ[tuple(positions.T)] = True
        col[tuple(positions.T)] = np.clip(colors, 0.0, 1.0)
    return VoxelAsset(occupancy=occ, color=col, class_id=class_id)


def make_half_mask(rng: Rng, dims) -> RegionMask:
    """Axis-aligned half-space mask: a uniformly chosen axis and side marks
    exactly N^3/2 voxels as the inpaint region."""
    n = int(dims[0]) if not np.isscalar(dims) else int(dims)
    if n % 2 != 0:
        raise DimensionError(f"half mask needs an even side, got {n}")
    axis = int(rng.integers(0, 3))
    high_side = bool(rng.integers(0, 2))
    coords = _coord_grids(n)[axis]
    inpaint = coords >= n // 2 if high_side else coords < n // 2
    return RegionMask(preserved=~inpaint)


def full_preserved_mask(side: int) -> RegionMask:
    """Mask with everything preserved (pure-reconstruction regime)."""
    return RegionMask(preserved=np.ones((side, side, side), dtype=bool))


# ------------------------------------------------------------------ dataset

@dataclass(frozen=True)
class AssetRecord:
    """One manifest line: everything needed to regenerate an asset."""

    seed: int
    family: str
    params: dict
    class_id: int


def asset_from_record(record: AssetRecord, side: int = 16) -> VoxelAsset:
    return generate_asset(Rng(record.seed), ShapeFamily(record.family, record.params), side)


def write_manifest(records, path):
    path = Path(path)
    with path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps({
                "seed": rec.seed,
                "family": rec.family,
                "params": rec.params,
                "class_id": rec.class_id,
            }, sort_keys=True) + "\n")


def read_manifest(path) -> list[AssetRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        records.append(AssetRecord(
            seed=int(obj["seed"]),
            family=str(obj["family"]),
            params=dict(obj["params"]),
            class_id=int(obj["class_id"]),
        ))
    return records


def manifest_hash(path) -> str:
    import hashlib

    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


# ------------------------------------------------------------------ export

def export_ply(asset: VoxelAsset, path):
    """ASCII PLY point cloud of occupied voxel centers with uchar colors.

    Coordinates are normalized voxel centers (p + 0.5) / N in [0, 1]^3.
    """
    pos = asset.positions
    colors = np.clip(asset.color[tuple(pos.T)] * 255.0 + 0.5, 0, 255).astype(np.uint8)
    pts = (pos + 0.5) / asset.side
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {pos.shape[0]}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for p, c in zip(pts, colors):
        lines.append(f"{p[0]:.6f} {p[1]:.6f} {p[2]:.6f} {c[0]} {c[1]} {c[2]}")
    Path(path).write_text("\n".join(lines) + "\n")


_RAW_MAGIC = b"SLATGRID"


def export_raw_grid(grid: FeatureGrid, path):
    """Raw grid file: 8-byte magic, u32 version, u32 side, u32 channels,
    then side^3 * channels little-endian float64 in (x, y, z, c) C order."""
    with Path(path).open("wb") as fh:
        fh.write(_RAW_MAGIC)
        fh.write(struct.pack("<III", 1, grid.dims[0], grid.channels))
        fh.write(grid.data.astype("<f8").tobytes())


def load_raw_grid(path) -> FeatureGrid:
    raw = Path(path).read_bytes()
    if raw[:8] != _RAW_MAGIC:
        raise DimensionError(f"{path}: not a slatpaint raw grid file")
    version, side, channels = struct.unpack("<III", raw[8:20])
    if version != 1:
        raise DimensionError(f"{path}: unsupported raw grid version {version}")
    data = np.frombuffer(raw[20:], dtype="<f8").reshape(side, side, side, channels)
    return FeatureGrid(data)
