"""Geometry and appearance evaluation: Chamfer-L1, F-score at a threshold,
IoU/Dice, orthographic depth/normal/appearance renders, PSNR/SSIM, and the
combined per-asset inpainting record.

Point clouds live in normalized [0, 1]^3 coordinates (voxel centers
(p + 0.5) / N).  Chamfer uses L1 nearest-neighbor distances and is reported
x100 only at report time; F-score uses L2 distances with an inclusive
threshold.  Nearest neighbors go through a KD-tree, which the tests pin
against an O(n^2) brute-force scan.

Renders are orthographic: the camera sits on the positive side of the chosen
axis and marches toward the negative side; the first occupied voxel supplies
depth (normalized march distance), normal (central-difference gradient of
the signed distance field, mapped to [0, 1]^3 via (n + 1) / 2), or
appearance (voxel color).  Background pixels are 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .errors import DimensionError, EmptyInputError
from .shapes import RegionMask, VoxelAsset

__all__ = [
    "PointCloud",
    "RenderImage",
    "cloud_from_occupancy",
    "chamfer_l1",
    "fscore",
    "iou_dice",
    "render_ortho",
    "psnr",
    "ssim",
    "restrict_asset",
    "evaluate_inpaint",
    "write_pgm",
    "write_ppm",
    "RECORD_FIELDS",
]

PSNR_CAP = 99.0


@dataclass(frozen=True)
class PointCloud:
    """Points in normalized [0, 1]^3 coordinates."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise DimensionError(f"points must be (N, 3), got {pts.shape}")
        pts = pts.copy()
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class RenderImage:
    """H x W x C image with values in [0, 1] (C = 1 depth, 3 normal/color)."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"image must be (H, W, C), got {arr.shape}")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @property
    def channels(self):
        return self.data.shape[2]


def cloud_from_occupancy(occupancy: np.ndarray) -> PointCloud:
    """Occupied voxel centers, normalized by the grid side."""
    occ = np.asarray(occupancy, dtype=bool)
    pos = np.argwhere(occ)
    if pos.shape[0] == 0:
        raise EmptyInputError("empty occupancy set has no point cloud")
    return PointCloud((pos + 0.5) / occ.shape[0])


def _nn_distances(src: np.ndarray, dst: np.ndarray, p: float) -> np.ndarray:
    return cKDTree(dst).query(src, k=1, p=p)[0]


def chamfer_l1(a: PointCloud, b: PointCloud) -> float:
    """Symmetric mean nearest-neighbor L1 distance:
    0.5 * (mean_a min_b |a - b|_1 + mean_b min_a |b - a|_1)."""
    if len(a) == 0 or len(b) == 0:
        raise EmptyInputError("chamfer distance needs nonempty clouds")
    d_ab = _nn_distances(a.points, b.points, p=1)
    d_ba = _nn_distances(b.points, a.points, p=1)
    return 0.5 * (float(d_ab.mean()) + float(d_ba.mean()))


def fscore(a: PointCloud, b: PointCloud, tau: float):
    """(precision, recall, f) at inclusive L2 threshold tau; a is the
    prediction, b the reference; f = 0 when both rates are 0."""
    if len(a) == 0 or len(b) == 0:
        raise EmptyInputError("f-score needs nonempty clouds")
    if tau <= 0:
        raise DimensionError("tau must be positive")
    precision = float(np.mean(_nn_distances(a.points, b.points, p=2) <= tau))
    recall = float(np.mean(_nn_distances(b.points, a.points, p=2) <= tau))
    f = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f


def iou_dice(a: np.ndarray, b: np.ndarray):
    """Occupancy overlap: (|a&b|/|a|b|, 2|a&b|/(|a|+|b|)). Rejects the
    doubly-empty case rather than defining 0/0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"occupancy shapes differ: {a.shape} vs {b.shape}")
    union = int((a | b).sum())
    if union == 0:
        raise EmptyInputError("both occupancy sets are empty")
    inter = int((a & b).sum())
    return inter / union, 2.0 * inter / (int(a.sum()) + int(b.sum()))


_AXIS_INDEX = {"x": 0, "y": 1, "z": 2}


def _signed_distance(occ: np.ndarray) -> np.ndarray:
    if not occ.any():
        return ndimage.distance_transform_edt(~occ)
    return ndimage.distance_transform_edt(~occ) - ndimage.distance_transform_edt(occ)


def render_ortho(asset: VoxelAsset, axis: str, kind: str) -> RenderImage:
    """Orthographic render along +axis (camera on the positive side).

    Image rows/cols follow the two remaining axes in (x, y, z) order.
    """
    if axis not in _AXIS_INDEX:
        raise DimensionError(f"axis must be one of x, y, z, got {axis!r}")
    if kind not in ("depth", "normal", "appearance"):
        raise DimensionError(f"kind must be depth, normal or appearance, got {kind!r}")
    ax = _AXIS_INDEX[axis]
    n = asset.side
    occ = np.moveaxis(asset.occupancy, ax, 2)           # march along last axis
    any_hit = occ.any(axis=2)
    # first occupied voxel seen from the +axis side
    hit = (n - 1) - np.argmax(occ[:, :, ::-1], axis=2)

    channels = 1 if kind == "depth" else 3
    img = np.zeros((n, n, channels))
    if not any_hit.any():
        return RenderImage(img)

    rows, cols = np.nonzero(any_hit)
    k_hit = hit[rows, cols]
    if kind == "depth":
        img[rows, cols, 0] = ((n - 1) - k_hit + 0.5) / n
    elif kind == "appearance":
        color = np.moveaxis(asset.color, ax, 2)
        img[rows, cols] = color[rows, cols, k_hit]
    else:
        sdf = _signed_distance(asset.occupancy)
        gx, gy, gz = np.gradient(sdf)
        grad = np.stack([gx, gy, gz], axis=-1)
        grad = np.moveaxis(grad, ax, 2)
        g = grad[rows, cols, k_hit]
        norms = np.linalg.norm(g, axis=1)
        unit = np.zeros_like(g)
        ok = norms > 0
        unit[ok] = g[ok] / norms[ok, None]
        # a surface with no resolvable gradient faces the camera
        unit[~ok, ax] = 1.0
        img[rows, cols] = (unit + 1.0) / 2.0
    return RenderImage(np.clip(img, 0.0, 1.0))


def psnr(a: RenderImage, b: RenderImage) -> float:
    """10 log10(1 / MSE) for [0, 1] images, capped at 99 dB below MSE 1e-10."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    mse = float(np.mean((a.data - b.data) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def ssim(a: RenderImage, b: RenderImage) -> float:
    """Mean local SSIM with a uniform 7x7 window, k1 = 0.01, k2 = 0.03,
    dynamic range 1; channels are averaged."""
    if a.data.shape != b.data.shape:
        raise DimensionError(f"image shapes differ: {a.data.shape} vs {b.data.shape}")
    c1, c2 = 0.01**2, 0.03**2
    size = (7, 7, 1)
    x, y = a.data, b.data
    mu_x = ndimage.uniform_filter(x, size=size, mode="reflect")
    mu_y = ndimage.uniform_filter(y, size=size, mode="reflect")
    var_x = ndimage.uniform_filter(x * x, size=size, mode="reflect") - mu_x**2
    var_y = ndimage.uniform_filter(y * y, size=size, mode="reflect") - mu_y**2
    cov = ndimage.uniform_filter(x * y, size=size, mode="reflect") - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


def restrict_asset(asset: VoxelAsset, region: np.ndarray) -> VoxelAsset:
    """Asset with occupancy (and colors) cleared outside ``region``."""
    keep = asset.occupancy & np.asarray(region, dtype=bool)
    return VoxelAsset(
        occupancy=keep,
        color=np.where(keep[..., None], asset.color, 0.0),
        class_id=asset.class_id,
    )


def write_pgm(image: RenderImage, path):
    """Binary PGM (P5) dump of a single-channel image, 8-bit."""
    if image.channels != 1:
        raise DimensionError(f"PGM needs 1 channel, got {image.channels}")
    data = np.clip(image.data[..., 0] * 255.0 + 0.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.width} {image.height}\n255\n".encode())
        fh.write(data.tobytes())


def write_ppm(image: RenderImage, path):
    """Binary PPM (P6) dump of a three-channel image, 8-bit."""
    if image.channels != 3:
        raise DimensionError(f"PPM needs 3 channels, got {image.channels}")
    data = np.clip(image.data * 255.0 + 0.5, 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{image.width} {image.height}\n255\n".encode())
        fh.write(data.tobytes())


RECORD_FIELDS = (
    "iou_pres",
    "dice_pres",
    "cd_l1_x100_pres",
    "precision_01_pres",
    "recall_01_pres",
    "fscore_01_pres",
    "fscore_02_pres",
    "psnr_normal_pres",
    "ssim_normal_pres",
    "psnr_rgb_pres",
    "ssim_rgb_pres",
    "inpaint_occ_count",
    "inpaint_occ_ratio",
    "inpaint_color_hist_l1",
)


def _color_histogram(asset: VoxelAsset, region: np.ndarray, bins: int = 8) -> np.ndarray:
    """Normalized per-channel color histogram over occupied voxels in a
    region; used as the desk-scale stand-in for feature-space distribution
    metrics (it is NOT an FD/KD analogue in any rigorous sense)."""
    occ = asset.occupancy & np.asarray(region, dtype=bool)
    if not occ.any():
        return np.zeros(3 * bins)
    colors = asset.color[occ]
    hist = [np.histogram(colors[:, c], bins=bins, range=(0.0, 1.0))[0] for c in range(3)]
    hist = np.concatenate(hist).astype(np.float64)
    return hist / hist.sum()


def evaluate_inpaint(result: VoxelAsset, gt: VoxelAsset, mask: RegionMask,
                     reference_hist: np.ndarray | None = None) -> dict:
    """One flat metric record: reconstruction metrics on the preserved-region
    restriction, occupancy/color statistics on the inpaint region.

    ``reference_hist`` is the color histogram the inpaint region is compared
    against (typically pooled over same-class training assets); it defaults
    to the ground-truth asset's own inpaint-region histogram.
    """
    if result.side != gt.side or gt.side != mask.side:
        raise DimensionError("result, ground truth and mask sides differ")
    pres = mask.preserved
    res_p = restrict_asset(result, pres)
    gt_p = restrict_asset(gt, pres)

    iou, dice = iou_dice(res_p.occupancy, gt_p.occupancy)
    cloud_r = cloud_from_occupancy(res_p.occupancy)
    cloud_g = cloud_from_occupancy(gt_p.occupancy)
    cd = chamfer_l1(cloud_r, cloud_g)
    p01, r01, f01 = fscore(cloud_r, cloud_g, tau=0.01)
    _, _, f02 = fscore(cloud_r, cloud_g, tau=0.02)

    psnr_n, ssim_n, psnr_c, ssim_c = [], [], [], []
    for axis in ("x", "y", "z"):
        rn = render_ortho(res_p, axis, "normal")
        gn = render_ortho(gt_p, axis, "normal")
        psnr_n.append(psnr(rn, gn))
        ssim_n.append(ssim(rn, gn))
        ra = render_ortho(res_p, axis, "appearance")
        ga = render_ortho(gt_p, axis, "appearance")
        psnr_c.append(psnr(ra, ga))
        ssim_c.append(ssim(ra, ga))

    inp = mask.inpaint
    occ_count = int((result.occupancy & inp).sum())
    gt_count = int((gt.occupancy & inp).sum())
    hist = _color_histogram(result, inp)
    ref = reference_hist if reference_hist is not None else _color_histogram(gt, inp)
    return {
        "iou_pres": iou,
        "dice_pres": dice,
        "cd_l1_x100_pres": 100.0 * cd,
        "precision_01_pres": p01,
        "recall_01_pres": r01,
        "fscore_01_pres": f01,
        "fscore_02_pres": f02,
        "psnr_normal_pres": float(np.mean(psnr_n)),
        "ssim_normal_pres": float(np.mean(ssim_n)),
        "psnr_rgb_pres": float(np.mean(psnr_c)),
        "ssim_rgb_pres": float(np.mean(ssim_c)),
        "inpaint_occ_count": occ_count,
        "inpaint_occ_ratio": occ_count / gt_count if gt_count else float("nan"),
        "inpaint_color_hist_l1": float(np.abs(hist - ref).sum()),
    }
