"""Time- and class-conditioned velocity networks for both generation stages,
conditional flow-matching training, hand-derived gradients, Adam, and
checkpointing.

The backbone is deliberately small: a per-voxel MLP (2 x 128 hidden units,
tanh) over the concatenation

    [feature (C) | positional encoding (12) | time embedding (8) |
     class one-hot (K) | mean-pooled feature (C)]

so the whole backward pass stays tractable by hand.  The mean pool is the
only cross-voxel coupling; everything else is row-independent, which makes
forward/backward two matmuls each.

The flow-matching objective follows the rectified-flow interpolation
x(t) = (1 - t) x0 + t eps with regression target eps - x0; noise level t is
drawn uniformly on [0, 1] during training.

Checkpoints store parameters as little-endian float32 (the one place single
precision is allowed); nets are always rebuilt in float64 from that blob, so
any two nets loaded from the same file produce bit-identical forwards.
Training keeps a float64 sidecar ("resume file") with the optimizer state so
an interrupted run can continue bit-exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import FeatureGrid, Rng, derive_seed
from .errors import DimensionError, TrainingError
from .shapes import SparseLatent

__all__ = [
    "STAGE_SPARSE",
    "STAGE_SLAT",
    "HIDDEN",
    "POS_DIM",
    "TIME_DIM",
    "VectorFieldNet",
    "init_net",
    "zero_net",
    "forward",
    "forward_with_vjp",
    "cfm_loss",
    "AdamState",
    "init_adam",
    "adam_step",
    "TrainConfig",
    "Checkpoint",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "net_from_checkpoint",
    "checkpoint_from_net",
    "save_resume",
    "load_resume",
]

STAGE_SPARSE = "sparse_structure"
STAGE_SLAT = "structured_latent"
HIDDEN = 128
POS_DIM = 12   # 3 axes x {sin, cos} x 2 frequencies
TIME_DIM = 8   # {sin, cos} x 4 octave frequencies
_PARAM_ORDER = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass
class VectorFieldNet:
    """Per-voxel MLP velocity field v(x, t | class). Mutable only through
    training; forwards are pure."""

    stage: str
    channels: int
    num_classes: int
    params: dict

    @property
    def in_dim(self) -> int:
        return 2 * self.channels + POS_DIM + TIME_DIM + self.num_classes


def init_net(stage: str, channels: int, num_classes: int, rng: Rng) -> VectorFieldNet:
    """Gaussian init scaled by 1/sqrt(fan_in), zero biases."""
    if stage not in (STAGE_SPARSE, STAGE_SLAT):
        raise DimensionError(f"unknown stage {stage!r}")
    f = 2 * channels + POS_DIM + TIME_DIM + num_classes
    params = {
        "W1": rng.standard_normal((f, HIDDEN)) / np.sqrt(f),
        "b1": np.zeros(HIDDEN),
        "W2": rng.standard_normal((HIDDEN, HIDDEN)) / np.sqrt(HIDDEN),
        "b2": np.zeros(HIDDEN),
        "W3": rng.standard_normal((HIDDEN, channels)) / np.sqrt(HIDDEN),
        "b3": np.zeros(channels),
    }
    return VectorFieldNet(stage, channels, num_classes, params)


def zero_net(stage: str, channels: int, num_classes: int) -> VectorFieldNet:
    net = init_net(stage, channels, num_classes, Rng(0))
    net.params = {k: np.zeros_like(v) for k, v in net.params.items()}
    return net


def positional_encoding(positions: np.ndarray, side: int) -> np.ndarray:
    """Sinusoidal encoding of voxel coordinates: sin/cos of 2*pi*k*p/side for
    k in {1, 2} per axis."""
    u = 2.0 * np.pi * np.asarray(positions, dtype=np.float64) / side
    feats = []
    for k in (1, 2):
        feats.append(np.sin(k * u))
        feats.append(np.cos(k * u))
    return np.concatenate(feats, axis=1)


def time_embedding(t: float) -> np.ndarray:
    """sin/cos of pi * 2^j * t for j = 0..3."""
    w = np.pi * 2.0 ** np.arange(4) * float(t)
    return np.concatenate([np.sin(w), np.cos(w)])


def _grid_positions(side: int) -> np.ndarray:
    idx = np.indices((side, side, side)).reshape(3, -1).T
    return idx


_POSENC_CACHE: dict = {}


def _grid_posenc(side: int) -> np.ndarray:
    if side not in _POSENC_CACHE:
        _POSENC_CACHE[side] = positional_encoding(_grid_positions(side), side)
    return _POSENC_CACHE[side]


def _assemble_rows(net, feat, posenc, t, class_id, pooled=None):
    """Stack per-row inputs. ``pooled`` defaults to the mean of ``feat``."""
    n = feat.shape[0]
    if feat.shape[1] != net.channels:
        raise DimensionError(
            f"state has {feat.shape[1]} channels, net expects {net.channels}"
        )
    if not 0 <= int(class_id) < net.num_classes:
        raise DimensionError(f"class_id {class_id} outside [0, {net.num_classes})")
    te = np.broadcast_to(time_embedding(t), (n, TIME_DIM))
    onehot = np.zeros((n, net.num_classes))
    onehot[:, int(class_id)] = 1.0
    if pooled is None:
        pooled = feat.mean(axis=0)
    pooled_rows = np.broadcast_to(pooled, (n, net.channels))
    return np.concatenate([feat, posenc, te, onehot, pooled_rows], axis=1)


def _forward_rows(net, x_rows):
    p = net.params
    a1 = x_rows @ p["W1"] + p["b1"]
    h1 = np.tanh(a1)
    a2 = h1 @ p["W2"] + p["b2"]
    h2 = np.tanh(a2)
    out = h2 @ p["W3"] + p["b3"]
    return out, (x_rows, h1, h2)


def _backward_rows(net, cache, dout):
    """Standard MLP backward. Returns parameter grads and the gradient with
    respect to the assembled input rows."""
    x_rows, h1, h2 = cache
    p = net.params
    grads = {}
    grads["W3"] = h2.T @ dout
    grads["b3"] = dout.sum(axis=0)
    dh2 = dout @ p["W3"].T
    da2 = dh2 * (1.0 - h2**2)
    grads["W2"] = h1.T @ da2
    grads["b2"] = da2.sum(axis=0)
    dh1 = da2 @ p["W2"].T
    da1 = dh1 * (1.0 - h1**2)
    grads["W1"] = x_rows.T @ da1
    grads["b1"] = da1.sum(axis=0)
    dx_rows = da1 @ p["W1"].T
    return grads, dx_rows


def _feat_grad_from_rows(net, dx_rows):
    """Fold the assembled-row gradient back onto the per-row features,
    including the mean-pool path."""
    c = net.channels
    dfeat = dx_rows[:, :c].copy()
    pooled_grad = dx_rows[:, -c:].sum(axis=0) / dx_rows.shape[0]
    dfeat += pooled_grad
    return dfeat


def _state_rows(net, state):
    """(feature rows, posenc rows, reshaper) for either state kind."""
    if isinstance(state, FeatureGrid):
        if net.stage != STAGE_SPARSE:
            raise DimensionError("dense grid fed to a structured-latent net")
        side = state.dims[0]
        feat = state.data.reshape(-1, state.channels)
        pe = _grid_posenc(side)
        rebuild = lambda rows: FeatureGrid(rows.reshape(*state.dims, net.channels))
        return feat, pe, rebuild
    if isinstance(state, SparseLatent):
        if net.stage != STAGE_SLAT:
            raise DimensionError("sparse latent fed to a dense-grid net")
        feat = state.values
        pe = positional_encoding(state.positions, state.side)
        rebuild = lambda rows: state.with_values(rows)
        return feat, pe, rebuild
    raise DimensionError(f"unsupported state type {type(state).__name__}")


def forward(net: VectorFieldNet, state, t: float, class_id: int):
    """Velocity of the same shape as ``state``. Deterministic and finite."""
    if not 0.0 <= t <= 1.0:
        raise DimensionError(f"t must lie in [0, 1], got {t}")
    feat, pe, rebuild = _state_rows(net, state)
    rows = _assemble_rows(net, feat, pe, t, class_id)
    out, _ = _forward_rows(net, rows)
    return rebuild(out)


def forward_with_vjp(net: VectorFieldNet, state, t: float, class_id: int):
    """Forward pass plus a vector-Jacobian product closure.

    ``vjp(dout)`` maps a cotangent of the output rows to
    (parameter gradients, gradient w.r.t. the input feature rows); the input
    gradient includes the mean-pool contribution.
    """
    feat, pe, rebuild = _state_rows(net, state)
    rows = _assemble_rows(net, feat, pe, t, class_id)
    out, cache = _forward_rows(net, rows)

    def vjp(dout_rows):
        grads, dx_rows = _backward_rows(net, cache, dout_rows)
        return grads, _feat_grad_from_rows(net, dx_rows)

    return rebuild(out), vjp


def _values_of(state):
    return state.data.reshape(-1, state.data.shape[-1]) if isinstance(state, FeatureGrid) \
        else state.values


def cfm_loss(net: VectorFieldNet, x0, eps, t: float, class_id: int):
    """Conditional flow-matching loss at noise level t and its parameter
    gradients.

    loss = mean over entries of (v(x(t), t) - (eps - x0))^2 with
    x(t) = (1 - t) x0 + t eps.
    """
    x0_vals, eps_vals = _values_of(x0), _values_of(eps)
    if x0_vals.shape != eps_vals.shape:
        raise DimensionError(f"x0 {x0_vals.shape} and eps {eps_vals.shape} differ")
    feat0, pe, _ = _state_rows(net, x0)
    xt = (1.0 - t) * x0_vals + t * eps_vals
    target = eps_vals - x0_vals
    rows = _assemble_rows(net, xt, pe, t, class_id)
    out, cache = _forward_rows(net, rows)
    resid = out - target
    loss = float(np.mean(resid**2))
    dout = 2.0 * resid / resid.size
    grads, _ = _backward_rows(net, cache, dout)
    return loss, grads


# ------------------------------------------------------------------- Adam

@dataclass
class AdamState:
    """First/second moment accumulators over a dict of named arrays."""

    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: dict) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(v) for k, v in params.items()},
        v={k: np.zeros_like(v) for k, v in params.items()},
    )


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> dict:
    """One bias-corrected Adam update. Mutates ``state``, returns new params."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    out = {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise DimensionError(f"grad shape {g.shape} != param shape {p.shape} for {k}")
        state.m[k] = b1 * state.m[k] + (1 - b1) * g
        state.v[k] = b2 * state.v[k] + (1 - b2) * g**2
        m_hat = state.m[k] / (1 - b1**state.step)
        v_hat = state.v[k] / (1 - b2**state.step)
        out[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return out


# ---------------------------------------------------------------- training

@dataclass
class TrainConfig:
    steps: int = 2000
    batch: int = 4
    lr: float = 3e-3
    lr_final: float | None = None   # linear decay target; None keeps lr constant
    seed: int = 0
    row_subsample: int = 1024   # rows (voxels/actives) drawn per asset per step
    smooth_window: int = 50

    def lr_at(self, step: int) -> float:
        if self.lr_final is None or self.steps <= 1:
            return self.lr
        frac = step / (self.steps - 1)
        return self.lr + frac * (self.lr_final - self.lr)


@dataclass
class Checkpoint:
    """Serializable trained net: float32 parameter blob plus metadata."""

    stage: str
    channels: int
    num_classes: int
    params32: dict
    metadata: dict = field(default_factory=dict)


def checkpoint_from_net(net: VectorFieldNet, metadata=None) -> Checkpoint:
    return Checkpoint(
        stage=net.stage,
        channels=net.channels,
        num_classes=net.num_classes,
        params32={k: v.astype(np.float32) for k, v in net.params.items()},
        metadata=dict(metadata or {}),
    )


def net_from_checkpoint(ckpt: Checkpoint) -> VectorFieldNet:
    params = {k: v.astype(np.float64) for k, v in ckpt.params32.items()}
    return VectorFieldNet(ckpt.stage, ckpt.channels, ckpt.num_classes, params)


def _dataset_rows(stage, assets):
    """Per-asset (x0 rows, posenc rows, side, class_id) tuples."""
    from .shapes import encode_slat_target, encode_sparse_target

    items = []
    for asset in assets:
        if stage == STAGE_SPARSE:
            grid = encode_sparse_target(asset)
            feat = grid.data.reshape(-1, grid.channels)
            pe = _grid_posenc(asset.side)
        else:
            slat = encode_slat_target(asset)
            feat = slat.values
            pe = positional_encoding(slat.positions, slat.side)
        items.append((feat, pe, asset.class_id))
    return items


def train(net: VectorFieldNet, assets, config: TrainConfig,
          resume=None, callback=None):
    """CFM-train ``net`` on encoded assets. Deterministic given config.seed:
    every step draws its randomness from a seed derived as
    hash(seed, "train/<step>"), so runs are resumable bit-exactly.

    Returns (checkpoint, loss_curve, final_state) where final_state is the
    float64 (params, adam, step) triple a resume file would carry.
    """
    if not assets:
        raise TrainingError("empty dataset")
    items = _dataset_rows(net.stage, assets)
    params = {k: v.copy() for k, v in net.params.items()}
    adam = init_adam(params)
    curve = []
    start = 0
    if resume is not None:
        params, adam, start, curve = resume
        params = {k: v.copy() for k, v in params.items()}
        curve = list(curve)

    for step in range(start, config.steps):
        rng = Rng(derive_seed(config.seed, f"train/{step}"))
        picks = rng.integers(0, len(items), config.batch)
        row_blocks = []
        target_blocks = []
        for i in picks:
            feat, pe, class_id = items[int(i)]
            t = float(rng.uniform())
            eps = rng.standard_normal(feat.shape)
            n_rows = feat.shape[0]
            if config.row_subsample and config.row_subsample < n_rows:
                rows_idx = rng.integers(0, n_rows, config.row_subsample)
                feat_s, pe_s, eps_s = feat[rows_idx], pe[rows_idx], eps[rows_idx]
            else:
                feat_s, pe_s, eps_s = feat, pe, eps
            xt = (1.0 - t) * feat_s + t * eps_s
            # pooled feature over the sampled rows (unbiased estimate of the
            # full-state mean the sampler will present at inference)
            rows = _assemble_rows(net, xt, pe_s, t, class_id)
            row_blocks.append(rows)
            target_blocks.append(eps_s - feat_s)
        x_all = np.concatenate(row_blocks, axis=0)
        tgt_all = np.concatenate(target_blocks, axis=0)
        tmp_net = VectorFieldNet(net.stage, net.channels, net.num_classes, params)
        out, cache = _forward_rows(tmp_net, x_all)
        resid = out - tgt_all
        loss = float(np.mean(resid**2))
        if not np.isfinite(loss):
            raise TrainingError(f"CFM loss diverged at step {step}", step=step)
        grads, _ = _backward_rows(tmp_net, cache, 2.0 * resid / resid.size)
        params = adam_step(params, grads, adam, config.lr_at(step))
        curve.append(loss)
        if callback is not None:
            callback(step, loss)

    net.params = params
    w = config.smooth_window
    smooth = lambda xs: float(np.mean(xs)) if xs else float("nan")
    meta = {
        "steps": config.steps,
        "batch": config.batch,
        "lr": config.lr,
        "lr_final": config.lr_final,
        "seed": config.seed,
        "row_subsample": config.row_subsample,
        "hidden": HIDDEN,
        "initial_smoothed_loss": smooth(curve[:w]),
        "final_smoothed_loss": smooth(curve[-w:]),
    }
    ckpt = checkpoint_from_net(net, metadata=meta)
    return ckpt, curve, (params, adam, config.steps)


def smoothed_curve(curve, window: int = 50) -> np.ndarray:
    """Trailing moving average of a loss curve."""
    xs = np.asarray(curve, dtype=np.float64)
    if xs.size == 0:
        return xs
    csum = np.cumsum(np.insert(xs, 0, 0.0))
    out = np.empty_like(xs)
    for i in range(xs.size):
        lo = max(0, i - window + 1)
        out[i] = (csum[i + 1] - csum[lo]) / (i + 1 - lo)
    return out


# ------------------------------------------------------------ serialization

_CKPT_MAGIC = b"SLATCKPT"
_RESUME_MAGIC = b"SLATRSUM"


def save_checkpoint(ckpt: Checkpoint, path):
    header = {
        "stage": ckpt.stage,
        "channels": ckpt.channels,
        "num_classes": ckpt.num_classes,
        "hidden": HIDDEN,
        "pos_dim": POS_DIM,
        "time_dim": TIME_DIM,
        "param_order": list(_PARAM_ORDER),
        "shapes": {k: list(ckpt.params32[k].shape) for k in _PARAM_ORDER},
        "metadata": ckpt.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(_CKPT_MAGIC)
        fh.write(struct.pack("<II", 1, len(blob)))
        fh.write(blob)
        for k in _PARAM_ORDER:
            fh.write(ckpt.params32[k].astype("<f4").tobytes())


def load_checkpoint(path) -> Checkpoint:
    raw = Path(path).read_bytes()
    if raw[:8] != _CKPT_MAGIC:
        raise DimensionError(f"{path}: not a slatpaint checkpoint")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != 1:
        raise DimensionError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[16:16 + hlen].decode())
    offset = 16 + hlen
    params32 = {}
    for k in header["param_order"]:
        shape = tuple(header["shapes"][k])
        count = int(np.prod(shape))
        params32[k] = np.frombuffer(
            raw[offset:offset + 4 * count], dtype="<f4"
        ).reshape(shape).copy()
        offset += 4 * count
    return Checkpoint(
        stage=header["stage"],
        channels=header["channels"],
        num_classes=header["num_classes"],
        params32=params32,
        metadata=header.get("metadata", {}),
    )


def save_resume(path, params: dict, adam: AdamState, step: int, curve):
    header = {
        "step": step,
        "adam_step": adam.step,
        "param_order": list(_PARAM_ORDER),
        "shapes": {k: list(params[k].shape) for k in _PARAM_ORDER},
        "curve_len": len(curve),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(_RESUME_MAGIC)
        fh.write(struct.pack("<II", 1, len(blob)))
        fh.write(blob)
        for group in (params, adam.m, adam.v):
            for k in _PARAM_ORDER:
                fh.write(group[k].astype("<f8").tobytes())
        fh.write(np.asarray(curve, dtype="<f8").tobytes())


def load_resume(path):
    raw = Path(path).read_bytes()
    if raw[:8] != _RESUME_MAGIC:
        raise DimensionError(f"{path}: not a slatpaint resume file")
    _, hlen = struct.unpack("<II", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode())
    offset = 16 + hlen

    def read_group():
        nonlocal offset
        group = {}
        for k in header["param_order"]:
            shape = tuple(header["shapes"][k])
            count = int(np.prod(shape))
            group[k] = np.frombuffer(
                raw[offset:offset + 8 * count], dtype="<f8"
            ).reshape(shape).copy()
            offset += 8 * count
        return group

    params, m, v = read_group(), read_group(), read_group()
    curve = np.frombuffer(
        raw[offset:offset + 8 * header["curve_len"]], dtype="<f8"
    ).tolist()
    adam = AdamState(m=m, v=v, step=header["adam_step"])
    return params, adam, header["step"], curve
