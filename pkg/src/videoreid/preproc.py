"""Frame preprocessing: YUV conversion, Lucas-Kanade flow, resize,
normalization, and training-time augmentation.

The network consumes (5, 56, 40) stacks with fixed channel order
Y, U, V, flow-x, flow-y. Training tracks are prepared at 72 x 56 so a
random 56 x 40 crop keeps an 8-pixel margin on every side; evaluation
uses the center crop of the same representation so person scale matches
between train and test.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

TARGET_ROWS = 56
TARGET_COLS = 40
CROP_MARGIN = 8
AUG_ROWS = TARGET_ROWS + 2 * CROP_MARGIN
AUG_COLS = TARGET_COLS + 2 * CROP_MARGIN
CHANNEL_NAMES = ("y", "u", "v", "flow_x", "flow_y")
FLOW_X_CHANNEL = 3

# BT.601 weights; U/V scaled per the classic analog definition.
_YR, _YG, _YB = 0.299, 0.587, 0.114
_U_SCALE = 0.492
_V_SCALE = 0.877


def load_frame(path) -> np.ndarray:
    """Read a PNG/PPM frame as (H, W, 3) uint8 RGB."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def rgb_to_yuv(frame: np.ndarray) -> np.ndarray:
    """BT.601 RGB -> YUV on [0,1]-scaled inputs, returned as (3, H, W).

    Y = 0.299 R + 0.587 G + 0.114 B; U = 0.492 (B - Y); V = 0.877 (R - Y).
    """
    arr = np.asarray(frame)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) RGB frame, got shape {arr.shape}")
    rgb = arr.astype(np.float64)
    if arr.dtype == np.uint8:
        rgb = rgb / 255.0
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    y = _YR * r + _YG * g + _YB * b
    u = _U_SCALE * (b - y)
    v = _V_SCALE * (r - y)
    return np.stack([y, u, v])


def luma(frame: np.ndarray) -> np.ndarray:
    """Y channel of a frame, as a (H, W) grid on [0, 1]."""
    return rgb_to_yuv(frame)[0]


@dataclass
class FlowField:
    """Per-pixel (u, v) displacement in pixels per frame.

    u is horizontal (columns), v vertical (rows). `degenerate` marks
    pixels whose structure tensor was too flat to solve; their flow is
    pinned to zero.
    """

    u: np.ndarray
    v: np.ndarray
    degenerate: np.ndarray

    def __post_init__(self):
        if self.u.shape != self.v.shape or self.u.shape != self.degenerate.shape:
            raise ValueError("flow components and degeneracy mask must share one grid")


def _box_sum(a: np.ndarray, window: int) -> np.ndarray:
    """Windowed sum with zero padding outside the grid, via an integral image."""
    half = window // 2
    padded = np.pad(a, (half + 1, half))
    ii = padded.cumsum(axis=0).cumsum(axis=1)
    return (
        ii[window:, window:]
        + ii[:-window, :-window]
        - ii[window:, :-window]
        - ii[:-window, window:]
    )


def lucas_kanade_flow(prev: np.ndarray, nxt: np.ndarray, window: int = 5, min_eig: float = 1e-4) -> FlowField:
    """Single-level Lucas-Kanade optical flow between two luma grids.

    Solves the windowed least-squares brightness-constancy system
    [sum Ix^2, sum IxIy; sum IxIy, sum Iy^2] [u; v] = -[sum IxIt; sum IyIt]
    per pixel. Pixels whose structure tensor has smallest eigenvalue below
    `min_eig` (intensities assumed on [0, 1]) get zero flow and are
    flagged degenerate.
    """
    prev = np.asarray(prev, dtype=np.float64)
    nxt = np.asarray(nxt, dtype=np.float64)
    if prev.shape != nxt.shape:
        raise ValueError(f"frame grids differ: {prev.shape} vs {nxt.shape}")
    if prev.ndim != 2:
        raise ValueError(f"expected 2-D luma grids, got rank {prev.ndim}")
    if window % 2 == 0 or window < 1:
        raise ValueError("window must be odd and positive")

    iy, ix = np.gradient(prev)
    it = nxt - prev

    sxx = _box_sum(ix * ix, window)
    sxy = _box_sum(ix * iy, window)
    syy = _box_sum(iy * iy, window)
    sxt = _box_sum(ix * it, window)
    syt = _box_sum(iy * it, window)

    half_trace = 0.5 * (sxx + syy)
    lam_min = half_trace - np.sqrt((0.5 * (sxx - syy)) ** 2 + sxy * sxy)
    ok = lam_min >= min_eig

    det = sxx * syy - sxy * sxy
    safe_det = np.where(ok, det, 1.0)
    u = np.where(ok, (-syy * sxt + sxy * syt) / safe_det, 0.0)
    v = np.where(ok, (sxy * sxt - sxx * syt) / safe_det, 0.0)
    return FlowField(u=u, v=v, degenerate=~ok)


def resize_bilinear(grid: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Corner-aligned bilinear resampling of a 2-D grid.

    Output corners sample input corners exactly, so affine ramps are
    preserved and a same-size resize is the identity.
    """
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim != 2:
        raise ValueError(f"expected 2-D grid, got rank {grid.ndim}")
    in_rows, in_cols = grid.shape
    if in_rows < 2 or in_cols < 2:
        raise ValueError("source grid must be at least 2 x 2")

    r = np.linspace(0.0, in_rows - 1.0, rows)
    c = np.linspace(0.0, in_cols - 1.0, cols)
    r0 = np.minimum(r.astype(np.int64), in_rows - 2)
    c0 = np.minimum(c.astype(np.int64), in_cols - 2)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]

    tl = grid[np.ix_(r0, c0)]
    tr = grid[np.ix_(r0, c0 + 1)]
    bl = grid[np.ix_(r0 + 1, c0)]
    br = grid[np.ix_(r0 + 1, c0 + 1)]
    top = tl + (tr - tl) * fc
    bottom = bl + (br - bl) * fc
    return top + (bottom - top) * fr


def assemble_input(yuv: np.ndarray, flow_u: np.ndarray, flow_v: np.ndarray) -> np.ndarray:
    """Stack Y, U, V, flow-x, flow-y into one (5, H, W) frame tensor."""
    yuv = np.asarray(yuv, dtype=np.float64)
    if yuv.ndim != 3 or yuv.shape[0] != 3:
        raise ValueError(f"expected (3, H, W) color channels, got shape {yuv.shape}")
    if flow_u.shape != yuv.shape[1:] or flow_v.shape != yuv.shape[1:]:
        raise ValueError("flow grids must match the color spatial extents")
    return np.concatenate([yuv, flow_u[None], flow_v[None]]).astype(np.float64)


@dataclass
class ChannelStats:
    """Per-channel mean and standard deviation computed on training data."""

    mean: np.ndarray
    std: np.ndarray

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.mean, dtype=np.float64), np.asarray(self.std, dtype=np.float64)


def compute_channel_stats(stacks) -> ChannelStats:
    """Population mean/std per channel over every frame of `stacks`.

    `stacks` is an iterable of (T, 5, H, W) arrays. A channel with zero
    spread keeps std = 1 and triggers a warning, so constant channels
    normalize to zero instead of NaN.
    """
    stacks = list(stacks)
    if not stacks:
        raise ValueError("cannot compute statistics from an empty training set")
    frames = np.concatenate([np.asarray(s, dtype=np.float64) for s in stacks], axis=0)
    mean = frames.mean(axis=(0, 2, 3))
    std = frames.std(axis=(0, 2, 3))
    zero = std == 0.0
    if np.any(zero):
        names = [CHANNEL_NAMES[i] for i in np.nonzero(zero)[0]]
        warnings.warn(f"zero variance in channel(s) {names}; using std = 1", RuntimeWarning)
        std = np.where(zero, 1.0, std)
    return ChannelStats(mean=mean, std=std)


def apply_channel_stats(stack: np.ndarray, stats: ChannelStats) -> np.ndarray:
    """(x - mean) / std per channel; accepts (5, H, W) or (T, 5, H, W)."""
    mean, std = stats.as_arrays()
    arr = np.asarray(stack, dtype=np.float64)
    if arr.ndim == 3:
        return (arr - mean[:, None, None]) / std[:, None, None]
    if arr.ndim == 4:
        return (arr - mean[None, :, None, None]) / std[None, :, None, None]
    raise ValueError(f"expected rank 3 or 4 stack, got rank {arr.ndim}")


def normalize_dataset(stacks) -> tuple[list[np.ndarray], ChannelStats]:
    """Compute training statistics and return the normalized training set.

    Test-time frames must be normalized with the returned stats rather
    than their own, so no test information leaks into the scaling.
    """
    stacks = [np.asarray(s, dtype=np.float64) for s in stacks]
    stats = compute_channel_stats(stacks)
    return [apply_channel_stats(s, stats) for s in stacks], stats


def preprocess_track(frames, rows: int = AUG_ROWS, cols: int = AUG_COLS) -> np.ndarray:
    """Full per-track pipeline from RGB frames to (T, 5, rows, cols) stacks.

    Flow is computed on the full-resolution Y channel between consecutive
    frames, then resized alongside the color channels. Frame i pairs with
    the flow i -> i+1; the final frame reuses the flow from its
    predecessor. A single-frame track gets zero flow.
    """
    frames = list(frames)
    if not frames:
        raise ValueError("track has no frames")
    yuvs = [rgb_to_yuv(f) for f in frames]
    lumas = [y[0] for y in yuvs]

    flows: list[FlowField] = []
    for i in range(len(frames) - 1):
        flows.append(lucas_kanade_flow(lumas[i], lumas[i + 1]))
    if len(frames) == 1:
        zero = np.zeros_like(lumas[0])
        flows.append(FlowField(u=zero, v=zero.copy(), degenerate=np.ones_like(zero, dtype=bool)))
    else:
        flows.append(flows[-1])

    out = np.empty((len(frames), 5, rows, cols), dtype=np.float64)
    for i, (yuv, flow) in enumerate(zip(yuvs, flows)):
        color = np.stack([resize_bilinear(ch, rows, cols) for ch in yuv])
        fu = resize_bilinear(flow.u, rows, cols)
        fv = resize_bilinear(flow.v, rows, cols)
        out[i] = assemble_input(color, fu, fv)
    return out


def mirror_sequence(stacks: np.ndarray) -> np.ndarray:
    """Horizontal flip of every frame; flow-x changes sign to stay physical."""
    out = np.asarray(stacks)[:, :, :, ::-1].copy()
    out[:, FLOW_X_CHANNEL] = -out[:, FLOW_X_CHANNEL]
    return out


def crop_sequence(stacks: np.ndarray, row0: int, col0: int, rows: int = TARGET_ROWS, cols: int = TARGET_COLS) -> np.ndarray:
    arr = np.asarray(stacks)
    if row0 < 0 or col0 < 0 or row0 + rows > arr.shape[2] or col0 + cols > arr.shape[3]:
        raise ValueError(
            f"crop ({row0},{col0})+({rows},{cols}) leaves the {arr.shape[2]}x{arr.shape[3]} source"
        )
    return arr[:, :, row0 : row0 + rows, col0 : col0 + cols].copy()


def center_crop(stacks: np.ndarray, rows: int = TARGET_ROWS, cols: int = TARGET_COLS) -> np.ndarray:
    """Deterministic central crop used outside of training."""
    arr = np.asarray(stacks)
    row0 = (arr.shape[2] - rows) // 2
    col0 = (arr.shape[3] - cols) // 2
    return crop_sequence(arr, row0, col0, rows, cols)


def augment(stacks: np.ndarray, rng: np.random.Generator, rows: int = TARGET_ROWS, cols: int = TARGET_COLS) -> np.ndarray:
    """Sequence-coherent random crop + mirror.

    One crop offset and one mirror decision are drawn for the whole
    sequence, so all frames transform identically and flow stays
    consistent with appearance across time.
    """
    arr = np.asarray(stacks)
    if arr.ndim != 4:
        raise ValueError(f"expected (T, 5, H, W) stacks, got rank {arr.ndim}")
    max_r = arr.shape[2] - rows
    max_c = arr.shape[3] - cols
    if max_r < 0 or max_c < 0:
        raise ValueError(f"source frames {arr.shape[2]}x{arr.shape[3]} smaller than crop {rows}x{cols}")
    row0 = int(rng.integers(0, max_r + 1))
    col0 = int(rng.integers(0, max_c + 1))
    out = crop_sequence(arr, row0, col0, rows, cols)
    if rng.integers(0, 2):
        out = mirror_sequence(out)
    return out
