"""Ground-truth heatmap synthesis, multi-scale pyramids, and peak decoding."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .skeleton import NUM_KEYPOINTS, KeypointSet, Visibility


@dataclass
class HeatmapStack:
    """16 per-keypoint confidence maps at one scale.

    `values` has shape (16, H, W), or (B, 16, H, W) for batched model
    outputs, and may be a numpy array or a torch tensor. `scale_id` 0 is
    full heatmap resolution; level i is downsampled by 2**i.
    """

    values: object
    scale_id: int = 0

    def __post_init__(self):
        shape = tuple(self.values.shape)
        if len(shape) not in (3, 4) or shape[-3] != NUM_KEYPOINTS:
            raise ValueError(f"expected (..., 16, H, W) heatmaps, got {shape}")
        if shape[-1] < 1 or shape[-2] < 1:
            raise ValueError(f"empty heatmap grid {shape}")

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.values.shape[-2:])


@dataclass
class HeatmapPyramid:
    """Ordered heatmap stacks for scales 0..depth-1 (finest first)."""

    stacks: list[HeatmapStack]

    def __post_init__(self):
        if not self.stacks:
            raise ValueError("pyramid needs at least one level")
        h, w = self.stacks[0].resolution
        for i, stack in enumerate(self.stacks):
            if stack.scale_id != i:
                raise ValueError(f"level {i} carries scale_id {stack.scale_id}")
            if stack.resolution != (h >> i, w >> i):
                raise ValueError(
                    f"level {i} is {stack.resolution}, expected {(h >> i, w >> i)}")

    @property
    def base_resolution(self) -> tuple[int, int]:
        return self.stacks[0].resolution

    @property
    def depth(self) -> int:
        return len(self.stacks)

    def __iter__(self):
        return iter(self.stacks)


def render_gt_heatmaps(keypoints: KeypointSet, resolution: tuple[int, int],
                       sigma: float = 1.0, truncate: float | None = None) -> HeatmapStack:
    """Render one unit-peak Gaussian per annotated keypoint.

    Keypoint positions must already be in heatmap-grid coordinates. Maps of
    unannotated keypoints are all-zero. `truncate` optionally cuts the
    Gaussian off beyond that many sigmas (speed knob; exact by default).
    """
    h, w = resolution
    if h < 1 or w < 1:
        raise ValueError(f"bad resolution {resolution}")
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    annotated = keypoints.annotated
    if not np.all(np.isfinite(keypoints.xy[annotated])):
        raise ValueError("non-finite keypoint coordinates")

    maps = np.zeros((NUM_KEYPOINTS, h, w), dtype=np.float64)
    ys = np.arange(h, dtype=np.float64)[:, None]
    xs = np.arange(w, dtype=np.float64)[None, :]
    inv = 1.0 / (2.0 * sigma * sigma)
    for n in range(NUM_KEYPOINTS):
        if not annotated[n]:
            continue
        x0, y0 = keypoints.xy[n]
        d2 = (xs - x0) ** 2 + (ys - y0) ** 2
        if truncate is not None:
            cut = (truncate * sigma) ** 2
            g = np.where(d2 <= cut, np.exp(-d2 * inv), 0.0)
        else:
            g = np.exp(-d2 * inv)
        maps[n] = g
    return HeatmapStack(maps, scale_id=0)


def build_gt_pyramid(keypoints: KeypointSet, base_resolution: tuple[int, int],
                     depth: int, sigma: float = 1.0) -> HeatmapPyramid:
    """Render ground truth at every scale of the pyramid.

    Level i is rendered at base/2**i with keypoint coordinates rescaled by
    1/2**i and sigma kept in that level's own pixel units, so coarse levels
    keep the unit peak instead of attenuating under box-downsampling.
    """
    h, w = base_resolution
    if depth < 1:
        raise ValueError("depth must be >= 1")
    factor = 1 << (depth - 1)
    if h % factor or w % factor:
        raise ValueError(f"base resolution {base_resolution} not divisible by {factor}")
    if (h >> (depth - 1)) < 2 or (w >> (depth - 1)) < 2:
        raise ValueError(f"depth {depth} makes the coarsest level smaller than 2x2")

    stacks = []
    for i in range(depth):
        scaled = keypoints.copy()
        scaled.xy /= float(1 << i)
        stack = render_gt_heatmaps(scaled, (h >> i, w >> i), sigma=sigma)
        stack.scale_id = i
        stacks.append(stack)
    return HeatmapPyramid(stacks)


def decode_keypoints(stack: HeatmapStack) -> tuple[KeypointSet, np.ndarray]:
    """Argmax-decode peak positions and confidences from 16 heatmaps.

    Ties resolve to the first occurrence in row-major order. Returns the
    decoded KeypointSet (heatmap-grid coordinates) and the (16,) confidence
    vector of per-map maxima.
    """
    values = np.asarray(stack.values)
    if values.ndim != 3:
        raise ValueError("decode_keypoints expects an unbatched (16, H, W) stack")
    w = values.shape[-1]
    flat = values.reshape(NUM_KEYPOINTS, -1)
    idx = flat.argmax(axis=1)
    conf = flat[np.arange(NUM_KEYPOINTS), idx]
    xy = np.stack([idx % w, idx // w], axis=1).astype(np.float64)
    vis = np.where(conf >= 0, Visibility.visible, Visibility.unannotated)
    return KeypointSet(xy, vis), conf


_MAGIC = b"HMS1"


def save_heatmaps(stack: HeatmapStack, path) -> None:
    """Write a stack as magic 'HMS1', uint32 N/H/W, then float32 row-major."""
    values = np.asarray(stack.values, dtype="<f4")
    if values.ndim != 3:
        raise ValueError("only unbatched stacks serialize")
    n, h, w = values.shape
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<III", n, h, w))
        f.write(values.tobytes(order="C"))


def load_heatmaps(path) -> HeatmapStack:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"unknown file magic {magic!r} in {path}")
        n, h, w = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(n * h * w * 4), dtype="<f4")
        if data.size != n * h * w:
            raise ValueError(f"truncated heatmap file {path}")
    return HeatmapStack(data.reshape(n, h, w).astype(np.float64), scale_id=0)
