"""Per-scale keypoint heatmap loss and the structure-aware variant.

All loss functions accept `HeatmapStack`s whose values are numpy arrays or
torch tensors, batched or not, and reduce the same way in both backends:
mean over keypoints, sum over pixels, mean over any batch dimension. The
forward values are defined exactly so any differentiation scheme can be
checked against finite differences (see `structure_aware_loss_grad`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .heatmaps import HeatmapPyramid, HeatmapStack
from .skeleton import NUM_KEYPOINTS, KeypointId, SkeletalGraph


@dataclass
class LossConfig:
    """Weights and switches for the structure-aware training loss."""

    alpha: float = 0.5                      # structural-term weight
    scale_weights: tuple[float, ...] | None = None  # per-level weights, None = all 1
    combine: str = "sum"                    # neighbor-map combination: sum | max
    mask_unannotated: bool = False          # drop channels whose GT map is all-zero
    reduction: str = field(default="mean over keypoints, sum over pixels and scales",
                           init=False)

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.scale_weights is not None:
            self.scale_weights = tuple(float(w) for w in self.scale_weights)
            if any(w < 0 for w in self.scale_weights):
                raise ValueError(f"scale_weights must be >= 0, got {self.scale_weights}")
        if self.combine not in ("sum", "max"):
            raise ValueError(f"combine must be 'sum' or 'max', got {self.combine!r}")

    def weight_for_scale(self, i: int) -> float:
        if self.scale_weights is None:
            return 1.0
        if i >= len(self.scale_weights):
            raise ValueError(f"no scale weight for level {i} in {self.scale_weights}")
        return self.scale_weights[i]


@dataclass
class StructuralHeatmap:
    """Per-keypoint maps combined with their graph neighbors' maps."""

    values: object
    scale_id: int = 0


def _check_pair(pred: HeatmapStack, gt: HeatmapStack) -> None:
    if tuple(pred.values.shape) != tuple(gt.values.shape):
        raise ValueError(
            f"shape mismatch: pred {tuple(pred.values.shape)} vs gt {tuple(gt.values.shape)}")
    if pred.scale_id != gt.scale_id:
        raise ValueError(f"scale mismatch: pred {pred.scale_id} vs gt {gt.scale_id}")


def _channel_sq_sums(diff):
    """Sum of squares over pixels, keeping (..., 16) channel sums."""
    return (diff * diff).sum(-1).sum(-1)


def _reduce(channel_sums, mask=None):
    """Mean over keypoints (fixed 1/N), mean over batch if present."""
    if mask is not None:
        channel_sums = channel_sums * mask
    total = channel_sums.sum(-1) / NUM_KEYPOINTS
    if hasattr(total, "ndim") and total.ndim > 0:
        total = total.mean()
    return total


def _annotation_mask(gt_values):
    """1.0 where the GT channel has any mass, 0.0 for all-zero channels."""
    mass = (gt_values * gt_values).sum(-1).sum(-1)
    return (mass > 0) * 1.0 + (mass <= 0) * 0.0


def heatmap_loss(pred: HeatmapStack, gt: HeatmapStack,
                 cfg: LossConfig | None = None):
    """Squared-error heatmap loss: mean over keypoints of per-pixel SSE."""
    _check_pair(pred, gt)
    mask = None
    if cfg is not None and cfg.mask_unannotated:
        mask = _annotation_mask(gt.values)
    return _reduce(_channel_sq_sums(pred.values - gt.values), mask)


def build_structural_maps(stack: HeatmapStack, graph: SkeletalGraph,
                          combine: str = "sum") -> StructuralHeatmap:
    """Combine each keypoint's map with its graph neighbors' maps pixel-wise."""
    values = stack.values
    if combine == "sum":
        mat = graph.structural_matrix()
        if isinstance(values, np.ndarray):
            a = mat.astype(values.dtype)
        else:
            import torch
            a = torch.as_tensor(mat, dtype=values.dtype, device=values.device)
        shape = values.shape
        flat = values.reshape(*shape[:-2], shape[-2] * shape[-1])
        combined = (a @ flat).reshape(shape)
    elif combine == "max":
        members = [[int(k)] + sorted(int(j) for j in graph.neighbors(k))
                   for k in KeypointId]
        if isinstance(values, np.ndarray):
            maps = [values[..., idx, :, :].max(axis=-3) for idx in members]
            combined = np.stack(maps, axis=-3)
        else:
            import torch
            maps = [values[..., idx, :, :].max(dim=-3).values for idx in members]
            combined = torch.stack(maps, dim=-3)
    else:
        raise ValueError(f"unknown combine mode {combine!r}")
    return StructuralHeatmap(combined, scale_id=stack.scale_id)


def structure_aware_loss_terms(pred: HeatmapStack, gt: HeatmapStack,
                               graph: SkeletalGraph, cfg: LossConfig):
    """Return (keypoint term, alpha-weighted structural term) separately."""
    _check_pair(pred, gt)
    mask = _annotation_mask(gt.values) if cfg.mask_unannotated else None
    ms = _reduce(_channel_sq_sums(pred.values - gt.values), mask)
    if cfg.alpha == 0:
        return ms, ms * 0
    pred_s = build_structural_maps(pred, graph, cfg.combine).values
    gt_s = build_structural_maps(gt, graph, cfg.combine).values
    sa = _reduce(_channel_sq_sums(pred_s - gt_s), mask)
    return ms, cfg.alpha * sa


def structure_aware_loss(pred: HeatmapStack, gt: HeatmapStack,
                         graph: SkeletalGraph, cfg: LossConfig):
    """Keypoint heatmap loss plus the alpha-weighted structural matching term."""
    ms, sa = structure_aware_loss_terms(pred, gt, graph, cfg)
    return ms + sa


def structure_aware_loss_grad(pred: HeatmapStack, gt: HeatmapStack,
                              graph: SkeletalGraph, cfg: LossConfig) -> np.ndarray:
    """Analytic gradient of the loss w.r.t. every predicted pixel.

    Closed form for the default sum combination on an unbatched numpy stack;
    the reference against which finite differences and autodiff are checked.
    """
    if cfg.combine != "sum":
        raise NotImplementedError("analytic gradient only for sum combination")
    p = np.asarray(pred.values, dtype=np.float64)
    g = np.asarray(gt.values, dtype=np.float64)
    if p.ndim != 3:
        raise ValueError("gradient is defined for unbatched stacks")
    diff = p - g
    mask = None
    if cfg.mask_unannotated:
        mask = _annotation_mask(g)[:, None, None]
        grad = (2.0 / NUM_KEYPOINTS) * mask * diff
    else:
        grad = (2.0 / NUM_KEYPOINTS) * diff
    if cfg.alpha > 0:
        a = graph.structural_matrix()
        flat = diff.reshape(NUM_KEYPOINTS, -1)
        structural = a @ flat
        if mask is not None:
            structural = structural * mask[:, :, 0]
        back = (a.T @ structural).reshape(p.shape)
        grad = grad + (2.0 * cfg.alpha / NUM_KEYPOINTS) * back
    return grad


def total_training_loss(outputs, gt: HeatmapPyramid, graph: SkeletalGraph,
                        cfg: LossConfig):
    """Structure-aware loss summed over every stack and scale, plus the
    final fused output against the finest-scale ground truth.

    `outputs` is a model `NetworkOutput`: `per_stack` pyramids supervised
    level-by-level with the configured scale weights, and `final` (may be
    None when the fusion head is ablated) supervised unweighted at scale 0.
    """
    total = None
    for pyramid in outputs.per_stack:
        if pyramid.depth > gt.depth:
            raise ValueError(f"output pyramid depth {pyramid.depth} exceeds gt depth {gt.depth}")
        for i, stack in enumerate(pyramid):
            w = cfg.weight_for_scale(i)
            if w == 0:
                continue
            term = w * structure_aware_loss(stack, gt.stacks[i], graph, cfg)
            total = term if total is None else total + term
    if outputs.final is not None:
        term = structure_aware_loss(outputs.final, gt.stacks[0], graph, cfg)
        total = term if total is None else total + term
    if total is None:
        raise ValueError("no supervised outputs: all scale weights zero and no final head")
    return total
