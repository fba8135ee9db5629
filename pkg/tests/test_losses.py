"""Loss values, structural map combination, and gradient correctness."""

import numpy as np
import pytest

from poseforge.heatmaps import HeatmapPyramid, HeatmapStack
from poseforge.losses import (
    LossConfig,
    build_structural_maps,
    heatmap_loss,
    structure_aware_loss,
    structure_aware_loss_grad,
    structure_aware_loss_terms,
    total_training_loss,
)
from poseforge.skeleton import NUM_KEYPOINTS, KeypointId, SkeletalGraph, default_skeletal_graph

EDGE_FREE = SkeletalGraph(pair_edges=())


def random_stack(rng, shape=(NUM_KEYPOINTS, 8, 8), scale_id=0):
    return HeatmapStack(rng.uniform(0, 1, shape), scale_id=scale_id)


class FakeOutputs:
    def __init__(self, per_stack, final):
        self.per_stack = per_stack
        self.final = final


class TestHeatmapLoss:
    def test_identity_is_zero(self, rng):
        s = random_stack(rng)
        assert heatmap_loss(s, s) == 0.0

    def test_single_pixel_residual(self):
        gt = HeatmapStack(np.zeros((NUM_KEYPOINTS, 8, 8)))
        pred = HeatmapStack(np.zeros((NUM_KEYPOINTS, 8, 8)))
        pred.values[3, 2, 5] = 0.5
        # hand evaluation: 0.5^2 / 16
        assert heatmap_loss(pred, gt) == pytest.approx(0.015625, abs=1e-15)

    def test_homogeneity_doubling_residual_quadruples(self, rng):
        gt = random_stack(rng)
        delta = rng.normal(size=gt.values.shape)
        one = HeatmapStack(gt.values + delta)
        two = HeatmapStack(gt.values + 2 * delta)
        assert heatmap_loss(two, gt) == pytest.approx(4 * heatmap_loss(one, gt), rel=1e-12)

    def test_shape_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="shape"):
            heatmap_loss(random_stack(rng), random_stack(rng, (NUM_KEYPOINTS, 8, 4)))

    def test_scale_mismatch_rejected(self, rng):
        with pytest.raises(ValueError, match="scale"):
            heatmap_loss(random_stack(rng, scale_id=0), random_stack(rng, scale_id=1))

    def test_batched_matches_mean_of_singles(self, rng):
        pred = rng.uniform(0, 1, (4, NUM_KEYPOINTS, 8, 8))
        gt = rng.uniform(0, 1, (4, NUM_KEYPOINTS, 8, 8))
        batched = heatmap_loss(HeatmapStack(pred), HeatmapStack(gt))
        singles = [float(heatmap_loss(HeatmapStack(pred[b]), HeatmapStack(gt[b])))
                   for b in range(4)]
        assert batched == pytest.approx(np.mean(singles), rel=1e-12)

    def test_mask_unannotated_drops_zero_gt_channels(self, rng):
        gt_vals = np.zeros((NUM_KEYPOINTS, 8, 8))
        gt_vals[0, 4, 4] = 1.0  # only keypoint 0 annotated
        pred = random_stack(rng)
        gt = HeatmapStack(gt_vals)
        masked = heatmap_loss(pred, gt, LossConfig(mask_unannotated=True))
        only0 = ((pred.values[0] - gt_vals[0]) ** 2).sum() / NUM_KEYPOINTS
        assert masked == pytest.approx(only0, rel=1e-12)


class TestStructuralMaps:
    def test_edge_free_graph_is_identity(self, rng):
        s = random_stack(rng)
        out = build_structural_maps(s, EDGE_FREE)
        np.testing.assert_array_equal(out.values, s.values)

    def test_two_connected_peaks_appear_in_both_maps(self):
        values = np.zeros((NUM_KEYPOINTS, 8, 8))
        values[int(KeypointId.r_hip), 1, 1] = 1.0
        values[int(KeypointId.r_knee), 6, 6] = 1.0
        g = SkeletalGraph(pair_edges=((KeypointId.r_hip, KeypointId.r_knee),))
        out = build_structural_maps(HeatmapStack(values), g).values
        for k in (KeypointId.r_hip, KeypointId.r_knee):
            assert out[int(k), 1, 1] == 1.0
            assert out[int(k), 6, 6] == 1.0

    def test_pixelwise_sum_oracle(self, rng):
        s = random_stack(rng)
        g = default_skeletal_graph()
        out = build_structural_maps(s, g).values
        for k in KeypointId:
            expected = s.values[int(k)].copy()
            for j in g.neighbors(k):
                expected += s.values[int(j)]
            np.testing.assert_allclose(out[int(k)], expected, atol=1e-12)

    def test_elbow_map_includes_shoulder_and_wrist(self):
        values = np.zeros((NUM_KEYPOINTS, 8, 8))
        values[int(KeypointId.r_shoulder), 0, 0] = 1.0
        values[int(KeypointId.r_wrist), 7, 7] = 1.0
        out = build_structural_maps(HeatmapStack(values), default_skeletal_graph()).values
        elbow = out[int(KeypointId.r_elbow)]
        assert elbow[0, 0] == 1.0 and elbow[7, 7] == 1.0

    def test_max_combination(self, rng):
        s = random_stack(rng)
        g = default_skeletal_graph()
        out = build_structural_maps(s, g, combine="max").values
        for k in KeypointId:
            members = [int(k)] + [int(j) for j in g.neighbors(k)]
            np.testing.assert_array_equal(out[int(k)], s.values[members].max(axis=0))


class TestStructureAwareLoss:
    def test_alpha_zero_reduces_to_heatmap_loss(self, rng):
        pred, gt = random_stack(rng), random_stack(rng)
        g = default_skeletal_graph()
        sa = structure_aware_loss(pred, gt, g, LossConfig(alpha=0.0))
        assert sa == heatmap_loss(pred, gt)

    def test_perfect_prediction_is_zero_for_any_alpha(self, rng):
        s = random_stack(rng)
        g = default_skeletal_graph()
        for alpha in (0.0, 0.5, 2.0):
            assert structure_aware_loss(s, s, g, LossConfig(alpha=alpha)) == 0.0

    def test_edge_free_graph_alpha_one_doubles(self, rng):
        pred, gt = random_stack(rng), random_stack(rng)
        sa = structure_aware_loss(pred, gt, EDGE_FREE, LossConfig(alpha=1.0))
        assert sa == pytest.approx(2 * heatmap_loss(pred, gt), rel=1e-12)

    def test_monotone_in_alpha(self, rng):
        pred, gt = random_stack(rng), random_stack(rng)
        g = default_skeletal_graph()
        values = [float(structure_aware_loss(pred, gt, g, LossConfig(alpha=a)))
                  for a in (0.0, 0.25, 0.5, 1.0)]
        assert values == sorted(values)

    def test_permutation_equivariance(self, rng):
        pred, gt = random_stack(rng), random_stack(rng)
        g = default_skeletal_graph()
        perm = rng.permutation(NUM_KEYPOINTS)
        relabeled = {old: KeypointId(int(new)) for old, new in enumerate(perm)}
        g2 = SkeletalGraph(
            pair_edges=tuple((relabeled[int(a)], relabeled[int(b)]) for a, b in g.pair_edges),
            triplets=tuple(tuple(relabeled[int(k)] for k in t) for t in g.triplets))
        # permute channels consistently: new channel perm[k] holds old channel k
        pv = np.empty_like(pred.values)
        gv = np.empty_like(gt.values)
        pv[perm] = pred.values
        gv[perm] = gt.values
        cfg = LossConfig(alpha=0.7)
        a = structure_aware_loss(pred, gt, g, cfg)
        b = structure_aware_loss(HeatmapStack(pv), HeatmapStack(gv), g2, cfg)
        assert a == pytest.approx(b, rel=1e-12)

    def test_terms_sum_to_loss(self, rng):
        pred, gt = random_stack(rng), random_stack(rng)
        g = default_skeletal_graph()
        cfg = LossConfig(alpha=0.5)
        ms, sa = structure_aware_loss_terms(pred, gt, g, cfg)
        assert ms + sa == structure_aware_loss(pred, gt, g, cfg)
        assert ms == heatmap_loss(pred, gt)

    def test_rejects_negative_alpha(self):
        with pytest.raises(ValueError):
            LossConfig(alpha=-0.1)


def finite_difference_grad(pred, gt, graph, cfg, step=1e-4):
    """Central finite differences of the loss over every pred pixel."""
    base = pred.values.copy()
    grad = np.zeros_like(base)
    it = np.nditer(base, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        bumped = base.copy()
        bumped[idx] = base[idx] + step
        hi = float(structure_aware_loss(HeatmapStack(bumped), gt, graph, cfg))
        bumped[idx] = base[idx] - step
        lo = float(structure_aware_loss(HeatmapStack(bumped), gt, graph, cfg))
        grad[idx] = (hi - lo) / (2 * step)
        it.iternext()
    return grad


class TestGradients:
    @pytest.mark.parametrize("alpha", [0.0, 0.5, 1.0])
    def test_analytic_matches_finite_differences(self, rng, alpha):
        pred, gt = random_stack(rng), random_stack(rng)
        g = default_skeletal_graph()
        cfg = LossConfig(alpha=alpha)
        analytic = structure_aware_loss_grad(pred, gt, g, cfg)
        numeric = finite_difference_grad(pred, gt, g, cfg)
        rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8)
        assert rel.max() <= 1e-4

    def test_torch_autograd_matches_analytic(self, rng):
        torch = pytest.importorskip("torch")
        pred, gt = random_stack(rng), random_stack(rng)
        g = default_skeletal_graph()
        cfg = LossConfig(alpha=0.5)
        pt = torch.tensor(pred.values, dtype=torch.float64, requires_grad=True)
        gt_t = torch.tensor(gt.values, dtype=torch.float64)
        loss = structure_aware_loss(HeatmapStack(pt), HeatmapStack(gt_t), g, cfg)
        loss.backward()
        analytic = structure_aware_loss_grad(pred, gt, g, cfg)
        np.testing.assert_allclose(pt.grad.numpy(), analytic, rtol=1e-10, atol=1e-12)


class TestTotalTrainingLoss:
    def _pyramid(self, rng, base=16, depth=3):
        stacks = [random_stack(rng, (NUM_KEYPOINTS, base >> i, base >> i), scale_id=i)
                  for i in range(depth)]
        return HeatmapPyramid(stacks)

    def test_perfect_outputs_zero(self, rng):
        gt = self._pyramid(rng)
        outputs = FakeOutputs([gt, gt], gt.stacks[0])
        g = default_skeletal_graph()
        assert total_training_loss(outputs, gt, g, LossConfig()) == 0.0

    def test_single_stack_single_scale_alpha_zero(self, rng):
        gt = self._pyramid(rng, depth=1)
        pred = self._pyramid(rng, depth=1)
        outputs = FakeOutputs([pred], None)
        got = total_training_loss(outputs, gt, default_skeletal_graph(), LossConfig(alpha=0.0))
        assert got == heatmap_loss(pred.stacks[0], gt.stacks[0])

    def test_two_identical_stacks_double_single(self, rng):
        gt = self._pyramid(rng)
        pred = self._pyramid(rng)
        g = default_skeletal_graph()
        cfg = LossConfig()
        one = total_training_loss(FakeOutputs([pred], None), gt, g, cfg)
        two = total_training_loss(FakeOutputs([pred, pred], None), gt, g, cfg)
        assert two == pytest.approx(2 * one, rel=1e-12)

    def test_final_head_supervised_at_scale_zero(self, rng):
        gt = self._pyramid(rng)
        final = random_stack(rng, (NUM_KEYPOINTS, 16, 16))
        got = total_training_loss(FakeOutputs([], final), gt,
                                  default_skeletal_graph(), LossConfig(alpha=0.0))
        assert got == heatmap_loss(final, gt.stacks[0])

    def test_scale_weights_select_levels(self, rng):
        gt = self._pyramid(rng)
        pred = self._pyramid(rng)
        g = default_skeletal_graph()
        finest_only = LossConfig(alpha=0.0, scale_weights=(1.0, 0.0, 0.0))
        got = total_training_loss(FakeOutputs([pred], None), gt, g, finest_only)
        assert got == heatmap_loss(pred.stacks[0], gt.stacks[0])

    def test_all_zero_supervision_rejected(self, rng):
        gt = self._pyramid(rng)
        pred = self._pyramid(rng)
        cfg = LossConfig(scale_weights=(0.0, 0.0, 0.0))
        with pytest.raises(ValueError):
            total_training_loss(FakeOutputs([pred], None), gt,
                                default_skeletal_graph(), cfg)
