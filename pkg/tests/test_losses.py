"""
Unit tests for the loss terms and the overall objective.

Tests:
- Hand-evaluated values of every term
- Soft-label law
- Overall objective: disabled terms, hand recombination, baseline equivalence
- Weight presets and configuration validation
"""

import math
from dataclasses import replace

import numpy as np
import pytest

from lane_modulation.assignment import DenseMatch, dense_match, hungarian_assign
from lane_modulation.errors import ConfigError, DegenerateLaneError, InvalidArgumentError
from lane_modulation.geometry import (
    Frame,
    LanePolyline,
    ProposalBank,
    Scene,
    l1_cost_matrix,
    sample_controls,
    straightness_ratios,
)
from lane_modulation.gradcheck import random_controls, random_scene
from lane_modulation.losses import (
    LossWeights,
    cls_loss,
    discrimination_loss,
    diversity_loss,
    freeze_targets,
    intra_cluster_spread,
    location_loss,
    reg_loss,
    shape_loss,
    soft_label,
    soft_labels,
    sparse_loss,
    total_loss,
)

from .conftest import straight_controls

LOG2 = math.log(2.0)


def cluster(targets, active=None) -> DenseMatch:
    targets = np.asarray(targets)
    active = np.ones(len(targets), dtype=bool) if active is None else np.asarray(active)
    clusters = [list(np.flatnonzero(targets == i)) for i in range(targets.max() + 1)]
    return DenseMatch(targets=targets, active=active, clusters=clusters)


class TestRegression:
    """Tests for reg_loss."""

    @pytest.fixture
    def gt(self):
        return LanePolyline([[0.2, 1.0], [0.3, 0.8], [0.35, 0.6], [0.4, 0.4]])

    def test_identity(self, gt):
        """p = g gives 0."""
        assert reg_loss(gt, gt)[0] == 0.0

    def test_shift_x(self, gt):
        """Shift by 0.1 in x gives 0.05."""
        assert reg_loss(LanePolyline(gt.points + [0.1, 0.0]), gt)[0] == pytest.approx(0.05)

    def test_shift_both(self, gt):
        """Shift by 0.1 in both coordinates gives 0.1."""
        value, grad = reg_loss(LanePolyline(gt.points + [0.1, 0.1]), gt)
        assert value == pytest.approx(0.1)
        np.testing.assert_allclose(grad, 1.0 / 8)


class TestClassification:
    """Tests for the hard and soft binary cross-entropy."""

    def test_positive_at_half(self):
        """l = 1, p = 0.5 gives log 2."""
        assert cls_loss(0.5, 1)[0] == pytest.approx(LOG2)

    def test_confident_positive(self):
        """l = 1, p close to 1 gives ~0."""
        assert cls_loss(1.0 - 1e-12, 1)[0] == pytest.approx(0.0, abs=1e-6)

    def test_weighted_negative(self):
        """l = 0, p = 0.5, w = 2 gives 2 log 2."""
        assert cls_loss(0.5, 0, w_neg=2.0)[0] == pytest.approx(2 * LOG2)

    def test_saturated_probabilities_stay_finite(self):
        """p = 0 and p = 1 are clamped before the log."""
        assert math.isfinite(cls_loss(0.0, 1)[0])
        assert math.isfinite(cls_loss(1.0, 0)[0])

    def test_label_checked(self):
        """Labels other than 0 and 1 are rejected."""
        with pytest.raises(InvalidArgumentError):
            cls_loss(0.5, 2)

    def test_soft_positive(self):
        """l' = 1, p = 0.5 gives log 2."""
        assert discrimination_loss(0.5, 1.0)[0] == pytest.approx(LOG2)

    def test_soft_half(self):
        """l' = 0.5, p = 0.5, w = 1 gives log 2."""
        assert discrimination_loss(0.5, 0.5)[0] == pytest.approx(LOG2)

    def test_soft_minimum_at_label(self):
        """With w = 1 the logit gradient vanishes at p = l'."""
        l_prime = 0.5 + 0.5 * math.exp(-1.0)
        _, grad = discrimination_loss(l_prime, l_prime)
        assert abs(grad) < 1e-12
        assert discrimination_loss(l_prime - 0.05, l_prime)[1] < 0
        assert discrimination_loss(l_prime + 0.05, l_prime)[1] > 0

    def test_soft_label_range(self):
        """Soft labels outside [0, 1] are rejected."""
        with pytest.raises(InvalidArgumentError):
            discrimination_loss(0.5, 1.5)


class TestSoftLabel:
    """Tests for the quality-aware label."""

    def test_perfect_positive(self):
        """Positive with J_reg = 0 gives 1."""
        assert soft_label(0.0, True) == 1.0

    def test_example_value(self):
        """J_reg = 0.1, beta = 10, gamma = 0.5 gives 0.5 + 0.5/e."""
        assert soft_label(0.1, True, 10.0, 0.5) == pytest.approx(0.683940, abs=1e-6)

    def test_negative(self):
        """Negatives get 0 whatever their regression value."""
        assert soft_label(0.0, False) == 0.0

    def test_floor_and_monotone(self):
        """l' approaches gamma and decreases strictly with J_reg."""
        assert abs(soft_label(10.0, True) - 0.5) < 1e-4
        grid = np.linspace(0.0, 2.0, 100)
        values = soft_labels(grid, np.ones(100, dtype=bool), 10.0, 0.5)
        assert np.all(np.diff(values) < 0)

    def test_vectorized_matches_scalar(self):
        """soft_labels agrees with soft_label element by element."""
        reg = np.array([0.0, 0.05, 0.3, 0.2])
        positive = np.array([True, True, False, True])
        expected = [soft_label(r, p) for r, p in zip(reg, positive)]
        np.testing.assert_allclose(soft_labels(reg, positive, 10.0, 0.5), expected)

    @staticmethod
    def fit_logits(bank, scene, weights, iterations=1000):
        """Logit-only descent against matching and labels frozen at the start."""
        bank = bank.copy()
        targets = freeze_targets(bank, scene, weights)
        for _ in range(iterations):
            report = total_loss(bank, scene, weights, targets=targets)
            bank.logits -= 20.0 * report.grad_logits
        return bank, targets

    def test_positives_settle_on_soft_labels(self, two_lane_scene, small_bank):
        """With soft labels, positives converge to l' and rank inversely to their J_reg."""
        scene, _ = two_lane_scene
        bank, targets = self.fit_logits(small_bank, scene, LossWeights.preset("d"))
        positives = sorted(targets.pair_reg, key=targets.pair_reg.get)
        assert len(positives) == 2
        probs = bank.probabilities()
        np.testing.assert_allclose(probs[positives], targets.labels[positives], atol=1e-6)
        assert targets.pair_reg[positives[0]] < targets.pair_reg[positives[1]]
        assert probs[positives[0]] > probs[positives[1]]

    def test_hard_labels_do_not_separate(self, two_lane_scene, small_bank):
        """With hard labels every positive heads to 1 and the quality ranking collapses."""
        scene, _ = two_lane_scene
        hard, targets = self.fit_logits(small_bank, scene, LossWeights.preset("a"))
        soft, _ = self.fit_logits(small_bank, scene, LossWeights.preset("d"))
        positives = list(targets.pair_reg)
        hard_probs = hard.probabilities()[positives]
        soft_probs = soft.probabilities()[positives]
        assert np.all(hard_probs > 0.99)
        assert np.ptp(hard_probs) < np.ptp(soft_probs)


class TestAvailability:
    """Tests for the shape and location terms."""

    def test_straight_bank(self):
        """K straight lines give 1."""
        pts = np.stack([
            [[0, 1], [0.1, 0.5], [0.2, 0]],
            [[0.5, 1], [0.5, 0.5], [0.5, 0]],
        ]).astype(float)
        assert shape_loss(pts)[0] == pytest.approx(1.0)

    def test_mixed_bank(self):
        """S = 1 and sqrt(2) average to (1 + sqrt(2)) / 2."""
        lanes = [LanePolyline([[0, 0], [0.5, 0], [1, 0]]),
                 LanePolyline([[0, 0], [1, 0], [1, 1]])]
        value, grads = shape_loss(lanes)
        assert value == pytest.approx((1 + math.sqrt(2)) / 2)
        assert grads.shape == (2, 3, 2)

    def test_right_angle(self):
        """A single right-angle lane gives sqrt(2)."""
        assert shape_loss([LanePolyline([[0, 0], [1, 0], [1, 1]])])[0] == pytest.approx(
            math.sqrt(2))

    def test_location_identity(self, two_lane_scene):
        """Proposals on their targets give 0."""
        scene, _ = two_lane_scene
        pts = scene.gt_array()
        match = dense_match(l1_cost_matrix(pts, pts), cap=None)
        assert location_loss(pts, scene, match)[0] == 0.0

    def test_location_single_active(self):
        """One active proposal with D = 0.2 among K = 1 gives 0.2."""
        g = LanePolyline([[0.15, 1.0], [0.3, 0.6], [0.5, 0.25]])
        p = np.array([[[0.1, 1.0], [0.2, 0.6], [0.4, 0.2]]])
        scene = Scene(Frame(590, 1640), [g])
        match = dense_match(l1_cost_matrix(scene.gt_array(), p), cap=1)
        value, grads = location_loss(p, scene, match)
        assert value == pytest.approx(0.2)
        assert grads[0, 1].tolist() == [0.0, 0.0]

    def test_location_inactive_ignored(self):
        """Inactive proposals contribute nothing but still count in K."""
        g = LanePolyline([[0.5, 1.0], [0.5, 0.7], [0.5, 0.4]])
        p = np.stack([g.points + [0.01, 0.0], g.points + [0.2, 0.0]])
        scene = Scene(Frame(590, 1640), [g])
        match = dense_match(l1_cost_matrix(scene.gt_array(), p), cap=1)
        value, grads = location_loss(p, scene, match)
        assert value == pytest.approx(0.02 / 2)
        assert not grads[1].any()

    def test_location_label_free(self):
        """M = 0 gives 0 and a zero gradient."""
        pts = np.array([[[0.1, 1.0], [0.2, 0.5], [0.3, 0.2]]])
        scene = Scene(Frame(590, 1640))
        match = dense_match(np.zeros((0, 1)), cap=1)
        value, grads = location_loss(pts, scene, match)
        assert value == 0.0
        assert not grads.any()


class TestDiversity:
    """Tests for the intra-cluster diversity term."""

    def test_pair(self):
        """One cluster with S = {1.2, 1.5} gives -0.3."""
        value, grads = diversity_loss([1.2, 1.5], cluster([0, 0]))
        assert value == pytest.approx(-0.3)
        assert grads.tolist() == [1.0, -1.0]

    def test_singletons(self):
        """Singleton clusters have no pairs and give 0."""
        value, grads = diversity_loss([1.2, 1.5], cluster([0, 1]))
        assert value == 0.0
        assert not grads.any()

    def test_triple(self):
        """S = {1.0, 1.2, 1.5} averages the three pair gaps."""
        value, _ = diversity_loss([1.0, 1.2, 1.5], cluster([0, 0, 0]))
        assert value == pytest.approx(-(0.2 + 0.5 + 0.3) / 3)

    def test_inactive_excluded(self):
        """Inactive members do not form pairs."""
        value, _ = diversity_loss([1.0, 1.2, 5.0], cluster([0, 0, 0], [True, True, False]))
        assert value == pytest.approx(-0.2)

    def test_global_scope(self):
        """The global variant pairs proposals across clusters."""
        value, _ = diversity_loss([1.2, 1.5], cluster([0, 1]), scope="global")
        assert value == pytest.approx(-0.3)

    def test_spread_is_negated_value(self):
        """intra_cluster_spread reports the mean gap as a positive number."""
        assert intra_cluster_spread([1.2, 1.5], cluster([0, 0])) == pytest.approx(0.3)


    def test_never_positive(self, rng):
        """J_div is at most 0 for random shapes and matchings in both scopes."""
        for _ in range(200):
            m, k = int(rng.integers(1, 4)), int(rng.integers(1, 12))
            match = dense_match(rng.uniform(0, 1, size=(m, k)), int(rng.integers(1, 4)))
            s = 1.0 + rng.exponential(0.05, size=k)
            for scope in ("cluster", "global"):
                value, _ = diversity_loss(s, match, scope)
                assert value <= 0.0


class TestWeights:
    """Tests for LossWeights switches, presets and validation."""

    def test_defaults(self):
        """Default weights carry the published constants."""
        w = LossWeights()
        assert (w.lambda_reg, w.lambda_seg, w.lambda_ava, w.lambda_div, w.lambda_dis) == (
            1.0, 0.1, 0.0005, 0.0001, 0.75)
        assert (w.beta, w.gamma, w.w_neg) == (10.0, 0.5, 1.0)

    def test_baseline_preset(self):
        """Preset a keeps only the basic constraints."""
        w = LossWeights.preset("a")
        assert (w.use_reg, w.use_seg, w.use_cls) == (True, True, True)
        assert not (w.use_shape or w.use_loc or w.use_div or w.use_dis)

    def test_full_preset(self):
        """Preset h switches every term on."""
        w = LossWeights.preset("h")
        assert all((w.use_shape, w.use_loc, w.use_div, w.use_dis, w.use_cap))

    def test_split_presets(self):
        """Availability and diversity rows toggle single switches."""
        assert not LossWeights.preset("shape-only").use_loc
        assert not LossWeights.preset("loc-only").use_shape
        assert not LossWeights.preset("no-cap").use_cap
        no_diff = LossWeights.preset("no-difference")
        assert not no_diff.use_div and not no_diff.use_cap

    def test_preset_keeps_weights(self):
        """apply_preset changes switches only."""
        w = LossWeights(lambda_reg=2.0).apply_preset("b")
        assert w.lambda_reg == 2.0

    def test_unknown_preset(self):
        """Unknown preset names raise ConfigError."""
        with pytest.raises(ConfigError):
            LossWeights.preset("z")

    def test_unknown_term(self):
        """Unknown term names raise ConfigError."""
        with pytest.raises(ConfigError):
            LossWeights().with_disabled(["bogus"])

    def test_cap_for(self):
        """cap_for follows the floor law unless overridden or disabled."""
        assert LossWeights().cap_for(50) == 8
        assert LossWeights(cap=3).cap_for(50) == 3
        assert LossWeights(use_cap=False).cap_for(50) is None

    def test_from_dict_names_field(self):
        """Type and range errors name the dotted field."""
        with pytest.raises(ConfigError) as excinfo:
            LossWeights.from_dict({"lambda_reg": "high"})
        assert excinfo.value.field == "weights.lambda_reg"
        with pytest.raises(ConfigError) as excinfo:
            LossWeights.from_dict({"gamma": 2})
        assert excinfo.value.field == "weights.gamma"
        with pytest.raises(ConfigError) as excinfo:
            LossWeights.from_dict({"lambda_typo": 1})
        assert excinfo.value.field == "weights.lambda_typo"

    def test_dict_round_trip(self):
        """to_dict output loads back to equal weights."""
        w = LossWeights(cap=4, diversity_scope="global", use_dis=False)
        assert LossWeights.from_dict(w.to_dict()) == w


class TestTotalLoss:
    """Tests for the overall objective."""

    def test_all_disabled(self, two_lane_scene, small_bank):
        """Disabling every term gives 0 with zero gradients."""
        scene, _ = two_lane_scene
        report = total_loss(small_bank, scene, LossWeights().with_disabled(["all"]))
        assert report.j_total == 0.0
        assert not report.grad_controls.any()
        assert not report.grad_logits.any()
        assert report.contributions == {}

    def test_hand_recombination(self, two_lane_scene, small_bank):
        """j_total equals the weighted sum of independently computed terms."""
        scene, _ = two_lane_scene
        w = LossWeights()
        report = total_loss(small_bank, scene, w)

        pts = small_bank.sample(12)
        gts = scene.gt_array()
        costs = l1_cost_matrix(gts, pts)
        assignment = hungarian_assign(costs)
        match = dense_match(costs, w.cap_for(small_bank.k))
        pair_reg = {k: reg_loss(LanePolyline(pts[k]), scene.ground_truth[i])[0]
                    for i, k in assignment.pairs}
        j_reg = sum(pair_reg.values()) / len(pair_reg)
        j_shape, _ = shape_loss(pts)
        j_loc, _ = location_loss(pts, scene, match)
        s, _ = straightness_ratios(pts)
        j_div, _ = diversity_loss(s, match)
        probs = small_bank.probabilities()
        j_cls = np.mean([
            discrimination_loss(probs[k], soft_label(pair_reg.get(k, 0.0), k in pair_reg))[0]
            for k in range(small_bank.k)
        ])
        expected = (1.0 * j_reg + 0.1 * 0.0 + 0.0005 * (j_shape + j_loc)
                    + 0.0001 * j_div + 0.75 * j_cls)
        assert report.j_total == pytest.approx(expected, abs=1e-9)
        assert report.j_reg == pytest.approx(j_reg)
        assert report.j_div == pytest.approx(j_div)

    def test_perfect_single_proposal(self):
        """A confident proposal on its ground truth leaves only the shape floor."""
        controls = straight_controls((0.3, 1.0), (0.5, 0.4))
        controls[1] += (0.02, 0.0)
        gt = LanePolyline(sample_controls(controls[None], 20)[0])
        scene = Scene(Frame(590, 1640), [gt])
        bank = ProposalBank(controls[None], np.array([30.0]))
        report = total_loss(bank, scene, LossWeights())
        s_k = float(report.shape_values[0])
        assert s_k > 1.0
        assert report.j_total == pytest.approx(0.0005 * s_k, abs=1e-6)

    def test_baseline_matches_sparse(self, two_lane_scene, small_bank):
        """With ava/div/dis off the objective equals the sparse baseline bit for bit."""
        scene, _ = two_lane_scene
        w = LossWeights(lambda_reg=1.3, w_neg=1.7)
        value, g_controls, g_logits = sparse_loss(small_bank, scene, w)
        report = total_loss(small_bank, scene, w.baseline())
        assert value == report.j_total
        assert np.array_equal(g_controls, report.grad_controls)
        assert np.array_equal(g_logits, report.grad_logits)

    def test_baseline_matches_sparse_random(self):
        """Bit-for-bit baseline equivalence on 100 random banks and scenes."""
        rng = np.random.default_rng(21)
        for _ in range(100):
            k = int(rng.integers(1, 13))
            m = int(rng.integers(0, min(k, 4) + 1))
            n = int(rng.integers(2, 25))
            bank = ProposalBank(random_controls(rng, k), rng.normal(0.0, 2.0, size=k))
            scene = random_scene(rng, m, n)
            w = LossWeights(lambda_reg=float(rng.uniform(0.1, 3)),
                            lambda_seg=float(rng.uniform(0, 1)),
                            lambda_dis=float(rng.uniform(0.1, 2)),
                            w_neg=float(rng.uniform(0.5, 2)))
            value, g_controls, g_logits = sparse_loss(bank, scene, w, n_points=n)
            report = total_loss(bank, scene, w.baseline(), n_points=n)
            assert value == report.j_total
            assert np.array_equal(g_controls, report.grad_controls)
            assert np.array_equal(g_logits, report.grad_logits)

    @pytest.mark.parametrize("weight,terms", [
        ("lambda_reg", ["reg"]),
        ("lambda_ava", ["ava"]),
        ("lambda_div", ["div"]),
        ("lambda_dis", ["cls", "dis"]),
    ])
    def test_weights_enter_linearly(self, two_lane_scene, small_bank, weight, terms):
        """A zero weight equals switching its term off; doubling it adds its contribution."""
        scene, _ = two_lane_scene
        base = LossWeights()
        off = total_loss(small_bank, scene, base.with_disabled(terms))
        zero = total_loss(small_bank, scene, replace(base, **{weight: 0.0}))
        assert zero.j_total == off.j_total
        np.testing.assert_array_equal(zero.grad_controls, off.grad_controls)
        np.testing.assert_array_equal(zero.grad_logits, off.grad_logits)

        one = total_loss(small_bank, scene, base)
        double = total_loss(small_bank, scene, replace(base, **{weight: 2 * getattr(base, weight)}))
        key = "cls" if weight == "lambda_dis" else terms[0]
        assert double.j_total - one.j_total == pytest.approx(one.contributions[key], abs=1e-12)
        np.testing.assert_allclose(double.grad_vector() - one.grad_vector(),
                                   one.grad_vector() - zero.grad_vector(), atol=1e-12)

    def test_disabled_term_absent(self, two_lane_scene, small_bank):
        """A disabled term is not part of the sum."""
        scene, _ = two_lane_scene
        report = total_loss(small_bank, scene, LossWeights().with_disabled(["div"]))
        assert "div" not in report.contributions
        assert report.j_div == 0.0

    def test_frozen_targets_reused(self, two_lane_scene, small_bank):
        """Passing precomputed targets gives the same report."""
        scene, _ = two_lane_scene
        w = LossWeights()
        targets = freeze_targets(small_bank, scene, w)
        a = total_loss(small_bank, scene, w)
        b = total_loss(small_bank, scene, w, targets=targets)
        assert a.j_total == b.j_total
        np.testing.assert_array_equal(a.soft_labels, targets.labels)

    def test_label_free_scene(self, small_bank):
        """M = 0 leaves shape and the all-negative classification term."""
        scene = Scene(Frame(590, 1640))
        report = total_loss(small_bank, scene, LossWeights(), n_points=12)
        assert report.j_reg == 0.0
        assert report.j_loc == 0.0
        assert not report.soft_labels.any()
        assert report.j_total > 0

    def test_point_count_mismatch(self, two_lane_scene, small_bank):
        """n_points must agree with the scene."""
        scene, _ = two_lane_scene
        with pytest.raises(InvalidArgumentError):
            total_loss(small_bank, scene, LossWeights(), n_points=30)

    def test_degenerate_proposal(self, two_lane_scene, small_bank):
        """A collapsed proposal raises DegenerateLaneError with its index."""
        scene, _ = two_lane_scene
        bank = small_bank.copy()
        bank.controls[2] = 0.5
        with pytest.raises(DegenerateLaneError) as excinfo:
            total_loss(bank, scene, LossWeights())
        assert excinfo.value.index == 2
