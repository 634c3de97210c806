"""
Unit tests for lane geometry.

Tests:
- Bezier sampling
- Straightness ratio and its degenerate-chord guard
- Lane distances
- Proposal bank layout
"""

import math

import numpy as np
import pytest

from lane_modulation.errors import DegenerateLaneError, InvalidArgumentError
from lane_modulation.geometry import (
    BezierLane,
    Frame,
    LanePolyline,
    ProposalBank,
    Scene,
    bernstein_matrix,
    endpoint_distance,
    fraction_inside,
    l1_cost_matrix,
    lane_l1_distance,
    sample_bezier,
    straightness_ratio,
    straightness_ratios,
)


class TestSampleBezier:
    """Tests for Bezier decoding."""

    def test_collinear_controls_give_even_segment(self):
        """Collinear evenly spaced controls sample evenly along the segment."""
        lane = BezierLane([[0, 0], [1 / 3, 1 / 3], [2 / 3, 2 / 3], [1, 1]])
        poly = sample_bezier(lane, 5)
        expected = np.column_stack([np.linspace(0, 1, 5), np.linspace(0, 1, 5)])
        assert poly.n_points == 5
        np.testing.assert_allclose(poly.points, expected, atol=1e-12)

    def test_two_points_are_end_controls(self):
        """n = 2 returns exactly the first and last control points."""
        lane = BezierLane([[0.1, 0.9], [0.7, 0.2], [0.3, 0.3], [0.6, 0.4]])
        poly = sample_bezier(lane, 2)
        assert poly.points.tolist() == [[0.1, 0.9], [0.6, 0.4]]

    def test_midpoint_uses_bernstein_weights(self):
        """Midpoint of (0,0),(0,1),(1,1),(1,0) is (0.5, 0.75)."""
        lane = BezierLane([[0, 0], [0, 1], [1, 1], [1, 0]])
        poly = sample_bezier(lane, 3)
        np.testing.assert_allclose(poly.points[1], [0.5, 0.75])

    def test_endpoints_interpolated_exactly(self):
        """First and last sampled points equal control points 0 and 3 bit for bit."""
        lane = BezierLane([[0.123, 0.987], [0.4, 0.5], [0.2, 0.1], [0.456, 0.321]])
        poly = sample_bezier(lane, 17)
        assert poly.start.tolist() == [0.123, 0.987]
        assert poly.end.tolist() == [0.456, 0.321]

    def test_too_few_points_rejected(self):
        """n_points < 2 raises InvalidArgumentError."""
        lane = BezierLane(np.zeros((4, 2)))
        with pytest.raises(InvalidArgumentError):
            sample_bezier(lane, 1)

    def test_bernstein_rows_sum_to_one(self):
        """Bernstein weights form a partition of unity."""
        np.testing.assert_allclose(bernstein_matrix(11).sum(axis=1), 1.0)

    def test_linear_in_controls(self, rng):
        """Sampling a combination of control sets combines the samples."""
        for _ in range(50):
            c1, c2 = rng.uniform(0, 1, size=(2, 4, 2))
            a, b = rng.uniform(-2, 2, size=2)
            mixed = sample_bezier(BezierLane(a * c1 + b * c2), 9).points
            expected = (a * sample_bezier(BezierLane(c1), 9).points
                        + b * sample_bezier(BezierLane(c2), 9).points)
            np.testing.assert_allclose(mixed, expected, atol=1e-12)

    def test_bad_control_shape_rejected(self):
        """Control arrays must be 4 x 2."""
        with pytest.raises(InvalidArgumentError):
            BezierLane(np.zeros((3, 2)))


class TestStraightnessRatio:
    """Tests for the curve-length over chord-length ratio."""

    def test_straight_line_is_one(self):
        """A straight polyline has ratio 1."""
        value, _ = straightness_ratio(LanePolyline([[0, 0], [0.5, 0.5], [1, 1]]))
        assert value == pytest.approx(1.0)

    def test_right_angle_is_sqrt2(self):
        """(0,0),(1,0),(1,1) has ratio sqrt(2)."""
        value, grad = straightness_ratio(LanePolyline([[0, 0], [1, 0], [1, 1]]))
        assert value == pytest.approx(math.sqrt(2))
        assert grad.shape == (3, 2)

    def test_coincident_endpoints_raise(self):
        """Start equal to end raises DegenerateLaneError."""
        with pytest.raises(DegenerateLaneError) as excinfo:
            straightness_ratio(LanePolyline([[0, 0], [0.5, 0.5], [0, 0]]))
        assert excinfo.value.index is None

    def test_batched_error_names_proposal(self):
        """Batched evaluation reports the first degenerate proposal index."""
        points = np.stack([
            [[0, 0], [0.5, 0.1], [1, 1]],
            [[0.2, 0.2], [0.3, 0.4], [0.2, 0.2]],
            [[0, 1], [0.5, 0.5], [1, 0]],
        ]).astype(float)
        with pytest.raises(DegenerateLaneError) as excinfo:
            straightness_ratios(points)
        assert excinfo.value.index == 1
        assert "proposal 1" in str(excinfo.value)

    def test_ratio_at_least_one(self, rng):
        """Random polylines never go below 1."""
        points = rng.uniform(0, 1, size=(50, 8, 2))
        values, _ = straightness_ratios(points)
        assert np.all(values >= 1.0 - 1e-12)

    def test_scale_invariant(self):
        """Scaling a lane leaves its ratio unchanged."""
        pts = np.array([[0.1, 0.9], [0.3, 0.6], [0.35, 0.4], [0.5, 0.2]])
        a, _ = straightness_ratio(LanePolyline(pts))
        b, _ = straightness_ratio(LanePolyline(pts * 0.5))
        assert a == pytest.approx(b)

    def test_rotation_and_translation_invariant(self, rng):
        """Rotating and shifting lanes leaves their ratios unchanged."""
        points = rng.uniform(0, 1, size=(100, 10, 2))
        values, _ = straightness_ratios(points)
        for _ in range(10):
            theta = rng.uniform(0, 2 * math.pi)
            rot = np.array([[math.cos(theta), -math.sin(theta)],
                            [math.sin(theta), math.cos(theta)]])
            moved = points @ rot.T + rng.uniform(-1, 1, size=2)
            rotated, _ = straightness_ratios(moved)
            np.testing.assert_allclose(rotated, values, rtol=1e-9)


class TestDistances:
    """Tests for lane distances."""

    @pytest.fixture
    def lane(self):
        return LanePolyline([[0.1, 1.0], [0.2, 0.7], [0.3, 0.5], [0.35, 0.3]])

    def test_identical_lanes(self, lane):
        """Distance to itself is 0."""
        assert lane_l1_distance(lane, lane) == 0.0

    def test_shift_in_x(self, lane):
        """Shift by 0.3 in x gives 0.15."""
        shifted = LanePolyline(lane.points + [0.3, 0.0])
        assert lane_l1_distance(lane, shifted) == pytest.approx(0.15)

    def test_shift_in_both(self, lane):
        """Shift by 0.1 in x and y gives 0.1."""
        shifted = LanePolyline(lane.points + [0.1, 0.1])
        assert lane_l1_distance(lane, shifted) == pytest.approx(0.1)

    def test_symmetric_and_triangle(self, rng):
        """The L1 lane distance is symmetric and obeys the triangle inequality."""
        for _ in range(200):
            a, b, c = (LanePolyline(p) for p in rng.uniform(0, 1, size=(3, 7, 2)))
            assert lane_l1_distance(a, b) == lane_l1_distance(b, a)
            assert lane_l1_distance(a, c) <= (
                lane_l1_distance(a, b) + lane_l1_distance(b, c) + 1e-12
            )

    def test_point_count_mismatch(self, lane):
        """Lanes sampled on different N are rejected."""
        with pytest.raises(InvalidArgumentError):
            lane_l1_distance(lane, LanePolyline([[0, 0], [1, 1]]))

    def test_endpoint_distance_example(self):
        """Start offset 0.05 plus end offset 0.15 gives 0.2."""
        p = LanePolyline([[0.1, 1.0], [0.2, 0.6], [0.4, 0.2]])
        g = LanePolyline([[0.15, 1.0], [0.3, 0.6], [0.5, 0.25]])
        value, grad = endpoint_distance(p, g)
        assert value == pytest.approx(0.2)
        assert grad[1].tolist() == [0.0, 0.0]
        assert grad[0].tolist() == [-1.0, 0.0]
        assert grad[-1].tolist() == [-1.0, -1.0]

    def test_endpoint_distance_start_only(self):
        """Start offset (0.02, 0.03) gives 0.05."""
        g = LanePolyline([[0.5, 1.0], [0.5, 0.7], [0.5, 0.4]])
        p = LanePolyline([[0.52, 1.03], [0.5, 0.7], [0.5, 0.4]])
        assert endpoint_distance(p, g)[0] == pytest.approx(0.05)
        assert endpoint_distance(g, g)[0] == 0.0

    def test_cost_matrix_matches_pairwise(self, rng):
        """Each cost matrix cell equals lane_l1_distance of its pair."""
        gts = rng.uniform(0, 1, size=(3, 6, 2))
        props = rng.uniform(0, 1, size=(4, 6, 2))
        costs = l1_cost_matrix(gts, props)
        assert costs.shape == (3, 4)
        for i in range(3):
            for k in range(4):
                expected = lane_l1_distance(LanePolyline(gts[i]), LanePolyline(props[k]))
                assert costs[i, k] == pytest.approx(expected)

    def test_cost_matrix_without_ground_truth(self):
        """M = 0 gives an empty (0, K) matrix."""
        assert l1_cost_matrix(np.zeros((0, 5, 2)), np.zeros((3, 5, 2))).shape == (0, 3)


class TestContainers:
    """Tests for frames, scenes and banks."""

    def test_frame_rejects_empty(self):
        """A frame needs at least one pixel."""
        with pytest.raises(InvalidArgumentError):
            Frame(0, 10)

    def test_frame_dict(self):
        """Frames serialize as {h, w}."""
        frame = Frame(590, 1640)
        assert frame.to_dict() == {"h": 590, "w": 1640}
        assert Frame.from_dict({"h": 590, "w": 1640}) == frame

    def test_polyline_rejects_nan(self):
        """Non-finite coordinates are rejected."""
        with pytest.raises(InvalidArgumentError):
            LanePolyline([[0, 0], [np.nan, 1]])

    def test_scene_requires_common_n(self):
        """Ground-truth lanes must share N."""
        with pytest.raises(InvalidArgumentError):
            Scene(Frame(10, 10), [LanePolyline([[0, 0], [1, 1]]),
                                  LanePolyline([[0, 0], [0.5, 0.5], [1, 1]])])

    def test_empty_scene(self):
        """A label-free scene has M = 0 and an empty array of the requested N."""
        scene = Scene(Frame(10, 10))
        assert scene.m == 0
        assert scene.n_points is None
        assert scene.gt_array(7).shape == (0, 7, 2)

    def test_fraction_inside(self):
        """Half the points outside the unit square gives 0.5."""
        lane = LanePolyline([[0.5, 0.5], [1.2, 0.5], [0.1, 0.9], [0.2, -0.1]])
        assert fraction_inside(lane.points) == 0.5
        assert not lane.in_frame()

    def test_bank_vector_layout(self, small_bank):
        """to_vector puts the 8K control coordinates first, then the K logits."""
        vec = small_bank.to_vector()
        assert vec.shape == (9 * small_bank.k,)
        np.testing.assert_array_equal(vec[-small_bank.k:], small_bank.logits)
        rebuilt = ProposalBank.from_vector(vec, small_bank.k)
        np.testing.assert_array_equal(rebuilt.controls, small_bank.controls)

    def test_bank_vector_size_checked(self):
        """from_vector rejects a vector of the wrong length."""
        with pytest.raises(InvalidArgumentError):
            ProposalBank.from_vector(np.zeros(10), 2)

    def test_bank_probabilities(self):
        """Logit 0 maps to probability 0.5."""
        bank = ProposalBank(np.zeros((2, 4, 2)), np.zeros(2))
        np.testing.assert_allclose(bank.probabilities(), [0.5, 0.5])
        assert bank.lane(1).probability == 0.5
