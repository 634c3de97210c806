"""
Lane representations and per-lane geometric primitives.

Lanes live in normalized image coordinates: x in [0, 1] left to right,
y in [0, 1] top to bottom. A proposal is a cubic Bezier curve sampled on a
fixed parameter grid, so every sampled point is a fixed linear combination
of the four control points and gradients pass back through the transposed
Bernstein weights.

All functions are pure and operate on numpy arrays; batched variants take a
leading proposal axis.
"""

import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import DegenerateLaneError, InvalidArgumentError

logger = logging.getLogger(__name__)

# Chord guard for the straightness ratio, in normalized units
EPS_CHORD = 1e-6


def _as_points(points, name: str = "points") -> np.ndarray:
    """Convert to a finite (N, 2) float array with N >= 2."""
    arr = np.array(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidArgumentError(f"{name} must have shape (N, 2), got {arr.shape}")
    if arr.shape[0] < 2:
        raise InvalidArgumentError(f"{name} needs at least 2 points, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} contains non-finite coordinates")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Frame:
    """Image frame size in pixels."""
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise InvalidArgumentError(
                f"frame must be at least 1x1 pixels, got {self.height}x{self.width}"
            )
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "width", int(self.width))

    def to_dict(self) -> dict:
        return {"h": self.height, "w": self.width}

    @classmethod
    def from_dict(cls, data: dict) -> "Frame":
        return cls(height=data["h"], width=data["w"])


@dataclass(frozen=True, eq=False)
class LanePolyline:
    """
    One lane as an ordered list of N normalized (x, y) points.

    Index 0 is the start point, index N-1 the end point.
    """
    points: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "points", _as_points(self.points))

    def __eq__(self, other) -> bool:
        if not isinstance(other, LanePolyline):
            return NotImplemented
        return np.array_equal(self.points, other.points)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    @property
    def end(self) -> np.ndarray:
        return self.points[-1]

    def in_frame(self) -> bool:
        """True when every point lies inside the unit square."""
        return fraction_inside(self.points) == 1.0

    def to_list(self) -> list[list[float]]:
        return self.points.tolist()


@dataclass(frozen=True, eq=False)
class BezierLane:
    """Cubic Bezier proposal: 4 control points plus a confidence logit."""
    control: np.ndarray
    logit: float = 0.0

    def __post_init__(self):
        ctrl = np.array(self.control, dtype=float)
        if ctrl.shape != (4, 2):
            raise InvalidArgumentError(f"control must have shape (4, 2), got {ctrl.shape}")
        ctrl.setflags(write=False)
        object.__setattr__(self, "control", ctrl)
        object.__setattr__(self, "logit", float(self.logit))

    @property
    def probability(self) -> float:
        return float(expit(self.logit))


@dataclass(eq=False)
class Scene:
    """A frame with its M ground-truth lanes (all sampled on the same N)."""
    frame: Frame
    ground_truth: list[LanePolyline] = field(default_factory=list)

    def __post_init__(self):
        self.ground_truth = [
            lane if isinstance(lane, LanePolyline) else LanePolyline(lane)
            for lane in self.ground_truth
        ]
        sizes = {lane.n_points for lane in self.ground_truth}
        if len(sizes) > 1:
            raise InvalidArgumentError(f"ground-truth lanes differ in point count: {sorted(sizes)}")

    @property
    def m(self) -> int:
        return len(self.ground_truth)

    @property
    def n_points(self) -> Optional[int]:
        return self.ground_truth[0].n_points if self.ground_truth else None

    def gt_array(self, n_points: Optional[int] = None) -> np.ndarray:
        """Ground truth stacked as (M, N, 2); (0, n_points, 2) for a label-free scene."""
        if not self.ground_truth:
            return np.zeros((0, n_points or 2, 2))
        return np.stack([lane.points for lane in self.ground_truth])


@dataclass(eq=False)
class ProposalBank:
    """
    K Bezier proposals under joint optimization.

    controls has shape (K, 4, 2), logits shape (K,). The bank is mutable and
    owned by a single training run.
    """
    controls: np.ndarray
    logits: np.ndarray

    def __post_init__(self):
        self.controls = np.array(self.controls, dtype=float)
        self.logits = np.array(self.logits, dtype=float).reshape(-1)
        if self.controls.ndim != 3 or self.controls.shape[1:] != (4, 2):
            raise InvalidArgumentError(
                f"controls must have shape (K, 4, 2), got {self.controls.shape}"
            )
        if self.controls.shape[0] != self.logits.shape[0]:
            raise InvalidArgumentError(
                f"{self.controls.shape[0]} control sets but {self.logits.shape[0]} logits"
            )
        if self.controls.shape[0] < 1:
            raise InvalidArgumentError("proposal bank must not be empty")

    @classmethod
    def from_lanes(cls, lanes: list[BezierLane]) -> "ProposalBank":
        return cls(
            controls=np.stack([lane.control for lane in lanes]),
            logits=np.array([lane.logit for lane in lanes]),
        )

    @property
    def k(self) -> int:
        return self.controls.shape[0]

    @property
    def n_params(self) -> int:
        return self.controls.size + self.logits.size

    def lane(self, index: int) -> BezierLane:
        return BezierLane(self.controls[index], self.logits[index])

    def probabilities(self) -> np.ndarray:
        return expit(self.logits)

    def sample(self, n_points: int) -> np.ndarray:
        """All proposals sampled as (K, N, 2)."""
        return sample_controls(self.controls, n_points)

    def polylines(self, n_points: int) -> list[LanePolyline]:
        return [LanePolyline(points) for points in self.sample(n_points)]

    def copy(self) -> "ProposalBank":
        return ProposalBank(self.controls.copy(), self.logits.copy())

    def to_vector(self) -> np.ndarray:
        """Flatten to [controls..., logits...] for vector-space tooling."""
        return np.concatenate([self.controls.reshape(-1), self.logits])

    @classmethod
    def from_vector(cls, vector: np.ndarray, k: int) -> "ProposalBank":
        vector = np.asarray(vector, dtype=float)
        if vector.shape != (9 * k,):
            raise InvalidArgumentError(f"expected {9 * k} parameters, got {vector.shape}")
        return cls(vector[: 8 * k].reshape(k, 4, 2), vector[8 * k:])


# =============================================================================
# Bezier sampling
# =============================================================================

@lru_cache(maxsize=64)
def bernstein_matrix(n_points: int) -> np.ndarray:
    """
    Cubic Bernstein weights on the grid t_i = i / (n_points - 1).

    Returns:
        Read-only (n_points, 4) matrix W with sampled = W @ control
    """
    if n_points < 2:
        raise InvalidArgumentError(f"n_points must be >= 2, got {n_points}")
    t = np.linspace(0.0, 1.0, n_points)
    s = 1.0 - t
    weights = np.stack([s ** 3, 3 * s ** 2 * t, 3 * s * t ** 2, t ** 3], axis=1)
    # Exact endpoint interpolation
    weights[0] = (1.0, 0.0, 0.0, 0.0)
    weights[-1] = (0.0, 0.0, 0.0, 1.0)
    weights.setflags(write=False)
    return weights


def sample_controls(controls: np.ndarray, n_points: int) -> np.ndarray:
    """Sample (K, 4, 2) control points into (K, N, 2) lane points."""
    weights = bernstein_matrix(n_points)
    return np.einsum("nc,kcd->knd", weights, controls)


def controls_gradient(point_grads: np.ndarray) -> np.ndarray:
    """Pull (K, N, 2) point gradients back to (K, 4, 2) control-point gradients."""
    weights = bernstein_matrix(point_grads.shape[1])
    return np.einsum("nc,knd->kcd", weights, point_grads)


def sample_bezier(lane: BezierLane, n_points: int) -> LanePolyline:
    """Decode a Bezier proposal into an n_points polyline."""
    if n_points < 2:
        raise InvalidArgumentError(f"n_points must be >= 2, got {n_points}")
    return LanePolyline(bernstein_matrix(n_points) @ lane.control)


# =============================================================================
# Straightness ratio (curve length over chord length)
# =============================================================================

def chord_lengths(points: np.ndarray) -> np.ndarray:
    """Start-to-end distance of each lane in a (K, N, 2) batch."""
    return np.linalg.norm(points[:, -1] - points[:, 0], axis=-1)


def straightness_ratios(points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Batched straightness ratio S_k = (sum of segment lengths) / chord length.

    Args:
        points: (K, N, 2) lane points

    Returns:
        (values (K,), grads (K, N, 2)) with grads the exact partial derivatives

    Raises:
        DegenerateLaneError: first lane whose chord is <= EPS_CHORD
    """
    segments = np.diff(points, axis=1)
    seg_len = np.linalg.norm(segments, axis=-1)
    chord = points[:, -1] - points[:, 0]
    chord_len = np.linalg.norm(chord, axis=-1)

    degenerate = np.flatnonzero(chord_len <= EPS_CHORD)
    if degenerate.size:
        index = int(degenerate[0])
        raise DegenerateLaneError(
            f"chord length {chord_len[index]:.3g} <= {EPS_CHORD:g}", index=index
        )

    length = seg_len.sum(axis=1)
    values = length / chord_len

    # d(length)/dP: each segment pulls its tail back and pushes its head forward
    units = np.divide(
        segments, seg_len[..., None], out=np.zeros_like(segments), where=seg_len[..., None] > 0
    )
    d_length = np.zeros_like(points)
    d_length[:, :-1] -= units
    d_length[:, 1:] += units

    chord_unit = chord / chord_len[:, None]
    d_chord = np.zeros_like(points)
    d_chord[:, 0] = -chord_unit
    d_chord[:, -1] = chord_unit

    grads = (d_length - values[:, None, None] * d_chord) / chord_len[:, None, None]
    return values, grads


def straightness_ratio(lane: LanePolyline) -> tuple[float, np.ndarray]:
    """Straightness ratio of one lane and its (N, 2) gradient."""
    try:
        values, grads = straightness_ratios(lane.points[None])
    except DegenerateLaneError as e:
        raise DegenerateLaneError("start and end points coincide") from e
    return float(values[0]), grads[0]


# =============================================================================
# Distances
# =============================================================================

def lane_l1_distance(a: LanePolyline, b: LanePolyline) -> float:
    """(1/2N) * sum(|dx| + |dy|) between two lanes sampled on the same N."""
    if a.n_points != b.n_points:
        raise InvalidArgumentError(f"point counts differ: {a.n_points} vs {b.n_points}")
    return float(np.abs(a.points - b.points).sum() / (2 * a.n_points))


def l1_cost_matrix(gts: np.ndarray, proposals: np.ndarray) -> np.ndarray:
    """
    Pairwise lane L1 distances.

    Args:
        gts: (M, N, 2) ground-truth points
        proposals: (K, N, 2) proposal points

    Returns:
        (M, K) matrix, rows = ground truth, columns = proposals
    """
    if gts.shape[0] == 0:
        return np.zeros((0, proposals.shape[0]))
    if gts.shape[1] != proposals.shape[1]:
        raise InvalidArgumentError(
            f"point counts differ: {gts.shape[1]} vs {proposals.shape[1]}"
        )
    n_points = gts.shape[1]
    diff = np.abs(gts[:, None] - proposals[None])
    return diff.sum(axis=(2, 3)) / (2 * n_points)


def endpoint_distance(p: LanePolyline, g: LanePolyline) -> tuple[float, np.ndarray]:
    """
    L1 distance between start points plus L1 distance between end points.

    Returns:
        (value, grad) where grad has p's shape and is nonzero only on the
        first and last rows (sign of the difference, 0 at exact ties)
    """
    d_start = p.start - g.start
    d_end = p.end - g.end
    value = float(np.abs(d_start).sum() + np.abs(d_end).sum())
    grad = np.zeros_like(p.points)
    grad[0] = np.sign(d_start)
    grad[-1] += np.sign(d_end)
    return value, grad


def fraction_inside(points: np.ndarray) -> float:
    """Share of points (any leading shape, last axis = xy) inside the unit square."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        return 1.0
    inside = np.all((pts >= 0.0) & (pts <= 1.0), axis=1)
    return float(inside.mean())
