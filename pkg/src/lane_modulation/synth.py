"""
Synthetic lane scenes.

Lanes start spread along the bottom of the frame and converge towards a
shared vanishing band, each one a cubic Bezier bent until its straightness
ratio hits a value drawn from the requested curvature range.
"""

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.optimize import brentq

from .errors import ConfigError, InvalidArgumentError
from .geometry import Frame, LanePolyline, Scene, sample_controls, straightness_ratios

logger = logging.getLogger(__name__)

LANE_FAMILIES = ("straight", "arc", "cubic")

# Draws per lane before the generator gives up on keeping it inside the frame
MAX_ATTEMPTS = 200


def _interval(value: Any, name: str, cast=float) -> tuple:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(name, f"expected a [min, max] pair, got {value!r}")
    try:
        lo, hi = cast(value[0]), cast(value[1])
    except (TypeError, ValueError) as e:
        raise ConfigError(name, f"expected numbers, got {value!r}") from e
    if lo > hi:
        raise ConfigError(name, f"min {lo} exceeds max {hi}")
    return lo, hi


@dataclass(frozen=True)
class SceneSpec:
    """
    Recipe for one synthetic scene.

    curvature_range bounds the straightness ratio of every generated lane;
    start_band and end_band bound the y coordinate of the lane endpoints.
    """
    seed: int = 0
    frame: Frame = field(default_factory=lambda: Frame(590, 1640))
    n_lanes: tuple[int, int] = (3, 3)
    lane_family: str = "cubic"
    curvature_range: tuple[float, float] = (1.01, 1.05)
    start_band: tuple[float, float] = (0.9, 1.0)
    end_band: tuple[float, float] = (0.35, 0.5)
    n_points: int = 20

    def __post_init__(self):
        object.__setattr__(self, "n_lanes", _interval(self.n_lanes, "n_lanes", int))
        object.__setattr__(self, "curvature_range",
                           _interval(self.curvature_range, "curvature_range"))
        object.__setattr__(self, "start_band", _interval(self.start_band, "start_band"))
        object.__setattr__(self, "end_band", _interval(self.end_band, "end_band"))

        if self.n_lanes[0] < 0:
            raise ConfigError("n_lanes", f"lane count must be >= 0, got {self.n_lanes}")
        if self.lane_family not in LANE_FAMILIES:
            raise ConfigError(
                "lane_family", f"expected one of {LANE_FAMILIES}, got {self.lane_family!r}"
            )
        lo, hi = self.curvature_range
        if lo < 1.0:
            raise ConfigError("curvature_range", f"straightness ratio is >= 1, got min {lo}")
        if self.lane_family == "straight" and lo > 1.0:
            raise ConfigError("curvature_range", "straight lanes need a range containing 1")
        for name in ("start_band", "end_band"):
            band = getattr(self, name)
            if band[0] < 0.0 or band[1] > 1.0:
                raise ConfigError(name, f"must lie inside [0, 1], got {band}")
        if self.start_band[0] <= self.end_band[1]:
            raise ConfigError("end_band", "end band must lie above the start band")
        if self.n_points < 2:
            raise ConfigError("n_points", f"must be >= 2, got {self.n_points}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "frame": self.frame.to_dict(),
            "n_lanes": list(self.n_lanes),
            "lane_family": self.lane_family,
            "curvature_range": list(self.curvature_range),
            "start_band": list(self.start_band),
            "end_band": list(self.end_band),
            "n_points": self.n_points,
        }

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "scene") -> "SceneSpec":
        data = dict(data or {})
        allowed = {"seed", "frame", "n_lanes", "lane_family", "curvature_range",
                   "start_band", "end_band", "n_points"}
        for key in data:
            if key not in allowed:
                raise ConfigError(f"{prefix}.{key}", "unknown field")
        for key in ("seed", "n_points"):
            if key in data and (isinstance(data[key], bool) or not isinstance(data[key], int)):
                raise ConfigError(f"{prefix}.{key}", f"expected an integer, got {data[key]!r}")
        if "frame" in data:
            try:
                data["frame"] = Frame.from_dict(data["frame"])
            except (InvalidArgumentError, KeyError, TypeError, ValueError) as e:
                raise ConfigError(f"{prefix}.frame", f"expected {{h, w}} in pixels ({e})") from e
        try:
            return cls(**data)
        except ConfigError as e:
            raise ConfigError(f"{prefix}.{e.field}", str(e).split(": ", 1)[-1]) from e


def _bent_controls(start: np.ndarray, end: np.ndarray, bend: float, family: str) -> np.ndarray:
    chord = end - start
    normal = np.array([-chord[1], chord[0]]) / np.linalg.norm(chord)
    c1 = start + chord / 3
    c2 = start + 2 * chord / 3
    if family == "arc":
        c1, c2 = c1 + bend * normal, c2 + bend * normal
    elif family == "cubic":
        c1, c2 = c1 + bend * normal, c2 - bend * normal
    return np.stack([start, c1, c2, end])


def _ratio(controls: np.ndarray, n_points: int) -> float:
    values, _ = straightness_ratios(sample_controls(controls[None], n_points))
    return float(values[0])


def _solve_bend(start, end, target: float, family: str, n_points: int) -> float:
    """Signed-free bend magnitude whose lane reaches the target straightness ratio."""
    if family == "straight" or target <= 1.0:
        return 0.0
    hi = 0.05
    while _ratio(_bent_controls(start, end, hi, family), n_points) < target:
        hi *= 2
        if hi > 10.0:
            raise InvalidArgumentError(f"straightness ratio {target} is out of reach")
    return brentq(
        lambda b: _ratio(_bent_controls(start, end, b, family), n_points) - target,
        0.0, hi, xtol=1e-14,
    )


def generate_scene(spec: SceneSpec) -> Scene:
    """
    Draw a scene from its recipe; a pure function of spec.seed.

    Returns:
        Scene with lanes ordered left to right by start x

    Raises:
        InvalidArgumentError: no in-frame lane with the requested shape was found
    """
    rng = np.random.default_rng(spec.seed)
    m = int(rng.integers(spec.n_lanes[0], spec.n_lanes[1] + 1))
    lo, hi = spec.curvature_range
    lanes = []
    for i in range(m):
        # Starts far apart, ends close together
        slot = (i + 0.5) / m
        for _ in range(MAX_ATTEMPTS):
            start_x = 0.1 + 0.8 * slot + rng.uniform(-0.3, 0.3) / m
            start = np.array([start_x, rng.uniform(*spec.start_band)])
            end = np.array([0.5 + 0.25 * (start_x - 0.5) + rng.uniform(-0.02, 0.02),
                            rng.uniform(*spec.end_band)])
            target = rng.uniform(lo, hi) if hi > lo else lo
            bend = _solve_bend(start, end, target, spec.lane_family, spec.n_points)
            sign = 1.0 if rng.random() < 0.5 else -1.0
            controls = _bent_controls(start, end, sign * bend, spec.lane_family)
            points = sample_controls(controls[None], spec.n_points)[0]
            ratio = _ratio(controls, spec.n_points)
            inside = np.all((points >= 0.0) & (points <= 1.0))
            if inside and lo - 1e-9 <= ratio <= hi + 1e-9:
                lanes.append(LanePolyline(points))
                break
        else:
            raise InvalidArgumentError(
                f"could not place lane {i} inside the frame with ratio in {spec.curvature_range}"
            )

    lanes.sort(key=lambda lane: float(lane.start[0]))
    logger.debug(f"generated scene seed={spec.seed} with {m} {spec.lane_family} lanes")
    return Scene(frame=spec.frame, ground_truth=lanes)
