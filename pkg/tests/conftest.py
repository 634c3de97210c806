"""
Pytest fixtures for lane-modulation tests.
"""

import os

import numpy as np
import pytest

# Set test environment variables before imports
os.environ.setdefault("LOG_LEVEL", "WARNING")

from lane_modulation.geometry import Frame, LanePolyline, ProposalBank, Scene, sample_controls
from lane_modulation.synth import SceneSpec, generate_scene


def vertical_lane(x: float, n_points: int = 10, top: float = 0.3, bottom: float = 1.0):
    """Vertical lane at x sampled bottom to top on n_points rows."""
    ys = np.linspace(bottom, top, n_points)
    return LanePolyline(np.column_stack([np.full(n_points, x), ys]))


def straight_controls(start, end) -> np.ndarray:
    """Control points of a straight Bezier from start to end."""
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    t = np.array([0.0, 1 / 3, 2 / 3, 1.0])[:, None]
    return start + t * (end - start)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded random generator."""
    return np.random.default_rng(0)


@pytest.fixture
def straight_spec() -> SceneSpec:
    """Recipe for a 3-lane straight scene."""
    return SceneSpec(seed=0, lane_family="straight", curvature_range=(1.0, 1.0))


@pytest.fixture
def straight_scene(straight_spec: SceneSpec) -> Scene:
    """3-lane straight scene, N = 20."""
    return generate_scene(straight_spec)


@pytest.fixture
def two_lane_scene() -> tuple[Scene, np.ndarray]:
    """Two straight ground-truth lanes (N = 12) and their control points."""
    controls = np.stack([
        straight_controls((0.2, 1.0), (0.45, 0.4)),
        straight_controls((0.8, 1.0), (0.55, 0.4)),
    ])
    gts = sample_controls(controls, 12)
    scene = Scene(frame=Frame(590, 1640), ground_truth=[LanePolyline(g) for g in gts])
    return scene, controls


@pytest.fixture
def small_bank(two_lane_scene) -> ProposalBank:
    """Five proposals: two near each ground truth and one in between."""
    _, controls = two_lane_scene
    offsets = np.array([0.01, 0.04, -0.02, -0.05])
    bank_controls = [
        controls[0] + np.array([offsets[0], 0.0]),
        controls[0] + np.array([offsets[1], -0.01]),
        controls[1] + np.array([offsets[2], 0.0]),
        controls[1] + np.array([offsets[3], -0.01]),
        straight_controls((0.5, 0.95), (0.5, 0.42)),
    ]
    bank_controls[1][1] += (0.03, 0.0)
    bank_controls[3][2] += (-0.02, 0.01)
    return ProposalBank(np.stack(bank_controls), np.array([0.3, -0.2, 1.1, 0.0, -0.7]))


@pytest.fixture
def output_env(tmp_path, monkeypatch):
    """Point the default output directory at a temp dir."""
    monkeypatch.setenv("LANE_MOD_OUTPUT_DIR", str(tmp_path / "runs"))
    return tmp_path / "runs"
