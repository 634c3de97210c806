"""
Direct-parameter optimization harness.

Features:
- Proposal initializers (vertical fan layout prior, uniform random)
- Plain gradient descent with constant or cosine learning rate
- Bounded control-point updates and re-initialization of collapsed proposals
- Per-step logging, bank snapshots and summary statistics
"""

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Union

import numpy as np

from .assignment import hungarian_assign
from .errors import ConfigError, DegenerateLaneError, InvalidArgumentError, UndefinedStatisticError
from .geometry import (
    EPS_CHORD,
    Frame,
    ProposalBank,
    Scene,
    chord_lengths,
    fraction_inside,
    l1_cost_matrix,
    straightness_ratios,
)
from .losses import DEFAULT_N_POINTS, LossReport, LossWeights, intra_cluster_spread, total_loss
from .synth import SceneSpec, generate_scene

logger = logging.getLogger(__name__)

INITIALIZERS = ("random_vertical_fan", "uniform_random")
LR_SCHEDULES = ("constant", "cosine")
RESAMPLE_MODES = ("fixed", "every_step")

# Minimum start-to-end distance accepted by the uniform initializer
UNIFORM_MIN_CHORD = 0.1


# =============================================================================
# Configuration
# =============================================================================

@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings for one run."""
    seed: int = 0
    k_proposals: int = 20
    steps: int = 2000
    learning_rate: float = 20.0
    lr_schedule: str = "cosine"
    weights: LossWeights = field(default_factory=LossWeights)
    init: str = "random_vertical_fan"
    log_every: int = 100
    max_step: float = 0.01
    min_chord: float = 0.01
    resample: str = "fixed"
    n_points: int = DEFAULT_N_POINTS

    def __post_init__(self):
        if self.k_proposals < 1:
            raise ConfigError("k_proposals", f"must be >= 1, got {self.k_proposals}")
        if self.steps < 1:
            raise ConfigError("steps", f"must be >= 1, got {self.steps}")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", f"must be > 0, got {self.learning_rate}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(
                "lr_schedule", f"expected one of {LR_SCHEDULES}, got {self.lr_schedule!r}"
            )
        if self.init not in INITIALIZERS:
            raise ConfigError("init", f"expected one of {INITIALIZERS}, got {self.init!r}")
        if self.log_every < 1:
            raise ConfigError("log_every", f"must be >= 1, got {self.log_every}")
        if not self.max_step > 0:
            raise ConfigError("max_step", f"must be > 0, got {self.max_step}")
        if not self.min_chord > EPS_CHORD:
            raise ConfigError("min_chord", f"must be > {EPS_CHORD:g}, got {self.min_chord}")
        if self.resample not in RESAMPLE_MODES:
            raise ConfigError(
                "resample", f"expected one of {RESAMPLE_MODES}, got {self.resample!r}"
            )
        if self.n_points < 2:
            raise ConfigError("n_points", f"must be >= 2, got {self.n_points}")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "constant":
            return self.learning_rate
        return 0.5 * self.learning_rate * (1.0 + math.cos(math.pi * step / self.steps))

    def to_dict(self) -> dict:
        data = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "weights"}
        data["weights"] = self.weights.to_dict()
        return data

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "train") -> "TrainConfig":
        data = dict(data or {})
        types = {
            "seed": int, "k_proposals": int, "steps": int, "log_every": int, "n_points": int,
            "learning_rate": float, "max_step": float, "min_chord": float,
            "lr_schedule": str, "init": str, "resample": str,
        }
        kwargs = {}
        for key, value in data.items():
            if key == "weights":
                kwargs["weights"] = LossWeights.from_dict(value, f"{prefix}.weights")
                continue
            if key not in types:
                raise ConfigError(f"{prefix}.{key}", "unknown field")
            expected = types[key]
            if expected is float and isinstance(value, int) and not isinstance(value, bool):
                value = float(value)
            if isinstance(value, bool) or not isinstance(value, expected):
                raise ConfigError(
                    f"{prefix}.{key}", f"expected {expected.__name__}, got {value!r}"
                )
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except ConfigError as e:
            raise ConfigError(f"{prefix}.{e.field}", str(e).split(": ", 1)[-1]) from e


# =============================================================================
# Initialization
# =============================================================================

def _fan_controls(rng: np.random.Generator, k: int) -> np.ndarray:
    slots = (np.arange(k) + rng.uniform(0.0, 1.0, k)) / k
    start = np.column_stack([slots, rng.uniform(0.9, 1.0, k)])
    end = np.column_stack([rng.uniform(0.4, 0.6, k), rng.uniform(0.35, 0.5, k)])
    chord = end - start
    normal = np.column_stack([-chord[:, 1], chord[:, 0]]) / np.linalg.norm(chord, axis=1)[:, None]
    bend = rng.uniform(-0.05, 0.05, size=(k, 2))
    c1 = start + chord / 3 + bend[:, :1] * normal
    c2 = start + 2 * chord / 3 + bend[:, 1:] * normal
    return np.stack([start, c1, c2, end], axis=1)


def _uniform_controls(rng: np.random.Generator, k: int) -> np.ndarray:
    controls = rng.uniform(0.0, 1.0, size=(k, 4, 2))
    while True:
        short = np.linalg.norm(controls[:, 3] - controls[:, 0], axis=1) < UNIFORM_MIN_CHORD
        if not short.any():
            return controls
        controls[short] = rng.uniform(0.0, 1.0, size=(int(short.sum()), 4, 2))


def _draw_controls(init: str, rng: np.random.Generator, k: int) -> np.ndarray:
    if init == "random_vertical_fan":
        return _fan_controls(rng, k)
    return _uniform_controls(rng, k)


def init_proposals(config: TrainConfig, frame: Optional[Frame] = None) -> ProposalBank:
    """
    Deterministic initial bank: K proposals with logits 0 (probability 0.5).

    The fan layout puts start points across the bottom edge and end points in
    a narrow band around the frame center. Coordinates are normalized, so the
    frame only matters to callers that render the bank.
    """
    rng = np.random.default_rng(config.seed)
    controls = _draw_controls(config.init, rng, config.k_proposals)
    return ProposalBank(controls, np.zeros(config.k_proposals))


# =============================================================================
# Statistics
# =============================================================================

def confidence_gap(bank: ProposalBank, scene: Scene, n_points: Optional[int] = None) -> float:
    """
    Lowest positive probability minus highest non-positive probability.

    Returns:
        The gap (may be negative); +inf when every proposal is a positive

    Raises:
        UndefinedStatisticError: the scene has no ground truth
    """
    if scene.m == 0:
        raise UndefinedStatisticError("confidence gap needs at least one ground-truth lane")
    n = n_points or scene.n_points
    assignment = hungarian_assign(l1_cost_matrix(scene.gt_array(), bank.sample(n)))
    probs = bank.probabilities()
    positive = np.zeros(bank.k, dtype=bool)
    positive[list(assignment.proposals)] = True
    if positive.all():
        return math.inf
    return float(probs[positive].min() - probs[~positive].max())


def summarize(bank: ProposalBank, scene: Scene, weights: LossWeights,
              n_points: Optional[int] = None) -> dict:
    """
    Statistics of a bank against a scene; every value is recomputable from the bank.

    Keys: mean_shape, max_shape, mean_loc_active, fraction_inside,
    confidence_gap (None when undefined or without negatives),
    intra_cluster_spread, n_active, max_active_per_cluster.
    """
    n = n_points or scene.n_points or DEFAULT_N_POINTS
    report = total_loss(bank, scene, weights.with_enabled(("shape",)), n)
    points = bank.sample(n)
    shapes = report.shape_values
    match = report.match

    mean_loc = None
    if scene.m:
        gts = scene.gt_array()
        active = np.flatnonzero(match.active)
        d = [
            float(np.abs(points[k, 0] - gts[match.targets[k], 0]).sum()
                  + np.abs(points[k, -1] - gts[match.targets[k], -1]).sum())
            for k in active
        ]
        mean_loc = float(np.mean(d)) if d else 0.0

    gap = None
    if scene.m:
        value = confidence_gap(bank, scene, n)
        gap = value if math.isfinite(value) else None

    counts = match.active_counts()
    return {
        "mean_shape": float(shapes.mean()),
        "max_shape": float(shapes.max()),
        "mean_loc_active": mean_loc,
        "fraction_inside": fraction_inside(points),
        "confidence_gap": gap,
        "intra_cluster_spread": intra_cluster_spread(shapes, match),
        "n_active": int(match.active.sum()),
        "max_active_per_cluster": max(counts) if counts else 0,
    }


# =============================================================================
# Training loop
# =============================================================================

@dataclass(eq=False)
class TrainReport:
    """Outcome of one training run."""
    config: TrainConfig
    series: list[dict]
    final_bank: ProposalBank
    initial_stats: dict
    stats: dict
    n_reinit: int
    scene: Scene
    snapshots: list[tuple[int, ProposalBank]] = field(default_factory=list)

    def to_dict(self) -> dict:
        """JSON-ready, deterministic view (no timestamps)."""
        return {
            "config": self.config.to_dict(),
            "series": self.series,
            "initial_stats": self.initial_stats,
            "stats": self.stats,
            "n_reinit": self.n_reinit,
            "final_bank": {
                "controls": self.final_bank.controls.tolist(),
                "logits": self.final_bank.logits.tolist(),
            },
        }


class _Reinitializer:
    """Replaces collapsed proposals from a dedicated random stream."""

    def __init__(self, config: TrainConfig):
        self.init = config.init
        self.min_chord = config.min_chord
        self.rng = np.random.default_rng([config.seed, 1])
        self.count = 0

    def reset(self, bank: ProposalBank, index: int, step: int, reason: str) -> None:
        bank.controls[index] = _draw_controls(self.init, self.rng, 1)[0]
        bank.logits[index] = 0.0
        self.count += 1
        logger.warning(f"step {step}: re-initialized proposal {index} ({reason})")

    def sweep(self, bank: ProposalBank, n_points: int, step: int) -> None:
        chords = chord_lengths(bank.sample(n_points))
        for index in np.flatnonzero(chords < self.min_chord):
            self.reset(bank, int(index), step, f"chord {chords[index]:.3g}")
        bad = ~(np.isfinite(bank.controls).all(axis=(1, 2)) & np.isfinite(bank.logits))
        for index in np.flatnonzero(bad):
            self.reset(bank, int(index), step, "non-finite parameters")


def _scene_for_step(source: Union[Scene, SceneSpec], config: TrainConfig, step: int) -> Scene:
    if isinstance(source, Scene):
        return source
    if config.resample == "every_step":
        return generate_scene(replace(source, seed=source.seed + step))
    return generate_scene(source)


def _evaluate(bank: ProposalBank, scene: Scene, config: TrainConfig, n_points: int,
              reinit: _Reinitializer, step: int) -> LossReport:
    for _ in range(bank.k + 1):
        try:
            return total_loss(bank, scene, config.weights, n_points)
        except DegenerateLaneError as e:
            if e.index is None:
                raise
            reinit.reset(bank, e.index, step, "degenerate chord")
    return total_loss(bank, scene, config.weights, n_points)


def train(source: Union[Scene, SceneSpec], config: TrainConfig) -> TrainReport:
    """
    Gradient descent on all control points and logits of a fresh bank.

    Args:
        source: a fixed Scene, or a SceneSpec drawn once (resample="fixed")
            or re-drawn with seed + step at every step (resample="every_step")
        config: optimizer settings and loss weights

    Returns:
        TrainReport with ceil(steps / log_every) logged entries
    """
    if isinstance(source, Scene) and config.resample == "every_step":
        raise ConfigError("train.resample", "every_step needs a scene spec, not a fixed scene")

    scene = _scene_for_step(source, config, 0)
    n_points = scene.n_points or config.n_points
    if scene.m > config.k_proposals:
        raise InvalidArgumentError(
            f"{scene.m} ground-truth lanes exceed {config.k_proposals} proposals"
        )

    bank = init_proposals(config, scene.frame)
    reinit = _Reinitializer(config)
    reinit.sweep(bank, n_points, 0)
    initial_stats = summarize(bank, scene, config.weights, n_points)
    series: list[dict] = []
    snapshots: list[tuple[int, ProposalBank]] = []

    for step in range(config.steps):
        if step and config.resample == "every_step":
            scene = _scene_for_step(source, config, step)
        lr = config.lr_at(step)
        report = _evaluate(bank, scene, config, n_points, reinit, step)

        if step % config.log_every == 0:
            shapes = report.shape_values
            if shapes is None:
                shapes, _ = straightness_ratios(bank.sample(n_points))
            mean_shape = float(shapes.mean())
            counts = report.match.active_counts()
            entry = {"step": step, "lr": lr, **report.summary(),
                     "mean_shape": mean_shape,
                     "max_active_per_cluster": max(counts) if counts else 0,
                     "n_reinit": reinit.count}
            series.append(entry)
            snapshots.append((step, bank.copy()))
            logger.info(
                f"step {step}/{config.steps} lr={lr:.4g} total={report.j_total:.6f} "
                f"mean_S={mean_shape:.4f} reinit={reinit.count}"
            )

        update = np.clip(-lr * report.grad_controls, -config.max_step, config.max_step)
        bank.controls += update
        bank.logits -= lr * report.grad_logits
        reinit.sweep(bank, n_points, step + 1)

    snapshots.append((config.steps, bank.copy()))
    stats = summarize(bank, scene, config.weights, n_points)
    logger.info(f"training finished: {config.steps} steps, {reinit.count} re-initializations")
    return TrainReport(
        config=config,
        series=series,
        final_bank=bank,
        initial_stats=initial_stats,
        stats=stats,
        n_reinit=reinit.count,
        scene=scene,
        snapshots=snapshots,
    )
