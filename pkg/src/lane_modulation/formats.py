"""
File formats: scene / prediction JSON, run configuration, manifests and CSV.

Scene file:       {"version": 1, "frame": {"h": H, "w": W}, "lanes": [{"points": [[x, y], ...]}]}
Prediction file:  same, with "confidence" on every lane.
Run config:       YAML or JSON with optional "scene", "train" and "weights" sections.

Coordinates are stored normalized. JSON output is written with sorted keys so
files are byte-identical for identical content.
"""

import csv
import json
import logging
import os
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

from . import __schema_version__, __version__
from .errors import ConfigError, InvalidArgumentError
from .geometry import Frame, LanePolyline, ProposalBank, Scene
from .losses import LossWeights
from .synth import SceneSpec
from .trainer import TrainConfig

logger = logging.getLogger(__name__)

SCHEMA_VERSION = __schema_version__

DEFAULT_OUTPUT_DIR = "runs"


def output_dir(override: Optional[str] = None) -> Path:
    """Explicit path, else $LANE_MOD_OUTPUT_DIR, else ./runs."""
    return Path(override or os.getenv("LANE_MOD_OUTPUT_DIR") or DEFAULT_OUTPUT_DIR)


# =============================================================================
# JSON helpers
# =============================================================================

def dumps(data: Any) -> str:
    return json.dumps(data, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path: Path, data: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(data), encoding="utf-8")
    return path


def read_json(path: Path) -> Any:
    with open(path, encoding="utf-8") as f:
        return json.load(f)


# =============================================================================
# Scenes and predictions
# =============================================================================

def _frame_from(data: dict) -> Frame:
    frame = data.get("frame")
    if not isinstance(frame, dict) or "h" not in frame or "w" not in frame:
        raise InvalidArgumentError("frame: expected {h, w}")
    try:
        return Frame.from_dict(frame)
    except (TypeError, ValueError) as e:
        raise InvalidArgumentError(f"frame: {e}") from e


def _check_version(data: Any) -> dict:
    if not isinstance(data, dict):
        raise InvalidArgumentError("expected a JSON object at the top level")
    version = data.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise InvalidArgumentError(f"version: unsupported schema version {version!r}")
    return data


def _lane_from(entry: Any, where: str) -> LanePolyline:
    if not isinstance(entry, dict) or "points" not in entry:
        raise InvalidArgumentError(f"{where}: expected an object with points")
    try:
        return LanePolyline(np.asarray(entry["points"], dtype=float))
    except (InvalidArgumentError, TypeError, ValueError) as e:
        raise InvalidArgumentError(f"{where}.points: {e}") from e


def scene_to_dict(scene: Scene) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "frame": scene.frame.to_dict(),
        "lanes": [{"points": lane.to_list()} for lane in scene.ground_truth],
    }


def scene_from_dict(data: Any) -> Scene:
    data = _check_version(data)
    lanes = [_lane_from(entry, f"lanes[{i}]") for i, entry in enumerate(data.get("lanes", []))]
    return Scene(frame=_frame_from(data), ground_truth=lanes)


def predictions_to_dict(predictions: Sequence[tuple[LanePolyline, float]], frame: Frame) -> dict:
    return {
        "version": SCHEMA_VERSION,
        "frame": frame.to_dict(),
        "lanes": [
            {"points": lane.to_list(), "confidence": float(conf)} for lane, conf in predictions
        ],
    }


def predictions_from_dict(data: Any) -> tuple[Frame, list[tuple[LanePolyline, float]]]:
    """Parse a prediction file; lanes without a confidence count as fully confident."""
    data = _check_version(data)
    predictions = []
    for i, entry in enumerate(data.get("lanes", [])):
        lane = _lane_from(entry, f"lanes[{i}]")
        conf = entry.get("confidence", 1.0)
        if isinstance(conf, bool) or not isinstance(conf, (int, float)) or not 0 <= conf <= 1:
            raise InvalidArgumentError(f"lanes[{i}].confidence: expected a number in [0, 1]")
        predictions.append((lane, float(conf)))
    return _frame_from(data), predictions


def require_same_frame(predicted: Frame, expected: Frame) -> None:
    """Raise InvalidArgumentError unless predictions share the ground-truth frame."""
    if predicted != expected:
        raise InvalidArgumentError(
            f"prediction frame {predicted.height}x{predicted.width} does not match "
            f"ground-truth frame {expected.height}x{expected.width}"
        )


def bank_predictions(bank: ProposalBank, n_points: int) -> list[tuple[LanePolyline, float]]:
    """Sampled proposals paired with their probabilities."""
    probs = bank.probabilities()
    return [(lane, float(p)) for lane, p in zip(bank.polylines(n_points), probs)]


def load_scene(path) -> Scene:
    return scene_from_dict(read_json(path))


def save_scene(path, scene: Scene) -> Path:
    return write_json(path, scene_to_dict(scene))


def load_predictions(path) -> tuple[Frame, list[tuple[LanePolyline, float]]]:
    return predictions_from_dict(read_json(path))


def save_predictions(path, predictions, frame: Frame) -> Path:
    return write_json(path, predictions_to_dict(predictions, frame))


# =============================================================================
# Run configuration
# =============================================================================

@dataclass(frozen=True)
class RunConfig:
    """Scene recipe plus optimizer settings (loss weights live in train.weights)."""
    scene: SceneSpec = field(default_factory=SceneSpec)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        weights = train.pop("weights")
        return {"scene": self.scene.to_dict(), "train": train, "weights": weights}

    @classmethod
    def from_dict(cls, data: Any) -> "RunConfig":
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("<root>", "expected a mapping with scene/train/weights sections")
        for key in data:
            if key not in ("scene", "train", "weights"):
                raise ConfigError(key, "unknown section")
        for key in ("scene", "train", "weights"):
            if data.get(key) is not None and not isinstance(data[key], dict):
                raise ConfigError(key, "expected a mapping")
        scene = SceneSpec.from_dict(data.get("scene") or {}, "scene")
        train_data = dict(data.get("train") or {})
        if "weights" in train_data:
            raise ConfigError(
                "train.weights", "loss weights belong in the top-level weights section"
            )
        train = TrainConfig.from_dict(train_data, "train")
        weights = LossWeights.from_dict(data.get("weights") or {}, "weights")
        return cls(scene=scene, train=replace(train, weights=weights))

    def with_weights(self, weights: LossWeights) -> "RunConfig":
        return replace(self, train=replace(self.train, weights=weights))


def load_config(path) -> RunConfig:
    """Read a YAML or JSON run configuration."""
    try:
        with open(path, encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except yaml.YAMLError as e:
        raise ConfigError(str(path), f"not valid YAML/JSON: {e}") from e
    if data is None:
        logger.warning(f"Config {path} is empty, using defaults")
    return RunConfig.from_dict(data)


# =============================================================================
# Manifests and CSV
# =============================================================================

@dataclass
class RunManifest:
    """Everything needed to reproduce a run; written before training starts."""
    config: dict
    seeds: dict
    outputs: dict
    tool_version: str = __version__
    created_at: str = field(
        default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds")
    )

    @classmethod
    def for_run(cls, run: RunConfig, outputs: dict) -> "RunManifest":
        return cls(
            config=run.to_dict(),
            seeds={"scene": run.scene.seed, "train": run.train.seed},
            outputs={name: str(path) for name, path in outputs.items()},
        )

    def to_dict(self) -> dict:
        return {
            "version": SCHEMA_VERSION,
            "tool_version": self.tool_version,
            "created_at": self.created_at,
            "config": self.config,
            "seeds": self.seeds,
            "outputs": self.outputs,
        }

    def run_config(self) -> RunConfig:
        return RunConfig.from_dict(self.config)


def write_csv(path, rows: Sequence[dict], columns: Optional[Sequence[str]] = None) -> Path:
    """Rows as CSV with a header; columns default to the first row's keys."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fieldnames = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(
            f, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n"
        )
        writer.writeheader()
        for row in rows:
            writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in fieldnames})
    return path


SWEEP_COLUMNS = ("threshold", "tp", "fp", "fn", "precision", "recall", "f1")


def sweep_rows(sweep) -> list[dict]:
    return [
        {"threshold": t, "tp": r.tp, "fp": r.fp, "fn": r.fn,
         "precision": r.precision, "recall": r.recall, "f1": r.f1}
        for t, r in sweep
    ]
