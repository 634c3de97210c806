"""
SVG figures for training runs.

Snapshots draw the ground truth as dashed dark strokes and every proposal
colored by its confidence (blue = 0, red = 1). Output is plain SVG text with
fixed number formatting, so identical banks give identical files.
"""

import logging
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import Frame, ProposalBank, Scene

logger = logging.getLogger(__name__)

# Rendered width of a snapshot in SVG user units
SNAPSHOT_WIDTH = 820


def confidence_color(prob: float) -> str:
    p = float(np.clip(prob, 0.0, 1.0))
    red = int(round(40 + 215 * p))
    blue = int(round(40 + 215 * (1.0 - p)))
    return f"#{red:02x}40{blue:02x}"


def _points_attr(points: np.ndarray, frame: Frame, scale: float) -> str:
    xy = points * np.array([frame.width, frame.height]) * scale
    return " ".join(f"{x:.2f},{y:.2f}" for x, y in xy)


def bank_svg(bank: ProposalBank, scene: Scene, n_points: int, title: str = "") -> str:
    """One snapshot of a proposal bank over its scene."""
    frame = scene.frame
    scale = SNAPSHOT_WIDTH / frame.width
    width, height = SNAPSHOT_WIDTH, frame.height * scale
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg width="{width:.0f}" height="{height + 30:.0f}" '
        f'viewBox="0 0 {width:.0f} {height + 30:.0f}" xmlns="http://www.w3.org/2000/svg">',
        f'<rect x="0" y="0" width="{width:.0f}" height="{height:.2f}" '
        'fill="#fafafa" stroke="#999" stroke-width="1"/>',
    ]
    for lane in scene.ground_truth:
        parts.append(
            f'<polyline points="{_points_attr(lane.points, frame, scale)}" fill="none" '
            'stroke="#222" stroke-width="5" stroke-dasharray="12,8" opacity="0.6"/>'
        )
    probs = bank.probabilities()
    sampled = bank.sample(n_points)
    # Draw low-confidence proposals first so confident ones stay on top
    for k in np.argsort(probs, kind="stable"):
        points = sampled[k]
        parts.append(
            f'<polyline points="{_points_attr(points, frame, scale)}" fill="none" '
            f'stroke="{confidence_color(probs[k])}" stroke-width="2" opacity="0.85"/>'
        )
    if title:
        parts.append(
            f'<text x="8" y="{height + 20:.0f}" font-family="sans-serif" font-size="14" '
            f'fill="#333">{_escape(title)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def loss_curve_svg(series: Sequence[dict], key: str = "j_total",
                   width: int = 640, height: int = 320) -> str:
    """Line chart of one logged quantity against the step."""
    steps = np.array([row["step"] for row in series], dtype=float)
    values = np.array([row[key] for row in series], dtype=float)
    pad = 40
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg width="{width}" height="{height}" viewBox="0 0 {width} {height}" '
        'xmlns="http://www.w3.org/2000/svg">',
        f'<rect x="{pad}" y="{pad // 2}" width="{width - 2 * pad}" height="{height - 2 * pad}" '
        'fill="none" stroke="#999"/>',
    ]
    if steps.size:
        x_span = max(steps.max() - steps.min(), 1.0)
        lo, hi = float(values.min()), float(values.max())
        y_span = hi - lo if hi > lo else 1.0
        xs = pad + (steps - steps.min()) / x_span * (width - 2 * pad)
        ys = pad // 2 + (1.0 - (values - lo) / y_span) * (height - 2 * pad)
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in zip(xs, ys))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#c03030" stroke-width="2"/>')
        parts.append(
            f'<text x="{pad}" y="{height - 8}" font-family="sans-serif" font-size="12" '
            f'fill="#333">{_escape(key)}: {values[0]:.4g} to {values[-1]:.4g} '
            f'(steps {int(steps.min())}-{int(steps.max())})</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_snapshots(snapshots: Sequence[tuple[int, ProposalBank]], scene: Scene,
                    out_dir: Path, n_points: int, prefix: Optional[str] = "bank") -> list[Path]:
    """Write one SVG per (step, bank) snapshot; returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for step, bank in snapshots:
        path = out_dir / f"{prefix}_step{step:06d}.svg"
        path.write_text(bank_svg(bank, scene, n_points, f"step {step}"), encoding="utf-8")
        paths.append(path)
    logger.debug(f"wrote {len(paths)} snapshots to {out_dir}")
    return paths
