"""
Lane Modulation MCP Server - FastMCP with Streamable HTTP Transport

Exposes the loss library, the gradient checker, the training harness and the
detection metrics as MCP tools.

Features:
- Synthetic scene generation
- Finite-difference gradient verification
- Direct-parameter training runs with ablation presets
- F1 / threshold-sweep evaluation of prediction sets
"""

import asyncio
import logging
import os
from datetime import datetime, timezone
from typing import Optional

from fastmcp import Context, FastMCP
from fastmcp.server.http import Request
from starlette.responses import JSONResponse

from . import __version__
from .errors import LaneModulationError
from .evaluation import DEFAULT_CONF_THRESHOLD, DEFAULT_IOU_THRESHOLD, F1Evaluator, sweep_grid
from .formats import (
    bank_predictions,
    predictions_from_dict,
    predictions_to_dict,
    require_same_frame,
    scene_from_dict,
    scene_to_dict,
    sweep_rows,
)
from .gradcheck import run_suite
from .losses import LossWeights
from .synth import SceneSpec, generate_scene
from .trainer import TrainConfig, train

# Configure logging
logging.basicConfig(
    level=getattr(logging, os.getenv("LOG_LEVEL", "INFO").upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

# Configuration
HOST = os.getenv("HOST", "0.0.0.0")
PORT = int(os.getenv("PORT", "8080"))

# Upper bound on steps accepted by the train tool
MAX_TOOL_STEPS = int(os.getenv("LANE_MOD_MAX_STEPS", "20000"))

TOOLS = ["lane_generate_scene", "lane_gradcheck", "lane_train", "lane_evaluate"]

mcp = FastMCP(
    name="lane-modulation",
    version=__version__,
)


# =============================================================================
# Custom HTTP Routes
# =============================================================================

@mcp.custom_route("/", methods=["GET"])
async def server_info(request: Request) -> JSONResponse:
    """Server information endpoint."""
    return JSONResponse({
        "name": "lane-modulation",
        "version": __version__,
        "description": "Dense lane proposal modulation losses, training harness and metrics",
        "transport": "streamable-http",
        "endpoints": {
            "info": "/",
            "health": "/health",
            "mcp": "/mcp",
        },
        "tools": TOOLS,
    })


@mcp.custom_route("/health", methods=["GET"])
async def health_check(request: Request) -> JSONResponse:
    """Health check endpoint."""
    return JSONResponse({
        "status": "ok",
        "server": "lane-modulation",
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    })


def _error(tool: str, e: Exception) -> dict:
    logger.warning(f"[{tool}] {e}")
    return {"error": str(e)}


# =============================================================================
# Tools
# =============================================================================

@mcp.tool()
async def lane_generate_scene(
    seed: int = 0,
    lane_family: str = "cubic",
    n_lanes_min: int = 3,
    n_lanes_max: int = 3,
    curvature_min: float = 1.01,
    curvature_max: float = 1.05,
    n_points: int = 20,
) -> dict:
    """
    Generate a synthetic ground-truth scene.

    Args:
        seed: Random seed (same seed, same scene)
        lane_family: straight, arc or cubic
        n_lanes_min: Minimum number of lanes
        n_lanes_max: Maximum number of lanes
        curvature_min: Minimum straightness ratio of a lane (>= 1)
        curvature_max: Maximum straightness ratio of a lane
        n_points: Points sampled per lane

    Returns:
        Scene JSON {version, frame, lanes}
    """
    try:
        spec = SceneSpec(
            seed=seed,
            lane_family=lane_family,
            n_lanes=(n_lanes_min, n_lanes_max),
            curvature_range=(curvature_min, curvature_max),
            n_points=n_points,
        )
        scene = await asyncio.to_thread(generate_scene, spec)
    except (LaneModulationError, ValueError) as e:
        return _error("lane_generate_scene", e)
    return scene_to_dict(scene)


@mcp.tool()
async def lane_gradcheck(
    seed: int = 0,
    trials: int = 20,
    losses: Optional[list[str]] = None,
    tolerance: float = 1e-4,
    ctx: Context = None,
) -> dict:
    """
    Verify the analytic loss gradients against central finite differences.

    Args:
        seed: Random seed for the test configurations
        trials: Random configurations per loss
        losses: Subset of poly, reg, cls, shape, loc, div, dis, total (default: all)
        tolerance: Maximum accepted relative error

    Returns:
        {"passed": bool, "rows": [{loss, trials, max_rel_error, n_skipped_kinks, passed}]}
    """
    if ctx:
        await ctx.info(f"Gradient check: {trials} trials per loss")
    try:
        rows = await asyncio.to_thread(run_suite, seed, trials, losses, tolerance)
    except LaneModulationError as e:
        return _error("lane_gradcheck", e)
    return {"passed": all(r.passed for r in rows), "rows": [r.to_dict() for r in rows]}


@mcp.tool()
async def lane_train(
    scene: Optional[dict] = None,
    seed: int = 0,
    steps: int = 500,
    k_proposals: int = 20,
    preset: str = "h",
    learning_rate: float = 20.0,
    log_every: int = 100,
    scene_seed: int = 0,
    lane_family: str = "cubic",
    ctx: Context = None,
) -> dict:
    """
    Optimize a proposal bank on a scene and report its statistics.

    Args:
        scene: Scene JSON; generated from scene_seed / lane_family when omitted
        seed: Seed of the proposal initialization
        steps: Gradient-descent steps
        k_proposals: Number of proposals
        preset: Ablation preset (a..h, shape-only, loc-only, no-difference, no-cap)
        learning_rate: Initial learning rate (cosine schedule)
        log_every: Steps between logged entries
        scene_seed: Seed of the generated scene
        lane_family: Lane family of the generated scene

    Returns:
        Initial and final statistics, logged series and the final predictions
    """
    if steps > MAX_TOOL_STEPS:
        return {"error": f"steps must be <= {MAX_TOOL_STEPS}"}
    try:
        source = (scene_from_dict(scene) if scene is not None
                  else SceneSpec(seed=scene_seed, lane_family=lane_family))
        config = TrainConfig(
            seed=seed,
            k_proposals=k_proposals,
            steps=steps,
            learning_rate=learning_rate,
            log_every=log_every,
            weights=LossWeights.preset(preset),
        )
        if ctx:
            await ctx.info(f"Training {k_proposals} proposals for {steps} steps, preset {preset}")
        report = await asyncio.to_thread(train, source, config)
    except (LaneModulationError, ValueError) as e:
        return _error("lane_train", e)

    n_points = report.scene.n_points or config.n_points
    predictions = bank_predictions(report.final_bank, n_points)
    return {
        "initial_stats": report.initial_stats,
        "stats": report.stats,
        "n_reinit": report.n_reinit,
        "series": report.series,
        "predictions": predictions_to_dict(predictions, report.scene.frame),
    }


@mcp.tool()
async def lane_evaluate(
    predictions: dict,
    ground_truth: dict,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
    sweep: bool = False,
    stroke_width: Optional[float] = None,
) -> dict:
    """
    Score predictions against ground truth with width-rasterized IoU matching.

    Args:
        predictions: Prediction JSON (scene format with a confidence per lane)
        ground_truth: Scene JSON
        conf_threshold: Predictions below this confidence are dropped
        iou_threshold: Matched pairs above this IoU are true positives
        sweep: Also return F1 over a grid of confidence thresholds
        stroke_width: Stroke width in pixels (default scales 30 px at 1640 px width)

    Returns:
        {tp, fp, fn, precision, recall, f1} plus "sweep" rows when requested
    """
    try:
        gt = scene_from_dict(ground_truth)
        pred_frame, preds = predictions_from_dict(predictions)
        require_same_frame(pred_frame, gt.frame)

        def run():
            evaluator = F1Evaluator(preds, gt.ground_truth, gt.frame, stroke_width)
            result = evaluator.evaluate(conf_threshold, iou_threshold)
            rows = None
            if sweep:
                rows = [(t, evaluator.evaluate(t, iou_threshold)) for t in sweep_grid()]
            return result, rows

        result, rows = await asyncio.to_thread(run)
    except (LaneModulationError, ValueError) as e:
        return _error("lane_evaluate", e)

    payload = {k: v for k, v in result.to_dict().items() if k != "iou"}
    if rows is not None:
        payload["sweep"] = sweep_rows(rows)
    return payload


# =============================================================================
# Main Entry Point
# =============================================================================

def main():
    """Start the Lane Modulation MCP Server."""
    logger.info(f"Starting Lane Modulation MCP Server v{__version__}")
    logger.info(f"Listening on {HOST}:{PORT}")

    mcp.run(
        transport="http",
        host=HOST,
        port=PORT,
        path="/mcp"
    )


if __name__ == "__main__":
    main()
