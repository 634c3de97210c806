"""
Finite-difference verification of the analytic loss gradients.

Features:
- Central-difference checker with kink exclusion for piecewise-linear terms
- Seeded suite over every loss term plus the aggregate objective
- Table rendering for the `gradcheck` command
"""

import logging
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.special import expit

from .errors import EvaluationError, InvalidArgumentError
from .geometry import (
    Frame,
    LanePolyline,
    ProposalBank,
    Scene,
    controls_gradient,
    sample_controls,
    straightness_ratios,
)
from .losses import (
    LossWeights,
    cls_loss,
    discrimination_loss,
    diversity_loss,
    freeze_targets,
    kink_margins,
    location_loss,
    reg_loss,
    shape_loss,
    total_loss,
)

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-5
DEFAULT_KINK_BAND = 1e-6
DEFAULT_TOLERANCE = 1e-4

# Rounding allowance, in ulps of |f|, below which a difference counts as agreement
FD_NOISE_ULPS = 64

SUITE_LOSSES = ("poly", "reg", "cls", "shape", "loc", "div", "dis", "total")


@dataclass(frozen=True)
class GradCheckResult:
    """Outcome of one checker run; worst_parameter_index is -1 when nothing was compared."""
    max_rel_error: float
    max_abs_error: float
    worst_parameter_index: int
    n_skipped_kinks: int
    n_checked: int = 0

    def passed(self, tolerance: float = DEFAULT_TOLERANCE) -> bool:
        return self.max_rel_error < tolerance


def finite_diff_check(
    f: Callable[[np.ndarray], float],
    analytic_grad,
    point,
    step: float = DEFAULT_STEP,
    kink_band: float = DEFAULT_KINK_BAND,
    kink_distance=None,
) -> GradCheckResult:
    """
    Compare an analytic gradient with central differences coordinate by coordinate.

    Args:
        f: scalar function of a parameter vector
        analytic_grad: claimed gradient at point
        point: parameter vector
        step: finite-difference step h
        kink_band: extra margin around registered kinks
        kink_distance: per-coordinate distance to the nearest kink (None = smooth)

    Returns:
        GradCheckResult over the coordinates that were not skipped

    Raises:
        EvaluationError: f returned a non-finite value (carries the coordinate)
    """
    if step <= 0:
        raise InvalidArgumentError(f"step must be > 0, got {step}")
    x0 = np.array(point, dtype=float).reshape(-1)
    grad = np.asarray(analytic_grad, dtype=float).reshape(-1)
    if grad.shape != x0.shape:
        raise InvalidArgumentError(f"gradient shape {grad.shape} does not match point {x0.shape}")
    margins = None
    if kink_distance is not None:
        margins = np.asarray(kink_distance, dtype=float).reshape(-1)
        if margins.shape != x0.shape:
            raise InvalidArgumentError("kink_distance must match the point shape")

    max_rel = 0.0
    max_abs = 0.0
    worst = -1
    skipped = 0
    checked = 0
    for j in range(x0.size):
        if margins is not None and margins[j] < step + kink_band:
            skipped += 1
            continue

        x = x0.copy()
        x[j] = x0[j] + step
        f_plus = float(f(x))
        x[j] = x0[j] - step
        f_minus = float(f(x))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise EvaluationError("function value is not finite", index=j)

        numeric = (f_plus - f_minus) / (2 * step)
        abs_err = abs(grad[j] - numeric)
        noise = FD_NOISE_ULPS * np.finfo(float).eps * max(abs(f_plus), abs(f_minus), 1.0) / step
        rel_err = 0.0 if abs_err <= noise else abs_err / max(abs(grad[j]), abs(numeric), 1e-8)
        checked += 1
        if worst < 0 or rel_err > max_rel:
            max_rel = rel_err
            worst = j
        max_abs = max(max_abs, abs_err)

    return GradCheckResult(
        max_rel_error=float(max_rel),
        max_abs_error=float(max_abs),
        worst_parameter_index=int(worst),
        n_skipped_kinks=skipped,
        n_checked=checked,
    )


# =============================================================================
# Random configurations
# =============================================================================

def random_controls(rng: np.random.Generator, k: int) -> np.ndarray:
    """Bottom-to-middle cubic controls with a chord of at least 0.3."""
    start = np.column_stack([rng.uniform(0.05, 0.95, k), rng.uniform(0.85, 1.0, k)])
    end = np.column_stack([rng.uniform(0.3, 0.7, k), rng.uniform(0.3, 0.5, k)])
    t = np.array([0.0, 1 / 3, 2 / 3, 1.0])[None, :, None]
    controls = start[:, None] + t * (end - start)[:, None]
    controls[:, 1:3] += rng.normal(0.0, 0.05, size=(k, 2, 2))
    return controls


def random_scene(rng: np.random.Generator, m: int, n_points: int) -> Scene:
    gts = sample_controls(random_controls(rng, m), n_points) if m else []
    return Scene(frame=Frame(590, 1640), ground_truth=[LanePolyline(g) for g in gts])


def _random_weights(rng: np.random.Generator) -> LossWeights:
    flags = rng.random(8) < 0.75
    return LossWeights(
        use_reg=bool(flags[0]),
        use_seg=bool(flags[1]),
        use_shape=bool(flags[2]),
        use_loc=bool(flags[3]),
        use_div=bool(flags[4]),
        use_cls=bool(flags[5]),
        use_dis=bool(flags[6]),
        use_cap=bool(flags[7]),
        w_neg=float(rng.uniform(0.5, 2.0)),
        diversity_scope="global" if rng.random() < 0.25 else "cluster",
    )


def _controls_problem(rng, k, n, value_and_point_grad, weights):
    """Wrap a point-space term as a function of the flattened control vector."""
    m = int(rng.integers(1, 4))
    scene = random_scene(rng, m, n)
    bank = ProposalBank(random_controls(rng, k), np.zeros(k))
    targets = freeze_targets(bank, scene, weights, n)

    def f(x):
        return value_and_point_grad(sample_controls(x.reshape(k, 4, 2), n), scene, targets)[0]

    _, point_grad = value_and_point_grad(bank.sample(n), scene, targets)
    margins = kink_margins(bank, scene, weights, targets, n)[: 8 * k]
    return f, controls_gradient(point_grad).reshape(-1), bank.controls.reshape(-1), margins


def _problem(name: str, rng: np.random.Generator):
    """Build (f, analytic_grad, point, kink_distance) for one suite trial."""
    n = int(rng.integers(6, 25))
    if name == "poly":
        dim = int(rng.integers(1, 10))
        coeffs = rng.normal(size=dim)
        x0 = rng.normal(size=dim)
        return (lambda x: float(np.sum(coeffs * x ** 3 + x ** 2)),
                3 * coeffs * x0 ** 2 + 2 * x0, x0, None)

    if name == "reg":
        p = sample_controls(random_controls(rng, 1), n)[0]
        g = LanePolyline(sample_controls(random_controls(rng, 1), n)[0])
        _, grad = reg_loss(LanePolyline(p), g)
        return (lambda x: reg_loss(LanePolyline(x.reshape(n, 2)), g)[0],
                grad.reshape(-1), p.reshape(-1), np.abs(p - g.points).reshape(-1))

    if name in ("cls", "dis"):
        z0 = np.array([rng.uniform(-4.0, 4.0)])
        w = float(rng.uniform(0.5, 2.0))
        if name == "cls":
            label = int(rng.integers(0, 2))
            loss = lambda z: cls_loss(float(expit(z[0])), label, w)  # noqa: E731
        else:
            l_prime = float(rng.uniform(0.0, 1.0))
            loss = lambda z: discrimination_loss(float(expit(z[0])), l_prime, w)  # noqa: E731
        return (lambda z: loss(z)[0], np.array([loss(z0)[1]]), z0, None)

    k = int(rng.integers(3, 8))
    if name == "shape":
        controls = random_controls(rng, k)
        _, grads = shape_loss(sample_controls(controls, n))
        return (lambda x: shape_loss(sample_controls(x.reshape(k, 4, 2), n))[0],
                controls_gradient(grads).reshape(-1), controls.reshape(-1), None)

    if name == "loc":
        weights = LossWeights().with_disabled(("all",)).with_enabled(("loc",))
        return _controls_problem(
            rng, k, n, lambda pts, scene, t: location_loss(pts, scene, t.match), weights
        )

    if name == "div":
        scope = "global" if rng.random() < 0.25 else "cluster"
        weights = LossWeights(
            diversity_scope=scope, use_cap=bool(rng.random() < 0.5)
        ).with_disabled(("reg", "seg", "shape", "loc", "cls", "dis"))

        def div_term(pts, scene, t):
            s, s_grads = straightness_ratios(pts)
            value, d_s = diversity_loss(s, t.match, scope)
            return value, d_s[:, None, None] * s_grads

        return _controls_problem(rng, k, n, div_term, weights)

    if name == "total":
        k = 10
        m = int(rng.integers(0, 4))
        scene = random_scene(rng, m, n)
        bank = ProposalBank(random_controls(rng, k), rng.normal(0.0, 1.5, size=k))
        weights = _random_weights(rng)
        targets = freeze_targets(bank, scene, weights, n)
        report = total_loss(bank, scene, weights, n, targets)

        def objective(x):
            bank_x = ProposalBank.from_vector(x, k)
            return total_loss(bank_x, scene, weights, n, targets).j_total

        return (
            objective,
            report.grad_vector(),
            bank.to_vector(),
            kink_margins(bank, scene, weights, targets, n),
        )

    raise InvalidArgumentError(f"unknown loss {name!r}, expected one of {SUITE_LOSSES}")


# =============================================================================
# Suite
# =============================================================================

@dataclass(frozen=True)
class SuiteRow:
    """Aggregated checker results for one loss over all trials."""
    loss: str
    trials: int
    max_rel_error: float
    max_abs_error: float
    n_skipped_kinks: int
    passed: bool

    def to_dict(self) -> dict:
        return {
            "loss": self.loss,
            "trials": self.trials,
            "max_rel_error": self.max_rel_error,
            "max_abs_error": self.max_abs_error,
            "n_skipped_kinks": self.n_skipped_kinks,
            "passed": self.passed,
        }


def check_loss(name: str, seed: int = 0, trials: int = 100,
               tolerance: float = DEFAULT_TOLERANCE, step: float = DEFAULT_STEP,
               kink_band: float = DEFAULT_KINK_BAND) -> SuiteRow:
    """Run `trials` seeded random configurations of one loss through the checker."""
    if name not in SUITE_LOSSES:
        raise InvalidArgumentError(f"unknown loss {name!r}, expected one of {SUITE_LOSSES}")
    if trials < 1:
        raise InvalidArgumentError(f"trials must be >= 1, got {trials}")
    # Per-loss stream so --loss filters reproduce the full-suite rows
    rng = np.random.default_rng([seed, SUITE_LOSSES.index(name)])
    max_rel = max_abs = 0.0
    skipped = 0
    for _ in range(trials):
        f, grad, point, margins = _problem(name, rng)
        result = finite_diff_check(f, grad, point, step, kink_band, margins)
        max_rel = max(max_rel, result.max_rel_error)
        max_abs = max(max_abs, result.max_abs_error)
        skipped += result.n_skipped_kinks
    row = SuiteRow(name, trials, max_rel, max_abs, skipped, max_rel < tolerance)
    logger.debug(f"gradcheck {name}: max_rel={max_rel:.3e} skipped={skipped}")
    return row


def run_suite(seed: int = 0, trials: int = 100, losses: Optional[Iterable[str]] = None,
              tolerance: float = DEFAULT_TOLERANCE) -> list[SuiteRow]:
    """Check every requested loss; the polynomial self-check runs first when included."""
    names = list(losses) if losses else list(SUITE_LOSSES)
    unknown = [n for n in names if n not in SUITE_LOSSES]
    if unknown:
        raise InvalidArgumentError(f"unknown loss {unknown[0]!r}, expected one of {SUITE_LOSSES}")
    ordered = [n for n in SUITE_LOSSES if n in names]
    return [check_loss(name, seed, trials, tolerance) for name in ordered]


def format_table(rows: list[SuiteRow]) -> str:
    lines = [f"{'loss':<8} {'max_rel_error':>14} {'skipped_kinks':>14} {'status':>7}"]
    for row in rows:
        status = "ok" if row.passed else "FAIL"
        lines.append(
            f"{row.loss:<8} {row.max_rel_error:>14.3e} {row.n_skipped_kinks:>14d} {status:>7}"
        )
    return "\n".join(lines)
