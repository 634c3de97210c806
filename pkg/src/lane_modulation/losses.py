"""
Loss terms of the dense hybrid proposal modulation objective.

Every term returns its value together with analytic gradients. Point
gradients are pulled back to control-point space through the Bernstein
weights, logit gradients are taken w.r.t. the pre-activation.

Terms:
- J_reg: L1 regression of Hungarian positives
- J_seg: segmentation slot, always 0 (no feature maps in this harness)
- J_ava: lambda_shape * mean S_k + lambda_loc * mean D_k over all K proposals
- J_div: negative mean |S_k - S_i| over active same-cluster pairs
- J_cls / J_dis: weighted binary cross-entropy with hard or soft labels
"""

import logging
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterable, Optional

import numpy as np

from .assignment import (
    NO_TARGET,
    DenseMatch,
    PositiveAssignment,
    default_cap,
    dense_match,
    hungarian_assign,
)
from .errors import ConfigError, InvalidArgumentError
from .geometry import (
    LanePolyline,
    ProposalBank,
    Scene,
    controls_gradient,
    l1_cost_matrix,
    straightness_ratios,
)

logger = logging.getLogger(__name__)

# Probability clamp applied before every log
PROB_EPS = 1e-7

# Point count used when a scene has no ground truth to take N from
DEFAULT_N_POINTS = 20

DIVERSITY_SCOPES = ("cluster", "global")

# Toggle names accepted by with_enabled / with_disabled
TERMS = ("reg", "seg", "ava", "shape", "loc", "div", "cls", "dis", "cap")


@dataclass(frozen=True)
class LossWeights:
    """
    Weights, constants and ablation switches of the overall objective.

    lambda_* weight the five terms in the order reg, seg, ava, div, dis;
    lambda_shape / lambda_loc split J_ava. The classification slot is on when
    use_cls or use_dis is set; use_dis switches it to soft labels.
    """
    lambda_reg: float = 1.0
    lambda_seg: float = 0.1
    lambda_ava: float = 0.0005
    lambda_div: float = 0.0001
    lambda_dis: float = 0.75
    lambda_shape: float = 1.0
    lambda_loc: float = 1.0
    w_neg: float = 1.0
    beta: float = 10.0
    gamma: float = 0.5
    use_reg: bool = True
    use_seg: bool = True
    use_shape: bool = True
    use_loc: bool = True
    use_div: bool = True
    use_cls: bool = True
    use_dis: bool = True
    use_cap: bool = True
    cap: Optional[int] = None
    diversity_scope: str = "cluster"

    def __post_init__(self):
        for name in ("lambda_reg", "lambda_seg", "lambda_ava", "lambda_div", "lambda_dis",
                     "lambda_shape", "lambda_loc", "w_neg", "beta"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ConfigError(name, f"must be a finite non-negative number, got {value}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma", f"must lie in [0, 1], got {self.gamma}")
        if self.cap is not None and self.cap < 1:
            raise ConfigError("cap", f"must be >= 1, got {self.cap}")
        if self.diversity_scope not in DIVERSITY_SCOPES:
            raise ConfigError(
                "diversity_scope",
                f"must be one of {DIVERSITY_SCOPES}, got {self.diversity_scope!r}",
            )

    @property
    def classification_on(self) -> bool:
        return self.use_cls or self.use_dis

    @property
    def needs_shape(self) -> bool:
        return self.use_shape or self.use_div

    def cap_for(self, k: int) -> Optional[int]:
        """Per-cluster active limit for a bank of k proposals (None = unlimited)."""
        if not self.use_cap:
            return None
        return self.cap if self.cap is not None else default_cap(k)

    def baseline(self) -> "LossWeights":
        """Sparse objective: regression, segmentation slot and hard-label BCE only."""
        return replace(self, use_shape=False, use_loc=False, use_div=False,
                       use_dis=False, use_cls=True)

    def with_disabled(self, terms: Iterable[str]) -> "LossWeights":
        return replace(self, **_toggle(terms, False))

    def with_enabled(self, terms: Iterable[str]) -> "LossWeights":
        return replace(self, **_toggle(terms, True))

    @classmethod
    def preset(cls, name: str) -> "LossWeights":
        """Ablation rows: a..h over {ava, div, dis}, plus availability/diversity splits."""
        return cls().apply_preset(name)

    def apply_preset(self, name: str) -> "LossWeights":
        """Set the term switches of an ablation row, keeping weights and constants."""
        if name not in PRESETS:
            raise ConfigError(
                "preset", f"unknown preset {name!r}, expected one of {sorted(PRESETS)}"
            )
        enabled, disabled = PRESETS[name]
        base = self.with_enabled(("reg", "seg", "cls", "cap")).with_disabled(("ava", "div", "dis"))
        return base.with_enabled(enabled).with_disabled(disabled)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict, prefix: str = "weights") -> "LossWeights":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, value in (data or {}).items():
            if key not in known:
                raise ConfigError(f"{prefix}.{key}", "unknown field")
            default = known[key].default
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise ConfigError(f"{prefix}.{key}", f"expected a boolean, got {value!r}")
            elif key == "cap":
                if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                    raise ConfigError(f"{prefix}.{key}", f"expected an integer, got {value!r}")
            elif key == "diversity_scope":
                if not isinstance(value, str):
                    raise ConfigError(f"{prefix}.{key}", f"expected a string, got {value!r}")
            elif isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{prefix}.{key}", f"expected a number, got {value!r}")
            else:
                value = float(value)
            kwargs[key] = value
        try:
            return cls(**kwargs)
        except ConfigError as e:
            raise ConfigError(f"{prefix}.{e.field}", str(e).split(": ", 1)[-1]) from e


PRESETS: dict[str, tuple[tuple[str, ...], tuple[str, ...]]] = {
    "a": ((), ()),
    "b": (("ava",), ()),
    "c": (("div",), ()),
    "d": (("dis",), ()),
    "e": (("ava", "div"), ()),
    "f": (("ava", "dis"), ()),
    "g": (("div", "dis"), ()),
    "h": (("ava", "div", "dis"), ()),
    "shape-only": (("ava", "div", "dis"), ("loc",)),
    "loc-only": (("ava", "div", "dis"), ("shape",)),
    "no-difference": (("ava", "dis"), ("div", "cap")),
    "no-cap": (("ava", "div", "dis"), ("cap",)),
}


def _toggle(terms: Iterable[str], on: bool) -> dict:
    changes = {}
    for term in terms:
        term = term.strip().lower()
        if not term:
            continue
        if term == "all":
            for name in ("reg", "seg", "shape", "loc", "div", "cls", "dis", "cap"):
                changes[f"use_{name}"] = on
        elif term == "ava":
            changes["use_shape"] = on
            changes["use_loc"] = on
        elif term in TERMS:
            changes[f"use_{term}"] = on
        else:
            raise ConfigError("terms", f"unknown loss term {term!r}, expected one of {TERMS}")
    return changes


# =============================================================================
# Single-lane and scalar terms
# =============================================================================

def _check_pair(p: LanePolyline, g: LanePolyline) -> None:
    if p.n_points != g.n_points:
        raise InvalidArgumentError(f"point counts differ: {p.n_points} vs {g.n_points}")


def reg_loss(p: LanePolyline, g: LanePolyline) -> tuple[float, np.ndarray]:
    """L1 regression (1/2N) * sum(|y - v| + |x - u|) and its (N, 2) gradient."""
    _check_pair(p, g)
    diff = p.points - g.points
    scale = 2 * p.n_points
    return float(np.abs(diff).sum() / scale), np.sign(diff) / scale


def _bce(probs: np.ndarray, labels: np.ndarray, w_neg: float) -> tuple[np.ndarray, np.ndarray]:
    """Weighted BCE values and gradients w.r.t. the logits."""
    clamped = np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)
    values = -labels * np.log(clamped) - w_neg * (1.0 - labels) * np.log(1.0 - clamped)
    grads = -labels * (1.0 - probs) + w_neg * (1.0 - labels) * probs
    return values, grads


def cls_loss(prob: float, label: int, w_neg: float = 1.0) -> tuple[float, float]:
    """Binary cross-entropy with negative weighting; gradient w.r.t. the logit."""
    if label not in (0, 1):
        raise InvalidArgumentError(f"label must be 0 or 1, got {label}")
    value, grad = _bce(np.array([prob], dtype=float), np.array([float(label)]), w_neg)
    return float(value[0]), float(grad[0])


def discrimination_loss(prob: float, l_prime: float, w_neg: float = 1.0) -> tuple[float, float]:
    """Soft-label BCE -(l' log p + w (1 - l') log(1 - p)); gradient w.r.t. the logit."""
    if not 0.0 <= l_prime <= 1.0:
        raise InvalidArgumentError(f"soft label must lie in [0, 1], got {l_prime}")
    value, grad = _bce(np.array([prob], dtype=float), np.array([float(l_prime)]), w_neg)
    return float(value[0]), float(grad[0])


def soft_label(j_reg_value: float, is_positive: bool, beta: float = 10.0,
               gamma: float = 0.5) -> float:
    """Quality-aware label: gamma + (1 - gamma) * exp(-beta * J_reg) for positives, else 0."""
    if not is_positive:
        return 0.0
    return float(gamma + (1.0 - gamma) * np.exp(-beta * j_reg_value))


def soft_labels(reg_values: np.ndarray, positive: np.ndarray, beta: float,
                gamma: float) -> np.ndarray:
    """Vectorized soft_label; reg_values is ignored where positive is False."""
    labels = gamma + (1.0 - gamma) * np.exp(-beta * np.where(positive, reg_values, 0.0))
    return np.where(positive, labels, 0.0)


# =============================================================================
# Bank-level terms
# =============================================================================

def _points(bank) -> np.ndarray:
    if isinstance(bank, np.ndarray):
        return bank
    return np.stack([lane.points for lane in bank])


def shape_loss(bank) -> tuple[float, np.ndarray]:
    """
    Mean straightness ratio over every proposal.

    Args:
        bank: list of K LanePolylines or a (K, N, 2) array

    Returns:
        (value, grads (K, N, 2))

    Raises:
        DegenerateLaneError: identifies the first lane with a collapsed chord
    """
    points = _points(bank)
    values, grads = straightness_ratios(points)
    k = points.shape[0]
    return float(values.mean()), grads / k


def location_loss(bank, scene: Scene, match: DenseMatch) -> tuple[float, np.ndarray]:
    """
    Endpoint distance to the matched ground truth, summed over active proposals
    and divided by K. Label-free scenes give 0.
    """
    points = _points(bank)
    k = points.shape[0]
    grads = np.zeros_like(points)
    if scene.m == 0:
        return 0.0, grads
    gts = scene.gt_array()
    if gts.shape[1] != points.shape[1]:
        raise InvalidArgumentError(f"point counts differ: {gts.shape[1]} vs {points.shape[1]}")

    mask = match.active & (match.targets != NO_TARGET)
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return 0.0, grads
    tgt = match.targets[idx]
    d_start = points[idx, 0] - gts[tgt, 0]
    d_end = points[idx, -1] - gts[tgt, -1]
    total = np.abs(d_start).sum() + np.abs(d_end).sum()
    grads[idx, 0] = np.sign(d_start) / k
    grads[idx, -1] += np.sign(d_end) / k
    return float(total / k), grads


def diversity_mask(match: DenseMatch, k: int, scope: str = "cluster") -> np.ndarray:
    """
    Symmetric (K, K) pair mask with a zero diagonal.

    cluster: both proposals active and matched to the same ground truth.
    global: every pair of distinct proposals.
    """
    if scope == "global":
        return ~np.eye(k, dtype=bool)
    if scope != "cluster":
        raise InvalidArgumentError(f"unknown diversity scope {scope!r}")
    eligible = match.active & (match.targets != NO_TARGET)
    same = match.targets[:, None] == match.targets[None, :]
    mask = same & eligible[:, None] & eligible[None, :]
    np.fill_diagonal(mask, False)
    return mask


def diversity_loss(shape_values, match: DenseMatch,
                   scope: str = "cluster") -> tuple[float, np.ndarray]:
    """
    Negative mean absolute S difference over the K' masked unordered pairs.

    Returns:
        (value, grads w.r.t. each S_k); 0 and a zero gradient when K' = 0
    """
    s = np.asarray(shape_values, dtype=float)
    mask = diversity_mask(match, s.shape[0], scope)
    n_pairs = int(mask.sum()) // 2
    if n_pairs == 0:
        return 0.0, np.zeros_like(s)
    diff = s[:, None] - s[None, :]
    value = -float(np.abs(diff)[mask].sum() / 2 / n_pairs)
    grads = -(np.sign(diff) * mask).sum(axis=1) / n_pairs
    return value, grads


def intra_cluster_spread(shape_values, match: DenseMatch) -> float:
    """Mean |S_k - S_i| over active same-cluster pairs (0 without pairs)."""
    value, _ = diversity_loss(shape_values, match, "cluster")
    return -value


# =============================================================================
# Overall objective
# =============================================================================

@dataclass(frozen=True, eq=False)
class FrozenTargets:
    """Matching and labels held fixed across evaluations (stop-gradient quantities)."""
    assignment: PositiveAssignment
    match: DenseMatch
    labels: np.ndarray
    pair_reg: dict = field(default_factory=dict)


@dataclass(eq=False)
class LossReport:
    """One evaluation of the overall objective."""
    j_reg: float
    j_seg: float
    j_cls: float
    j_shape: float
    j_loc: float
    j_ava: float
    j_div: float
    j_total: float
    contributions: dict
    soft_labels: np.ndarray
    shape_values: Optional[np.ndarray]
    grad_controls: np.ndarray
    grad_logits: np.ndarray
    assignment: PositiveAssignment
    match: DenseMatch

    def grad_vector(self) -> np.ndarray:
        """Gradient laid out like ProposalBank.to_vector()."""
        return np.concatenate([self.grad_controls.reshape(-1), self.grad_logits])

    def summary(self) -> dict:
        return {
            "j_reg": self.j_reg,
            "j_seg": self.j_seg,
            "j_cls": self.j_cls,
            "j_shape": self.j_shape,
            "j_loc": self.j_loc,
            "j_ava": self.j_ava,
            "j_div": self.j_div,
            "j_total": self.j_total,
        }


def _resolve_n(scene: Scene, n_points: Optional[int]) -> int:
    if n_points is not None:
        if scene.n_points is not None and n_points != scene.n_points:
            raise InvalidArgumentError(
                f"n_points {n_points} does not match the scene's {scene.n_points}"
            )
        return n_points
    return scene.n_points or DEFAULT_N_POINTS


def _pair_regression(points: np.ndarray, gts: np.ndarray,
                     assignment: PositiveAssignment) -> tuple[dict, dict]:
    """Per-pair J_reg values and (N, 2) gradients keyed by proposal index."""
    values, grads = {}, {}
    scale = 2 * points.shape[1]
    for i, k in assignment.pairs:
        diff = points[k] - gts[i]
        values[k] = float(np.abs(diff).sum() / scale)
        grads[k] = np.sign(diff) / scale
    return values, grads


def freeze_targets(bank: ProposalBank, scene: Scene, weights: LossWeights,
                   n_points: Optional[int] = None) -> FrozenTargets:
    """Compute matching and classification labels for the bank's current state."""
    n = _resolve_n(scene, n_points)
    points = bank.sample(n)
    gts = scene.gt_array(n)
    costs = l1_cost_matrix(gts, points)
    assignment = hungarian_assign(costs)
    match = dense_match(costs, weights.cap_for(bank.k))
    pair_reg, _ = _pair_regression(points, gts, assignment)
    positive = np.zeros(bank.k, dtype=bool)
    reg_values = np.zeros(bank.k)
    for k, value in pair_reg.items():
        positive[k] = True
        reg_values[k] = value
    if weights.use_dis:
        labels = soft_labels(reg_values, positive, weights.beta, weights.gamma)
    else:
        labels = positive.astype(float)
    return FrozenTargets(assignment=assignment, match=match, labels=labels, pair_reg=pair_reg)


def total_loss(bank: ProposalBank, scene: Scene, weights: LossWeights,
               n_points: Optional[int] = None,
               targets: Optional[FrozenTargets] = None) -> LossReport:
    """
    Weighted sum of the enabled terms with gradients in parameter space.

    Args:
        bank: K proposals
        scene: frame and ground truth
        weights: weights and ablation switches
        n_points: sampling grid size, defaults to the scene's N
        targets: precomputed matching and labels; computed from the bank when omitted

    Returns:
        LossReport; disabled terms contribute exactly 0 to value and gradients

    Raises:
        DegenerateLaneError: a proposal chord collapsed (carries the index)
    """
    n = _resolve_n(scene, n_points)
    k = bank.k
    points = bank.sample(n)
    gts = scene.gt_array(n)
    if targets is None:
        targets = freeze_targets(bank, scene, weights, n)
    assignment, match = targets.assignment, targets.match

    point_grad = np.zeros_like(points)
    logit_grad = np.zeros(k)
    contributions: dict[str, float] = {}

    # Regression over Hungarian positives
    pair_reg, pair_grad = _pair_regression(points, gts, assignment)
    n_pairs = len(pair_reg)
    j_reg = sum(pair_reg.values()) / n_pairs if n_pairs else 0.0
    if weights.use_reg and n_pairs:
        for kk, grad in pair_grad.items():
            point_grad[kk] += weights.lambda_reg * grad / n_pairs
    if weights.use_reg:
        contributions["reg"] = weights.lambda_reg * j_reg

    j_seg = 0.0
    if weights.use_seg:
        contributions["seg"] = weights.lambda_seg * j_seg

    # Availability: shape over all proposals, location over active ones
    shape_values = None
    shape_grads = None
    j_shape = j_loc = 0.0
    if weights.needs_shape:
        shape_values, shape_grads = straightness_ratios(points)
    if weights.use_shape:
        j_shape = float(shape_values.mean())
        point_grad += (weights.lambda_ava * weights.lambda_shape / k) * shape_grads
    if weights.use_loc:
        j_loc, loc_grads = location_loss(points, scene, match)
        point_grad += weights.lambda_ava * weights.lambda_loc * loc_grads
    j_ava = 0.0
    if weights.use_shape:
        j_ava += weights.lambda_shape * j_shape
    if weights.use_loc:
        j_ava += weights.lambda_loc * j_loc
    if weights.use_shape or weights.use_loc:
        contributions["ava"] = weights.lambda_ava * j_ava

    # Diversity
    j_div = 0.0
    if weights.use_div:
        j_div, d_shape = diversity_loss(shape_values, match, weights.diversity_scope)
        point_grad += weights.lambda_div * d_shape[:, None, None] * shape_grads
        contributions["div"] = weights.lambda_div * j_div

    # Classification slot, hard or soft labels
    j_cls = 0.0
    if weights.classification_on:
        values, grads = _bce(bank.probabilities(), targets.labels, weights.w_neg)
        j_cls = float(values.mean())
        logit_grad += weights.lambda_dis * grads / k
        contributions["cls"] = weights.lambda_dis * j_cls

    j_total = 0.0
    for value in contributions.values():
        j_total += value

    return LossReport(
        j_reg=float(j_reg),
        j_seg=j_seg,
        j_cls=j_cls,
        j_shape=j_shape,
        j_loc=float(j_loc),
        j_ava=float(j_ava),
        j_div=float(j_div),
        j_total=float(j_total),
        contributions=contributions,
        soft_labels=targets.labels,
        shape_values=shape_values,
        grad_controls=controls_gradient(point_grad),
        grad_logits=logit_grad,
        assignment=assignment,
        match=match,
    )


def sparse_loss(bank: ProposalBank, scene: Scene, weights: LossWeights,
                n_points: Optional[int] = None) -> tuple[float, np.ndarray, np.ndarray]:
    """
    Sparse baseline objective: lambda_reg * J_reg + lambda_seg * J_seg + lambda_dis * J_cls
    with hard labels on Hungarian positives.

    Returns:
        (value, grad_controls (K, 4, 2), grad_logits (K,))
    """
    n = _resolve_n(scene, n_points)
    k = bank.k
    points = bank.sample(n)
    gts = scene.gt_array(n)
    assignment = hungarian_assign(l1_cost_matrix(gts, points))

    point_grad = np.zeros_like(points)
    logit_grad = np.zeros(k)
    total = 0.0

    pair_reg, pair_grad = _pair_regression(points, gts, assignment)
    n_pairs = len(pair_reg)
    j_reg = sum(pair_reg.values()) / n_pairs if n_pairs else 0.0
    if weights.use_reg and n_pairs:
        for kk, grad in pair_grad.items():
            point_grad[kk] += weights.lambda_reg * grad / n_pairs
    if weights.use_reg:
        total += weights.lambda_reg * j_reg
    if weights.use_seg:
        total += weights.lambda_seg * 0.0

    labels = np.zeros(k)
    labels[list(pair_reg)] = 1.0
    values, grads = _bce(bank.probabilities(), labels, weights.w_neg)
    logit_grad += weights.lambda_dis * grads / k
    total += weights.lambda_dis * float(values.mean())

    return float(total), controls_gradient(point_grad), logit_grad


def kink_margins(bank: ProposalBank, scene: Scene, weights: LossWeights,
                 targets: FrozenTargets, n_points: Optional[int] = None) -> np.ndarray:
    """
    Distance, in parameter units, from each parameter to the nearest |.| kink
    of the enabled terms (inf where none applies). Laid out like to_vector().
    """
    n = _resolve_n(scene, n_points)
    k = bank.k
    points = bank.sample(n)
    gts = scene.gt_array(n)
    margins = np.full((k, 4, 2), np.inf)

    if weights.use_reg:
        for i, kk in targets.assignment.pairs:
            closest = np.abs(points[kk] - gts[i]).min(axis=0)
            margins[kk] = np.minimum(margins[kk], closest[None, :])

    if weights.use_loc and scene.m:
        for kk in np.flatnonzero(targets.match.active):
            i = targets.match.targets[kk]
            margins[kk, 0] = np.minimum(margins[kk, 0], np.abs(points[kk, 0] - gts[i, 0]))
            margins[kk, 3] = np.minimum(margins[kk, 3], np.abs(points[kk, -1] - gts[i, -1]))

    if weights.use_div:
        s, s_grads = straightness_ratios(points)
        sensitivity = np.abs(controls_gradient(s_grads)).reshape(k, -1).max(axis=1)
        sensitivity = np.maximum(sensitivity, 1e-12)
        mask = diversity_mask(targets.match, k, weights.diversity_scope)
        gaps = np.where(mask, np.abs(s[:, None] - s[None, :]), np.inf).min(axis=1)
        margins = np.minimum(margins, (gaps / sensitivity)[:, None, None])

    return np.concatenate([margins.reshape(-1), np.full(k, np.inf)])
