"""
Proposal-to-label matching.

Two matchers:
- hungarian_assign: optimal one-to-one assignment selecting the regression
  and classification positives.
- dense_match: every proposal follows its nearest ground truth; within each
  cluster only the `cap` closest proposals stay active for the location and
  diversity terms.

Cost matrices are (M, K): rows are ground-truth lanes, columns proposals.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidArgumentError

logger = logging.getLogger(__name__)

NO_TARGET = -1

# Relative slack when comparing a completion against the optimal total
TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class PositiveAssignment:
    """One-to-one (ground truth, proposal) pairs with their summed cost."""
    pairs: tuple[tuple[int, int], ...] = ()
    total_cost: float = 0.0

    @property
    def proposals(self) -> tuple[int, ...]:
        return tuple(k for _, k in self.pairs)

    def gt_for(self, proposal: int) -> Optional[int]:
        for i, k in self.pairs:
            if k == proposal:
                return i
        return None

    def to_dict(self) -> dict:
        return {"pairs": [list(p) for p in self.pairs], "total_cost": self.total_cost}


@dataclass(eq=False)
class DenseMatch:
    """
    Nearest-ground-truth clustering of proposals.

    Attributes:
        targets: (K,) ground-truth index per proposal, NO_TARGET when M = 0
        active: (K,) True iff the proposal survives its cluster cap
        clusters: per ground truth, member proposals by ascending distance
        cap: the per-cluster limit used (None = unlimited)
    """
    targets: np.ndarray
    active: np.ndarray
    clusters: list[list[int]] = field(default_factory=list)
    cap: Optional[int] = None

    def target(self, proposal: int) -> Optional[int]:
        t = int(self.targets[proposal])
        return None if t == NO_TARGET else t

    def active_members(self, gt_index: int) -> list[int]:
        return [k for k in self.clusters[gt_index] if self.active[k]]

    def active_counts(self) -> list[int]:
        return [len(self.active_members(i)) for i in range(len(self.clusters))]

    def to_dict(self) -> dict:
        return {
            "targets": [self.target(k) for k in range(len(self.targets))],
            "active": [bool(a) for a in self.active],
            "clusters": [list(c) for c in self.clusters],
            "cap": self.cap,
        }


def _check_costs(costs) -> np.ndarray:
    arr = np.asarray(costs, dtype=float)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"cost matrix must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("cost matrix contains non-finite entries")
    return arr


def hungarian_assign(costs) -> PositiveAssignment:
    """
    Minimum-total-cost one-to-one assignment of M ground truths to K proposals.

    Args:
        costs: (M, K) lane distances with M <= K

    Returns:
        PositiveAssignment with M pairs sorted by ground-truth index; among
        optimal assignments the lexicographically smallest pair list wins

    Raises:
        InvalidArgumentError: M > K or non-finite costs
    """
    arr = _check_costs(costs)
    m, k = arr.shape
    if m > k:
        raise InvalidArgumentError(f"{m} ground truths cannot be matched to {k} proposals")
    if m == 0:
        return PositiveAssignment()

    rows, cols = linear_sum_assignment(arr)
    optimum = float(arr[rows, cols].sum())
    pairs = _lexicographic_pairs(arr, optimum)
    total = float(sum(arr[i, j] for i, j in pairs))
    return PositiveAssignment(pairs=pairs, total_cost=total)


def _lexicographic_pairs(arr: np.ndarray, optimum: float) -> tuple[tuple[int, int], ...]:
    """
    Lexicographically smallest optimal pair set.

    Rows are fixed in order; each takes the lowest free column for which the
    remaining rows can still be completed at the optimal total.
    """
    m, k = arr.shape
    tol = TIE_TOLERANCE * max(1.0, abs(optimum))
    free = np.ones(k, dtype=bool)
    pairs = []
    budget = optimum
    for i in range(m):
        rest = arr[i + 1:]
        for j in np.flatnonzero(free):
            free[j] = False
            sub = rest[:, free]
            if sub.shape[0]:
                # Row minima bound the completion from below
                if arr[i, j] + sub.min(axis=1).sum() > budget + tol:
                    free[j] = True
                    continue
                r, c = linear_sum_assignment(sub)
                tail = float(sub[r, c].sum())
            else:
                tail = 0.0
            if arr[i, j] + tail <= budget + tol:
                pairs.append((i, int(j)))
                budget -= arr[i, j]
                break
            free[j] = True
    return tuple(pairs)


def default_cap(k: int) -> int:
    """Per-cluster upper limit U = floor(4K/25), at least 1."""
    if k < 1:
        raise InvalidArgumentError(f"proposal count must be >= 1, got {k}")
    return max(1, (4 * k) // 25)


def dense_match(costs, cap: Optional[int]) -> DenseMatch:
    """
    Assign each proposal to its nearest ground truth and cap every cluster.

    Args:
        costs: (M, K) lane distances; M = 0 is a valid label-free scene
        cap: active members kept per cluster, None keeps all of them

    Returns:
        DenseMatch; ties go to the lowest ground-truth index and, inside a
        cluster, to the lowest proposal index
    """
    if cap is not None and cap < 1:
        raise InvalidArgumentError(f"cap must be >= 1, got {cap}")
    arr = np.asarray(costs, dtype=float)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"cost matrix must be 2-D, got shape {arr.shape}")
    m, k = arr.shape

    if m == 0:
        return DenseMatch(
            targets=np.full(k, NO_TARGET, dtype=int),
            active=np.zeros(k, dtype=bool),
            clusters=[],
            cap=cap,
        )

    _check_costs(arr)
    targets = np.argmin(arr, axis=0)
    active = np.zeros(k, dtype=bool)
    clusters: list[list[int]] = []
    for i in range(m):
        members = np.flatnonzero(targets == i)
        order = np.argsort(arr[i, members], kind="stable")
        ordered = [int(p) for p in members[order]]
        clusters.append(ordered)
        kept = ordered if cap is None else ordered[:cap]
        active[kept] = True

    return DenseMatch(targets=targets.astype(int), active=active, clusters=clusters, cap=cap)
