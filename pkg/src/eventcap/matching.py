"""Set matching between predicted queries and ground-truth events.

The cost couples a classification term (positive focal cost of the query
confidence), a segment-overlap term (1 - giou), and optionally a caption
likelihood term. Assignment is solved exactly; among cost-tied optima the
lexicographically smallest sorted pair list is returned so results are
reproducible across runs and platforms. A brute-force enumerator over the
same tie-break rule serves as an independent oracle for small problems.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError
from .temporal import pairwise_giou

_RTOL = 1e-9
_ATOL = 1e-12


@dataclass(frozen=True)
class MatchingCoeffs:
    """Weights of the giou and caption terms in the matching cost."""

    alpha_giou: float = 2.0
    alpha_cap: float = 1.0

    def __post_init__(self):
        if self.alpha_giou < 0.0 or self.alpha_cap < 0.0:
            raise ConfigError("matching coefficients must be nonnegative")


@dataclass(frozen=True)
class MatchResult:
    """Optimal pairing: pred_indices[k] is matched to gt_indices[k].

    Pairs are sorted by prediction index; total_cost is the assignment value.
    """

    pred_indices: tuple
    gt_indices: tuple
    total_cost: float

    def as_pairs(self):
        return list(zip(self.pred_indices, self.gt_indices))

    def gt_for_pred(self) -> dict:
        return dict(zip(self.pred_indices, self.gt_indices))


def _to_np(x) -> np.ndarray:
    if hasattr(x, "detach"):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def matching_cost(
    confidences,
    pred_segments,
    gt_segments,
    caption_nll=None,
    coeffs: MatchingCoeffs = MatchingCoeffs(),
    focal_alpha: float = 0.25,
    focal_gamma: float = 2.0,
) -> np.ndarray:
    """Build the (K, E) assignment cost matrix.

    cost[i, j] = focal positive cost of confidence i
               + alpha_giou * (1 - giou(pred_i, gt_j))
               + alpha_cap * caption_nll[i, j]

    The classification term charges each query the cost of being treated as a
    positive, so low-confidence queries are expensive to match. caption_nll,
    when given, holds per-token mean negative log-likelihood of caption j
    under query i.
    """
    conf = np.clip(_to_np(confidences), 1e-7, 1.0 - 1e-7)
    pred = _to_np(pred_segments)
    gts = _to_np(gt_segments)
    if conf.shape[0] != pred.shape[0]:
        raise ValueError("confidences and pred_segments disagree on K")
    cls_cost = -focal_alpha * (1.0 - conf) ** focal_gamma * np.log(conf)
    cost = cls_cost[:, None] + coeffs.alpha_giou * (1.0 - pairwise_giou(pred, gts))
    if caption_nll is not None:
        nll = _to_np(caption_nll)
        if nll.shape != cost.shape:
            raise ValueError(f"caption_nll shape {nll.shape} does not match {cost.shape}")
        cost = cost + coeffs.alpha_cap * nll
    return cost


def _lsa_value(cost: np.ndarray) -> float:
    ri, ci = linear_sum_assignment(cost)
    return float(cost[ri, ci].sum())


def hungarian(cost) -> MatchResult:
    """Minimum-cost assignment with deterministic tie-breaking.

    Returns min(n_rows, n_cols) pairs. Among all optimal assignments the
    sorted pair list that compares lexicographically smallest is chosen.
    The refinement fixes pairs one at a time in sorted order: a candidate
    (i, j) is accepted when fixing it still completes to the optimal value
    (checked by re-solving the reduced problem). The optimal completion of
    the current residual bounds the candidate scan, so the extra solves only
    happen for candidates that could actually improve the tie-break.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-d, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    n_r, n_c = cost.shape
    n_pairs = min(n_r, n_c)
    if n_pairs == 0:
        return MatchResult((), (), 0.0)

    pairs = []
    row_floor = 0
    cols = list(range(n_c))
    while len(pairs) < n_pairs:
        rows_avail = [r for r in range(row_floor, n_r)]
        sub = cost[np.ix_(rows_avail, cols)]
        ri, ci = linear_sum_assignment(sub)
        best = float(sub[ri, ci].sum())
        # row_ind from scipy is sorted, so (ri[0], ci[0]) is the completion's
        # first sorted pair and upper-bounds the candidate scan.
        i_star, j_star = rows_avail[ri[0]], cols[ci[0]]
        need = n_pairs - len(pairs) - 1
        found = None
        for i in rows_avail:
            if i > i_star or found is not None:
                break
            rows_sub = [r for r in rows_avail if r > i]
            for j in cols:
                if i == i_star and j >= j_star:
                    break
                cols_sub = [c for c in cols if c != j]
                if need == 0:
                    ok = np.isclose(cost[i, j], best, rtol=_RTOL, atol=_ATOL)
                else:
                    if min(len(rows_sub), len(cols_sub)) < need:
                        continue
                    tail = _lsa_value(cost[np.ix_(rows_sub, cols_sub)])
                    ok = np.isclose(cost[i, j] + tail, best, rtol=_RTOL, atol=_ATOL)
                if ok:
                    found = (i, j)
                    break
        i_pick, j_pick = found if found is not None else (i_star, j_star)
        pairs.append((i_pick, j_pick))
        row_floor = i_pick + 1
        cols.remove(j_pick)

    total = float(sum(cost[i, j] for i, j in pairs))
    return MatchResult(tuple(p for p, _ in pairs), tuple(g for _, g in pairs), total)


def brute_force_match(cost, max_side: int = 8) -> MatchResult:
    """Oracle assignment by full enumeration; same tie-break as hungarian.

    Enumerates every maximal pairing, keeps all within relative tolerance of
    the minimum cost, and returns the lexicographically smallest sorted pair
    list. Guarded to small problems since enumeration is factorial.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ValueError(f"cost must be 2-d, got shape {cost.shape}")
    n_r, n_c = cost.shape
    if max(n_r, n_c) > max_side:
        raise ValueError(f"brute force limited to {max_side}x{max_side}, got {n_r}x{n_c}")
    n_pairs = min(n_r, n_c)
    if n_pairs == 0:
        return MatchResult((), (), 0.0)

    candidates = []
    if n_r <= n_c:
        for perm in itertools.permutations(range(n_c), n_r):
            pairs = list(enumerate(perm))
            candidates.append((sum(cost[i, j] for i, j in pairs), pairs))
    else:
        for perm in itertools.permutations(range(n_r), n_c):
            pairs = sorted((perm[j], j) for j in range(n_c))
            candidates.append((sum(cost[i, j] for i, j in pairs), pairs))

    min_cost = min(c for c, _ in candidates)
    tol = _RTOL * max(1.0, abs(min_cost)) + _ATOL
    best_pairs = min(p for c, p in candidates if c <= min_cost + tol)
    total = float(sum(cost[i, j] for i, j in best_pairs))
    return MatchResult(
        tuple(p for p, _ in best_pairs), tuple(g for _, g in best_pairs), total
    )
