"""Minimum-cost bipartite assignment with a deterministic tie-break.

The optimum itself comes from scipy's linear sum assignment solver; on top of
that we pick, among all optimal assignments, the lexicographically smallest
assignment vector so that repeated runs and reordered ties are reproducible.
"""

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NonFiniteCost, ShapeError

# relative slack when deciding whether a candidate column still permits the
# globally optimal total cost
_REL_TOL = 1e-9


def _optimal_cost(cost):
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def hungarian_min_cost(cost):
    """Assign each row of `cost` to a distinct column at minimum total cost.

    `cost` is an r x c matrix with r <= c and finite non-negative entries.
    Returns a list of r distinct column indices. Among all minimum-cost
    assignments, the lexicographically smallest assignment vector is returned.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ShapeError(f"cost must be a matrix, got ndim={cost.ndim}")
    r, c = cost.shape
    if r > c:
        raise ShapeError(f"more rows than columns ({r} > {c})")
    if not np.all(np.isfinite(cost)):
        raise NonFiniteCost("cost matrix contains non-finite entries")
    if r == 0:
        return []

    best = _optimal_cost(cost)
    tol = _REL_TOL * max(1.0, abs(best))

    # Fix rows one at a time; for each, take the smallest column that keeps
    # the remaining subproblem able to reach the global optimum.
    assignment = []
    free_cols = list(range(c))
    spent = 0.0
    for i in range(r):
        for j in free_cols:
            rest_cols = [x for x in free_cols if x != j]
            sub = cost[np.ix_(range(i + 1, r), rest_cols)]
            rest = _optimal_cost(sub) if sub.shape[0] else 0.0
            if spent + cost[i, j] + rest <= best + tol:
                assignment.append(j)
                spent += cost[i, j]
                free_cols = rest_cols
                break
        else:  # pragma: no cover - the optimum is always attainable
            raise AssertionError("no feasible column found")
    return assignment
