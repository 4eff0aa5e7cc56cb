"""Greedy selection of training rows under nonnegative least squares."""

from __future__ import annotations

import numpy as np
from scipy.optimize import nnls

from .basis import ENG, ReducedBasis, as_matrix, default_grid


def nnls_residuals(selected: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """``min_{c >= 0} ||row - c @ selected||`` for every row."""
    a = np.asarray(selected, dtype=float).T
    cap = 50 * max(a.shape[1], 1)
    return np.array([nnls(a, r, maxiter=cap)[1] for r in rows])


def greedy_indices(mat, n: int):
    """Row indices picked greedily and the max residual before each pick.

    The first pick has the largest l2 norm; each later pick has the largest
    nonnegative least-squares residual against the rows chosen so far. Ties
    go to the lowest index.
    """
    m = np.asarray(mat, dtype=float)
    k = m.shape[0]
    if not 1 <= n <= k:
        raise ValueError(f"n must lie in [1, K={k}], got {n}")
    res = np.linalg.norm(m, axis=1)
    picks, worst = [], []
    for _ in range(n):
        masked = res.copy()
        masked[picks] = -np.inf
        j = int(np.argmax(masked))  # first maximum wins ties
        picks.append(j)
        worst.append(float(res[j]))
        if len(picks) < n:
            res = nnls_residuals(m[picks], m)
    return picks, np.array(worst)


def greedy_select(data, n: int, grid=None) -> ReducedBasis:
    """Greedy basis of raw training rows (no cone enlargement)."""
    mat, g = as_matrix(data)
    grid = grid if grid is not None else default_grid(mat, g)
    picks, worst = greedy_indices(mat, n)
    modes = mat[picks]
    return ReducedBasis(grid, modes, ENG, cone_sigma=np.zeros((n, n)), raw_modes=modes,
                        meta={"indices": picks, "residuals": worst.tolist()})
