"""Nonnegative matrix factorisation by multiplicative updates."""

from __future__ import annotations

import numpy as np

from .basis import NMF, ReducedBasis, as_matrix, default_grid

_TINY = np.finfo(float).tiny


def nmf_factor(mat, n: int, iters: int = 2000, seed: int = 0):
    """Lee-Seung updates for ``min ||M - W B||_F^2`` with ``W, B >= 0``.

    Returns ``(W, B, objective)`` where ``objective[k]`` is the squared
    Frobenius error after ``k`` sweeps (``objective[0]`` at initialisation).
    """
    m = np.asarray(mat, dtype=float)
    if np.any(m < 0):
        raise ValueError("NMF needs a nonnegative matrix")
    if n < 1 or iters < 0:
        raise ValueError("n must be >= 1 and iters >= 0")
    k, q = m.shape
    rng = np.random.default_rng(seed)
    scale = np.sqrt(max(m.mean(), _TINY) / n)
    w = rng.uniform(0.0, 1.0, (k, n)) * scale
    b = rng.uniform(0.0, 1.0, (n, q)) * scale
    obj = np.empty(iters + 1)
    obj[0] = np.sum((m - w @ b) ** 2)
    for it in range(1, iters + 1):
        b *= (w.T @ m) / np.maximum(w.T @ w @ b, _TINY)
        w *= (m @ b.T) / np.maximum(w @ (b @ b.T), _TINY)
        obj[it] = np.sum((m - w @ b) ** 2)
    return w, b, obj


def nmf_basis(data, n: int, iters: int = 2000, seed: int = 0, grid=None) -> ReducedBasis:
    """Nonnegative modes (unit norm rows of ``B``) from an NMF of the training rows."""
    mat, g = as_matrix(data)
    grid = grid if grid is not None else default_grid(mat, g)
    if n > mat.shape[0]:
        raise ValueError(f"n={n} exceeds K={mat.shape[0]}")
    w, b, obj = nmf_factor(mat, n, iters, seed)
    norms = np.linalg.norm(b, axis=1)
    norms[norms == 0] = 1.0
    modes = b / norms[:, None]
    rel = float(np.sqrt(obj[-1]) / max(np.linalg.norm(mat), _TINY))
    return ReducedBasis(grid, modes, NMF,
                        meta={"iters": iters, "seed": seed, "objective": float(obj[-1]),
                              "relative_error": rel})
