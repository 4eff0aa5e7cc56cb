"""Proper orthogonal decomposition of a family of rate functions."""

from __future__ import annotations

import numpy as np

from .basis import SVD, ReducedBasis, as_matrix, default_grid


def svd_basis(data, n: int, grid=None) -> ReducedBasis:
    """Leading ``n`` eigenmodes of the correlation operator of the rows of ``data``.

    ``data`` is a ``K x Q`` matrix (or anything with ``betas``/``grid``, e.g. a
    ScenarioSet; use ``rows_of`` to pick gammas). Eigenvalues are those of
    ``A^T A / K`` so that the mean squared projection error of the rows onto
    the first ``n`` modes equals ``eigen_tail[n - 1]``.

    Notes
    -----
    Computed with a thin SVD of ``A`` rather than by forming ``A^T A``; this
    keeps small eigenvalues accurate. Each mode is oriented so its largest
    entry in absolute value is positive.
    """
    mat, g = as_matrix(data)
    grid = grid if grid is not None else default_grid(mat, g)
    k = mat.shape[0]
    if not 1 <= n <= k:
        raise ValueError(f"n must lie in [1, K={k}], got {n}")
    if n > mat.shape[1]:
        raise ValueError(f"n={n} exceeds the number of grid points {mat.shape[1]}")
    _, s, vt = np.linalg.svd(mat, full_matrices=False)
    lam = np.zeros(k)
    lam[: s.size] = s ** 2 / k
    # tail[m] = sum_{i > m+1} lam_i, accumulated from the small end
    tail = np.concatenate([np.cumsum(lam[::-1])[::-1][1:], [0.0]])
    modes = vt[:n] / np.linalg.norm(vt[:n], axis=1, keepdims=True)
    pivot = np.argmax(np.abs(modes), axis=1)
    modes *= np.sign(modes[np.arange(n), pivot])[:, None]
    return ReducedBasis(grid, modes, SVD, eigenvalues=lam, eigen_tail=tail)
