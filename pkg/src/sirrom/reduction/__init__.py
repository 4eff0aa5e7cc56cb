"""Reduced bases for families of rate functions."""

from .basis import ENG, METHODS, NMF, SVD, ReducedBasis
from .cone import (DEFAULT_EPSILON, BoundedCone, ConeReport, bounded_cone, eng_basis,
                   enlarge_basis, enlarge_cone, kkt_residual, lsi, project_cone,
                   trapezoid_weights, weighted_system)
from .exponential import augment_exponential, exponential_regression
from .greedy import greedy_indices, greedy_select, nnls_residuals
from .nmf import nmf_basis, nmf_factor
from .svd import svd_basis


def build_basis(method: str, data, n: int, *, epsilon: float = DEFAULT_EPSILON,
                iters: int = 2000, seed: int = 0, grid=None) -> ReducedBasis:
    """Dispatch on ``method`` (``SVD``, ``NMF`` or ``ENG``)."""
    if method == SVD:
        return svd_basis(data, n, grid)
    if method == NMF:
        return nmf_basis(data, n, iters, seed, grid)
    if method == ENG:
        return eng_basis(data, n, epsilon, grid)
    raise ValueError(f"unknown basis method {method!r}")


__all__ = [
    "ENG", "METHODS", "NMF", "SVD", "ReducedBasis", "BoundedCone", "ConeReport",
    "DEFAULT_EPSILON", "augment_exponential", "bounded_cone", "build_basis", "eng_basis",
    "enlarge_basis", "enlarge_cone", "exponential_regression", "greedy_indices",
    "greedy_select", "kkt_residual", "lsi", "nmf_basis", "nmf_factor", "nnls_residuals",
    "project_cone", "svd_basis", "trapezoid_weights", "weighted_system",
]
