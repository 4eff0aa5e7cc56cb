"""Collapse detailed trajectories to (S, I, R) and recover their SIR-TV rates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CollapseDegeneracyError
from .models import (SE2IUR, SEI5CHRD, DetailedParams, DetailedTrajectory, RateFunction,
                     TimeGrid)
from .timeseries import finite_difference

# compartments summed into each collapsed variable
COLLAPSE_MAP = {
    SEI5CHRD: {
        "S": ("S", "E"),
        "I": ("Ip", "Ia", "Ips", "Ims", "Iss", "C", "H"),
        "R": ("R", "D"),
    },
    SE2IUR: {
        "S": ("S", "E1"),
        "I": ("E2", "I", "U"),
        "R": ("R",),
    },
}
DEGENERACY_THRESHOLD = 1e-9


@dataclass(frozen=True, eq=False)
class CollapsedTriple:
    grid: TimeGrid
    s_col: np.ndarray
    i_col: np.ndarray
    r_col: np.ndarray
    population: float
    source: DetailedParams | None = None
    derivatives: tuple | None = None

    def restrict(self, start: int, stop: int | None = None) -> "CollapsedTriple":
        stop = self.grid.count if stop is None else stop
        der = None
        if self.derivatives is not None:
            der = tuple(d[start:stop] for d in self.derivatives)
        return CollapsedTriple(self.grid.sub(start, stop), self.s_col[start:stop],
                               self.i_col[start:stop], self.r_col[start:stop],
                               self.population, self.source, der)


def collapse_trajectory(traj: DetailedTrajectory) -> CollapsedTriple:
    """Sum compartments into S, I, R; exact derivatives are summed the same way."""
    try:
        groups = COLLAPSE_MAP[traj.model]
    except KeyError:
        raise ValueError(f"no collapse map for model {traj.model!r}") from None
    values = [sum(traj.column(c) for c in groups[k]) for k in "SIR"]
    ders = tuple(sum(traj.derivative(c) for c in groups[k]) for k in "SIR")
    return CollapsedTriple(traj.grid, *values, traj.params.population, traj.params, ders)


def first_degenerate_index(col: CollapsedTriple, threshold: float = DEGENERACY_THRESHOLD):
    """Earliest index where ``I^col`` (or ``S^col``) is at most ``threshold * N``, else None."""
    tol = threshold * col.population
    bad = np.flatnonzero((col.i_col <= tol) | (col.s_col <= tol))
    return int(bad[0]) if bad.size else None


def trim_leading(col: CollapsedTriple, threshold: float = DEGENERACY_THRESHOLD) -> CollapsedTriple:
    """Drop the leading grid points where ``I^col < threshold * N``."""
    ok = np.flatnonzero(col.i_col >= threshold * col.population)
    if not ok.size:
        raise CollapseDegeneracyError("collapsed infectious compartment never exceeds threshold", 0)
    return col.restrict(int(ok[0])) if ok[0] > 0 else col


def recover_rates(col: CollapsedTriple, exact_derivatives=None):
    """Rates ``(beta, gamma)`` for which SIR-TV reproduces ``col``.

    ``beta = -N dS/dt / (I S)`` and ``gamma = dR/dt / I``. Pass
    ``exact_derivatives=(dS, dI, dR)`` (e.g. ``col.derivatives``) to use the
    detailed model's right-hand side; finite differences are used otherwise.
    """
    idx = first_degenerate_index(col)
    if idx is not None:
        raise CollapseDegeneracyError(
            f"collapsed I or S vanishes at index {idx} (t={col.grid.times[idx]})", idx)
    if exact_derivatives is None:
        ds = finite_difference(col.s_col, col.grid.step)
        dr = finite_difference(col.r_col, col.grid.step)
    else:
        ds, _, dr = (np.asarray(d, dtype=float) for d in exact_derivatives)
        if ds.shape != col.s_col.shape or dr.shape != col.r_col.shape:
            raise ValueError("derivative sequences do not match the grid")
    beta = -col.population * ds / (col.i_col * col.s_col)
    gamma = dr / col.i_col
    return RateFunction(col.grid, beta), RateFunction(col.grid, gamma)
