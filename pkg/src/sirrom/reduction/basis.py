"""Reduced basis container and its CSV/JSON persistence."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from ..models import RateFunction, TimeGrid

SVD, NMF, ENG = "SVD", "NMF", "ENG"
METHODS = (SVD, NMF, ENG)


def _ro(a, ndim=None):
    if a is None:
        return None
    a = np.array(a, dtype=float, ndmin=ndim or 1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ReducedBasis:
    """``n`` modes sampled on ``grid``.

    Attributes
    ----------
    modes : ndarray, shape (n, Q)
        SVD: orthonormal rows. NMF: nonnegative unit-norm rows. ENG: the
        cone-enlarged functions ``psi``, kept at the scale of the training data.
    eigenvalues, eigen_tail : ndarray or None
        SVD only. ``eigen_tail[k]`` is the sum of the eigenvalues beyond the
        first ``k + 1`` modes of the full decomposition.
    cone_sigma : ndarray or None
        ENG only; ``psi_i = b_i - sum_j sigma[i, j] b_j``.
    raw_modes : ndarray or None
        ENG only; the greedy selection ``b`` before enlargement.
    exp_mode : dict or None
        Parameters of a prepended exponential mode (see ``augment_exponential``).
    """

    grid: TimeGrid
    modes: np.ndarray
    method: str
    eigenvalues: np.ndarray | None = None
    eigen_tail: np.ndarray | None = None
    cone_sigma: np.ndarray | None = None
    raw_modes: np.ndarray | None = None
    exp_mode: Mapping | None = None
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown basis method {self.method!r}")
        modes = _ro(self.modes, 2)
        if modes.shape[1] != self.grid.count or modes.shape[0] < 1:
            raise ValueError("modes must be an n x grid.count matrix with n >= 1")
        if self.method != SVD and modes.min() < 0:
            raise ValueError(f"{self.method} modes must be nonnegative")
        object.__setattr__(self, "modes", modes)
        for name in ("eigenvalues", "eigen_tail"):
            object.__setattr__(self, name, _ro(getattr(self, name)))
        for name in ("cone_sigma", "raw_modes"):
            object.__setattr__(self, name, _ro(getattr(self, name), 2))

    @property
    def n(self) -> int:
        return self.modes.shape[0]

    @property
    def nonnegative(self) -> bool:
        """Whether fits in this basis use cone (nonnegative-coefficient) constraints."""
        return self.method in (NMF, ENG)

    def combine(self, coefficients) -> np.ndarray:
        c = np.asarray(coefficients, dtype=float)
        if c.shape != (self.n,):
            raise ValueError(f"expected {self.n} coefficients")
        return c @ self.modes

    def rate(self, coefficients) -> RateFunction:
        return RateFunction(self.grid, self.combine(coefficients))

    def truncate(self, n: int) -> "ReducedBasis":
        """First ``n`` modes (keeps a prepended exponential mode in front)."""
        if not 1 <= n <= self.n:
            raise ValueError(f"n must lie in [1, {self.n}]")
        sig = None if self.cone_sigma is None else self.cone_sigma[:n, :n]
        raw = None if self.raw_modes is None else self.raw_modes[:n]
        return replace(self, modes=self.modes[:n], cone_sigma=sig, raw_modes=raw)

    def manifest(self) -> dict:
        def lst(a):
            return None if a is None else a.tolist()
        return {"method": self.method, "n": self.n, "grid": self.grid.to_dict(),
                "eigenvalues": lst(self.eigenvalues), "eigen_tail": lst(self.eigen_tail),
                "cone_sigma": lst(self.cone_sigma), "raw_modes": lst(self.raw_modes),
                "exp_mode": None if self.exp_mode is None else dict(self.exp_mode),
                "meta": dict(self.meta)}

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.modes).tobytes())
        h.update(json.dumps(self.manifest(), sort_keys=True).encode())
        return h.hexdigest()

    def save(self, directory, name: str) -> None:
        """Write ``<name>.csv`` (modes) and ``<name>.json`` (manifest)."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        np.savetxt(d / f"{name}.csv", self.modes, fmt="%.17g", delimiter=",")
        (d / f"{name}.json").write_text(json.dumps(self.manifest(), indent=1, sort_keys=True) + "\n",
                                        encoding="utf-8")

    @classmethod
    def load(cls, directory, name: str) -> "ReducedBasis":
        d = Path(directory)
        man = json.loads((d / f"{name}.json").read_text("utf-8"))
        modes = np.loadtxt(d / f"{name}.csv", delimiter=",", ndmin=2)
        return cls(TimeGrid.from_dict(man["grid"]), modes, man["method"],
                   man.get("eigenvalues"), man.get("eigen_tail"), man.get("cone_sigma"),
                   man.get("raw_modes"), man.get("exp_mode"), man.get("meta", {}))


def as_matrix(data) -> tuple:
    """``(matrix, grid)`` from a ScenarioSet-like object, or ``(matrix, None)``."""
    grid = getattr(data, "grid", None)
    mat = data.betas if hasattr(data, "betas") else data
    return np.asarray(mat, dtype=float), grid


def default_grid(mat: np.ndarray, grid):
    return grid if grid is not None else TimeGrid.daily(mat.shape[1])
