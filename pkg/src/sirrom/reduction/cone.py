"""Cone enlargement, cone projections and bound-preserving constraints."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import null_space, qr
from scipy.optimize import linprog, nnls

from ..errors import DomainError, NumericError
from ..models import RateFunction
from .basis import ENG, ReducedBasis, as_matrix, default_grid
from .greedy import greedy_select

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-3
MAX_PASSES = 100
POSITIVITY_MARGIN = 1e-12
KKT_TOL = 1e-8


@dataclass(frozen=True)
class ConeReport:
    """Diagnostics of ``enlarge_cone``: passes per ``(i, l)`` and whether the cap bound."""

    passes: np.ndarray
    capped: bool


def _alpha_star(f: np.ndarray, bl: np.ndarray) -> float:
    # sup{alpha >= 0 : f - alpha * bl > 0}, f and bl normalised to max 1
    if np.any(f <= POSITIVITY_MARGIN):
        # f already touches zero somewhere: any admissible subtraction must
        # avoid that point entirely
        if np.any(bl[f <= POSITIVITY_MARGIN] > 0):
            return 0.0
    pos = bl > 0
    ok = pos & (f > POSITIVITY_MARGIN)
    if not ok.any():
        return 0.0
    return float(np.min(f[ok] / bl[ok]))


def enlarge_cone(modes, epsilon: float = DEFAULT_EPSILON, max_passes: int = MAX_PASSES):
    """Enlarge the cone spanned by nonnegative ``modes``.

    For each ``i``, subtract from ``b_i`` nonnegative multiples of the other
    modes while staying strictly positive wherever ``b_i`` is. Each admissible
    step ``alpha*`` is computed exactly as a pointwise ratio minimum and half
    of it is taken; the loop for a pair stops once ``alpha* < epsilon`` or
    after ``max_passes`` steps.

    Parameters
    ----------
    modes : array_like, shape (n, Q)
    epsilon : float
        Stopping tolerance, relative to each mode's maximum.

    Returns
    -------
    psi : ndarray, shape (n, Q)
    sigma : ndarray, shape (n, n)
        ``psi_i = b_i - sum_j sigma[i, j] b_j``; zero diagonal.
    report : ConeReport
    """
    b = np.array(modes, dtype=float, ndmin=2)
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if np.any(b < 0) or not np.all(np.isfinite(b)):
        raise ValueError("modes must be finite and nonnegative")
    peaks = b.max(axis=1)
    if np.any(peaks <= 0):
        raise ValueError(f"mode {int(np.argmin(peaks))} is identically zero")
    bn = b / peaks[:, None]
    n = b.shape[0]
    sig = np.zeros((n, n))
    passes = np.zeros((n, n), dtype=int)
    capped = False
    for i in range(n):
        f = bn[i].copy()
        for l in range(n):
            if l == i:
                continue
            for _ in range(max_passes):
                a = _alpha_star(f, bn[l])
                sig[i, l] += a / 2
                f -= (a / 2) * bn[l]
                passes[i, l] += 1
                if a < epsilon:
                    break
            else:
                capped = True
                log.warning("enlarge_cone: pass cap %d reached for (i=%d, l=%d)", max_passes, i, l)
    # back to the physical scale of the modes
    sigma = sig * peaks[:, None] / peaks[None, :]
    psi = b - sigma @ b
    return psi, sigma, ConeReport(passes, capped)


def eng_basis(data, n: int, epsilon: float = DEFAULT_EPSILON, grid=None) -> ReducedBasis:
    """Enlarged nonnegative greedy basis: greedy selection then ``enlarge_cone``."""
    mat, g = as_matrix(data)
    grid = grid if grid is not None else default_grid(mat, g)
    raw = greedy_select(mat, n, grid)
    psi, sigma, rep = enlarge_cone(raw.modes, epsilon)
    meta = dict(raw.meta, epsilon=epsilon, cone_capped=rep.capped)
    return replace(raw, modes=psi, cone_sigma=sigma, meta=meta)


def enlarge_basis(basis: ReducedBasis, epsilon: float = DEFAULT_EPSILON) -> ReducedBasis:
    """Apply ``enlarge_cone`` to any nonnegative basis (e.g. NMF modes)."""
    psi, sigma, rep = enlarge_cone(basis.modes, epsilon)
    return replace(basis, modes=psi, method=ENG, cone_sigma=sigma, raw_modes=basis.modes,
                   meta=dict(basis.meta, epsilon=epsilon, cone_capped=rep.capped))


# -- projections -------------------------------------------------------------

def trapezoid_weights(count: int, step: float = 1.0) -> np.ndarray:
    w = np.full(count, float(step))
    if count > 1:
        w[[0, -1]] *= 0.5
    return w


def _window(basis: ReducedBasis, window):
    start, stop = (0, basis.grid.count) if window is None else window
    if not 0 <= start < stop <= basis.grid.count:
        raise ValueError(f"window {window} outside the basis grid")
    return start, stop


def _target_values(target, basis: ReducedBasis, start: int, stop: int) -> np.ndarray:
    if isinstance(target, RateFunction):
        return target(basis.grid.times[start:stop])
    y = np.asarray(target, dtype=float)
    if y.shape == (basis.grid.count,):
        return y[start:stop]
    if y.shape == (stop - start,):
        return y
    raise ValueError("target does not match the basis grid or the window")


def kkt_residual(a: np.ndarray, y: np.ndarray, c: np.ndarray) -> float:
    """Relative violation of the NNLS optimality conditions at ``c``."""
    g = a.T @ (a @ c - y)
    viol = np.where(c > 0, np.abs(g), np.maximum(-g, 0.0))
    scale = np.linalg.norm(a, 2) * max(np.linalg.norm(y), np.linalg.norm(a @ c)) + 1e-300
    return float(np.max(viol, initial=0.0) / scale)


def weighted_system(target, basis: ReducedBasis, window=None, weighted: bool = True):
    """Design matrix and right-hand side of the (trapezoid-weighted) fit on ``window``."""
    start, stop = _window(basis, window)
    y = _target_values(target, basis, start, stop)
    a = basis.modes[:, start:stop].T
    if weighted:
        sw = np.sqrt(trapezoid_weights(stop - start, basis.grid.step))
        return a * sw[:, None], y * sw
    return a.copy(), y.copy()


def project_cone(target, basis: ReducedBasis, window=None, *, weighted: bool = False,
                 constraints: "BoundedCone | None" = None) -> np.ndarray:
    """Nonnegative least-squares coefficients of ``target`` in ``basis`` on ``window``.

    With ``constraints`` (from ``bounded_cone``) the fit is also kept below
    the bound ``L``.
    """
    if not basis.nonnegative:
        raise ValueError("project_cone needs an NMF or ENG basis")
    a, y = weighted_system(target, basis, window, weighted)
    if constraints is not None and not constraints.unbounded:
        return lsi(a, y, constraints.matrix, constraints.rhs)
    c, _ = nnls(a, y, maxiter=50 * a.shape[1])
    kkt = kkt_residual(a, y, c)
    if kkt > KKT_TOL:
        log.warning("project_cone: KKT residual %.2e above %.0e", kkt, KKT_TOL)
    return c


# -- constrained least squares -----------------------------------------------

def _feasible_start(g: np.ndarray, h: np.ndarray) -> np.ndarray:
    n = g.shape[1]
    c = np.zeros(n)
    if np.all(g @ c >= h):
        return c
    res = linprog(np.zeros(n), A_ub=-g, b_ub=-h, bounds=[(None, None)] * n, method="highs")
    if res.status != 0:
        raise DomainError("constraint set is empty")
    return res.x


def lsi(a: np.ndarray, y: np.ndarray, g: np.ndarray, h: np.ndarray, *,
        max_iter: int | None = None) -> np.ndarray:
    """``min ||a c - y||`` subject to ``g c >= h`` (primal active-set method).

    Iterates stay feasible; each subproblem is an SVD-based least-squares
    solve on the null space of the active constraints, which copes with
    ill-conditioned ``a``.
    """
    a = np.asarray(a, dtype=float)
    g = np.asarray(g, dtype=float)
    h = np.asarray(h, dtype=float)
    m, n = g.shape
    c = _feasible_start(g, h)
    scale_g = np.linalg.norm(g, axis=1)
    scale_g[scale_g == 0] = 1.0
    slack_tol = 1e-12 * (1 + np.abs(h))
    work = [int(i) for i in np.flatnonzero(g @ c - h <= slack_tol)]
    # keep a linearly independent working set
    if work:
        _, rr, piv = qr(g[work].T, pivoting=True)
        rank = int(np.sum(np.abs(np.diag(rr)) > 1e-12 * max(abs(rr[0, 0]), 1e-300)))
        work = sorted(work[k] for k in piv[:rank])
    anorm = np.linalg.norm(a, 2) + 1e-300
    for _ in range(max_iter or 20 * (m + n)):
        r = y - a @ c
        if work:
            z = null_space(g[work])
        else:
            z = np.eye(n)
        if z.shape[1]:
            u = np.linalg.lstsq(a @ z, r, rcond=None)[0]
            p = z @ u
        else:
            p = np.zeros(n)
        if np.linalg.norm(a @ p) <= 1e-14 * (anorm * np.linalg.norm(c) + np.linalg.norm(y) + 1e-300):
            if not work:
                return c
            grad = a.T @ (a @ c - y)
            lam = np.linalg.lstsq(g[work].T, grad, rcond=None)[0]
            lam_s = lam / scale_g[work]
            k = int(np.argmin(lam_s))
            if lam_s[k] >= -1e-12 * anorm * (np.linalg.norm(y) + anorm * np.linalg.norm(c)):
                return c
            work.pop(k)
            continue
        gp = g @ p
        slack = g @ c - h
        alpha, block = 1.0, None
        for i in np.flatnonzero(gp < 0):
            if i in work:
                continue
            step = max(slack[i], 0.0) / -gp[i]
            if step < alpha:
                alpha, block = step, int(i)
        c = c + alpha * p
        if block is not None:
            work.append(block)
            work.sort()
    raise NumericError("active-set solver did not converge")


@dataclass(frozen=True, eq=False)
class BoundedCone:
    """Linear constraints ``matrix @ c >= rhs`` keeping ``0 <= sum c_i psi_i <= L``."""

    upper: float
    matrix: np.ndarray
    rhs: np.ndarray

    @property
    def unbounded(self) -> bool:
        return math.isinf(self.upper)


def bounded_cone(basis: ReducedBasis, upper: float, training=None,
                 epsilon: float = DEFAULT_EPSILON) -> BoundedCone:
    """Constraints for approximations that stay within ``[0, upper]``.

    Coefficients ``c`` must be nonnegative in the cone basis ``psi``. Writing
    the approximation as ``sum a_j b_j`` with ``a = S^T c`` (``S = I - sigma``),
    ``L - approx = sum a_j (L - b_j) + (1 - sum a_j) L``; nonnegativity of its
    coefficients in the enlarged basis of the functions ``L - b_j`` and of the
    remaining constant weight gives the upper bound.

    Parameters
    ----------
    basis : ReducedBasis
        NMF or ENG basis.
    upper : float
        ``L``; ``math.inf`` yields plain nonnegativity.
    training : array_like, optional
        Training rows; each must not exceed ``upper``.
    """
    if not basis.nonnegative:
        raise ValueError("bounded cones need an NMF or ENG basis")
    if not upper > 0:
        raise ValueError("upper bound must be positive")
    n = basis.n
    eye = np.eye(n)
    if math.isinf(upper):
        return BoundedCone(upper, eye, np.zeros(n))
    raw = basis.raw_modes if basis.raw_modes is not None else basis.modes
    if training is not None:
        mx = float(np.max(as_matrix(training)[0]))
        if mx > upper:
            raise DomainError(f"training value {mx:g} exceeds the bound {upper:g}")
    if np.max(raw) > upper * (1 + 1e-12):
        raise DomainError("basis functions exceed the bound")
    sigma = basis.cone_sigma if basis.cone_sigma is not None else np.zeros((n, n))
    s = eye - sigma
    comp = np.maximum(upper - raw, 0.0)
    live = np.flatnonzero(comp.max(axis=1) > 1e-12 * upper)
    rows = [eye]
    if live.size:
        _, sig2, _ = enlarge_cone(comp[live], epsilon)
        s2 = np.eye(live.size) - sig2
        # coefficients in the enlarged complement basis: S2^{-T} a_live
        rows.append(np.linalg.solve(s2.T, s.T[live]))
    rows.append(-np.ones((1, n)) @ s.T)
    rhs = np.concatenate([np.zeros(n + (live.size if live.size else 0)), [-1.0]])
    return BoundedCone(upper, np.vstack(rows), rhs)
