"""Multi-regional SIR models (Eulerian and Lagrangian mobility) and exact rate recovery."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError, InvertibilityError, NumericError
from .models import MAX_SUBSTEP, RateFunction, TimeGrid, stage_times, substeps_for
from .timeseries import finite_difference

STOCHASTIC_TOL = 1e-9
COND_LIMIT = 1e12
EULERIAN, LAGRANGIAN = "eulerian", "lagrangian"
ORIGIN, LOCAL = "origin", "local"


def _time_table(grid: TimeGrid, values, tail: tuple, name: str) -> np.ndarray:
    a = np.array(values, dtype=float)
    if a.shape == tail:
        a = np.broadcast_to(a, (grid.count, *tail)).copy()
    if a.shape != (grid.count, *tail):
        raise ValueError(f"{name} must have shape {tail} or {(grid.count, *tail)}, got {a.shape}")
    if not np.all(np.isfinite(a)) or a.min() < 0 or a.max() > 1:
        raise DomainError(f"{name} entries must lie in [0, 1]")
    sums = a.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1) > STOCHASTIC_TOL)
    if bad.size:
        raise DomainError(f"{name} is not stochastic at index {tuple(int(x) for x in bad[0])}")
    a.setflags(write=False)
    return a


def _interp_table(grid: TimeGrid, table: np.ndarray, t: float) -> np.ndarray:
    x = (t - grid.t0) / grid.step
    k = int(np.clip(np.floor(x), 0, grid.count - 1))
    if k >= grid.count - 1:
        return table[-1]
    w = x - k
    return table[k] if w <= 0 else (1 - w) * table[k] + w * table[k + 1]


@dataclass(frozen=True, eq=False)
class MobilityEulerian:
    """Travel probabilities ``lam[t, i, j]`` (from ``i`` to ``j``), rows summing to 1.

    ``infectious_factor`` scales the travel of infectious people between
    different regions (1 keeps the susceptible mobility; e.g. 2/15 assumes
    infectious people mostly stay put).

    ``traveler_rate`` picks the contact rate applied to infections caused by
    visitors from region ``j`` in region ``i``: ``"origin"`` uses ``beta_j``,
    ``"local"`` uses ``beta_i``.
    """

    grid: TimeGrid
    lam: np.ndarray
    infectious_factor: float = 1.0
    traveler_rate: str = ORIGIN

    def __post_init__(self):
        raw = np.asarray(self.lam)
        p = raw.shape[-1]
        object.__setattr__(self, "lam", _time_table(self.grid, raw, (p, p), "lambda"))
        if not 0 <= self.infectious_factor <= 1:
            raise ValueError("infectious_factor must lie in [0, 1]")
        if self.traveler_rate not in (ORIGIN, LOCAL):
            raise ValueError(f"traveler_rate must be {ORIGIN!r} or {LOCAL!r}")

    @property
    def regions(self) -> int:
        return self.lam.shape[-1]

    def at(self, t: float) -> np.ndarray:
        return _interp_table(self.grid, self.lam, t)

    @classmethod
    def constant(cls, grid: TimeGrid, lam, infectious_factor: float = 1.0,
                 traveler_rate: str = ORIGIN):
        return cls(grid, lam, infectious_factor, traveler_rate)


@dataclass(frozen=True, eq=False)
class MobilityLagrangian:
    """Travel probabilities ``lam3[t, i, j, k]`` of people domiciled at ``i`` from ``j`` to ``k``.

    ``mu3`` is the same tensor for infectious people (defaults to ``lam3``).
    """

    grid: TimeGrid
    lam3: np.ndarray
    mu3: np.ndarray | None = None

    def __post_init__(self):
        raw = np.asarray(self.lam3)
        p = raw.shape[-1]
        tail = (p, p, p)
        object.__setattr__(self, "lam3", _time_table(self.grid, raw, tail, "lambda"))
        mu = self.lam3 if self.mu3 is None else _time_table(self.grid, self.mu3, tail, "mu")
        object.__setattr__(self, "mu3", mu)

    @property
    def regions(self) -> int:
        return self.lam3.shape[-1]

    def occupancy(self, t: float, infectious: bool = False) -> np.ndarray:
        """``w[i, k]``: share of people domiciled at ``i`` present in region ``k``.

        Average over the origin ``j`` of ``lam3[i, j, k]``; each row sums to 1.
        """
        tab = self.mu3 if infectious else self.lam3
        return _interp_table(self.grid, tab, t).mean(axis=1)


@dataclass(frozen=True, eq=False)
class MultiSirState:
    """Per-region state. Eulerian: densities plus populations; Lagrangian: counts."""

    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    populations: np.ndarray

    def __post_init__(self):
        arrs = [np.array(x, dtype=float, ndmin=1) for x in (self.s, self.i, self.r, self.populations)]
        if len({a.shape for a in arrs}) != 1 or arrs[0].ndim != 1:
            raise ValueError("state vectors must share one length")
        if min(a.min() for a in arrs) < 0:
            raise DomainError("state entries must be nonnegative")
        for name, a in zip(("s", "i", "r", "populations"), arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @classmethod
    def from_counts(cls, s, i, r) -> "MultiSirState":
        s, i, r = (np.asarray(x, dtype=float) for x in (s, i, r))
        n = s + i + r
        return cls(s / n, i / n, r / n, n)


@dataclass(frozen=True, eq=False)
class MultiSirTrajectory:
    """``s, i, r, populations`` have shape ``(count, P)``.

    For ``kind == "eulerian"`` the compartments are densities; for
    ``"lagrangian"`` they are counts per domicile.
    """

    grid: TimeGrid
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    populations: np.ndarray
    kind: str

    def counts(self):
        if self.kind == EULERIAN:
            return self.s * self.populations, self.i * self.populations, self.r * self.populations
        return self.s, self.i, self.r

    def state(self, k: int) -> MultiSirState:
        return MultiSirState(self.s[k], self.i[k], self.r[k], self.populations[k])


def _rates_table(rates: Sequence[RateFunction], times: np.ndarray) -> np.ndarray:
    return np.stack([np.interp(times, f.grid.times, f.values) for f in rates], axis=-1)


def _check_rates(rates, p, name):
    if len(rates) != p:
        raise ValueError(f"need one {name} function per region ({p})")


def _eulerian_rhs(lam, kappa, beta, gamma, local=False):
    off = lam * kappa
    np.fill_diagonal(off, np.diag(lam))

    def rhs(y):
        s, i, r, n = y
        force = beta * (off.T @ i) if local else off.T @ (beta * i)
        ds = -force * s
        di = -ds - gamma * i
        dn = lam.T @ n - n  # inflow minus outflow (rows of lam sum to 1)
        return np.stack([ds, di, gamma * i, dn])
    return rhs


def _lagrangian_rhs(w, wi, beta, gamma, n_dom):
    present = w.T @ n_dom

    def rhs(y):
        s, i, r = y
        num = wi.T @ i
        dens = np.divide(num, present, out=np.zeros_like(num), where=present > 0)
        ds = -s * (w @ (beta * dens))
        return np.stack([ds, -ds - gamma * i, gamma * i])
    return rhs


def _integrate(make_rhs, y0, grid, max_substep):
    m = substeps_for(grid, max_substep)
    h = grid.step / m
    out = np.empty((grid.count, *y0.shape))
    out[0] = y = y0.astype(float)
    if grid.count > 1:
        st = stage_times(grid, m)
        for k in range(grid.count - 1):
            for j in range(m):
                t1, tm, t2 = st[k, j]
                f1, fm, f2 = make_rhs(t1), make_rhs(tm), make_rhs(t2)
                k1 = f1(y)
                k2 = fm(y + 0.5 * h * k1)
                k3 = fm(y + 0.5 * h * k2)
                k4 = f2(y + h * k3)
                y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.all(np.isfinite(y)):
                raise NumericError(f"non-finite state at t={grid.times[k + 1]}")
            out[k + 1] = y
    return out


def simulate_eulerian(mob: MobilityEulerian, beta: Sequence[RateFunction],
                      gamma: Sequence[RateFunction], init: MultiSirState,
                      grid: TimeGrid | None = None, *, max_substep: float = MAX_SUBSTEP):
    """Integrate the Eulerian density model together with the population flow.

    ``ds_i/dt = -(beta_i lam_ii i_i + sum_{j != i} beta_j lam_ji i_j) s_i``,
    ``di_i/dt = -ds_i/dt - gamma_i i_i``, ``dr_i/dt = gamma_i i_i`` and
    ``dN_i/dt = sum_{j != i} (lam_ji N_j - lam_ij N_i)``.
    """
    grid = mob.grid if grid is None else grid
    p = mob.regions
    _check_rates(beta, p, "beta")
    _check_rates(gamma, p, "gamma")
    if init.s.size != p:
        raise ValueError("state size does not match the number of regions")
    if np.any(np.abs(init.s + init.i + init.r - 1) > 1e-9):
        raise DomainError("Eulerian densities must sum to 1 per region")

    def make_rhs(t):
        b = _rates_table(beta, np.array(t))
        g = _rates_table(gamma, np.array(t))
        return _eulerian_rhs(mob.at(t), mob.infectious_factor, b, g, mob.traveler_rate == LOCAL)

    y0 = np.stack([init.s, init.i, init.r, init.populations])
    out = _integrate(make_rhs, y0, grid, max_substep)
    return MultiSirTrajectory(grid, out[:, 0], out[:, 1], out[:, 2], out[:, 3], EULERIAN)


def simulate_lagrangian(mob: MobilityLagrangian, beta: Sequence[RateFunction],
                        gamma: Sequence[RateFunction], init: MultiSirState,
                        grid: TimeGrid | None = None, *, max_substep: float = MAX_SUBSTEP):
    """Integrate the Lagrangian model (counts per domicile).

    With ``w[i, k]`` the occupancy of domicile ``i`` in region ``k`` and
    ``dens_k`` the infectious share among people present in ``k``,
    ``dS_i/dt = -S_i sum_k beta_k w[i, k] dens_k``.
    """
    grid = mob.grid if grid is None else grid
    p = mob.regions
    _check_rates(beta, p, "beta")
    _check_rates(gamma, p, "gamma")
    if init.s.size != p:
        raise ValueError("state size does not match the number of regions")
    n_dom = init.s + init.i + init.r

    def make_rhs(t):
        b = _rates_table(beta, np.array(t))
        g = _rates_table(gamma, np.array(t))
        return _lagrangian_rhs(mob.occupancy(t), mob.occupancy(t, True), b, g, n_dom)

    y0 = np.stack([init.s, init.i, init.r])
    out = _integrate(make_rhs, y0, grid, max_substep)
    pops = np.broadcast_to(n_dom, out[:, 0].shape)
    return MultiSirTrajectory(grid, out[:, 0], out[:, 1], out[:, 2], pops, LAGRANGIAN)


def eulerian_matrix(lam: np.ndarray, s, i, infectious_factor: float = 1.0,
                    traveler_rate: str = ORIGIN) -> np.ndarray:
    """``M = -diag(s) L^T diag(i)`` so that ``ds/dt = M beta``; ``M[a, b] = -s_a lam[b, a] i_b``.

    With ``traveler_rate="local"`` M is diagonal: ``M[a, a] = -s_a sum_b lam[b, a] i_b``.
    """
    lam = np.array(lam, dtype=float)
    off = lam * infectious_factor
    np.fill_diagonal(off, np.diag(lam))
    if traveler_rate == LOCAL:
        return np.diag(-np.asarray(s) * (off.T @ np.asarray(i)))
    return -np.asarray(s)[:, None] * off.T * np.asarray(i)[None, :]


def lagrangian_matrix(w: np.ndarray, wi: np.ndarray, s, i, n_dom) -> np.ndarray:
    """``M[a, k] = -S_a w[a, k] dens_k`` so that ``dS/dt = M beta``."""
    present = w.T @ n_dom
    num = wi.T @ np.asarray(i)
    dens = np.divide(num, present, out=np.zeros_like(num), where=present > 0)
    return -np.asarray(s)[:, None] * w * dens[None, :]


def matrix_at(mob, traj: MultiSirTrajectory, k: int) -> np.ndarray:
    t = traj.grid.times[k]
    if isinstance(mob, MobilityEulerian):
        return eulerian_matrix(mob.at(t), traj.s[k], traj.i[k], mob.infectious_factor,
                               mob.traveler_rate)
    n_dom = traj.s[0] + traj.i[0] + traj.r[0]
    return lagrangian_matrix(mob.occupancy(t), mob.occupancy(t, True), traj.s[k], traj.i[k], n_dom)


def recover_rates_multi(traj: MultiSirTrajectory, mob, derivatives=None):
    """Exact-fit rate vectors ``beta = M^{-1} dS/dt`` and ``gamma_i = (dR_i/dt) / I_i``.

    Derivatives come from finite differences on ``traj.grid`` unless
    ``derivatives=(dS, dR)`` (arrays shaped like ``traj.s``) is given.

    Returns
    -------
    beta, gamma : list of RateFunction, one per region.

    Raises
    ------
    InvertibilityError
        If ``cond(M) > 1e12`` at some grid index.
    """
    if derivatives is None:
        ds = np.column_stack([finite_difference(c, traj.grid.step) for c in traj.s.T])
        dr = np.column_stack([finite_difference(c, traj.grid.step) for c in traj.r.T])
    else:
        ds, dr = (np.asarray(d, dtype=float) for d in derivatives)
    q, p = traj.s.shape
    betas = np.empty((q, p))
    for k in range(q):
        m = matrix_at(mob, traj, k)
        cond = np.linalg.cond(m)
        if not np.isfinite(cond) or cond > COND_LIMIT:
            raise InvertibilityError(
                f"mobility matrix M is singular or ill-conditioned (cond={cond:.3g}) "
                f"at index {k} (t={traj.grid.times[k]})", k)
        betas[k] = np.linalg.solve(m, ds[k])
    if np.any(traj.i <= 0):
        k = int(np.argwhere(traj.i <= 0)[0, 0])
        raise InvertibilityError(f"infectious count vanishes at index {k}", k)
    gammas = dr / traj.i
    return ([RateFunction(traj.grid, betas[:, j]) for j in range(p)],
            [RateFunction(traj.grid, gammas[:, j]) for j in range(p)])


@dataclass(frozen=True)
class Dominance:
    row: bool | None
    column: bool | None

    @property
    def label(self) -> str:
        if self.row:
            return "row-dominant"
        if self.column:
            return "column-dominant"
        if self.row is None or self.column is None:
            return "indeterminate"
        return "neither"


def check_dominance(mob, state: MultiSirState, t: float | None = None) -> list:
    """Diagonal dominance of ``M`` per region, row-wise and column-wise.

    Eulerian rows: ``lam_ii > sum_{j != i} lam_ji i_j / i_i``; columns:
    ``lam_jj > sum_{i != j} lam_ji s_i / s_j``. A check whose denominator is
    zero is reported as ``None`` (indeterminate). For Lagrangian mobility the
    same Gershgorin tests are applied to ``M`` directly.
    """
    t = mob.grid.t0 if t is None else t
    p = state.s.size
    out = []
    if isinstance(mob, MobilityEulerian) and mob.traveler_rate == LOCAL:
        # diagonal M: dominant wherever the diagonal is nonzero
        m = eulerian_matrix(mob.at(t), state.s, state.i, mob.infectious_factor, LOCAL)
        return [Dominance(True, True) if m[a, a] != 0 else Dominance(None, None) for a in range(p)]
    if isinstance(mob, MobilityEulerian):
        lam = mob.at(t).copy()
        kappa = mob.infectious_factor
        off = lam * kappa
        np.fill_diagonal(off, np.diag(lam))
        for a in range(p):
            others = [b for b in range(p) if b != a]
            row = None
            if state.i[a] > 0:
                row = bool(off[a, a] > sum(off[b, a] * state.i[b] for b in others) / state.i[a])
            col = None
            if state.s[a] > 0:
                col = bool(off[a, a] > sum(off[a, b] * state.s[b] for b in others) / state.s[a])
            out.append(Dominance(row, col))
        return out
    n_dom = state.s + state.i + state.r
    m = np.abs(lagrangian_matrix(mob.occupancy(t), mob.occupancy(t, True), state.s, state.i, n_dom))
    for a in range(p):
        d = m[a, a]
        row_off = m[a].sum() - d
        col_off = m[:, a].sum() - d
        row = None if d == 0 and row_off == 0 else bool(d > row_off)
        col = None if d == 0 and col_off == 0 else bool(d > col_off)
        out.append(Dominance(row, col))
    return out


def load_mobility_csv(path, grid: TimeGrid, regions: int, kind: str = EULERIAN):
    """Read ``t,i,j,lambda`` (Eulerian) or ``t,i,j,k,lambda`` (Lagrangian) rows.

    Region indices are 0-based; missing entries are zero. Stochasticity is
    validated on construction.
    """
    ncol = 4 if kind == EULERIAN else 5
    shape = (grid.count,) + (regions,) * (ncol - 2)
    table = np.zeros(shape)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row_no, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != ncol:
                raise ValueError(f"row {row_no}: expected {ncol} fields")
            k = grid.index_of(float(row[0]))
            idx = tuple(int(x) for x in row[1:-1])
            table[(k, *idx)] = float(row[-1])
    if kind == EULERIAN:
        return MobilityEulerian(grid, table)
    return MobilityLagrangian(grid, table)
