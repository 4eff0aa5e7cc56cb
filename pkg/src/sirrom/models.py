"""Compartmental models and the fixed-step RK4 integrator.

Three models live here: the SIR model with time-dependent coefficients
(``simulate_sir_tv``) and the two detailed constant-coefficient models used to
generate training scenarios, SEI5CHRD and SE2IUR (``simulate_detailed``).

Rates are sampled on a :class:`TimeGrid` and linearly interpolated between
samples. Integration is classical RK4 with a fixed internal substep
(``max_substep``, 0.1 day by default) so results are bit-reproducible.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DomainError, NumericError

MAX_SUBSTEP = 0.1
NONNEG_TOL = 1e-12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``t0, t0 + step, ..., t0 + (count - 1) * step`` (days)."""

    t0: float
    step: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("grid needs at least one point")
        if not self.step > 0:
            raise ValueError("grid step must be positive")
        per_day = 1.0 / self.step
        if abs(per_day - round(per_day)) > 1e-9:
            raise ValueError(f"grid step {self.step} does not divide one day evenly")

    @classmethod
    def daily(cls, count: int, t0: float = 0.0) -> "TimeGrid":
        return cls(float(t0), 1.0, int(count))

    @property
    def t_end(self) -> float:
        return self.t0 + (self.count - 1) * self.step

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.step * np.arange(self.count)

    def index_of(self, t: float) -> int:
        """Index of grid time ``t``; raises if ``t`` is not a grid point."""
        k = (t - self.t0) / self.step
        ik = int(round(k))
        if abs(k - ik) > 1e-9 or not 0 <= ik < self.count:
            raise ValueError(f"time {t} is not on the grid")
        return ik

    def sub(self, start: int, stop: int | None = None) -> "TimeGrid":
        """Grid made of points ``start .. stop - 1`` (Python slice semantics)."""
        stop = self.count if stop is None else stop
        if not 0 <= start < stop <= self.count:
            raise ValueError(f"bad grid slice [{start}, {stop}) of {self.count}")
        return TimeGrid(self.t0 + start * self.step, self.step, stop - start)

    def covers(self, other: "TimeGrid") -> bool:
        eps = 1e-9 * max(1.0, abs(self.t_end))
        return self.t0 - eps <= other.t0 and other.t_end <= self.t_end + eps

    def to_dict(self) -> dict:
        return {"t0": self.t0, "step": self.step, "count": self.count}

    @classmethod
    def from_dict(cls, d: Mapping) -> "TimeGrid":
        return cls(float(d["t0"]), float(d["step"]), int(d["count"]))


def _frozen(values, length=None) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim != 1:
        raise ValueError("expected a one-dimensional sequence")
    if length is not None and arr.size != length:
        raise ValueError(f"expected {length} samples, got {arr.size}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RateFunction:
    """A function of time sampled on ``grid``; linear in between samples."""

    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, self.grid.count))

    def __call__(self, t):
        return np.interp(t, self.grid.times, self.values)

    @classmethod
    def constant(cls, grid: TimeGrid, value: float) -> "RateFunction":
        return cls(grid, np.full(grid.count, float(value)))

    @classmethod
    def from_callable(cls, grid: TimeGrid, f: Callable) -> "RateFunction":
        return cls(grid, np.asarray(f(grid.times), dtype=float) * np.ones(grid.count))

    def restrict(self, start: int, stop: int | None = None) -> "RateFunction":
        stop = self.grid.count if stop is None else stop
        return RateFunction(self.grid.sub(start, stop), self.values[start:stop])

    def clamped(self) -> "RateFunction":
        return RateFunction(self.grid, np.maximum(self.values, 0.0))

    @property
    def is_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0))


@dataclass(frozen=True, eq=False)
class SirTrajectory:
    grid: TimeGrid
    s: np.ndarray
    i: np.ndarray
    r: np.ndarray
    population: float

    def __post_init__(self):
        for name in ("s", "i", "r"):
            object.__setattr__(self, name, _frozen(getattr(self, name), self.grid.count))

    def restrict(self, start: int, stop: int | None = None) -> "SirTrajectory":
        stop = self.grid.count if stop is None else stop
        return SirTrajectory(self.grid.sub(start, stop), self.s[start:stop],
                             self.i[start:stop], self.r[start:stop], self.population)

    def to_csv(self, path) -> None:
        _write_columns(path, self.grid.times, {"S": self.s, "I": self.i, "R": self.r})


def _write_columns(path, times, columns: Mapping[str, np.ndarray]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t", *columns])
        cols = list(columns.values())
        for k, t in enumerate(times):
            w.writerow([repr(float(t)), *(repr(float(c[k])) for c in cols)])


def substeps_for(grid: TimeGrid, max_substep: float = MAX_SUBSTEP) -> int:
    return max(1, math.ceil(grid.step / max_substep - 1e-12))


def stage_times(grid: TimeGrid, m: int) -> np.ndarray:
    """RK4 stage times, shape ``(count - 1, m, 3)``: start, midpoint, end of each substep."""
    h = grid.step / m
    starts = grid.times[:-1, None] + h * np.arange(m)[None, :]
    return np.stack([starts, starts + 0.5 * h, starts + h], axis=-1)


def sample_rate(rate: RateFunction, times: np.ndarray) -> np.ndarray:
    return np.interp(times, rate.grid.times, rate.values)


def simulate_sir_tv(beta: RateFunction, gamma: RateFunction, s0: float, i0: float,
                    r0: float, grid: TimeGrid | None = None, *,
                    max_substep: float = MAX_SUBSTEP, strict: bool = True) -> SirTrajectory:
    """Integrate the SIR model with time-dependent ``beta`` and ``gamma``.

    Parameters
    ----------
    beta, gamma : RateFunction
        Transmission and removal rates; their grids must cover ``grid``.
    s0, i0, r0 : float
        State at ``grid.t0``. The population is ``N = s0 + i0 + r0``.
    grid : TimeGrid, optional
        Output grid, ``beta.grid`` by default.
    strict : bool
        When False, negative rates and non-finite states are allowed through
        (used to reproduce unstable forecasts); otherwise they raise.

    Returns
    -------
    SirTrajectory
    """
    grid = beta.grid if grid is None else grid
    if not (beta.grid.covers(grid) and gamma.grid.covers(grid)):
        raise ValueError("rate functions do not cover the simulation grid")
    population = float(s0) + float(i0) + float(r0)
    if strict:
        if min(s0, i0, r0) < 0 or not population > 0:
            raise DomainError("initial state must be nonnegative with positive total")

    m = substeps_for(grid, max_substep)
    h = grid.step / m
    q = grid.count
    s_out = np.empty(q)
    i_out = np.empty(q)
    r_out = np.empty(q)
    s_out[0], i_out[0], r_out[0] = s0, i0, r0
    if q > 1:
        st = stage_times(grid, m)
        bs = sample_rate(beta, st)
        gs = sample_rate(gamma, st)
        if strict and (bs.min() < 0 or gs.min() < 0):
            raise DomainError("negative rate sample in SIR simulation")
        b_tab = bs.tolist()
        g_tab = gs.tolist()
        s, i, r = float(s0), float(i0), float(r0)
        inv_n = 1.0 / population
        h2 = 0.5 * h
        h6 = h / 6.0
        floor = -NONNEG_TOL * population
        for k in range(q - 1):
            brow, grow = b_tab[k], g_tab[k]
            for j in range(m):
                b1, bm, b2 = brow[j]
                g1, gm, g2 = grow[j]
                f1 = b1 * s * i * inv_n
                ks1, ki1, kr1 = -f1, f1 - g1 * i, g1 * i
                s2, i2 = s + h2 * ks1, i + h2 * ki1
                f2 = bm * s2 * i2 * inv_n
                ks2, ki2, kr2 = -f2, f2 - gm * i2, gm * i2
                s3, i3 = s + h2 * ks2, i + h2 * ki2
                f3 = bm * s3 * i3 * inv_n
                ks3, ki3, kr3 = -f3, f3 - gm * i3, gm * i3
                s4, i4 = s + h * ks3, i + h * ki3
                f4 = b2 * s4 * i4 * inv_n
                ks4, ki4, kr4 = -f4, f4 - g2 * i4, g2 * i4
                s += h6 * (ks1 + 2.0 * ks2 + 2.0 * ks3 + ks4)
                i += h6 * (ki1 + 2.0 * ki2 + 2.0 * ki3 + ki4)
                r += h6 * (kr1 + 2.0 * kr2 + 2.0 * kr3 + kr4)
            if strict:
                if not (math.isfinite(s) and math.isfinite(i) and math.isfinite(r)):
                    raise NumericError(f"non-finite SIR state at t={grid.times[k + 1]}")
                if s < floor or i < floor or r < floor:
                    raise NumericError(f"negative SIR compartment at t={grid.times[k + 1]}")
            s_out[k + 1], i_out[k + 1], r_out[k + 1] = s, i, r
    return SirTrajectory(grid, s_out, i_out, r_out, population)


def sir_derivatives(traj: SirTrajectory, beta: RateFunction, gamma: RateFunction):
    """Exact right-hand side ``(dS, dI, dR)`` of SIR-TV at the grid points of ``traj``."""
    b = beta(traj.grid.times)
    g = gamma(traj.grid.times)
    f = b * traj.s * traj.i / traj.population
    return -f, f - g * traj.i, g * traj.i


# -- detailed models ---------------------------------------------------------

SEI5CHRD = "SEI5CHRD"
SE2IUR = "SE2IUR"

PARAMETER_NAMES = {
    SEI5CHRD: ("beta_p", "beta_a", "beta_ps", "beta_ms", "beta_ss", "beta_H", "beta_C",
               "epsilon", "mu_p", "p_a", "mu", "p_ps", "p_ms", "p_ss", "p_C",
               "lambda_CR", "lambda_CD", "lambda_HR", "lambda_HD"),
    SE2IUR: ("beta", "delta", "sigma", "nu", "gamma1", "gamma2"),
}
COMPARTMENTS = {
    SEI5CHRD: ("S", "E", "Ip", "Ia", "Ips", "Ims", "Iss", "C", "H", "R", "D"),
    SE2IUR: ("S", "E1", "E2", "I", "U", "R"),
}
PROBABILITIES = {
    SEI5CHRD: ("p_a", "p_ps", "p_ms", "p_ss", "p_C"),
    SE2IUR: ("nu",),
}
SIMPLEX = {SEI5CHRD: ("p_ps", "p_ms", "p_ss"), SE2IUR: ()}
SIMPLEX_TOL = 1e-9


def check_model(model: str) -> str:
    if model not in PARAMETER_NAMES:
        raise ValueError(f"unknown model tag {model!r}; expected one of {sorted(PARAMETER_NAMES)}")
    return model


@dataclass(frozen=True, eq=False)
class DetailedParams:
    """Parameter vector and initial state of a detailed model.

    ``values`` maps parameter names (see ``PARAMETER_NAMES``) to nonnegative
    reals; ``u0`` lists initial compartment counts in ``COMPARTMENTS`` order.
    """

    model: str
    values: Mapping[str, float]
    u0: np.ndarray
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        check_model(self.model)
        names = PARAMETER_NAMES[self.model]
        missing = set(names) - set(self.values)
        extra = set(self.values) - set(names)
        if missing or extra:
            raise ValueError(f"{self.model} parameters: missing {sorted(missing)}, unexpected {sorted(extra)}")
        vals = {k: float(self.values[k]) for k in names}
        for k, v in vals.items():
            if not math.isfinite(v) or v < 0:
                raise DomainError(f"parameter {k}={v} must be a nonnegative real")
        for k in PROBABILITIES[self.model]:
            if vals[k] > 1:
                raise DomainError(f"probability {k}={vals[k]} outside [0, 1]")
        simplex = SIMPLEX[self.model]
        if simplex and abs(sum(vals[k] for k in simplex) - 1.0) > SIMPLEX_TOL:
            raise DomainError(f"{' + '.join(simplex)} must equal 1")
        object.__setattr__(self, "values", vals)
        u0 = _frozen(self.u0, len(COMPARTMENTS[self.model]))
        if np.any(u0 < 0) or not u0.sum() > 0:
            raise DomainError("initial state must be nonnegative with positive total")
        object.__setattr__(self, "u0", u0)

    @property
    def population(self) -> float:
        return float(self.u0.sum())

    @property
    def compartments(self) -> tuple:
        return COMPARTMENTS[self.model]

    def to_dict(self) -> dict:
        return {"model": self.model, "values": dict(self.values),
                "u0": [float(x) for x in self.u0]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DetailedParams":
        return cls(d["model"], dict(d["values"]), np.asarray(d["u0"], dtype=float))


def _sei5chrd_rhs(p: Mapping[str, float], n: float):
    bp, ba, bps, bms, bss = p["beta_p"], p["beta_a"], p["beta_ps"], p["beta_ms"], p["beta_ss"]
    bh, bc = p["beta_H"], p["beta_C"]
    eps, mup, pa, mu = p["epsilon"], p["mu_p"], p["p_a"], p["mu"]
    pps, pms, pss, pc = p["p_ps"], p["p_ms"], p["p_ss"], p["p_C"]
    lcr, lcd, lhr, lhd = p["lambda_CR"], p["lambda_CD"], p["lambda_HR"], p["lambda_HD"]
    inv_n = 1.0 / n

    def rhs(u):
        s, e, ip, ia, ips, ims, iss, c, h, _, _ = u
        force = s * inv_n * (bp * ip + ba * ia + bps * ips + bms * ims + bss * iss + bh * h + bc * c)
        onset = mup * ip
        # asymptomatic, pauci- and mild-symptomatic cases are removed at rate mu
        return np.array([
            -force,
            force - eps * e,
            eps * e - onset,
            pa * onset - mu * ia,
            pps * (1 - pa) * onset - mu * ips,
            pms * (1 - pa) * onset - mu * ims,
            pss * (1 - pa) * onset - mu * iss,
            pc * mu * iss - (lcr + lcd) * c,
            (1 - pc) * mu * iss - (lhr + lhd) * h,
            lcr * c + lhr * h + mu * (ia + ips + ims),
            lcd * c + lhd * h,
        ])

    return rhs


def _se2iur_rhs(p: Mapping[str, float], n: float):
    beta, delta, sigma, nu = p["beta"], p["delta"], p["sigma"], p["nu"]
    g1, g2 = p["gamma1"], p["gamma2"]
    inv_n = 1.0 / n

    def rhs(u):
        s, e1, e2, i, uu, _ = u
        force = beta * s * (e2 + uu + i) * inv_n
        return np.array([
            -force,
            force - delta * e1,
            delta * e1 - sigma * e2,
            nu * sigma * e2 - g1 * i,
            (1 - nu) * sigma * e2 - g2 * uu,
            g1 * i + g2 * uu,
        ])

    return rhs


def detailed_rhs(params: DetailedParams):
    """Right-hand side ``u -> du/dt`` of the detailed model."""
    build = _sei5chrd_rhs if params.model == SEI5CHRD else _se2iur_rhs
    return build(params.values, params.population)


def rk4(rhs: Callable[[np.ndarray], np.ndarray], y0: np.ndarray, grid: TimeGrid, *,
        max_substep: float = MAX_SUBSTEP, floor: float | None = None) -> np.ndarray:
    """Fixed-step RK4 for an autonomous system; returns states at grid points.

    ``floor`` (if given) is the most negative entry tolerated at a grid point.
    """
    m = substeps_for(grid, max_substep)
    h = grid.step / m
    out = np.empty((grid.count, len(y0)))
    y = np.array(y0, dtype=float)
    out[0] = y
    for k in range(grid.count - 1):
        for _ in range(m):
            k1 = rhs(y)
            k2 = rhs(y + 0.5 * h * k1)
            k3 = rhs(y + 0.5 * h * k2)
            k4 = rhs(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NumericError(f"non-finite state at t={grid.times[k + 1]}")
        if floor is not None and y.min() < floor:
            raise NumericError(f"negative compartment at t={grid.times[k + 1]}")
        out[k + 1] = y
    return out


@dataclass(frozen=True, eq=False)
class DetailedTrajectory:
    """All compartments of a detailed run (``count x d``) plus exact derivatives."""

    grid: TimeGrid
    compartments: np.ndarray
    model: str
    params: DetailedParams
    derivatives: np.ndarray

    def column(self, name: str) -> np.ndarray:
        return self.compartments[:, COMPARTMENTS[self.model].index(name)]

    def derivative(self, name: str) -> np.ndarray:
        return self.derivatives[:, COMPARTMENTS[self.model].index(name)]

    @property
    def d(self) -> int:
        return self.compartments.shape[1]

    def to_csv(self, path) -> None:
        names = COMPARTMENTS[self.model]
        _write_columns(path, self.grid.times,
                       {n: self.compartments[:, j] for j, n in enumerate(names)})


def simulate_detailed(params: DetailedParams, grid: TimeGrid, *,
                      max_substep: float = MAX_SUBSTEP) -> DetailedTrajectory:
    """Run SEI5CHRD or SE2IUR from ``params.u0`` at ``grid.t0``."""
    rhs = detailed_rhs(params)
    u = rk4(rhs, params.u0, grid, max_substep=max_substep,
            floor=-NONNEG_TOL * params.population)
    du = np.array([rhs(row) for row in u])
    u.setflags(write=False)
    du.setflags(write=False)
    return DetailedTrajectory(grid, u, params.model, params, du)

