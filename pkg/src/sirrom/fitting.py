"""Fit reduced-basis rate coefficients to observed health data."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.optimize import minimize, nnls

from .errors import DomainError, FitError, NumericError
from .models import RateFunction, SirTrajectory, TimeGrid, simulate_sir_tv
from .reduction import BoundedCone, ReducedBasis, lsi, trapezoid_weights, weighted_system
from .timeseries import HealthSeries, ObservedRates, observed_rates

log = logging.getLogger(__name__)

IR, BG = "IR", "BG"
ROUTINES = (IR, BG)
DEFAULT_LOOKBACK = 3
DEFAULT_STARTS = 4
NM_XATOL = 1e-8


def _window(obs_count: int, window) -> tuple:
    start, stop = (0, obs_count) if window is None else (int(window[0]), int(window[1]))
    if not 0 <= start < stop - 1 < obs_count:
        raise ValueError(f"fit window {window} must span >= 2 observed days")
    return start, stop


def _rate_on(rate, times) -> np.ndarray:
    return rate(times) if isinstance(rate, RateFunction) else np.asarray(rate, dtype=float)


def trapezoid(values, step: float = 1.0) -> float:
    v = np.asarray(values, dtype=float)
    return float(np.dot(trapezoid_weights(v.size, step), v))


def simulate_window(beta: RateFunction, gamma: RateFunction, state, grid: TimeGrid, *,
                    clamp: bool = True, strict: bool = True) -> SirTrajectory:
    """SIR-TV on ``grid`` from ``state = (s, i, r)``; negative rates zeroed if ``clamp``."""
    if clamp:
        beta, gamma = beta.clamped(), gamma.clamped()
    return simulate_sir_tv(beta, gamma, *state, grid, strict=strict)


def loss_ir(beta: RateFunction, gamma: RateFunction, obs: HealthSeries, window=None, *,
            state=None) -> float:
    """Trajectory-space loss: integral of ``(I - I_obs)^2 + (R - R_obs)^2`` over the window.

    The simulation starts from the observed state at the window start unless
    ``state`` is given. Trapezoidal quadrature on the daily grid.
    """
    start, stop = _window(len(obs), window)
    grid = obs.grid.sub(start, stop)
    if state is None:
        state = (obs.susceptible[start], obs.infected[start], obs.removed[start])
    traj = simulate_sir_tv(beta, gamma, *state, grid)
    d = (traj.i - obs.infected[start:stop]) ** 2 + (traj.r - obs.removed[start:stop]) ** 2
    return trapezoid(d, grid.step)


def loss_bg(beta, gamma, observed: ObservedRates, window=None) -> float:
    """Rate-space loss: trapezoidal L2 distance of ``(beta, gamma)`` to the observed rates."""
    start, stop = _window(observed.grid.count, window)
    t = observed.grid.times[start:stop]
    db = _rate_on(beta, t) - observed.beta_star.values[start:stop]
    dg = _rate_on(gamma, t) - observed.gamma_star.values[start:stop]
    return trapezoid(db ** 2 + dg ** 2, observed.grid.step)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Fitted coefficients and the rate functions they define.

    ``beta_fit`` and ``gamma_fit`` live on the basis grid (through ``T + tau``);
    ``initial_state`` is the ``(s, i, r)`` from which forecasts start at
    ``initial_time``.
    """

    basis_beta: ReducedBasis
    basis_gamma: ReducedBasis
    coef_beta: np.ndarray
    coef_gamma: np.ndarray
    beta_fit: RateFunction
    gamma_fit: RateFunction
    loss: float
    routine: str
    window: tuple
    initial_time: float
    initial_state: tuple
    population: float
    diagnostics: Mapping = field(default_factory=dict)

    @property
    def fit_end(self) -> float:
        """Time ``T`` of the last fitted day."""
        return self.basis_beta.grid.times[self.window[1] - 1]

    def to_dict(self) -> dict:
        return {"routine": self.routine, "loss": self.loss, "window": list(self.window),
                "coef_beta": self.coef_beta.tolist(), "coef_gamma": self.coef_gamma.tolist(),
                "basis_beta": {"method": self.basis_beta.method, "n": self.basis_beta.n,
                               "sha256": self.basis_beta.digest()},
                "basis_gamma": {"method": self.basis_gamma.method, "n": self.basis_gamma.n,
                                "sha256": self.basis_gamma.digest()},
                "initial_time": self.initial_time,
                "initial_state": [float(x) for x in self.initial_state],
                "population": self.population,
                "diagnostics": json.loads(json.dumps(dict(self.diagnostics), default=float))}


def _make_result(bb, bg, cb, cg, loss, routine, window, obs, diagnostics):
    cb = np.array(cb, dtype=float)
    cg = np.array(cg, dtype=float)
    start = window[0]
    state = (float(obs.susceptible[start]), float(obs.infected[start]), float(obs.removed[start]))
    return FitResult(bb, bg, cb, cg, bb.rate(cb), bg.rate(cg), float(loss), routine,
                     tuple(window), float(obs.grid.times[start]), state, obs.population,
                     dict(diagnostics))


def _check_bases(bb: ReducedBasis, bg: ReducedBasis, obs: HealthSeries, stop: int):
    for b in (bb, bg):
        if b.grid.t0 != obs.grid.t0 or b.grid.step != obs.grid.step:
            raise ValueError("basis grid and observation grid are not aligned")
        if b.grid.count < stop:
            raise ValueError("basis grid does not cover the fit window")


def _solve_rates(basis: ReducedBasis, target: RateFunction, window, bound: BoundedCone | None):
    a, y = weighted_system(target, basis, window, weighted=True)
    if not basis.nonnegative:
        return np.linalg.lstsq(a, y, rcond=None)[0]
    if bound is not None and not bound.unbounded:
        return lsi(a, y, bound.matrix, bound.rhs)
    return nnls(a, y, maxiter=50 * a.shape[1])[0]


def fit_bg(basis_beta: ReducedBasis, basis_gamma: ReducedBasis, obs: HealthSeries, window=None,
           *, observed: ObservedRates | None = None, bound_beta: BoundedCone | None = None,
           bound_gamma: BoundedCone | None = None) -> FitResult:
    """Routine-BG: (cone-constrained) linear least squares in rate space."""
    start, stop = _window(len(obs), window)
    _check_bases(basis_beta, basis_gamma, obs, stop)
    if observed is None:
        observed = observed_rates(obs.head(stop))
    w = (start, stop)
    cb = _solve_rates(basis_beta, observed.beta_star.restrict(0, stop), w, bound_beta)
    cg = _solve_rates(basis_gamma, observed.gamma_star.restrict(0, stop), w, bound_gamma)
    loss = loss_bg(basis_beta.rate(cb), basis_gamma.rate(cg), observed, w)
    return _make_result(basis_beta, basis_gamma, cb, cg, loss, BG, w, obs,
                        {"clamp_count": observed.clamp_count})


@dataclass(frozen=True, eq=False)
class _IrObjective:
    """Picklable trajectory-space objective over scaled coefficients."""

    modes_b: np.ndarray
    modes_g: np.ndarray
    grid: TimeGrid
    scale: np.ndarray
    inf: np.ndarray
    rem: np.ndarray
    state: tuple
    shift: bool

    def rates(self, u):
        c = np.asarray(u[: self.scale.size]) * self.scale
        nb = self.modes_b.shape[0]
        b = c[:nb] @ self.modes_b
        g = c[nb:] @ self.modes_g
        if self.shift:
            # evaluate the rates at t + delta
            t = self.grid.times
            delta = float(u[-1])
            b = np.interp(t + delta, t, b)
            g = np.interp(t + delta, t, g)
        return b, g

    def __call__(self, u) -> float:
        b, g = self.rates(u)
        full = self.grid
        beta = RateFunction(full, np.maximum(b, 0.0))
        gamma = RateFunction(full, np.maximum(g, 0.0))
        sub = full.sub(0, self.inf.size)
        try:
            tr = simulate_sir_tv(beta, gamma, *self.state, sub)
        except (NumericError, DomainError):
            return math.inf
        d = (tr.i - self.inf) ** 2 + (tr.r - self.rem) ** 2
        val = trapezoid(d, full.step)
        return val if math.isfinite(val) else math.inf


def _nm_run(args):
    obj, u0, bounds = args
    res = minimize(obj, u0, method="Nelder-Mead", bounds=bounds,
                   options={"xatol": NM_XATOL, "fatol": 0.0, "maxfev": 400 * len(u0),
                            "adaptive": len(u0) > 5})
    return np.asarray(res.x), float(res.fun), int(res.nfev), bool(res.success)


def fit_ir(basis_beta: ReducedBasis, basis_gamma: ReducedBasis, obs: HealthSeries, window=None,
           *, start_from: FitResult | None = None, starts: int = DEFAULT_STARTS,
           seed: int = 0, shift_start: bool = False, jobs: int = 1, **bg_kwargs) -> FitResult:
    """Routine-IR: derivative-free trajectory fit, multi-started from the BG solution.

    Nelder-Mead runs from the routine-BG coefficients and ``starts`` seeded
    perturbations of them (10% relative). The lowest loss wins; ties go to the
    earliest start. ``shift_start`` adds a time shift of the rates (in days,
    within +-3) as an extra search variable. Negative rates are clamped to zero
    inside the simulation.
    """
    start, stop = _window(len(obs), window)
    bg = start_from or fit_bg(basis_beta, basis_gamma, obs, (start, stop), **bg_kwargs)
    c0 = np.concatenate([bg.coef_beta, bg.coef_gamma])
    scale = np.maximum(np.abs(c0), 1e-3 * max(np.abs(c0).max(), 1e-12))
    grid = basis_beta.grid.sub(start, basis_beta.grid.count)
    modes_b = basis_beta.modes[:, start:]
    modes_g = basis_gamma.modes[:, start:]
    state = (obs.susceptible[start], obs.infected[start], obs.removed[start])
    obj = _IrObjective(modes_b, modes_g, grid, scale, obs.infected[start:stop],
                       obs.removed[start:stop], state, shift_start)
    u0 = c0 / scale
    nb = basis_beta.n
    lo_b = 0.0 if basis_beta.nonnegative else None
    lo_g = 0.0 if basis_gamma.nonnegative else None
    bounds = [(lo_b, None)] * nb + [(lo_g, None)] * basis_gamma.n
    if shift_start:
        u0 = np.append(u0, 0.0)
        bounds.append((-3.0, 3.0))
    rng = np.random.default_rng(seed)
    inits = [u0]
    for _ in range(starts):
        u = u0 * (1 + 0.1 * rng.standard_normal(u0.size))
        inits.append(np.array([min(max(x, lo if lo is not None else -np.inf), hi if hi is not None else np.inf)
                               for x, (lo, hi) in zip(u, bounds)]))
    f0 = obj(u0)
    tasks = [(obj, u, bounds) for u in inits]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_nm_run, tasks))
    else:
        runs = [_nm_run(t) for t in tasks]
    losses = [r[1] for r in runs]
    best = int(np.argmin(losses))  # first minimum on ties
    if not math.isfinite(losses[best]):
        raise FitError("routine-IR found no finite loss", {"losses": losses, "start_loss": f0})
    u = runs[best][0]
    c = u[: scale.size] * scale
    diag = {"start_loss": f0, "losses": losses, "best_start": best,
            "nfev": [r[2] for r in runs], "converged": [r[3] for r in runs],
            "clamp_count": bg.diagnostics.get("clamp_count", 0)}
    if shift_start:
        diag["time_shift"] = float(u[-1])
    cb, cg = c[:nb], c[nb:]
    res = _make_result(basis_beta, basis_gamma, cb, cg, losses[best], IR, (start, stop), obs, diag)
    if shift_start:
        b, g = obj.rates(u)
        full_b = np.concatenate([basis_beta.modes[:, :start].T @ cb, b]) if start else b
        full_g = np.concatenate([basis_gamma.modes[:, :start].T @ cg, g]) if start else g
        res = replace(res, beta_fit=RateFunction(basis_beta.grid, full_b),
                      gamma_fit=RateFunction(basis_gamma.grid, full_g))
    return res


def fit(basis_beta: ReducedBasis, basis_gamma: ReducedBasis, obs: HealthSeries,
        routine: str = BG, window=None, **kwargs) -> FitResult:
    """Fit ``(beta, gamma)`` in ``basis_beta x basis_gamma`` to ``obs`` on ``window``.

    ``routine`` is ``"BG"`` (rate-space least squares) or ``"IR"`` (trajectory
    space, see ``fit_ir``). ``window`` is an index range ``[start, stop)`` of
    observed days.
    """
    if routine == BG:
        return fit_bg(basis_beta, basis_gamma, obs, window, **kwargs)
    if routine == IR:
        return fit_ir(basis_beta, basis_gamma, obs, window, **kwargs)
    raise ValueError(f"unknown routine {routine!r}; expected one of {ROUTINES}")


def optimize_initial_state(result: FitResult, obs: HealthSeries,
                           lookback: int = DEFAULT_LOOKBACK, *, clamp: bool = True) -> FitResult:
    """Re-estimate ``(i, r)`` at ``T - lookback`` to match the last observed days.

    Bounded Nelder-Mead over ``(i, r)`` in ``[0.2, 5]`` times the observed
    values (``s = N - i - r``), minimising the squared I and R errors on the
    ``lookback + 1`` days ending at ``T``. A zero observed ``r`` is held fixed.
    """
    if lookback < 1:
        raise ValueError("lookback must be at least 1 day")
    stop = result.window[1]
    t_idx = stop - 1
    s_idx = t_idx - lookback
    if s_idx < 0 or len(obs) < stop:
        raise ValueError("observations do not cover the lookback window")
    i_obs, r_obs = float(obs.infected[s_idx]), float(obs.removed[s_idx])
    if i_obs <= 0:
        raise DomainError("observed I is zero at the start of the lookback window; empty search box")
    n = obs.population
    grid = obs.grid.sub(s_idx, stop)
    beta, gamma = result.beta_fit, result.gamma_fit
    if clamp:
        beta, gamma = beta.clamped(), gamma.clamped()
    ti, tr_ = obs.infected[s_idx:stop], obs.removed[s_idx:stop]
    norm = max(float(np.max(ti)), 1.0)
    fix_r = r_obs <= 0

    def state_of(x):
        i = x[0] * i_obs
        r = 0.0 if fix_r else x[1] * r_obs
        return n - i - r, i, r

    def obj(x):
        s, i, r = state_of(x)
        if s <= 0:
            return math.inf
        try:
            tr = simulate_sir_tv(beta, gamma, s, i, r, grid)
        except (NumericError, DomainError):
            return math.inf
        return float(np.sum((tr.i - ti) ** 2 + (tr.r - tr_) ** 2)) / norm ** 2

    x0 = np.ones(1 if fix_r else 2)
    res = minimize(obj, x0, method="Nelder-Mead", bounds=[(0.2, 5.0)] * x0.size,
                   options={"xatol": 1e-10, "fatol": 0.0, "maxfev": 2000})
    x = res.x if res.fun <= obj(x0) else x0
    state = tuple(float(v) for v in state_of(x))
    diag = dict(result.diagnostics, initial_state_loss=float(min(res.fun, obj(x0))) * norm ** 2,
                lookback=lookback)
    return replace(result, initial_time=float(grid.t0), initial_state=state, diagnostics=diag)
