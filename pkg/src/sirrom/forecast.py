"""Propagate fitted rates beyond the fit window, combine forecasts, score them."""

from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError
from .fitting import FitResult
from .models import MAX_SUBSTEP, RateFunction, TimeGrid, simulate_sir_tv
from .timeseries import HealthSeries, observed_rates

log = logging.getLogger(__name__)

DEFAULT_HORIZONS = (14, 28)
BLOWUP_FACTOR = 10.0
# largest h * rate used for clamped propagation
STABLE_STEP = 0.5
ERROR_KINDS = ("L1", "L2", "Linf")


@dataclass(frozen=True, eq=False)
class Forecast:
    """Predicted ``I`` and ``R`` on ``[T, T + horizon]`` (both ends included).

    ``clamped`` tells whether negative fitted rates were zeroed for the
    simulation; ``diverged`` flags non-finite, negative or runaway (above
    ``10 N``) infected counts, which can only occur without clamping.
    """

    grid: TimeGrid
    s_pred: np.ndarray
    i_pred: np.ndarray
    r_pred: np.ndarray
    horizon: int
    population: float
    source: FitResult | None = None
    clamped: bool = False
    diverged: bool = False
    notes: tuple = ()

    @property
    def days(self) -> int:
        """Number of predicted days after ``T``."""
        return self.grid.count - 1

    def to_csv(self, path, start_date=None) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "I_pred", "R_pred"])
            for k in range(self.grid.count):
                if start_date is None:
                    label = repr(float(self.grid.times[k]))
                else:
                    label = str(np.datetime64(str(start_date), "D") + int(round(self.grid.times[k])))
                w.writerow([label, repr(float(self.i_pred[k])), repr(float(self.r_pred[k]))])


def _diverged(i: np.ndarray, population: float) -> bool:
    return bool(not np.all(np.isfinite(i)) or np.any(i < 0)
                or np.any(np.abs(i) > BLOWUP_FACTOR * population))


def propagate(result: FitResult, horizon: int, *, clamp: bool = True) -> Forecast:
    """Simulate SIR-TV with the fitted rates up to ``T + horizon`` and keep ``[T, T + horizon]``.

    The run starts at ``result.initial_time`` from ``result.initial_state``.
    With ``clamp`` (default) negative fitted rates are set to zero, a warning
    is issued and ``Forecast.clamped`` is set. Without it the raw rates are
    used and the simulation may blow up; see ``Forecast.diverged``.
    """
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    grid = result.beta_fit.grid
    t_end = result.fit_end
    k0 = grid.index_of(result.initial_time)
    kt = grid.index_of(t_end)
    k1 = kt + int(round(horizon / grid.step))
    if k1 >= grid.count:
        raise ValueError(f"fitted rates end at t={grid.t_end}, before T + horizon = {t_end + horizon}")
    sim_grid = grid.sub(k0, k1 + 1)
    beta, gamma = result.beta_fit, result.gamma_fit
    notes = []
    negative = bool(np.any(beta.values[k0:k1 + 1] < 0) or np.any(gamma.values[k0:k1 + 1] < 0))
    clamped = False
    if negative and clamp:
        msg = "negative fitted rate clamped at 0 for propagation"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        beta, gamma = beta.clamped(), gamma.clamped()
        clamped = True
    substep = MAX_SUBSTEP
    if clamp:
        # keep RK4 stable for large extrapolated rates; the peak is taken over the
        # whole grid so shorter horizons stay exact prefixes of longer ones
        peak = max(float(beta.values[k0:].max()), float(gamma.values[k0:].max()))
        if peak > 0:
            substep = min(MAX_SUBSTEP, STABLE_STEP / peak)
    with np.errstate(over="ignore", invalid="ignore"):
        traj = simulate_sir_tv(beta, gamma, *result.initial_state, sim_grid, strict=clamp,
                               max_substep=substep)
    off = kt - k0
    s, i, r = traj.s[off:], traj.i[off:], traj.r[off:]
    div = _diverged(i, result.population)
    if div:
        notes.append("forecast diverged")
    return Forecast(grid.sub(kt, k1 + 1), s, i, r, int(horizon), result.population, result,
                    clamped, div, tuple(notes))


@dataclass(frozen=True, eq=False)
class CombinedForecast:
    grid: TimeGrid
    members: tuple
    weights: np.ndarray
    i_comb: np.ndarray
    r_comb: np.ndarray
    population: float = 0.0
    labels: tuple = field(default_factory=tuple)

    @property
    def i_pred(self):
        return self.i_comb

    @property
    def r_pred(self):
        return self.r_comb

    def to_csv(self, path, start_date=None) -> None:
        Forecast(self.grid, self.population - self.i_comb - self.r_comb, self.i_comb,
                 self.r_comb, self.grid.count - 1, self.population).to_csv(path, start_date)


def combine(forecasts: Sequence[Forecast], weights=None, labels=None) -> CombinedForecast:
    """Weighted average of forecasts on a common grid (uniform weights by default)."""
    fs = tuple(forecasts)
    if not fs:
        raise ValueError("nothing to combine")
    grid = fs[0].grid
    if any(f.grid != grid for f in fs):
        raise ValueError("forecasts live on different grids")
    if weights is None:
        w = np.full(len(fs), 1.0 / len(fs))
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (len(fs),):
            raise ValueError("one weight per forecast required")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
    i = w @ np.array([f.i_pred for f in fs])
    r = w @ np.array([f.r_pred for f in fs])
    return CombinedForecast(grid, fs, w, i, r, fs[0].population, tuple(labels or ()))


def errors(pred, truth, kind: str = "L1") -> float:
    """Relative error of ``pred`` against ``truth``.

    The discrete norm of the difference (mean absolute value, root mean
    square, or maximum) divided by the same norm of the constant series equal
    to the mean of ``truth``.
    """
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape or p.ndim != 1 or p.size == 0:
        raise ValueError("pred and truth must be nonempty sequences of equal length")
    ref = abs(float(np.mean(t)))
    if ref == 0:
        raise DomainError("mean of truth is zero; relative error undefined")
    d = np.abs(p - t)
    if kind == "L1":
        num = d.mean()
    elif kind == "L2":
        num = np.sqrt(np.mean(d ** 2))
    elif kind == "Linf":
        num = d.max()
    else:
        raise ValueError(f"unknown error kind {kind!r}; expected one of {ERROR_KINDS}")
    return float(num / ref)


def error_table(forecast, truth_i, truth_r) -> dict:
    """All error kinds for ``I`` and ``R``."""
    out = {}
    for name, pred, tru in (("I", forecast.i_pred, truth_i), ("R", forecast.r_pred, truth_r)):
        for kind in ERROR_KINDS:
            out[f"{kind}_{name}"] = errors(pred, tru, kind)
    return out


def constant_rate_forecast(obs: HealthSeries, stop: int, horizon: int, average: int = 7) -> Forecast:
    """Baseline: freeze the mean observed rates of the last ``average`` fitted days.

    Simulates from the observed state at day ``stop - 1``.
    """
    rates = observed_rates(obs.head(stop))
    k = stop - 1
    lo = max(0, stop - average)
    b = float(np.mean(rates.beta_star.values[lo:stop]))
    g = float(np.mean(rates.gamma_star.values[lo:stop]))
    grid = TimeGrid(obs.grid.times[k], obs.grid.step, horizon + 1)
    traj = simulate_sir_tv(RateFunction.constant(grid, b), RateFunction.constant(grid, g),
                           obs.susceptible[k], obs.infected[k], obs.removed[k], grid)
    return Forecast(grid, traj.s, traj.i, traj.r, horizon, obs.population,
                    notes=(f"constant beta={b:.6g}, gamma={g:.6g}",))
