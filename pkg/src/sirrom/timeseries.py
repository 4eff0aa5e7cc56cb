"""Daily health series: loading, smoothing, scaling, and observed SIR rates."""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContiguityError, DomainError, ParseError
from .models import RateFunction, TimeGrid

DEFAULT_ADJUSTMENT = 15.0
DEFAULT_WINDOW = 7


@dataclass(frozen=True, eq=False)
class HealthSeries:
    """Infected and removed counts on consecutive days for a population ``N``."""

    dates: np.ndarray
    infected: np.ndarray
    removed: np.ndarray
    population: float

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        inf = np.array(self.infected, dtype=float)
        rem = np.array(self.removed, dtype=float)
        if not (dates.ndim == inf.ndim == rem.ndim == 1):
            raise ValueError("series must be one-dimensional")
        if not len(dates) == len(inf) == len(rem):
            raise ValueError("dates, infected and removed must have equal length")
        if len(dates) < 2:
            raise ValueError("a health series needs at least two days")
        if not self.population > 0:
            raise DomainError("population must be positive")
        if np.any(np.diff(dates).astype(int) != 1):
            raise ContiguityError("dates must be consecutive days")
        if np.any(inf < 0) or np.any(rem < 0):
            raise DomainError("counts must be nonnegative")
        if np.any(inf + rem > self.population * (1 + 1e-12)):
            raise DomainError("infected + removed exceeds the population")
        for name, arr in (("dates", dates), ("infected", inf), ("removed", rem)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "population", float(self.population))

    def __len__(self):
        return len(self.dates)

    @property
    def susceptible(self) -> np.ndarray:
        return self.population - self.infected - self.removed

    @property
    def grid(self) -> TimeGrid:
        """Daily grid with day 0 at the first date."""
        return TimeGrid.daily(len(self))

    def replace(self, infected=None, removed=None) -> "HealthSeries":
        return HealthSeries(self.dates,
                            self.infected if infected is None else infected,
                            self.removed if removed is None else removed,
                            self.population)

    def head(self, count: int) -> "HealthSeries":
        return HealthSeries(self.dates[:count], self.infected[:count],
                            self.removed[:count], self.population)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["date", "infected", "removed"])
            for d, i, r in zip(self.dates, self.infected, self.removed):
                w.writerow([str(d), repr(float(i)), repr(float(r))])


def dates_from(start: str | dt.date, count: int) -> np.ndarray:
    return np.datetime64(str(start), "D") + np.arange(count)


def load_csv(path, population: float) -> HealthSeries:
    """Read a ``date,infected,removed`` file into a raw (unsmoothed) series."""
    dates, inf, rem = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "infected", "removed"]:
            raise ParseError("header must be 'date,infected,removed'", row=0)
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", row=row_no)
            try:
                day = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise ParseError(f"bad ISO date {row[0]!r}", row=row_no) from None
            vals = []
            for name, text in (("infected", row[1]), ("removed", row[2])):
                text = text.strip()
                try:
                    v = float(text)
                except ValueError:
                    raise ParseError(f"missing or non-numeric {name} value {text!r}", row=row_no) from None
                if not math.isfinite(v) or v < 0:
                    raise ParseError(f"{name} must be a nonnegative number, got {text}", row=row_no)
                vals.append(v)
            if dates and (day - dates[-1]).days != 1:
                raise ContiguityError(f"row {row_no}: {day} does not follow {dates[-1]}")
            dates.append(day)
            inf.append(vals[0])
            rem.append(vals[1])
    return HealthSeries(np.array(dates, dtype="datetime64[D]"), inf, rem, population)


def moving_average(values, window: int) -> np.ndarray:
    """Centered moving average; near the ends the window shrinks symmetrically."""
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smoothing window must be a positive odd integer, got {window}")
    x = np.asarray(values, dtype=float)
    if window > len(x):
        raise ValueError(f"window {window} longer than series ({len(x)})")
    if window == 1:
        return x.copy()
    csum = np.concatenate([[0.0], np.cumsum(x)])
    k = np.arange(len(x))
    half = np.minimum(np.minimum(window // 2, k), len(x) - 1 - k)
    return (csum[k + half + 1] - csum[k - half]) / (2 * half + 1)


def smooth(series: HealthSeries, window: int = DEFAULT_WINDOW) -> HealthSeries:
    """Moving-average both counts, then force ``removed`` to be nondecreasing."""
    inf = moving_average(series.infected, window)
    rem = np.maximum.accumulate(moving_average(series.removed, window))
    return series.replace(infected=inf, removed=rem)


def apply_adjustment(series: HealthSeries, factor: float = DEFAULT_ADJUSTMENT) -> HealthSeries:
    """Scale hospital counts up to an estimate of all infections."""
    if not factor > 0:
        raise ValueError("adjustment factor must be positive")
    peak = float(np.max(series.infected + series.removed)) * factor
    if peak > series.population:
        raise DomainError(f"adjusted counts ({peak:g}) exceed the population ({series.population:g})")
    return series.replace(infected=series.infected * factor, removed=series.removed * factor)


def finite_difference(values, step: float = 1.0) -> np.ndarray:
    """Central differences inside, first-order one-sided differences at both ends."""
    return np.gradient(np.asarray(values, dtype=float), step, edge_order=1)


@dataclass(frozen=True, eq=False)
class ObservedRates:
    grid: TimeGrid
    beta_star: RateFunction
    gamma_star: RateFunction
    r0: np.ndarray
    clamp_count: int = 0


def observed_rates(series: HealthSeries, *, clamp: bool = True) -> ObservedRates:
    """SIR rates that reproduce ``series`` exactly, with derivatives by finite differences.

    Negative values produced by noise are clamped to zero (``clamp_count``
    reports how many samples were affected).
    """
    inf, rem = series.infected, series.removed
    sus = series.susceptible
    bad = np.flatnonzero(inf <= 0)
    if bad.size:
        raise DomainError(f"infected count is zero on {series.dates[bad[0]]}; rates undefined")
    bad = np.flatnonzero(sus <= 0)
    if bad.size:
        raise DomainError(f"no susceptibles left on {series.dates[bad[0]]}; rates undefined")
    grid = series.grid
    beta = -series.population / (inf * sus) * finite_difference(sus, grid.step)
    gamma = finite_difference(rem, grid.step) / inf
    clamps = 0
    if clamp:
        clamps = int(np.sum(beta < 0) + np.sum(gamma < 0))
        beta = np.maximum(beta, 0.0)
        gamma = np.maximum(gamma, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        r0 = np.where(gamma > 0, beta / np.where(gamma > 0, gamma, 1.0), np.nan)
    return ObservedRates(grid, RateFunction(grid, beta), RateFunction(grid, gamma), r0, clamps)
