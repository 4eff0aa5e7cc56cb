"""Parameter boxes, virtual epidemic scenarios and collapsed-rate training sets."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .collapse import collapse_trajectory, recover_rates
from .errors import CollapseDegeneracyError, EmptyTrainingSetError, NumericError
from .models import (COMPARTMENTS, PARAMETER_NAMES, PROBABILITIES, SIMPLEX, SIMPLEX_TOL,
                     DetailedParams, TimeGrid, check_model, simulate_detailed)
from .timeseries import HealthSeries, dates_from

log = logging.getLogger(__name__)

SIMPLEX_MAX_TRIES = 1000


@dataclass(frozen=True)
class ParameterBox:
    """Uniform sampling ranges for one detailed model.

    Parameters
    ----------
    model : str
        Model tag.
    bounds : mapping
        ``name -> (lower, upper)`` for every model parameter.
    initial_fractions : mapping
        ``compartment -> (lower, upper)`` as fractions of ``population`` for
        every compartment except ``S``, which takes the remainder.
    population : float
    """

    model: str
    bounds: Mapping[str, tuple]
    initial_fractions: Mapping[str, tuple]
    population: float

    def __post_init__(self):
        check_model(self.model)
        names = PARAMETER_NAMES[self.model]
        comps = COMPARTMENTS[self.model][1:]
        if set(self.bounds) != set(names):
            raise ValueError(f"box must bound exactly {names}")
        if set(self.initial_fractions) != set(comps):
            raise ValueError(f"initial fractions must cover exactly {comps}")
        if not self.population > 0:
            raise ValueError("population must be positive")
        bounds = {k: (float(self.bounds[k][0]), float(self.bounds[k][1])) for k in names}
        fracs = {k: (float(self.initial_fractions[k][0]), float(self.initial_fractions[k][1]))
                 for k in comps}
        for k, (lo, hi) in {**bounds, **fracs}.items():
            if not 0 <= lo <= hi:
                raise ValueError(f"bad range for {k}: [{lo}, {hi}]")
        for k in PROBABILITIES[self.model]:
            if bounds[k][1] > 1:
                raise ValueError(f"probability {k} upper bound exceeds 1")
        if sum(hi for _, hi in fracs.values()) >= 1:
            raise ValueError("initial fractions can exhaust the population")
        simplex = SIMPLEX[self.model]
        if simplex:
            lo = sum(bounds[k][0] for k in simplex)
            hi = sum(bounds[k][1] for k in simplex)
            if lo > 1 + SIMPLEX_TOL or hi < 1 - SIMPLEX_TOL:
                raise ValueError(f"simplex {simplex} unreachable inside the box")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "initial_fractions", fracs)
        object.__setattr__(self, "population", float(self.population))

    @classmethod
    def from_dict(cls, model: str, d: Mapping, population: float | None = None) -> "ParameterBox":
        return cls(model, d["parameters"], d["initial_fractions"],
                   population if population is not None else d["population"])

    def to_dict(self) -> dict:
        return {"model": self.model, "population": self.population,
                "parameters": {k: list(v) for k, v in self.bounds.items()},
                "initial_fractions": {k: list(v) for k, v in self.initial_fractions.items()}}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    @classmethod
    def point(cls, params: DetailedParams) -> "ParameterBox":
        """Degenerate box containing only ``params``."""
        n = params.population
        fr = {c: (v / n, v / n) for c, v in zip(params.compartments[1:], params.u0[1:])}
        return cls(params.model, {k: (v, v) for k, v in params.values.items()}, fr, n)


def load_default_boxes(path=None, population: float | None = None) -> dict:
    """Shipped (or user-supplied) box file as ``{model: ParameterBox}``."""
    if path is None:
        text = resources.files("sirrom").joinpath("data/default_boxes.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    raw = json.loads(text)
    pop = population if population is not None else raw["population"]
    return {m: ParameterBox(m, d["parameters"], d["initial_fractions"], pop)
            for m, d in raw["models"].items()}


def default_box(model: str, population: float | None = None) -> ParameterBox:
    return load_default_boxes(population=population)[check_model(model)]


def _draw_simplex(rng, box: ParameterBox, names) -> dict:
    # two components uniform in their ranges, the last one closes the simplex
    *free, last = names
    lo_l, hi_l = box.bounds[last]
    for _ in range(SIMPLEX_MAX_TRIES):
        vals = {k: rng.uniform(*box.bounds[k]) for k in free}
        rest = 1.0 - sum(vals.values())
        if lo_l - SIMPLEX_TOL <= rest <= hi_l + SIMPLEX_TOL:
            vals[last] = min(max(rest, lo_l), hi_l)
            if abs(sum(vals.values()) - 1.0) <= SIMPLEX_TOL:
                return vals
    raise ValueError(f"could not satisfy {'+'.join(names)}=1 in {SIMPLEX_MAX_TRIES} draws; "
                     "box too narrow around the simplex")


def sample_parameters(box: ParameterBox, count: int, seed: int) -> list:
    """``count`` independent uniform draws from ``box``; deterministic in ``seed``."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    names = PARAMETER_NAMES[box.model]
    simplex = SIMPLEX[box.model]
    comps = COMPARTMENTS[box.model]
    out = []
    for k in range(count):
        vals = {}
        for name in names:
            if name in simplex:
                continue
            vals[name] = rng.uniform(*box.bounds[name])
        if simplex:
            vals.update(_draw_simplex(rng, box, simplex))
        fr = np.array([rng.uniform(*box.initial_fractions[c]) for c in comps[1:]])
        u0 = np.concatenate([[1.0 - fr.sum()], fr]) * box.population
        out.append(DetailedParams(box.model, vals, u0, {"seed": seed, "index": k}))
    return out


@dataclass(frozen=True, eq=False)
class ScenarioSet:
    """Collapsed rate families ``betas``/``gammas`` (``K x Q``) on a shared grid."""

    grid: TimeGrid
    betas: np.ndarray
    gammas: np.ndarray
    provenance: tuple
    dropped: int = 0
    meta: Mapping = field(default_factory=dict)

    def __post_init__(self):
        b = np.array(self.betas, dtype=float, ndmin=2)
        g = np.array(self.gammas, dtype=float, ndmin=2)
        if b.shape != g.shape or b.shape[1] != self.grid.count:
            raise ValueError("betas and gammas must both be K x grid.count")
        if b.shape[0] < 1:
            raise EmptyTrainingSetError("a scenario set needs at least one scenario")
        if len(self.provenance) != b.shape[0]:
            raise ValueError("one provenance entry per scenario required")
        if np.any(b < 0) or np.any(g < 0) or not (np.all(np.isfinite(b)) and np.all(np.isfinite(g))):
            raise ValueError("training rates must be finite and nonnegative")
        for a in (b, g):
            a.setflags(write=False)
        object.__setattr__(self, "betas", b)
        object.__setattr__(self, "gammas", g)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def __len__(self):
        return self.betas.shape[0]

    def save(self, directory) -> None:
        """Write ``betas.csv``, ``gammas.csv`` and ``manifest.json`` into ``directory``."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, mat in (("betas", self.betas), ("gammas", self.gammas)):
            np.savetxt(d / f"{name}.csv", mat, fmt="%.17g", delimiter=",")
        manifest = {"grid": self.grid.to_dict(), "count": len(self), "dropped": self.dropped,
                    "meta": dict(self.meta),
                    "provenance": [p.to_dict() for p in self.provenance]}
        (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                         encoding="utf-8")

    @classmethod
    def load(cls, directory) -> "ScenarioSet":
        d = Path(directory)
        manifest = json.loads((d / "manifest.json").read_text("utf-8"))
        grid = TimeGrid.from_dict(manifest["grid"])
        mats = [np.loadtxt(d / f"{n}.csv", delimiter=",", ndmin=2) for n in ("betas", "gammas")]
        prov = [DetailedParams.from_dict(p) for p in manifest["provenance"]]
        return cls(grid, mats[0], mats[1], prov, manifest.get("dropped", 0),
                   manifest.get("meta", {}))


def collapsed_run(params: DetailedParams, grid: TimeGrid, burn_in: int = 0):
    """Collapsed triple on ``grid`` for a run started ``burn_in`` days before ``grid.t0``."""
    if burn_in < 0:
        raise ValueError("burn_in must be nonnegative")
    steps = int(round(burn_in / grid.step))
    long = TimeGrid(grid.t0 - steps * grid.step, grid.step, grid.count + steps)
    col = collapse_trajectory(simulate_detailed(params, long))
    if not steps:
        return col
    col = col.restrict(steps)
    return replace(col, grid=grid)


def _scenario_rates(args):
    params, grid, burn_in = args
    col = collapsed_run(params, grid, burn_in)
    beta, gamma = recover_rates(col, col.derivatives)
    return beta.values, gamma.values


def _scenario_or_none(args):
    try:
        return _scenario_rates(args)
    except (CollapseDegeneracyError, NumericError) as exc:
        return str(exc)


def build_training_set(params: Sequence[DetailedParams], grid: TimeGrid, *, jobs: int = 1,
                       burn_in: int = 0, meta: Mapping | None = None) -> ScenarioSet:
    """Simulate, collapse and recover rates for every scenario.

    Degenerate scenarios are skipped and counted in ``dropped``. Row order
    follows ``params`` regardless of ``jobs``. With ``burn_in > 0`` each
    sampled state is taken ``burn_in`` days before ``grid.t0``, so the start-up
    transient of the detailed model is left out of the rates.
    """
    tasks = [(p, grid, burn_in) for p in params]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_scenario_or_none, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_scenario_or_none(t) for t in tasks]
    keep = [(p, r) for p, r in zip(params, results) if not isinstance(r, str)]
    dropped = len(results) - len(keep)
    for p, r in zip(params, results):
        if isinstance(r, str):
            log.info("dropped scenario %s: %s", dict(p.meta), r)
    if not keep:
        raise EmptyTrainingSetError(f"all {len(results)} scenarios were degenerate")
    betas = np.array([r[0] for _, r in keep])
    gammas = np.array([r[1] for _, r in keep])
    meta = dict(meta or {})
    meta.setdefault("burn_in", burn_in)
    return ScenarioSet(grid, betas, gammas, [p for p, _ in keep], dropped, meta)


def concatenate(*sets: ScenarioSet) -> ScenarioSet:
    """Stack scenario sets on a common grid (e.g. mixing detailed models)."""
    if not sets:
        raise ValueError("nothing to concatenate")
    grid = sets[0].grid
    if any(s.grid != grid for s in sets):
        raise ValueError("scenario sets live on different grids")
    return ScenarioSet(grid, np.vstack([s.betas for s in sets]), np.vstack([s.gammas for s in sets]),
                       [p for s in sets for p in s.provenance], sum(s.dropped for s in sets),
                       {"parts": [dict(s.meta) for s in sets]})


def synthetic_observations(params: DetailedParams, days: int, *, noise: float = 0.0,
                           seed: int = 0, start="2020-03-01", burn_in: int = 0):
    """Collapsed daily ``(truth, observed)`` series from a detailed run.

    ``observed`` carries independent multiplicative Gaussian noise of relative
    size ``noise`` on both counts (removed counts are kept nondecreasing).
    """
    grid = TimeGrid.daily(days)
    col = collapsed_run(params, grid, burn_in)
    dates = dates_from(start, days)
    truth = HealthSeries(dates, np.maximum(col.i_col, 0), np.maximum(col.r_col, 0), params.population)
    if noise <= 0:
        return truth, truth
    rng = np.random.default_rng(seed)
    n = params.population
    inf = np.minimum(truth.infected * np.maximum(1 + noise * rng.standard_normal(days), 0), n)
    rem = truth.removed * np.maximum(1 + noise * rng.standard_normal(days), 0)
    rem = np.minimum(np.maximum.accumulate(rem), n - inf)
    return truth, truth.replace(infected=inf, removed=rem)
