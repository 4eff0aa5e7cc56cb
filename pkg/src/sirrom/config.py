"""Pipeline configuration: JSON file validated against a schema, plus a stable hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import jsonschema

from .errors import SirromError

# keys that do not influence any artifact content
_UNHASHED = ("output_dir", "jobs")


class ConfigError(SirromError, ValueError):
    """Invalid pipeline configuration."""


SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "data": {"type": ["string", "null"]},
        "truth": {"type": ["string", "null"]},
        "population": {"type": ["number", "null"], "exclusiveMinimum": 0},
        "adjustment_factor": {"type": "number", "exclusiveMinimum": 0},
        "smooth_window": {"type": "integer", "minimum": 1},
        "models": {"type": "array", "minItems": 1, "uniqueItems": True,
                   "items": {"enum": ["SEI5CHRD", "SE2IUR"]}},
        "boxes": {"type": ["string", "null"]},
        "K": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "burn_in": {"type": "integer", "minimum": 0},
        "methods": {"type": "array", "minItems": 1, "uniqueItems": True,
                    "items": {"enum": ["SVD", "NMF", "ENG"]}},
        "n_min": {"type": "integer", "minimum": 1},
        "n_max": {"type": "integer", "minimum": 1},
        "epsilon": {"type": "number", "exclusiveMinimum": 0},
        "nmf_iters": {"type": "integer", "minimum": 1},
        "exp_mode": {"type": "boolean"},
        "fit_start": {"type": "integer", "minimum": 0},
        "fit_days": {"type": "integer", "minimum": 2},
        "horizon": {"type": "integer", "minimum": 0},
        "train_horizon": {"type": "integer", "minimum": 0},
        "routine": {"enum": ["BG", "IR"]},
        "ir_starts": {"type": "integer", "minimum": 0},
        "lookback": {"type": "integer", "minimum": 1},
        "clamp": {"type": "boolean"},
        "bounded": {"type": "boolean"},
        "weights": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0}},
        "output_dir": {"type": "string"},
        "jobs": {"type": "integer", "minimum": 1},
    },
}


@dataclass
class PipelineConfig:
    """All knobs of the train / fit / forecast / evaluate pipeline.

    Day indices are relative to the first row of the data file; the fit
    window is ``[fit_start, fit_start + fit_days)`` and training grids span
    ``fit_days + train_horizon`` days so that any ``horizon <= train_horizon``
    reuses the same bases.
    """

    data: str | None = None
    truth: str | None = None
    population: float | None = None
    adjustment_factor: float = 15.0
    smooth_window: int = 7
    models: list = field(default_factory=lambda: ["SEI5CHRD"])
    boxes: str | None = None
    K: int = 200
    seed: int = 0
    burn_in: int = 14
    methods: list = field(default_factory=lambda: ["ENG", "SVD", "NMF"])
    n_min: int = 5
    n_max: int = 10
    epsilon: float = 1e-3
    nmf_iters: int = 2000
    exp_mode: bool = False
    fit_start: int = 0
    fit_days: int = 31
    horizon: int = 14
    train_horizon: int = 28
    routine: str = "BG"
    ir_starts: int = 4
    lookback: int = 3
    clamp: bool = True
    bounded: bool = False
    weights: list | None = None
    output_dir: str = "out"
    jobs: int = 1

    def __post_init__(self):
        if self.n_min > self.n_max:
            raise ConfigError(f"empty n range [{self.n_min}, {self.n_max}]")
        if self.horizon > self.train_horizon:
            raise ConfigError("horizon exceeds train_horizon; retrain with a longer grid")
        if self.smooth_window % 2 == 0:
            raise ConfigError("smooth_window must be odd")
        if self.lookback >= self.fit_days:
            raise ConfigError("lookback must be shorter than the fit window")
        if self.weights is not None:
            if len(self.weights) != self.n_max - self.n_min + 1:
                raise ConfigError("one combination weight per n required")
            if abs(sum(self.weights) - 1) > 1e-12:
                raise ConfigError("combination weights must sum to 1")

    @property
    def n_values(self) -> list:
        return list(range(self.n_min, self.n_max + 1))

    @property
    def grid_days(self) -> int:
        return self.fit_days + self.train_horizon

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """SHA-256 of the canonical JSON of every content-relevant setting."""
        d = {k: v for k, v in self.to_dict().items() if k not in _UNHASHED}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, raw: dict) -> "PipelineConfig":
        try:
            jsonschema.validate(raw, SCHEMA)
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"config {where}: {exc.message}") from None
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in raw.items() if k in known})

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        p = Path(path)
        try:
            raw = json.loads(p.read_text("utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"{p}: top level must be an object")
        return cls.from_dict(raw)
