"""Run configuration shared by the CLI subcommands."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .clustering import DEFAULT_K, METHODS
from .policies import DEFAULT_ETA
from .whittle import DEFAULT_BETA


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    method: str = "PPF"
    k: int = DEFAULT_K
    beta: float = DEFAULT_BETA
    m: object = 50          # int, or one int per week
    eta: int = DEFAULT_ETA
    weeks: int = 40
    trials: int = 30
    seed: int = 0
    n_trees: int = 100
    features: str | None = None
    trajectories: str | None = None
    model: str | None = None
    index: str | None = None
    bucket_rules: str | None = None
    out: str | None = None

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        self.method = str(self.method).upper()
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        for name in ("k", "eta", "weeks", "trials", "n_trees"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if not isinstance(self.beta, (int, float)) or not 0.0 <= self.beta < 1.0:
            raise ConfigError(f"beta must lie in [0, 1), got {self.beta!r}")
        budgets = self.m if isinstance(self.m, list) else [self.m]
        if not budgets or any(isinstance(b, bool) or not isinstance(b, int) or b < 0 for b in budgets):
            raise ConfigError(f"m must be a non-negative integer or a list of them, got {self.m!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {unknown}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
        if not isinstance(d, dict):
            raise ConfigError("config file must hold a JSON object")
        return cls.from_dict(d)

    def merged(self, **overrides) -> "RunConfig":
        d = asdict(self)
        d.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)
