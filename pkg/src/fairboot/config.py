"""Run configuration: defaults, key=value config files, flag overrides, validation.

Every run is controlled by one flat configuration. Derived random streams are
keyed off the master seed with fixed integer tags so that repetitions,
bootstrap replicates, and reference draws are independent yet reproducible.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np

from .data import CsvSchema

SYNTHETIC_DI = "synthetic-di"
SYNTHETIC_DM = "synthetic-dm"

# seed-mixing tags (entropy lists for numpy SeedSequence)
TAG_DATA = 0
TAG_SPLIT = 1
TAG_STREAM = 2
TAG_MULTIPLIER = 3
TAG_THEORY = 4


class ConfigError(ValueError):
    """Invalid configuration; maps to CLI exit code 1."""


@dataclass
class ExperimentConfig:
    mode: str = "di"
    loss: str = "ce"
    epsilon: float | None = None
    r2: float | None = None
    penalty: str = "hard"
    tau: float = 50.0
    step_c: float = 0.01
    step_a: float = 0.501
    kappa: float = 0.0001
    iters: int = 4000
    checkpoints: list[int] | None = None
    b: int = 100
    alpha: float = 0.05
    n_constraint: int = 200
    n_heldout: int = 100
    n_data: int = 20000
    theory_draws: int = 2000
    reps: int = 100
    seed: int = 0
    data: str = SYNTHETIC_DI
    schema: str | None = None
    multiplier: str = "uniform"
    out: str = "out"

    # ------------------------------------------------------------------
    # Construction
    # ------------------------------------------------------------------
    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        config = cls()
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, raw in enumerate(handle, start=1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = (part.strip() for part in line.split("=", 1))
                config.set_field(key, value)
        return config

    def set_field(self, key: str, value: str) -> None:
        name = key.replace("-", "_")
        for f in fields(self):
            if f.name == name:
                setattr(self, name, _coerce(name, value))
                return
        raise ConfigError(f"unknown configuration key {key!r}")

    def apply_overrides(self, overrides: dict) -> None:
        for key, value in overrides.items():
            if value is None:
                continue
            setattr(self, key, value)

    # ------------------------------------------------------------------
    # Validation
    # ------------------------------------------------------------------
    def validate(self, require_bootstrap: bool = False, require_reps: bool = False) -> None:
        if self.mode not in ("di", "dm"):
            raise ConfigError(f"mode must be 'di' or 'dm', got {self.mode!r}")
        if self.loss not in ("ce", "squared"):
            raise ConfigError(f"loss must be 'ce' or 'squared', got {self.loss!r}")
        if self.mode == "di":
            if self.epsilon is None:
                raise ConfigError("mode 'di' requires epsilon")
            if self.epsilon < 0:
                raise ConfigError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.mode == "dm":
            if self.r2 is None:
                raise ConfigError("mode 'dm' requires r2")
            if self.r2 < 0:
                raise ConfigError(f"r2 must be >= 0, got {self.r2}")
        if self.penalty not in ("hard", "smooth"):
            raise ConfigError(f"penalty must be 'hard' or 'smooth', got {self.penalty!r}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be > 0, got {self.tau}")
        if not self.step_c > 0:
            raise ConfigError(f"step_c must be > 0, got {self.step_c}")
        if not 0.5 < self.step_a < 1.0:
            raise ConfigError(f"step_a must lie in (1/2, 1), got {self.step_a}")
        if self.kappa < 0:
            raise ConfigError(f"kappa must be >= 0, got {self.kappa}")
        if self.loss == "ce" and self.kappa == 0:
            raise ConfigError("loss 'ce' requires kappa > 0 for a strongly convex objective")
        if not 0 < self.alpha < 1:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.iters < 1:
            raise ConfigError(f"iters must be >= 1, got {self.iters}")
        if self.n_constraint < 1 or self.n_heldout < 1:
            raise ConfigError("n_constraint and n_heldout must be >= 1")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.theory_draws < 1:
            raise ConfigError(f"theory_draws must be >= 1, got {self.theory_draws}")
        if self.is_synthetic and self.n_data <= self.n_constraint + self.n_heldout:
            raise ConfigError(
                f"n_data={self.n_data} must exceed n_constraint + n_heldout "
                f"= {self.n_constraint + self.n_heldout}"
            )
        if self.checkpoints is not None:
            if not self.checkpoints:
                raise ConfigError("checkpoints must not be empty")
            if min(self.checkpoints) < 1 or max(self.checkpoints) > self.iters:
                raise ConfigError(f"checkpoints must lie in [1, {self.iters}], got {self.checkpoints}")
        if require_bootstrap and self.b < 2:
            raise ConfigError(f"b must be >= 2, got {self.b}")
        if require_reps and self.reps < 1:
            raise ConfigError(f"reps must be >= 1, got {self.reps}")
        if self.multiplier not in ("uniform", "constant"):
            raise ConfigError(f"multiplier must be 'uniform' or 'constant', got {self.multiplier!r}")
        if not self.is_synthetic and not os.path.exists(self.data):
            raise ConfigError(f"data file {self.data!r} does not exist")

    @property
    def is_synthetic(self) -> bool:
        return self.data in (SYNTHETIC_DI, SYNTHETIC_DM)

    def resolved_checkpoints(self) -> list[int]:
        if self.checkpoints is not None:
            return sorted(set(self.checkpoints))
        return default_checkpoints(self.iters)

    def csv_schema(self) -> CsvSchema:
        if self.schema is None:
            raise ConfigError("csv data sources require a schema")
        text = self.schema.strip()
        if text.startswith("{"):
            raw = json.loads(text)
        else:
            with open(text, "r", encoding="utf-8") as handle:
                raw = json.load(handle)
        try:
            return CsvSchema.from_dict(raw)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # ------------------------------------------------------------------
    # Serialization and seeds
    # ------------------------------------------------------------------
    def resolved(self) -> dict:
        return asdict(self)

    def summary_line(self) -> str:
        parts = []
        for key, value in self.resolved().items():
            if isinstance(value, list):
                value = ",".join(str(v) for v in value)
            parts.append(f"{key}={value}")
        return " ".join(parts)

    def seed_sequence(self, *tags: int) -> np.random.SeedSequence:
        return np.random.SeedSequence([self.seed, *tags])


def default_checkpoints(iters: int) -> list[int]:
    """Geometric grid 16, 32, 64, ... capped and terminated at ``iters``."""
    points = []
    value = 16
    while value < iters:
        points.append(value)
        value *= 2
    points.append(iters)
    return [p for p in points if p >= 1]


_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def _coerce(name: str, value: str):
    kind = ExperimentConfig.__dataclass_fields__[name].type
    text = value.strip()
    if name == "checkpoints":
        return parse_checkpoints(text)
    if kind in ("int", "int | None"):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{name} expects an integer, got {value!r}") from None
    if kind in ("float", "float | None"):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{name} expects a number, got {value!r}") from None
    return text


def parse_checkpoints(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"checkpoints expects comma-separated integers, got {text!r}") from None
