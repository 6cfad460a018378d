"""Run configuration: JSON documents validated with pydantic, unknown keys rejected.

Overrides from the command line are ``key=value`` pairs.  A key may be a
dotted path from the document root (``simulate.b0``) or, when it names no
top-level field, a path inside the section of the command being run
(``b0`` for ``simulate``).  Values are parsed as JSON when possible and kept
as strings otherwise.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

__all__ = [
    "ConfigError",
    "SpectrumConfig",
    "ModulateConfig",
    "SimulateConfig",
    "FitConfig",
    "VerifyConfig",
    "RunConfig",
    "load_config",
    "apply_overrides",
    "COMMANDS",
]

COMMANDS = ("spectrum", "modulate", "simulate", "fit", "verify")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key path."""


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_assignment=True)


class SpectrumConfig(_Strict):
    b: Union[float, list[float]] = Field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    kmax: int = Field(3, ge=0, le=20)
    n: int = Field(4000, ge=200, le=200_000)

    @field_validator("b")
    @classmethod
    def _b_range(cls, v):
        values = v if isinstance(v, list) else [v]
        if not values:
            raise ValueError("at least one value of b is needed")
        for x in values:
            if not 0.0 < x <= 0.05:
                raise ValueError(f"b = {x} outside (0, 0.05]")
        return v

    @property
    def b_values(self) -> list[float]:
        return list(self.b) if isinstance(self.b, list) else [self.b]


class ModulateConfig(_Strict):
    regime: Literal["stable", "excited"] = "stable"
    k: int = Field(1, ge=1, le=10)  # excited regime only
    b0: float = Field(0.01, gt=0.0, le=0.05)  # stable regime only
    s0: Optional[float] = Field(None, gt=0.0)  # stable: from b0 on the power law; excited: 1e3
    b_stop: float = Field(1e-6, gt=0.0, le=1e-6)  # stable regime only; the rate report needs b <= 1e-6
    delta: float = Field(1e-2, gt=0.0, le=0.1)
    W_k0: float = Field(1.0, ge=-1.0, le=1.0)
    forcing_amp: float = 0.0
    forcing_gamma: Optional[float] = Field(None, gt=0.0)
    forcing_omega: float = 1.0
    forcing_band: float = Field(1.0, gt=0.0)
    decades: float = Field(2.0, ge=1.0)

    @model_validator(mode="after")
    def _band(self):
        if abs(self.forcing_amp) > self.forcing_band:
            raise ValueError("forcing_amp exceeds forcing_band")
        return self


class SimulateConfig(_Strict):
    k: int = Field(0, ge=0, le=6)
    b0: float = Field(0.01, gt=0.0, le=0.01)
    n: int = Field(1500, ge=50, le=200_000)
    R_outer: Optional[float] = Field(None, gt=1.0)
    ds: float = Field(0.02, gt=0.0, le=1.0)
    lam_floor_ratio: float = Field(1e-3, gt=0.0, lt=1.0)
    max_steps: int = Field(2_000_000, ge=1)
    snapshots_per_decade: int = Field(8, ge=1, le=100)
    perturbation_amp: float = 0.0
    perturbation_center: float = Field(1.0, ge=0.0)
    perturbation_width: float = Field(1.0, gt=0.0)
    enforce_energy: bool = True
    decompose: bool = True
    nonconcentration_R0: float = Field(2.0, gt=0.0)


class FitConfig(_Strict):
    input: Optional[str] = None  # trajectory CSV; defaults to trajectory.csv in the output directory
    model: Literal["stable_log", "pure_power"] = "stable_log"
    k: Optional[int] = Field(None, ge=0, le=10)
    window: Optional[tuple[float, float]] = None  # bounds in log(T - t)

    @field_validator("window")
    @classmethod
    def _window(cls, v):
        if v is not None and not v[0] < v[1]:
            raise ValueError("window must be (lo, hi) with lo < hi")
        return v


class VerifyConfig(_Strict):
    level: Literal["quick", "full"] = "full"
    only: Optional[list[str]] = None


class RunConfig(_Strict):
    seed: int = Field(0, ge=0)
    spectrum: SpectrumConfig = Field(default_factory=SpectrumConfig)
    modulate: ModulateConfig = Field(default_factory=ModulateConfig)
    simulate: SimulateConfig = Field(default_factory=SimulateConfig)
    fit: FitConfig = Field(default_factory=FitConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)


def _format_errors(err: ValidationError) -> str:
    parts = []
    for e in err.errors():
        path = ".".join(str(p) for p in e["loc"]) or "<root>"
        parts.append(f"{path}: {e['msg']}")
    return "; ".join(parts)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(doc: dict, overrides: list[str], command: str | None = None) -> dict:
    """Apply ``key=value`` overrides to a raw config document (a copy is returned)."""
    doc = json.loads(json.dumps(doc))
    top = set(RunConfig.model_fields)
    for item in overrides:
        key, sep, value = item.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        path = key.split(".")
        if path[0] not in top and command in COMMANDS:
            path = [command] + path
        node = doc
        for part in path[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"{'.'.join(path)}: cannot descend into a non-object value")
            node = nxt
        node[path[-1]] = _parse_value(value)
    return doc


def load_config(path: str | None, overrides: list[str] = (), command: str | None = None) -> tuple[RunConfig, dict]:
    """Validated configuration and the raw document it came from (after overrides)."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: the top level must be an object")
    doc = apply_overrides(doc, list(overrides), command)
    try:
        cfg = RunConfig.model_validate(doc)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from exc
    return cfg, cfg.model_dump(mode="json")
