"""Validated experiment configurations.

Every experiment has a parameter model whose defaults reproduce its
acceptance run.  Unknown keys are rejected at every level, and a config
serializes to canonical JSON so that it round-trips byte for byte.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..errors import ParameterError

SEED_MAX = (1 << 64) - 1


class _Params(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LadderCheckParams(_Params):
    epsilon: float = Field(0.5, gt=0.0, le=1.0)
    L_max: float = Field(math.exp(4.0), ge=1.0)
    J: int = Field(4, ge=1)
    spacing: Literal["uniform-in-tau", "geometric-in-L"] = "uniform-in-tau"
    ode_steps: int = Field(10_000, ge=1)


class FieldStatsParams(_Params):
    n: Literal[2, 3] = 2
    M: int = Field(128, ge=2)
    epsilon: float = Field(0.4, gt=0.0, le=1.0)
    L: float = Field(2.0, gt=1.0)
    n_real: int = Field(200, ge=16)
    snapshot: bool = False


def _default_test_matrices() -> list[list[list[float]]]:
    return [
        [[1.0, 0.0], [0.0, -1.0]],
        [[1.0, 0.0], [0.0, 0.0]],
        [[0.0, 1.0], [1.0, 0.0]],
        [[2.0, 0.5], [0.5, -1.0]],
        [[1.0, 0.3], [0.3, 0.4]],
    ]


class SlbmMomentsParams(_Params):
    n: int = Field(2, ge=2)
    tau: float = Field(1.0, gt=0.0)
    n_samples: int = Field(200_000, ge=1000)
    test_matrices: list[list[list[float]]] = Field(default_factory=_default_test_matrices)


class SlflowMomentsParams(_Params):
    n: int = Field(2, ge=2)
    tau_end: float = Field(1.0, gt=0.0)
    dtau: float = Field(0.005, gt=0.0)
    n_paths: int = Field(100_000, ge=32)
    scheme: Literal["exp", "euler-renorm"] = "exp"


class LyapunovParams(_Params):
    n_list: list[int] = Field(default_factory=lambda: [2, 3])
    tau_end: float = Field(200.0, gt=0.0)
    dtau: float = Field(0.005, gt=0.0)
    reorth_every: int = Field(10, ge=1)
    n_paths: int = Field(32, ge=2)
    burn_in: float = Field(5.0, ge=0.0)

    @field_validator("n_list")
    @classmethod
    def _dims(cls, v: list[int]) -> list[int]:
        if not v or any(n < 2 for n in v):
            raise ValueError("dimensions must be >= 2")
        return v


class ScalarN2Params(_Params):
    tau_end: float = Field(2.0, gt=0.0)
    dtau: float = Field(0.005, gt=0.0)
    n_paths: int = Field(100_000, ge=32)
    couple: bool = True
    coupled_paths: int = Field(10_000, ge=32)
    q_samples: int = Field(400_000, ge=32)


class HomogenizeLadderParams(_Params):
    epsilon_list: list[float] = Field(default_factory=lambda: [0.1, 0.2])
    L_values: list[float] = Field(default_factory=lambda: [4.0, 16.0, 64.0])
    L_max: float = Field(64.0, ge=1.0)
    J: int = Field(6, ge=1)
    spacing: Literal["uniform-in-tau", "geometric-in-L"] = "geometric-in-L"
    n: Literal[2, 3] = 2
    M: int = Field(256, ge=2)
    proxy_band: float = Field(2.0, ge=1.0)
    n_real: int = Field(32, ge=2)
    lambda_mode: Literal["grid", "continuum"] = "grid"


class QvCheckParams(_Params):
    epsilon: float = Field(0.2, gt=0.0, le=1.0)
    L_max: float = Field(64.0, gt=1.0)
    J: int = Field(16, ge=1)
    n: Literal[2, 3] = 2
    M: int = Field(256, ge=2)
    n_real: int = Field(1000, ge=100)
    points_per_axis: int = Field(4, ge=1)


class CouplingCheckParams(_Params):
    epsilon: float = Field(0.2, gt=0.0, le=1.0)
    L_max: float = Field(64.0, gt=1.0)
    J: int = Field(16, ge=1)
    n: Literal[2, 3] = 2
    M: int = Field(256, ge=2)
    n_real: int = Field(1000, ge=32)
    separations: list[float] = Field(default_factory=lambda: [2.0, 8.0, 32.0])
    points_per_axis: int = Field(4, ge=1)


class ParticleMsdParams(_Params):
    epsilon: float = Field(0.5, ge=0.0, le=1.0)
    T_list: list[float] = Field(default_factory=lambda: [100.0, 1000.0, 10000.0])
    dt: float | None = Field(None, gt=0.0)
    paths: int | list[int] = Field(default_factory=lambda: [128, 64, 64])
    fields: int | list[int] = Field(default_factory=lambda: [64, 64, 32])
    grid_M: int | None = Field(None, ge=2)
    order: Literal["bicubic", "trig-exact"] = "bicubic"

    @model_validator(mode="after")
    def _lengths(self) -> "ParticleMsdParams":
        if not self.T_list or any(t <= 0 for t in self.T_list):
            raise ValueError("T_list must hold positive times")
        for name in ("paths", "fields"):
            v = getattr(self, name)
            vals = v if isinstance(v, list) else [v]
            if isinstance(v, list) and len(v) != len(self.T_list):
                raise ValueError(f"{name} must be an integer or a list as long as T_list")
            if any(x < 1 for x in vals):
                raise ValueError(f"{name} must be positive")
        return self

    def per_T(self, name: str) -> list[int]:
        v = getattr(self, name)
        return list(v) if isinstance(v, list) else [v] * len(self.T_list)


class AnisoFlowParams(_Params):
    n: int = Field(2, ge=2)
    a0: list[float] = Field(default_factory=lambda: [4.0, 0.25])
    dtau: float = Field(0.01, gt=0.0, le=0.05)
    tau_end: float = Field(40.0, gt=0.0)
    quad_order: int | None = None
    fit_window: tuple[float, float] = (10.0, 20.0)

    @model_validator(mode="after")
    def _diag(self) -> "AnisoFlowParams":
        if len(self.a0) != self.n:
            raise ValueError("a0 must list n diagonal entries")
        if any(x <= 0 for x in self.a0):
            raise ValueError("a0 entries must be positive")
        return self


class EnvelopeIntegralsParams(_Params):
    epsilon: float = Field(0.5, gt=0.0, le=1.0)
    p_list: list[float] = Field(default_factory=lambda: [1.0, 2.0])
    tau_star_list: list[float] = Field(default_factory=lambda: [0.0, 0.5, 1.0, 2.0, 4.0, 6.0, 8.0])


PARAMS: dict[str, type[_Params]] = {
    "ladder-check": LadderCheckParams,
    "field-stats": FieldStatsParams,
    "slbm-moments": SlbmMomentsParams,
    "slflow-moments": SlflowMomentsParams,
    "lyapunov": LyapunovParams,
    "scalar-n2": ScalarN2Params,
    "homogenize-ladder": HomogenizeLadderParams,
    "qv-check": QvCheckParams,
    "coupling-check": CouplingCheckParams,
    "particle-msd": ParticleMsdParams,
    "aniso-flow": AnisoFlowParams,
    "envelope-integrals": EnvelopeIntegralsParams,
}


class ExperimentConfig(BaseModel):
    """Experiment id, its parameters, the root seed, output directory and thread count."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    experiment: Literal[tuple(PARAMS)]  # type: ignore[valid-type]
    params: dict[str, Any] = Field(default_factory=dict)
    seed: int = Field(0, ge=0, le=SEED_MAX)
    out: str | None = None
    threads: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_params(self) -> "ExperimentConfig":
        model = PARAMS[self.experiment]
        try:
            validated = model.model_validate(self.params)
        except ValidationError as exc:
            raise ValueError(_describe(exc, prefix="params")) from None
        object.__setattr__(self, "params", validated.model_dump(mode="json"))
        return self

    def typed(self) -> _Params:
        return PARAMS[self.experiment].model_validate(self.params)

    def to_json(self) -> str:
        """Canonical form: sorted keys, no whitespace variation."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        return load_config_text(text)


def _describe(exc: ValidationError, prefix: str = "") -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(x) for x in err["loc"])
        if prefix:
            loc = f"{prefix}.{loc}" if loc else prefix
        msg = err["msg"].removeprefix("Value error, ")
        parts.append(f"{loc}: {msg}" if loc and not msg.startswith(loc + ".") else msg)
    return "; ".join(parts)


def load_config_text(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config is not valid JSON: {exc}") from None
    return make_config(raw)


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from None
    return load_config_text(text)


def make_config(raw: Any) -> ExperimentConfig:
    """Validate a raw mapping; errors name the offending key."""
    if not isinstance(raw, dict):
        raise ParameterError("config must be a JSON object")
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as exc:
        raise ParameterError(_describe(exc)) from None


def default_config(experiment: str, seed: int = 0, **params: Any) -> ExperimentConfig:
    return make_config({"experiment": experiment, "seed": seed, "params": params})


__all__ = [
    "PARAMS",
    "SEED_MAX",
    "ExperimentConfig",
    "default_config",
    "load_config",
    "load_config_text",
    "make_config",
]
