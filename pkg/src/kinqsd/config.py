"""Experiment configuration: a YAML document validated by pydantic.

Every section rejects unknown keys. A manifest written by a run embeds the
fully resolved config under ``config`` and can be fed back to ``run``.
"""
from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from .domains import region_from_dict
from .errors import ParameterError
from .integrate import IntegratorConfig
from .kernels import CROSSINGS, SCHEMES
from .model import MODEL_CATALOG, KineticState, PhaseBox, Regularity, build_model, expression_model
from .qsd import Binning

KINDS = ("simulate", "fleming-viot", "conditioned-mc", "lyapunov-verify", "harnack-scan",
         "exit-law", "mollify-report", "f2-probe", "moment-scan")


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


# --------------------------------------------------------------------------- shared pieces


class MetadataSpec(Strict):
    alpha: float = Field(0.5, gt=0, lt=1)
    c1: float = Field(1.0, gt=0)
    c2: float = Field(1.0, gt=0)
    c3: float = Field(0.0, ge=0)
    a: Optional[float] = Field(None, ge=0)
    b: Optional[float] = Field(None, ge=0)


class ExpressionSpec(Strict):
    drift: list[str]
    diffusion: list[list[str]]
    metadata: Optional[MetadataSpec] = None


class ModelSpec(Strict):
    name: Optional[str] = None
    params: dict = Field(default_factory=dict)
    expression: Optional[ExpressionSpec] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.name is None) == (self.expression is None):
            raise ValueError("give exactly one of 'name' or 'expression'")
        if self.name is not None and self.name not in MODEL_CATALOG:
            raise ValueError(f"unknown catalog model {self.name!r}")
        return self

    def build(self):
        if self.expression is not None:
            md = self.expression.metadata
            meta = Regularity(**md.model_dump()) if md is not None else None
            return expression_model(self.expression.drift, self.expression.diffusion, meta)
        return build_model(self.name, **self.params)


class DomainSpec(Strict):
    type: Literal["full", "interval", "ball", "box", "halfspace"]
    dim: Optional[int] = Field(None, ge=1)
    left: Optional[float] = None
    right: Optional[float] = None
    center: Optional[list[float]] = None
    radius: Optional[float] = Field(None, gt=0)
    lo: Optional[list[float]] = None
    hi: Optional[list[float]] = None
    normal: Optional[list[float]] = None
    offset: Optional[float] = None

    def build(self):
        return region_from_dict(self.model_dump(exclude_none=True))


class IntegratorSpec(Strict):
    dt: float = Field(1e-3, gt=0)
    scheme: Optional[Literal[tuple(SCHEMES)]] = None
    crossing: Literal[tuple(CROSSINGS)] = "substep-interpolation"
    max_time: float = Field(10.0, gt=0)
    stream_id: int = Field(0, ge=0)
    threshold: float = Field(1e-8, gt=0)
    backend: Literal["auto", "compiled", "python"] = "auto"

    def build(self, seed: int) -> IntegratorConfig:
        return IntegratorConfig(seed=seed, **self.model_dump())


class StateSpec(Strict):
    q: list[float]
    p: list[float]

    def build(self):
        return KineticState(self.q, self.p)


class BoxSpec(Strict):
    q_lo: list[float]
    q_hi: list[float]
    p_lo: list[float]
    p_hi: list[float]

    def build(self) -> PhaseBox:
        return PhaseBox(self.q_lo, self.q_hi, self.p_lo, self.p_hi)


class BinningSpec(BoxSpec):
    nb: int = Field(40, ge=1)

    def build(self) -> Binning:
        return Binning.window(self.q_lo, self.q_hi, self.p_lo, self.p_hi, self.nb)


# --------------------------------------------------------------------------- kind parameters


class SimulateParams(Strict):
    start: StateSpec
    n_samples: int = Field(1, ge=1)
    horizon: Optional[float] = Field(None, gt=0)
    survival_times: Optional[list[float]] = None


class FleetSpec(Strict):
    initial: StateSpec
    n_particles: int = Field(10_000, ge=2)
    horizon: float = Field(20.0, gt=0)
    burn_in: Optional[float] = Field(None, ge=0)
    block_length: float = Field(1.0, gt=0)
    binning: Optional[BinningSpec] = None
    record_every: Optional[float] = Field(None, gt=0)


class FleetParams(FleetSpec):
    slope_check_samples: Optional[int] = Field(None, ge=100)
    slope_check_horizon: Optional[float] = Field(None, gt=0)


class ConditionedParams(Strict):
    start: StateSpec
    t: float = Field(ge=0)
    n_samples: int = Field(ge=1)
    binning: Optional[BinningSpec] = None
    pilot_size: int = Field(2000, ge=100)


class LyapunovParams(Strict):
    construction: Literal["bounded", "hamiltonian"]
    lam: float = Field(1.0, gt=0)
    alpha_drift: Optional[float] = Field(None, gt=0)
    beta_drift: Optional[float] = Field(None, ge=0)
    grid_half_width: float = Field(10.0, gt=0)
    n_per_axis: int = Field(41, ge=3)


class HarnackParams(Strict):
    A: BoxSpec
    K: BoxSpec
    k_per_axis: int = Field(5, ge=1)
    times: list[float]
    T: float = Field(1.0, gt=0)
    n_samples: int = Field(ge=1)
    level: float = Field(0.99, gt=0, lt=1)
    spread_limit: Optional[float] = Field(2.0, gt=1)


class ExitLawParams(Strict):
    source: Union[FleetSpec, StateSpec]
    n_samples: int = Field(10_000, ge=1000)
    horizon: Optional[float] = Field(None, gt=0)
    negative_control: bool = False
    n_boot: int = Field(999, ge=99)
    min_exits: int = Field(1000, ge=2)


class MollifyParams(Strict):
    ns: list[float] = Field(default_factory=lambda: [4, 8, 16, 32])
    compact: BoxSpec
    grid_per_axis: int = Field(9, ge=2)
    order: int = Field(16, ge=2)
    l1_points: tuple[int, int] = (16, 2000)


class F2Params(Strict):
    psi: Literal["hamiltonian", "one"] = "hamiltonian"
    K: Union[Literal["hamiltonian-B"], BoxSpec] = "hamiltonian-B"
    lam: float = Field(1.0, gt=0)
    alpha_drift: float = Field(0.5, gt=0)
    beta_drift: float = Field(0.0, ge=0)
    t2: float = Field(gt=0)
    alpha1: float = Field(gt=0)
    starts: list[StateSpec]
    n_samples: int = Field(ge=2)


class MomentParams(Strict):
    ns: list[float] = Field(default_factory=lambda: [4, 8, 16, 32])
    start: StateSpec
    t: float = Field(gt=0)
    n_samples: int = Field(ge=2)
    band: float = Field(0.05, ge=0)
    order: int = Field(16, ge=2)


PARAMS = {"simulate": SimulateParams, "fleming-viot": FleetParams,
          "conditioned-mc": ConditionedParams, "lyapunov-verify": LyapunovParams,
          "harnack-scan": HarnackParams, "exit-law": ExitLawParams,
          "mollify-report": MollifyParams, "f2-probe": F2Params, "moment-scan": MomentParams}


class ExperimentConfig(Strict):
    kind: Literal[KINDS]
    model: ModelSpec
    domain: DomainSpec
    integrator: IntegratorSpec = Field(default_factory=IntegratorSpec)
    params: dict = Field(default_factory=dict)
    output_dir: Optional[str] = None
    seed: int = Field(0, ge=0)

    @field_validator("params", mode="before")
    @classmethod
    def _params_dict(cls, v):
        return {} if v is None else v

    @model_validator(mode="after")
    def _check_params(self):
        # validate kind-specific parameters; errors carry the "params." prefix
        PARAMS[self.kind].model_validate(self.params)
        return self

    @property
    def typed_params(self):
        return PARAMS[self.kind].model_validate(self.params)

    def resolved(self) -> dict:
        d = self.model_dump(mode="json")
        d["params"] = self.typed_params.model_dump(mode="json")
        return d


class ConfigError(ParameterError):
    """Validation failure listing every offending key."""

    def __init__(self, errors):
        self.errors = errors
        keys = sorted({".".join(str(x) for x in e["loc"]) for e in errors})
        self.keys = keys
        lines = [f"{'.'.join(str(x) for x in e['loc']) or '<root>'}: {e['msg']}" for e in errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))


def _flatten(err: ValidationError, prefix=()):
    out = []
    for e in err.errors():
        loc = tuple(prefix) + tuple(e["loc"])
        ctx = e.get("ctx", {})
        inner = ctx.get("error") if isinstance(ctx, dict) else None
        if isinstance(inner, ValidationError):
            out.extend(_flatten(inner, loc))
        else:
            out.append({"loc": loc, "msg": e["msg"]})
    return out


def parse_config(data: dict) -> ExperimentConfig:
    if isinstance(data, dict) and "config" in data and "engine_version" in data:
        data = data["config"]
    if not isinstance(data, dict):
        raise ConfigError([{"loc": (), "msg": "top level must be a mapping"}])
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as err:
        errors = _flatten(err)
        kind = data.get("kind")
        if kind in PARAMS and isinstance(data.get("params", {}), dict):
            try:
                PARAMS[kind].model_validate(data.get("params") or {})
            except ValidationError as perr:
                errors = [e for e in errors if e["loc"][:1] != ("params",)]
                errors += _flatten(perr, ("params",))
        raise ConfigError(errors) from None
    return cfg


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([{"loc": (), "msg": f"not valid YAML: {exc}"}]) from None
    return parse_config(data)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.resolved(), sort_keys=False)


__all__ = ["ExperimentConfig", "ConfigError", "load_config", "parse_config", "dump_config",
           "KINDS", "PARAMS"]
