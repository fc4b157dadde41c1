"""YAML experiment configs, validated with pydantic (unknown keys rejected)."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .rng import ArrivalSpec
from .stats import MCConfig
from .w_switch import WParams
from .y_switch import YParams

U64_MAX = 2**64 - 1


class Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ArrivalCfg(Strict):
    family: Literal["bernoulli", "poisson", "geometric", "deterministic"]
    mean: float = Field(ge=0)

    def spec(self) -> ArrivalSpec:
        return getattr(ArrivalSpec, self.family)(self.mean)


class MCCfg(Strict):
    horizon: int = Field(200_000, gt=0)
    burn_in: float = Field(0.1, ge=0, lt=1)
    batches: int = Field(20, ge=2)
    replications: int = Field(1, ge=1)

    def build(self, seed: int, threads: int = 1) -> MCConfig:
        return MCConfig(self.horizon, self.burn_in, self.batches, self.replications, seed, threads)


class Seeded(Strict):
    seed: int = Field(ge=0, le=U64_MAX)


class TwoWayCfg(Seeded):
    arr1: ArrivalCfg
    arr2: ArrivalCfg
    gamma1: float = Field(gt=0, le=1)
    gamma2: float = Field(gt=0, le=1)
    q_max: Optional[int] = None
    abandonment: Literal["positional", "aggregate"] = "positional"
    mc: MCCfg = MCCfg()


class YBlock(Strict):
    req: ArrivalCfg
    qub1: ArrivalCfg
    qub2: ArrivalCfg
    gamma1: float = Field(gt=0, le=1)
    gamma2: float = Field(gt=0, le=1)
    p: float = Field(gt=0, le=1)

    def build(self) -> YParams:
        return YParams(self.req.spec(), self.qub1.spec(), self.qub2.spec(), self.gamma1, self.gamma2, self.p)


class YCfg(Seeded):
    params: YBlock
    mc: MCCfg = MCCfg()
    trajectory_slots: int = Field(0, ge=0)


class WBlock(Strict):
    req1: ArrivalCfg
    req2: ArrivalCfg
    qub1: ArrivalCfg
    qub2: ArrivalCfg
    qub3: ArrivalCfg
    gamma: float = Field(gt=0, le=1)
    p: float = Field(gt=0, le=1)

    def build(self) -> WParams:
        return WParams(self.req1.spec(), self.req2.spec(), self.qub1.spec(), self.qub2.spec(),
                       self.qub3.spec(), self.gamma, self.p)


Policies = Literal["max_weight", "priority1", "priority2"]


class WCfg(Seeded):
    params: WBlock
    policy: Policies = "max_weight"
    mode: Literal["normal", "backlog_both", "backlog_1", "backlog_2"] = "normal"
    horizon: int = Field(10_000, gt=0)
    burn_in: float = Field(0.1, ge=0, lt=1)
    record_every: int = Field(1, ge=1)


class GridCfg(Strict):
    n1: int = Field(40, ge=2)
    n2: int = Field(40, ge=2)
    lambda1_max: Optional[float] = Field(None, gt=0)
    lambda2_max: Optional[float] = Field(None, gt=0)


class RegionCfg(Seeded):
    params: WBlock
    mc: MCCfg = MCCfg()
    grid: GridCfg = GridCfg()
    nsigma: float = Field(3.0, ge=0)


class FluidCfg(Seeded):
    lambda1: float = Field(ge=0)
    lambda2: float = Field(ge=0)
    c12: float = Field(gt=0)
    c1_bar: float = Field(ge=0)
    c2_bar: float = Field(ge=0)
    c1_of_lambda2: Optional[float] = Field(None, ge=0)
    c2_of_lambda1: Optional[float] = Field(None, ge=0)
    n0: tuple[float, float]
    t_end: Optional[float] = Field(None, gt=0)
    samples: int = Field(0, ge=0)


class ConvergeCfg(Seeded):
    params: WBlock
    mc: MCCfg = MCCfg()
    n0: tuple[float, float]
    horizon: float = Field(gt=0)
    k_values: list[int] = [50, 200, 1000]
    replications: int = Field(10, ge=1)
    delta: float = Field(0.05, gt=0)
    overlay_points: int = Field(200, ge=2)

    @field_validator("k_values")
    @classmethod
    def _positive(cls, v):
        if not v or min(v) < 1:
            raise ValueError("k_values must be a nonempty list of positive integers")
        return v


class CoupleCfg(Seeded):
    params: YBlock
    horizon: int = Field(1000, gt=0)
    runs: int = Field(100, ge=1)
    n0: int = Field(0, ge=0)
    q0: tuple[int, int] = (0, 0)


SCHEMAS = {
    "twoway": TwoWayCfg,
    "y": YCfg,
    "w": WCfg,
    "region": RegionCfg,
    "fluid": FluidCfg,
    "converge": ConvergeCfg,
    "couple": CoupleCfg,
}


def load_config(command: str, path, seed: int | None = None):
    """Parse and validate a config file; ``seed`` overrides the file's seed."""
    raw = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise ValueError("config must be a mapping")
    if seed is not None:
        raw = {**raw, "seed": seed}
    return SCHEMAS[command].model_validate(raw)
