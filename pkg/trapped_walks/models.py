from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator

SuiteName = Literal[
    "verify-analytics",
    "speed",
    "annealed-clt",
    "quenched-clt",
    "quenched-hitting",
    "einstein",
    "coupling",
    "necessity",
]
CltMode = Literal["annealed-position", "quenched-position", "quenched-tree-position", "quenched-hitting"]

SUITE_MODES: Dict[str, str] = {
    "annealed-clt": "annealed-position",
    "quenched-clt": "quenched-position",
    "quenched-hitting": "quenched-hitting",
}
MODE_SUITES: Dict[str, str] = {mode: suite for suite, mode in SUITE_MODES.items()} | {
    "quenched-tree-position": "quenched-clt",
}


class LawSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pmf: Dict[str, float] = Field(..., min_length=1)
    tail_exponent: Optional[float] = Field(None, gt=0)
    name: Optional[str] = None


class TrapSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["unit", "two-point", "exponential", "tree"]
    m1: Optional[float] = Field(None, gt=0)
    m2: Optional[float] = Field(None, gt=0)
    p: Optional[float] = Field(None, ge=0, le=1)
    means: Optional[List[float]] = None
    weights: Optional[List[float]] = None


class ExperimentConfig(BaseModel):
    """Reproducible description of one suite run."""

    model_config = ConfigDict(extra="forbid")

    suite: SuiteName
    seed: int = Field(..., ge=0, lt=2**64, description="Mandatory experiment seed.")
    calibration_seed: Optional[int] = Field(None, ge=0, lt=2**64)
    law: Optional[Union[str, LawSpec]] = None
    traps: Optional[Union[str, TrapSpec]] = None
    beta: float = Field(1.1, gt=0)
    betas: List[float] = Field(default_factory=lambda: [1.02, 1.05, 1.1])
    horizon: float = Field(1e4, gt=0)
    calibration_horizon: Optional[float] = Field(None, gt=0)
    level: Optional[int] = Field(None, ge=1)
    replicas: int = Field(2000, ge=1)
    threads: Union[int, Literal["auto"]] = 1
    output: str = "results"
    mode: Optional[CltMode] = None
    centring: Literal["exact", "deterministic"] = "exact"
    delta: float = Field(0.5, gt=0)
    window_length: int = Field(1000, ge=1)
    reference_windows: int = Field(8, ge=2)
    reference_walks: int = Field(100, ge=2)
    probe_scales: List[int] = Field(default_factory=lambda: [10**4, 10**5, 10**6])
    probe_truncation: float = Field(30.0, gt=0)
    threshold: float = Field(0.01, gt=0, lt=1)
    seeds_per_check: int = Field(3, ge=1)
    trees: int = Field(1000, ge=1)
    calibration_outer: int = Field(200, ge=2)
    calibration_inner: int = Field(200, ge=2)
    control_beta: Optional[float] = Field(None, gt=1)

    @field_validator("threads")
    def positive_threads(cls, value: Union[int, str]) -> Union[int, str]:
        if isinstance(value, int) and value < 1:
            raise ValueError("threads must be a positive integer or 'auto'")
        return value

    @field_validator("probe_scales")
    def sorted_scales(cls, value: List[int]) -> List[int]:
        return sorted(value)

    @property
    def resolved_threads(self) -> int:
        return (os.cpu_count() or 1) if self.threads == "auto" else int(self.threads)

    @property
    def resolved_mode(self) -> str:
        return self.mode or SUITE_MODES.get(self.suite, "annealed-position")

    @property
    def effective_calibration_seed(self) -> int:
        return self.seed if self.calibration_seed is None else self.calibration_seed

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()


@dataclass
class TestReport:
    __test__ = False

    statistic: float
    p_value: float
    n: int
    threshold: float = 0.01
    passed: bool = field(init=False)

    def __post_init__(self) -> None:
        self.p_value = min(1.0, max(0.0, float(self.p_value)))
        self.passed = self.p_value > self.threshold


@dataclass
class ResultRecord:
    """Monte Carlo estimate against an exact value; passes iff |z| <= tolerance_z."""

    name: str
    estimate: float
    standard_error: float
    expected: float
    tolerance_z: float = 4.0

    @property
    def z_score(self) -> float:
        if self.standard_error == 0:
            return 0.0 if self.estimate == self.expected else math.copysign(math.inf, self.estimate - self.expected)
        return (self.estimate - self.expected) / self.standard_error

    @property
    def passed(self) -> bool:
        return abs(self.z_score) <= self.tolerance_z


@dataclass
class CheckLine:
    name: str
    expected: Any
    observed: Any
    tolerance: str
    passed: bool

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} expected={_fmt(self.expected)} observed={_fmt(self.observed)} tolerance={self.tolerance}"


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.8g}"
    return str(value)


@dataclass
class SuiteResult:
    suite: str
    config: ExperimentConfig
    checks: List[CheckLine] = field(default_factory=list)
    records: List[ResultRecord] = field(default_factory=list)
    tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)
