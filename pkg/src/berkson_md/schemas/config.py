"""
Run configuration and reproduction presets.

``RunConfig`` is the validated form of one CLI invocation: a JSON config
file merged with ``--key value`` flags. ``Preset`` describes one of the
shipped table or figure reproductions in ``presets/*.json``.

Example:
    ```python
    from berkson_md.schemas.config import RunConfig

    config = RunConfig(command="test", model="linear-1d", input="data.csv", a=0.5, b=0.5)
    plan = config.plan_config().build(n=500, d=1)
    ```
"""

import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from berkson_md.schemas.smoothing import (
    BandwidthRule,
    KernelKind,
    PlanConfig,
    h3_warning,
)

Command = Literal["fit", "test", "simulate", "reproduce", "demo"]
TableId = Literal["table1", "table2", "table3", "table4", "figure1"]

NOMINAL_EXPONENTS = {"case1": 1.0 / 3.0, "case2": 1.0 / 4.5}


class RunConfig(BaseModel):
    """
    One validated CLI run.

    Attributes:
        command (str): fit / test / simulate / reproduce / demo
        model (str): Registered model family
        model_params (dict): Keyword arguments of the family factory
        noise_variances (tuple): Berkson noise variances; 0.01 per coordinate by default
        kernel, kernel_star, bandwidth_rule, a, b, h, w, h_exponent: Smoothing plan
        grid_nodes, region_lower, region_upper, floor: Integrating grid
        alpha (float): Test level in (0, 1)
        seed (int): Base seed of the random streams
        reps (int): Monte Carlo replications
        n (int): Sample size for simulate/demo (inferred from the CSV for fit/test)
        case, model_id, task: Simulation configuration
        theta_init (tuple): Gauss-Newton start
        sigma_eps2 (float): Known error variance for the plug-in covariance
        input, output, raw (Path): Dataset CSV, result file, per-replication CSV
        parallelism (int): Worker processes; defaults to the environment setting
        table_id, only, check: Reproduction controls
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    command: Command
    model: str = "linear-1d"
    model_params: Dict[str, Any] = Field(default_factory=dict)
    noise_variances: Optional[Tuple[float, ...]] = None
    hermite_nodes: int = Field(default=30, ge=1)
    finite_differences: bool = False

    kernel: KernelKind = "epanechnikov"
    kernel_star: KernelKind = "epanechnikov"
    bandwidth_rule: BandwidthRule = "case1"
    a: float = Field(default=0.5, gt=0)
    b: float = Field(default=0.5, gt=0)
    h: Optional[float] = Field(default=None, gt=0)
    w: Optional[float] = Field(default=None, gt=0)
    h_exponent: Optional[float] = None
    grid_nodes: Optional[Tuple[int, ...]] = None
    region_lower: Optional[Tuple[float, ...]] = None
    region_upper: Optional[Tuple[float, ...]] = None
    floor: float = Field(default=1e-4, gt=0)

    alpha: float = 0.05
    seed: int = Field(default=20240101, ge=0, lt=2**64)
    reps: int = Field(default=1000, ge=1)
    n: Optional[int] = Field(default=None, ge=2)
    case: Literal[1, 2] = 1
    model_id: str = "0"
    task: Literal["fit", "test", "both"] = "both"
    theta_init: Optional[Tuple[float, ...]] = None
    sigma_eps2: Optional[float] = Field(default=None, ge=0)
    max_iter: int = Field(default=100, ge=1)
    tol: float = Field(default=1e-8, gt=0)

    input: Optional[Path] = None
    output: Optional[Path] = None
    raw: Optional[Path] = None
    parallelism: Optional[int] = Field(default=None, ge=1)

    table_id: Optional[TableId] = None
    only: Optional[str] = None
    check: bool = False

    @field_validator("alpha")
    @classmethod
    def validate_alpha(cls, v: float) -> float:
        if not 0 < v < 1:
            raise ValueError("alpha ∈ (0,1)")
        return v

    @field_validator("noise_variances")
    @classmethod
    def validate_noise_variances(cls, v):
        if v is not None and any(s < 0 for s in v):
            raise ValueError("noise variances must be >= 0")
        return v

    @field_validator("model_id", mode="before")
    @classmethod
    def coerce_model_id(cls, v):
        return str(v) if isinstance(v, int) else v

    @model_validator(mode="after")
    def check_command_inputs(self) -> "RunConfig":
        if self.command in ("fit", "test"):
            if self.input is None:
                raise ValueError(f"input: the {self.command} command needs a dataset CSV")
            if not self.input.is_file():
                raise ValueError(f"input: file not found: {self.input}")
        if self.command == "reproduce" and self.table_id is None:
            raise ValueError("table_id: reproduce needs one of table1..table4, figure1")
        if self.bandwidth_rule == "explicit" and (self.h is None or self.w is None):
            raise ValueError("bandwidth_rule: 'explicit' requires h and w")
        if self.bandwidth_rule == "power" and self.h_exponent is None:
            raise ValueError("bandwidth_rule: 'power' requires h_exponent")
        return self

    def plan_config(self) -> PlanConfig:
        return PlanConfig(
            kernel=self.kernel,
            kernel_star=self.kernel_star,
            bandwidth_rule=self.bandwidth_rule,
            a=self.a,
            b=self.b,
            h=self.h,
            w=self.w,
            h_exponent=self.h_exponent,
            grid_nodes=self.grid_nodes,
            region_lower=self.region_lower,
            region_upper=self.region_upper,
            floor=self.floor,
        )

    def bandwidth_exponent(self, n: Optional[int] = None) -> Optional[float]:
        """Rate c in h ~ n^{-c}; explicit bandwidths need n to imply one."""
        if self.bandwidth_rule in NOMINAL_EXPONENTS:
            return NOMINAL_EXPONENTS[self.bandwidth_rule]
        if self.h_exponent is not None:
            return self.h_exponent
        if self.bandwidth_rule == "explicit" and n is not None and n > 1:
            return -math.log(self.h) / math.log(n)
        return None

    def bandwidth_warning(self, d: int, n: Optional[int] = None) -> Optional[str]:
        """(h3) warning text for this configuration, or None."""
        return h3_warning(self.bandwidth_exponent(n), d)


class PresetRow(BaseModel):
    """One table row: a statistic of one Monte Carlo configuration across sample sizes."""

    model_config = ConfigDict(extra="forbid")

    label: str
    model_id: str = "0"
    a: float = 0.5
    b: float = 0.5
    stat: Literal["mean", "mse", "rate"]
    component: int = Field(default=0, ge=0)
    published: List[Optional[float]] = Field(default_factory=list)

    @field_validator("model_id", mode="before")
    @classmethod
    def coerce_model_id(cls, v):
        return str(v) if isinstance(v, int) else v


class PresetCheck(BaseModel):
    """Acceptance interval for one cell (row label, sample size)."""

    model_config = ConfigDict(extra="forbid")

    row: str
    n: int
    lower: float
    upper: float

    @model_validator(mode="after")
    def check_interval(self) -> "PresetCheck":
        if self.lower > self.upper:
            raise ValueError(f"check '{self.row}' at n={self.n}: lower > upper")
        return self

    def interval(self, scale: float = 1.0) -> Tuple[float, float]:
        """The interval with its half-width multiplied by ``scale`` about the same centre."""
        centre, half = (self.lower + self.upper) / 2, (self.upper - self.lower) / 2
        return centre - scale * half, centre + scale * half


class Preset(BaseModel):
    """
    A shipped reproduction.

    Table presets list ``rows`` whose Monte Carlo runs are shared by
    (model_id, a, b, n). The figure preset runs the naive demo over ``reps``
    seeds and checks the fraction with l2_to_J < l2_to_mu against
    ``min_fraction``.
    """

    model_config = ConfigDict(extra="forbid")

    table_id: TableId
    title: str
    task: Literal["fit", "test", "both", "demo"]
    case: Literal[1, 2] = 1
    sample_sizes: List[int]
    reps: int = Field(default=1000, ge=1)
    seed: int = Field(default=20240101, ge=0)
    alpha: float = Field(default=0.05, gt=0, lt=1)
    bandwidth_rule: BandwidthRule = "case1"
    theta_init: Optional[Tuple[float, ...]] = None
    rows: List[PresetRow] = Field(default_factory=list)
    checks: List[PresetCheck] = Field(default_factory=list)
    min_fraction: Optional[float] = Field(default=None, ge=0, le=1)
    notes: Optional[str] = None

    @model_validator(mode="after")
    def check_rows(self) -> "Preset":
        labels = {row.label for row in self.rows}
        for check in self.checks:
            if check.row not in labels:
                raise ValueError(f"check refers to unknown row '{check.row}'")
            if check.n not in self.sample_sizes:
                raise ValueError(f"check '{check.row}' uses n={check.n} outside sample_sizes")
        for row in self.rows:
            if row.published and len(row.published) != len(self.sample_sizes):
                raise ValueError(f"row '{row.label}': published values must match sample_sizes")
        return self
