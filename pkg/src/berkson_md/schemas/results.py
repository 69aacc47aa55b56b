"""
Result records returned by fitting, testing and Monte Carlo runs.

All records are pydantic models so they serialize to JSON with full float
precision and validate on the way back in.
"""

import math
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Matrix = List[List[float]]


def _is_symmetric(m: Matrix, tol: float = 1e-10) -> bool:
    size = len(m)
    for i in range(size):
        if len(m[i]) != size:
            return False
        for j in range(i):
            scale = max(1.0, abs(m[i][j]), abs(m[j][i]))
            if abs(m[i][j] - m[j][i]) > tol * scale:
                return False
    return True


class FitResult(BaseModel):
    """
    Outcome of a minimum-distance fit.

    Attributes:
        theta_hat (list[float]): Minimizer, inside the parameter box
        objective (float): M_n at theta_hat
        iterations (int): Gauss-Newton iterations (0 for the closed form)
        converged (bool): Stopped on the gradient or step test rather than max_iter
        grad_norm (float): Projected gradient norm at theta_hat
        sigma0_hat, sigma_hat, asym_cov: Plug-in covariance pieces
        floored_nodes (int): Grid nodes where f_hat_Zw hit the floor
        sigma_eps2 (float): Error variance used in the plug-in
        sigma_hat_true_fz, asym_cov_true_fz: Same plug-in with the true f_Z,
            when it was supplied
    """

    model_config = ConfigDict(frozen=True)

    theta_hat: List[float]
    objective: float = Field(ge=0)
    iterations: int = Field(ge=0)
    converged: bool
    grad_norm: float = Field(ge=0)
    sigma0_hat: Matrix
    sigma_hat: Matrix
    asym_cov: Matrix
    floored_nodes: int = Field(ge=0)
    sigma_eps2: float = Field(default=0.0, ge=0)
    sigma_hat_true_fz: Optional[Matrix] = None
    asym_cov_true_fz: Optional[Matrix] = None

    @field_validator("asym_cov")
    @classmethod
    def validate_asym_cov(cls, v: Matrix) -> Matrix:
        if not _is_symmetric(v):
            raise ValueError("asym_cov must be a symmetric square matrix")
        return v

    @property
    def asym_var(self) -> List[float]:
        """Diagonal of the asymptotic covariance"""
        return [self.asym_cov[k][k] for k in range(len(self.asym_cov))]


class TestResult(BaseModel):
    """
    Outcome of the lack-of-fit test.

    The first nine fields are the reported statistic chain; ``n``, ``h`` and
    ``d`` are carried so D_hat can be reconstructed from the record alone.
    """

    model_config = ConfigDict(frozen=True)

    theta_hat: List[float]
    mn_value: float = Field(ge=0)
    c_hat: float = Field(ge=0)
    gamma_hat: float = Field(ge=0)
    d_hat: float
    p_value: float = Field(ge=0, le=1)
    reject: bool
    alpha: float = Field(gt=0, lt=1)
    floored_nodes: int = Field(ge=0)
    n: int = Field(ge=2)
    h: float = Field(gt=0)
    d: int = Field(ge=1)

    @model_validator(mode="after")
    def check_reconstruction(self) -> "TestResult":
        if self.gamma_hat == 0:
            # exact fit: every residual vanished
            if self.d_hat != 0 or self.reject:
                raise ValueError("an exact fit must report d_hat = 0 and no rejection")
            return self
        expected = (
            self.n * self.h ** (self.d / 2.0) * (self.mn_value - self.c_hat)
            / math.sqrt(self.gamma_hat)
        )
        if not math.isclose(self.d_hat, expected, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError(
                f"d_hat {self.d_hat!r} does not match n h^(d/2) (M - C) / sqrt(Gamma) = {expected!r}"
            )
        return self


class ReplicationRow(BaseModel):
    """One Monte Carlo replication; test fields are empty for fit-only runs."""

    model_config = ConfigDict(frozen=True)

    rep: int = Field(ge=0)
    seed: int
    theta_hat: List[float]
    converged: bool = True
    d_hat: Optional[float] = None
    p_value: Optional[float] = None
    reject: Optional[bool] = None
    gamma_hat: Optional[float] = None
    asym_var: Optional[List[float]] = None
    asym_var_true_fz: Optional[List[float]] = None


class MCReport(BaseModel):
    """
    Aggregate of a Monte Carlo run over one configuration.

    Attributes:
        reps: Replications that succeeded
        failures: Replications excluded (non-convergence, degenerate variance)
        mean_theta, mse_theta, var_theta: Per-coordinate summaries of theta_hat
        emp_cov_scaled: Empirical covariance of sqrt(n) (theta_hat - theta_0)
        mean_asym_cov_diag: Mean plug-in asymptotic variances (estimated f_Z)
        mean_asym_cov_diag_true_fz: Same with the true f_Z
        rejection_rate: Fraction of |D_hat| > z_{alpha/2}
        ks_stat: Kolmogorov-Smirnov distance of D_hat values to N(0, 1)
        mean_d_hat, var_d_hat, median_abs_d_hat: D_hat summaries
        gamma_hat_mean: Mean of Gamma_hat
        outside_theory: The data-generating model violates the smoothness conditions
        per_rep_rows: Raw replication table, when requested
        runtime: Wall-clock seconds
    """

    model_config = ConfigDict(frozen=True)

    case: int
    model_id: str
    n: int
    a: Optional[float] = None
    b: Optional[float] = None
    task: str
    reps: int = Field(ge=0)
    failures: int = Field(default=0, ge=0)
    true_theta: List[float]
    mean_theta: List[float]
    mse_theta: List[float]
    var_theta: List[float]
    emp_cov_scaled: Matrix
    mean_asym_cov_diag: Optional[List[float]] = None
    mean_asym_cov_diag_true_fz: Optional[List[float]] = None
    rejection_rate: Optional[float] = Field(default=None, ge=0, le=1)
    ks_stat: Optional[float] = None
    mean_d_hat: Optional[float] = None
    var_d_hat: Optional[float] = None
    median_abs_d_hat: Optional[float] = None
    gamma_hat_mean: Optional[float] = None
    outside_theory: bool = False
    per_rep_rows: Optional[List[ReplicationRow]] = None
    runtime: float = Field(default=0.0, ge=0)

    @field_validator("mse_theta", "var_theta")
    @classmethod
    def validate_nonnegative(cls, v: List[float]) -> List[float]:
        if any(x < 0 for x in v):
            raise ValueError("mean squared errors and variances must be >= 0")
        return v
