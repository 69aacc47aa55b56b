"""
Minimum-distance estimation under Berkson measurement error.

The objective is

    M_n(theta) = integral of U_n(z, theta)^2 d psi_hat(z),
    U_n(z, theta) = (1/n) sum_i K_h(z - Z_i) [Y_i - H_theta(Z_i)],
    d psi_hat = dG / f_hat_Zw^2,

evaluated by quadrature on the plan's grid. Its least-squares structure is
minimized by Gauss-Newton with Armijo backtracking and a box clamp; the
linear model m_theta(x) = theta x has a closed-form minimizer.

Example:
    ```python
    from berkson_md.schemas.smoothing import PlanConfig
    from berkson_md.services.mdfit import fit_general

    plan = PlanConfig(bandwidth_rule="case1").build(n=data.n, d=1)
    fit = fit_general(data, model, noise, plan)
    print(fit.theta_hat, fit.asym_cov)
    ```
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from berkson_md.core.exceptions import (
    ConfigurationError,
    IdentifiabilityError,
    SingularFitError,
)
from berkson_md.core.logging import get_logger, log_fit_completed
from berkson_md.schemas.model import ModelFamily, NoiseSpec, QuadratureRule
from berkson_md.schemas.results import FitResult
from berkson_md.schemas.smoothing import Dataset, SmoothingPlan
from berkson_md.services.calibration import (
    CalibrationCache,
    calibrate_Hdot,
    calibrate_tau2,
)
from berkson_md.services.families import linear_1d
from berkson_md.services.smoothing import GridSmoother

logger = get_logger(__name__)

MAX_CONDITION = 1e12

DensityFn = Callable[[np.ndarray], np.ndarray]


class FitOptions(BaseModel):
    """Gauss-Newton controls."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iter: int = Field(default=100, ge=1)
    tol: float = Field(default=1e-8, gt=0)
    backtrack: float = Field(default=0.5, gt=0, lt=1)
    armijo: float = Field(default=1e-4, gt=0, lt=1)
    max_backtracks: int = Field(default=60, ge=1)


class MinimumDistanceProblem:
    """
    M_n for one dataset, model and plan.

    Holds the grid smoother and the calibration cache so objective, gradient
    and test statistics evaluated on the same data share them.
    """

    def __init__(
        self,
        data: Dataset,
        model: ModelFamily,
        noise: NoiseSpec,
        plan: SmoothingPlan,
        rule: Optional[QuadratureRule] = None,
        finite_differences: bool = False,
        smoother: Optional[GridSmoother] = None,
    ):
        if data.d != model.d or noise.d != model.d:
            raise ConfigurationError(
                f"model '{model.name}' has d={model.d}; data has d={data.d}, "
                f"noise has d={noise.d}",
                key="model",
            )
        self.data = data
        self.model = model
        self.noise = noise
        self.plan = plan
        self.smoother = smoother or GridSmoother.build(data, plan)
        self.cache = CalibrationCache(
            model, noise, data.z, rule=rule, finite_differences=finite_differences
        )

    @property
    def psi(self) -> np.ndarray:
        return self.smoother.psi

    def residuals(self, theta) -> np.ndarray:
        return self.data.y - self.cache.values(theta)

    def residual_field(self, theta) -> np.ndarray:
        """U_n(z_k, theta) at every grid node."""
        return self.smoother.smooth(self.residuals(theta))

    def gradient_field(self, theta) -> np.ndarray:
        """mu_dot_n(z_k, theta), shape (nodes, q)."""
        return self.smoother.smooth(self.cache.gradients(theta))

    def objective(self, theta) -> float:
        u = self.residual_field(theta)
        return self.smoother.integrate(u**2)

    def gradient(self, theta) -> np.ndarray:
        u = self.residual_field(theta)
        mu_dot = self.gradient_field(theta)
        return -2.0 * mu_dot.T @ (self.psi * u)

    def projected_gradient_norm(self, theta: np.ndarray, grad: np.ndarray) -> float:
        return float(np.linalg.norm(theta - self.model.project(theta - grad)))


def _require_fit_size(data: Dataset) -> None:
    if data.n < 2:
        raise ConfigurationError("fitting needs at least 2 observations", key="n")


def objective_mn(
    data: Dataset, model: ModelFamily, noise: NoiseSpec, plan: SmoothingPlan, theta
) -> float:
    """M_n(theta) by grid quadrature; always >= 0."""
    return MinimumDistanceProblem(data, model, noise, plan).objective(theta)


def gradient_mn(
    data: Dataset, model: ModelFamily, noise: NoiseSpec, plan: SmoothingPlan, theta
) -> np.ndarray:
    """-2 integral of U_n(z, theta) mu_dot_n(z, theta) d psi_hat(z)."""
    return MinimumDistanceProblem(data, model, noise, plan).gradient(theta)


@dataclass(frozen=True)
class PluginCovariance:
    """Sigma_0, Sigma and Sigma_0^{-1} Sigma Sigma_0^{-1}, with the true-f_Z variant when known."""

    sigma0: np.ndarray
    sigma: np.ndarray
    asym_cov: np.ndarray
    sigma_eps2: float
    sigma_true_fz: Optional[np.ndarray] = None
    asym_cov_true_fz: Optional[np.ndarray] = None

    def __iter__(self):
        return iter((self.sigma0, self.sigma, self.asym_cov))


def _sandwich(inverse: np.ndarray, middle: np.ndarray) -> np.ndarray:
    cov = inverse @ middle @ inverse
    return 0.5 * (cov + cov.T)


def plugin_covariance(
    data: Dataset,
    model: ModelFamily,
    noise: NoiseSpec,
    plan: SmoothingPlan,
    theta_hat,
    sigma_eps2: Optional[float] = None,
    f_z: Optional[DensityFn] = None,
    problem: Optional[MinimumDistanceProblem] = None,
) -> PluginCovariance:
    """
    Grid plug-ins of Sigma_0 = int Hdot Hdot' dG and
    Sigma = int (sigma_eps^2 + tau^2) Hdot Hdot' g^2 / f_Z du.

    f_Z is f_hat_Zw with the plan's floor. ``sigma_eps2`` defaults to
    max(0, mean(zeta_hat^2) - mean(tau^2(Z_i))). When the true density ``f_z``
    is supplied, Sigma and the sandwich are also computed with it.

    Raises:
        IdentifiabilityError: If Sigma_0 is singular
    """
    problem = problem or MinimumDistanceProblem(data, model, noise, plan)
    theta_hat = np.atleast_1d(np.asarray(theta_hat, dtype=float))
    grid = plan.grid
    rule = problem.cache.rule

    hdot = np.asarray(
        calibrate_Hdot(
            model,
            noise,
            theta_hat,
            grid.nodes,
            rule,
            finite_differences=problem.cache.finite_differences,
        ),
        dtype=float,
    ).reshape(grid.size, model.q)
    tau2_nodes = np.asarray(calibrate_tau2(model, noise, theta_hat, grid.nodes, rule))

    if sigma_eps2 is None:
        zeta = problem.residuals(theta_hat)
        sigma_eps2 = max(0.0, float(np.mean(zeta**2) - np.mean(problem.cache.tau2(theta_hat))))
    elif sigma_eps2 < 0:
        raise ConfigurationError("must be >= 0", key="sigma_eps2")

    outer = hdot[:, :, None] * hdot[:, None, :]
    sigma0 = np.einsum("k,kij->ij", grid.weights, outer)

    eigenvalues = np.linalg.eigvalsh(sigma0)
    if eigenvalues[0] <= 0 or eigenvalues[-1] / eigenvalues[0] > MAX_CONDITION:
        raise IdentifiabilityError(
            f"Sigma_0 is singular at theta={theta_hat.tolist()} "
            f"(eigenvalues {eigenvalues.tolist()})"
        )
    sigma0_inv = np.linalg.inv(sigma0)

    variance = sigma_eps2 + tau2_nodes
    middle_weights = grid.weights * variance * grid.density
    sigma = np.einsum("k,kij->ij", middle_weights / problem.smoother.density, outer)

    sigma_true = asym_true = None
    if f_z is not None:
        true_density = np.asarray(f_z(grid.nodes), dtype=float).reshape(grid.size)
        sigma_true = np.einsum(
            "k,kij->ij", middle_weights / np.maximum(true_density, plan.floor), outer
        )
        asym_true = _sandwich(sigma0_inv, sigma_true)

    return PluginCovariance(
        sigma0=sigma0,
        sigma=sigma,
        asym_cov=_sandwich(sigma0_inv, sigma),
        sigma_eps2=float(sigma_eps2),
        sigma_true_fz=sigma_true,
        asym_cov_true_fz=asym_true,
    )


def _fit_result(
    problem: MinimumDistanceProblem,
    theta_hat: np.ndarray,
    iterations: int,
    converged: bool,
    grad_norm: float,
    sigma_eps2: Optional[float],
    f_z: Optional[DensityFn],
) -> FitResult:
    objective = problem.objective(theta_hat)
    cov = plugin_covariance(
        problem.data,
        problem.model,
        problem.noise,
        problem.plan,
        theta_hat,
        sigma_eps2=sigma_eps2,
        f_z=f_z,
        problem=problem,
    )
    log_fit_completed(logger, theta_hat.tolist(), objective, iterations, converged)
    return FitResult(
        theta_hat=theta_hat.tolist(),
        objective=objective,
        iterations=iterations,
        converged=converged,
        grad_norm=grad_norm,
        sigma0_hat=cov.sigma0.tolist(),
        sigma_hat=cov.sigma.tolist(),
        asym_cov=cov.asym_cov.tolist(),
        floored_nodes=problem.smoother.floored_nodes,
        sigma_eps2=cov.sigma_eps2,
        sigma_hat_true_fz=None if cov.sigma_true_fz is None else cov.sigma_true_fz.tolist(),
        asym_cov_true_fz=None if cov.asym_cov_true_fz is None else cov.asym_cov_true_fz.tolist(),
    )


def fit_linear_closed_form(
    data: Dataset,
    plan: SmoothingPlan,
    noise: Optional[NoiseSpec] = None,
    sigma_eps2: Optional[float] = None,
    f_z: Optional[DensityFn] = None,
    problem: Optional[MinimumDistanceProblem] = None,
) -> FitResult:
    """
    theta_hat = A_n / B_n for m_theta(x) = theta x, where

        A_n = int [sum K_hi Y_i][sum K_hi Z_i] / [sum K_wi]^2 dG
        B_n = int [sum K_hi Z_i]^2 / [sum K_wi]^2 dG

    ``noise`` only enters the plug-in covariance (tau^2 = theta^2 sigma_eta^2);
    it defaults to no Berkson noise.

    Raises:
        SingularFitError: If B_n <= 0
    """
    _require_fit_size(data)
    if data.d != 1:
        raise ConfigurationError("the closed form needs d = 1", key="model")
    noise = noise or NoiseSpec(variances=(0.0,))
    problem = problem or MinimumDistanceProblem(data, linear_1d(), noise, plan)
    smoother = problem.smoother

    u_y = smoother.smooth(data.y)
    u_z = smoother.smooth(data.z[:, 0])
    numerator = smoother.integrate(u_y * u_z)
    denominator = smoother.integrate(u_z**2)
    if not denominator > 0:
        raise SingularFitError("B_n <= 0: the design carries no information on theta")

    theta_hat = problem.model.project(np.array([numerator / denominator]))
    grad = problem.gradient(theta_hat)
    grad_norm = problem.projected_gradient_norm(theta_hat, grad)
    return _fit_result(problem, theta_hat, 0, True, grad_norm, sigma_eps2, f_z)


def default_theta_init(problem: MinimumDistanceProblem) -> np.ndarray:
    """
    Least-squares start on the calibrated regressors for families linear in
    theta (where Hdot does not depend on theta).

    Raises:
        ConfigurationError: If the family is not linear in theta
    """
    model = problem.model
    if not model.linear_in_parameters:
        raise ConfigurationError(
            f"family '{model.name}' is not linear in theta; supply theta_init",
            key="theta_init",
        )
    regressors = problem.cache.gradients(0.5 * (model.lower + model.upper))
    start, *_ = np.linalg.lstsq(regressors, problem.data.y, rcond=None)
    return model.project(start)


def fit_general(
    data: Dataset,
    model: ModelFamily,
    noise: NoiseSpec,
    plan: SmoothingPlan,
    theta_init=None,
    options: Optional[FitOptions] = None,
    rule: Optional[QuadratureRule] = None,
    finite_differences: bool = False,
    sigma_eps2: Optional[float] = None,
    f_z: Optional[DensityFn] = None,
    problem: Optional[MinimumDistanceProblem] = None,
) -> FitResult:
    """
    Gauss-Newton minimization of M_n over the parameter box.

    Each step solves (int mu_dot mu_dot' d psi_hat) Delta = int U_n mu_dot d psi_hat,
    then backtracks on M_n until the Armijo condition holds for the clamped
    step. Iteration stops when the projected gradient norm or the accepted
    step falls below ``tol``, or when backtracking finds no descent step
    longer than ``tol``. Exhausting ``max_iter`` yields converged=False.

    Raises:
        ConfigurationError: If theta_init lies outside the box or is required and missing
        SingularFitError: If the normal matrix has condition estimate above 1e12
    """
    _require_fit_size(data)
    options = options or FitOptions()
    problem = problem or MinimumDistanceProblem(
        data, model, noise, plan, rule=rule, finite_differences=finite_differences
    )
    model = problem.model

    if theta_init is None:
        theta = default_theta_init(problem)
    else:
        theta = np.atleast_1d(np.asarray(theta_init, dtype=float))
        if theta.shape != (model.q,) or not model.contains(theta):
            raise ConfigurationError(
                f"{theta.tolist()} is not a point of the parameter box", key="theta_init"
            )

    psi = problem.psi
    iterations = 0
    objective = problem.objective(theta)
    grad = problem.gradient(theta)
    grad_norm = problem.projected_gradient_norm(theta, grad)

    stalled = False
    while grad_norm >= options.tol and iterations < options.max_iter:
        iterations += 1
        u = problem.residual_field(theta)
        mu_dot = problem.gradient_field(theta)
        normal = mu_dot.T @ (psi[:, None] * mu_dot)
        condition = float(np.linalg.cond(normal))
        if not np.isfinite(condition) or condition > MAX_CONDITION:
            raise SingularFitError("Gauss-Newton normal matrix is singular", condition)
        direction = np.linalg.solve(normal, mu_dot.T @ (psi * u))

        step = 1.0
        accepted = None
        moved = direction
        for _ in range(options.max_backtracks):
            candidate = model.project(theta + step * direction)
            moved = candidate - theta
            slope = float(grad @ moved)
            if slope >= 0:
                break
            value = problem.objective(candidate)
            if value <= objective + options.armijo * slope:
                accepted = (candidate, value)
                break
            step *= options.backtrack
        if accepted is None:
            stalled = slope >= 0 or float(np.linalg.norm(moved)) < options.tol
            break

        candidate, value = accepted
        step_size = float(np.linalg.norm(candidate - theta))
        theta, objective = candidate, value
        grad = problem.gradient(theta)
        grad_norm = problem.projected_gradient_norm(theta, grad)
        if step_size < options.tol:
            stalled = True
            break

    converged = stalled or grad_norm < options.tol
    return _fit_result(problem, theta, iterations, converged, grad_norm, sigma_eps2, f_z)


def fit(
    problem: MinimumDistanceProblem,
    theta_init=None,
    options: Optional[FitOptions] = None,
    sigma_eps2: Optional[float] = None,
    f_z: Optional[DensityFn] = None,
) -> FitResult:
    """Closed form for ``linear-1d``, Gauss-Newton otherwise."""
    if problem.model.name == "linear-1d":
        return fit_linear_closed_form(
            problem.data, problem.plan, problem.noise, sigma_eps2, f_z, problem=problem
        )
    return fit_general(
        problem.data,
        problem.model,
        problem.noise,
        problem.plan,
        theta_init=theta_init,
        options=options,
        sigma_eps2=sigma_eps2,
        f_z=f_z,
        problem=problem,
    )
