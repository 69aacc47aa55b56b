"""
Lack-of-fit test of H_0: mu in {m_theta} under Berkson measurement error.

With residuals zeta_i = Y_i - H_theta_hat(Z_i):

    C_hat = (1/n^2) sum_i int K_hi(z)^2 zeta_i^2 d psi_hat(z)
    Gamma_hat = (2 h^d / n^2) sum_{i != j} (int K_hi K_hj zeta_i zeta_j d psi_hat)^2
    D_hat = n h^{d/2} (M_n(theta_hat) - C_hat) / sqrt(Gamma_hat)

H_0 is rejected when |D_hat| > z_{alpha/2}; the p-value is 2 (1 - Phi(|D_hat|)).
"""

from typing import Optional

import numpy as np
from scipy import sparse
from scipy.stats import norm

from berkson_md.core.exceptions import ConfigurationError, DegenerateVarianceError
from berkson_md.core.logging import get_logger, log_test_completed
from berkson_md.schemas.model import ModelFamily, NoiseSpec
from berkson_md.schemas.results import FitResult, TestResult
from berkson_md.schemas.smoothing import Dataset, SmoothingPlan
from berkson_md.services.calibration import calibrate_H
from berkson_md.services.mdfit import FitOptions, MinimumDistanceProblem, fit
from berkson_md.services.smoothing import GridSmoother

logger = get_logger(__name__)


def residuals(data: Dataset, model: ModelFamily, noise: NoiseSpec, theta_hat) -> np.ndarray:
    """zeta_i = Y_i - H_theta_hat(Z_i)."""
    return data.y - np.asarray(calibrate_H(model, noise, theta_hat, data.z), dtype=float)


def _smoother(data: Dataset, plan: SmoothingPlan, smoother: Optional[GridSmoother]) -> GridSmoother:
    return smoother if smoother is not None else GridSmoother.build(data, plan)


def c_hat(
    data: Dataset,
    zeta: np.ndarray,
    plan: SmoothingPlan,
    smoother: Optional[GridSmoother] = None,
) -> float:
    """Centering term; >= 0 and homogeneous of degree 2 in zeta."""
    smoother = _smoother(data, plan, smoother)
    zeta = np.asarray(zeta, dtype=float).reshape(data.n)
    squared = smoother.kh.power(2) @ zeta**2
    return smoother.integrate(squared) / data.n**2


def pair_matrix(smoother: GridSmoother, zeta: np.ndarray) -> sparse.csr_matrix:
    """
    M[i, j] = int K_hi K_hj zeta_i zeta_j d psi_hat, as B' diag(w) B with
    B[k, i] = K_h(z_k - Z_i) zeta_i / f_hat_Zw(z_k).
    """
    inv_density = sparse.diags(1.0 / smoother.density)
    b = inv_density @ smoother.kh @ sparse.diags(zeta)
    weighted = sparse.diags(smoother.plan.grid.weights) @ b
    return (b.T @ weighted).tocsr()


def gamma_hat(
    data: Dataset,
    zeta: np.ndarray,
    plan: SmoothingPlan,
    smoother: Optional[GridSmoother] = None,
) -> float:
    """
    Variance estimate by the Gram route: (2 h^d / n^2)(||M||_F^2 - sum_i M_ii^2).

    Raises:
        DegenerateVarianceError: If no two kernels overlap, so Gamma_hat <= 0
    """
    if data.n < 2:
        raise ConfigurationError("Gamma_hat needs at least 2 observations", key="n")
    smoother = _smoother(data, plan, smoother)
    zeta = np.asarray(zeta, dtype=float).reshape(data.n)
    pairs = pair_matrix(smoother, zeta)
    off_diagonal = float(pairs.power(2).sum()) - float(np.sum(pairs.diagonal() ** 2))
    value = 2.0 * plan.h**plan.d / data.n**2 * off_diagonal
    if not value > 0:
        raise DegenerateVarianceError(
            f"Gamma_hat = {value:.3e} <= 0: no pair of kernel supports overlaps "
            f"at h={plan.h:.4g}; increase the bandwidth"
        )
    return value


def critical_value(alpha: float) -> float:
    """z_{alpha/2}"""
    return float(norm.isf(alpha / 2.0))


def is_exact_fit(data: Dataset, zeta: np.ndarray, rtol: float = 1e-10) -> bool:
    """All residuals vanish to rounding relative to the response scale."""
    scale = max(1.0, float(np.max(np.abs(data.y))))
    return bool(np.max(np.abs(zeta)) <= rtol * scale)


def lack_of_fit(
    problem: MinimumDistanceProblem, fit_result: FitResult, alpha: float = 0.05
) -> TestResult:
    """
    D_hat chain for an already fitted problem.

    An exact fit (see ``is_exact_fit``) carries no evidence against H_0 and is
    reported with Gamma_hat = 0, D_hat = 0 and p = 1.
    """
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha ∈ (0,1)", key="alpha")
    data, plan, smoother = problem.data, problem.plan, problem.smoother
    theta_hat = np.asarray(fit_result.theta_hat, dtype=float)
    zeta = problem.residuals(theta_hat)

    mn_value = problem.objective(theta_hat)
    centering = c_hat(data, zeta, plan, smoother)
    if is_exact_fit(data, zeta):
        variance, d_hat = 0.0, 0.0
    else:
        variance = gamma_hat(data, zeta, plan, smoother)
        d_hat = data.n * plan.h ** (plan.d / 2.0) * (mn_value - centering) / np.sqrt(variance)
    p_value = float(min(1.0, 2.0 * norm.sf(abs(d_hat))))
    reject = bool(abs(d_hat) > critical_value(alpha))

    log_test_completed(logger, float(d_hat), p_value, reject)
    return TestResult(
        theta_hat=theta_hat.tolist(),
        mn_value=mn_value,
        c_hat=centering,
        gamma_hat=variance,
        d_hat=float(d_hat),
        p_value=p_value,
        reject=reject,
        alpha=alpha,
        floored_nodes=smoother.floored_nodes,
        n=data.n,
        h=plan.h,
        d=plan.d,
    )


def run_test(
    data: Dataset,
    model: ModelFamily,
    noise: NoiseSpec,
    plan: SmoothingPlan,
    alpha: float = 0.05,
    theta_init=None,
    options: Optional[FitOptions] = None,
) -> TestResult:
    """
    Fit theta_hat and run the lack-of-fit test at level ``alpha``.

    Raises:
        ConfigurationError: If alpha is outside (0, 1)
        SingularFitError, DegenerateVarianceError: Propagated
    """
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha ∈ (0,1)", key="alpha")
    problem = MinimumDistanceProblem(data, model, noise, plan)
    fit_result = fit(problem, theta_init=theta_init, options=options)
    return lack_of_fit(problem, fit_result, alpha)
