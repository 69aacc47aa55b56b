"""
Simulation studies: data-generating processes, the Monte Carlo runner and
its diagnostics.

- ``sample`` draws (Z_i, Y_i) for a DGPSpec; X_i = Z_i + eta_i stays latent.
- ``run_mc`` repeats fit and/or test over replications, each on its own
  Philox stream keyed ``seed + rep``, serially or in a process pool, and
  aggregates into an MCReport.
- ``local_alt_noncentrality`` evaluates Gamma^{-1/2} int R^2 dG by quadrature.
- ``naive_J_demo`` shows that the double-smoothed estimator J_hat_n tracks
  J(x) = E[H(Z) | X = x] rather than mu(x).
- ``ks_normal`` is the Kolmogorov-Smirnov distance to N(0, 1).
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import roots_legendre
from scipy.stats import kstest

from berkson_md.core.config import settings
from berkson_md.core.exceptions import (
    BerksonMDError,
    ConfigurationError,
    DegenerateVarianceError,
    MonteCarloError,
)
from berkson_md.core.logging import get_logger, log_replication_failure
from berkson_md.schemas.model import ModelFamily, NoiseSpec
from berkson_md.schemas.results import MCReport, ReplicationRow
from berkson_md.schemas.simulation import DEFAULT_THETA, DGPSpec
from berkson_md.schemas.smoothing import (
    Dataset,
    GridMeasure,
    Kernel,
    PlanConfig,
    SmoothingPlan,
    midpoint_grid,
)
from berkson_md.services.calibration import (
    calibrate_H,
    calibrate_tau2,
    expectation,
    gauss_hermite_rule,
)
from berkson_md.services.families import get_family
from berkson_md.services.lof import lack_of_fit
from berkson_md.services.mdfit import FitOptions, MinimumDistanceProblem, fit
from berkson_md.services.random_streams import (
    replication_seed,
    standard_normal,
    stream,
    uniform,
)
from berkson_md.services.smoothing import k2_norm_sq, kernel_profile, regression_estimate

logger = get_logger(__name__)

Task = Literal["fit", "test", "both"]
RegressionFn = Callable[[np.ndarray], np.ndarray]

MAX_FAILURE_RATE = 0.05


# Regression functions mu(x), x[..., d]


def _case1_model0(x: np.ndarray) -> np.ndarray:
    return x[..., 0]


def _case1_model1(x: np.ndarray) -> np.ndarray:
    return x[..., 0] + 0.3 * x[..., 0] ** 2


def _case1_model2(x: np.ndarray) -> np.ndarray:
    return x[..., 0] + 1.4 * np.exp(-0.2 * x[..., 0] ** 2)


def _case1_model3(x: np.ndarray) -> np.ndarray:
    return x[..., 0] * (x[..., 0] >= 0.2)


def _case2_model0(x: np.ndarray) -> np.ndarray:
    return x[..., 0] + np.exp(2.0 * x[..., 1])


def _case2_model1(x: np.ndarray) -> np.ndarray:
    return _case2_model0(x) + 1.4 * x[..., 0] ** 2 + 1.0


def _case2_model2(x: np.ndarray) -> np.ndarray:
    return _case2_model0(x) + 1.4 * x[..., 0] ** 2 * x[..., 1] ** 2


def _case2_model3(x: np.ndarray) -> np.ndarray:
    return _case2_model0(x) + 1.4 * (np.exp(-0.2 * x[..., 0]) + np.exp(0.7 * x[..., 1] ** 2))


REGRESSIONS: Dict[Tuple[int, str], RegressionFn] = {
    (1, "0"): _case1_model0,
    (1, "1"): _case1_model1,
    (1, "2"): _case1_model2,
    (1, "3"): _case1_model3,
    (2, "0"): _case2_model0,
    (2, "1"): _case2_model1,
    (2, "2"): _case2_model2,
    (2, "3"): _case2_model3,
}


def _x1_squared_centered(x: np.ndarray) -> np.ndarray:
    return x[..., 0] ** 2 - 1.0 / 3.0


def _x1_x2_product(x: np.ndarray) -> np.ndarray:
    return x[..., 0] * x[..., 1]


# Perturbations r(x) for local alternatives. Under Lebesgue G on [-1, 1]^d,
# x^2 - 1/3 is orthogonal to theta z (case 1) and x1 x2 to every case-2 H_theta.
PERTURBATIONS: Dict[str, RegressionFn] = {
    "x1-squared-centered": _x1_squared_centered,
    "x1-x2-product": _x1_x2_product,
}


def get_perturbation(name: str) -> RegressionFn:
    try:
        return PERTURBATIONS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown perturbation '{name}'; available: {sorted(PERTURBATIONS)}",
            key="r_fn",
        ) from None


def _null_mean(dgp: DGPSpec) -> RegressionFn:
    family = get_family(dgp.null_family)
    return partial(family.mean_fn, np.asarray(dgp.true_theta, dtype=float))


def _shifted(base: RegressionFn, r_fn: RegressionFn, scale: float, x: np.ndarray) -> np.ndarray:
    return base(x) + scale * r_fn(x)


def local_gamma(n: int, h: float, d: int) -> float:
    """gamma_n = 1 / sqrt(n h^{d/2})"""
    return 1.0 / math.sqrt(n * h ** (d / 2.0))


def regression_function(dgp: DGPSpec) -> RegressionFn:
    """
    mu for the configuration; local alternatives are m_theta0 + gamma_n r.

    Raises:
        ConfigurationError: If a local alternative has no gamma_n
    """
    if dgp.model_id == "local-alt":
        if dgp.gamma_n is None:
            raise ConfigurationError("local alternatives need gamma_n", key="gamma_n")
        return partial(_shifted, _null_mean(dgp), get_perturbation(dgp.r_fn), dgp.gamma_n)
    tabulated = REGRESSIONS[(dgp.case, dgp.model_id)]
    if tuple(dgp.true_theta) == DEFAULT_THETA[dgp.case]:
        return tabulated
    # departure of the tabulated model from model 0, added onto m_theta0
    departure = partial(_departure, tabulated, REGRESSIONS[(dgp.case, "0")])
    return partial(_shifted, _null_mean(dgp), departure, 1.0)


def _departure(model: RegressionFn, null: RegressionFn, x: np.ndarray) -> np.ndarray:
    return model(x) - null(x)


def noise_for(dgp: DGPSpec) -> NoiseSpec:
    return NoiseSpec(variances=(dgp.sigma_eta**2,) * dgp.d)


def uniform_box_density(z: np.ndarray) -> np.ndarray:
    """Density of Uniform[-1, 1]^d at z[..., d]."""
    z = np.asarray(z, dtype=float)
    inside = np.all(np.abs(z) <= 1.0, axis=-1)
    return np.where(inside, 0.5 ** z.shape[-1], 0.0)


def sample(dgp: DGPSpec) -> Dataset:
    """
    Draw (Z_i, Y_i), i = 1..n. Stream order: Z, then eta, then epsilon.

    Deterministic given ``dgp.seed``.
    """
    rng = stream(dgp.seed)
    z = uniform(rng, (dgp.n, dgp.d), -1.0, 1.0)
    eta = standard_normal(rng, (dgp.n, dgp.d)) * dgp.sigma_eta
    eps = standard_normal(rng, dgp.n) * dgp.sigma_eps
    x = z + eta
    y = regression_function(dgp)(x) + eps
    return Dataset(z=z, y=y)


def check_orthogonality(
    model: ModelFamily,
    noise: NoiseSpec,
    grid: GridMeasure,
    r_fn: RegressionFn,
    thetas: Sequence[Sequence[float]],
    tol: float = 1e-8,
) -> float:
    """
    Largest |int H_theta R dG| over ``thetas``, relative to ||H_theta|| ||R||.

    Raises:
        ConfigurationError: If it exceeds ``tol``
    """
    rule = gauss_hermite_rule(noise)
    r_values = expectation(r_fn, grid.nodes, rule)
    r_norm = math.sqrt(float(np.sum(grid.weights * r_values**2)))
    worst = 0.0
    for theta in thetas:
        h_values = np.asarray(calibrate_H(model, noise, theta, grid.nodes, rule))
        h_norm = math.sqrt(float(np.sum(grid.weights * h_values**2)))
        inner = abs(float(np.sum(grid.weights * h_values * r_values)))
        scale = max(h_norm * r_norm, 1e-300)
        worst = max(worst, inner / scale)
    if worst > tol:
        raise ConfigurationError(
            f"perturbation is not orthogonal to H_theta under G (relative {worst:.3e})",
            key="r_fn",
        )
    return worst


def local_alt_noncentrality(
    model: ModelFamily,
    noise: NoiseSpec,
    plan: SmoothingPlan,
    r_fn: RegressionFn,
    theta0: Sequence[float],
    sigma_eps2: float,
    f_z: Callable[[np.ndarray], np.ndarray] = uniform_box_density,
) -> float:
    """
    Gamma^{-1/2} int R^2 dG with R(z) = E[r(z + eta)] and
    Gamma = 2 ||K_2||^2 int (sigma_eps^2 + tau^2)^2 g / f_Z^2 dG.

    Raises:
        DegenerateVarianceError: If Gamma <= 0
    """
    grid = plan.grid
    rule = gauss_hermite_rule(noise)
    r_values = expectation(r_fn, grid.nodes, rule)
    tau2 = np.asarray(calibrate_tau2(model, noise, theta0, grid.nodes, rule))
    sigma_zeta2 = sigma_eps2 + tau2
    density = np.asarray(f_z(grid.nodes), dtype=float)
    if np.any(density <= 0):
        raise ConfigurationError("f_Z must be positive on the grid", key="f_z")
    gamma = (
        2.0
        * k2_norm_sq(plan.kernel)
        * float(np.sum(grid.weights * sigma_zeta2**2 * grid.density / density**2))
    )
    if not gamma > 0:
        raise DegenerateVarianceError(f"Gamma = {gamma:.3e} <= 0")
    return float(np.sum(grid.weights * r_values**2)) / math.sqrt(gamma)


def asymptotic_gamma(
    model: ModelFamily,
    noise: NoiseSpec,
    plan: SmoothingPlan,
    theta0: Sequence[float],
    sigma_eps2: float,
    f_z: Callable[[np.ndarray], np.ndarray] = uniform_box_density,
) -> float:
    """Gamma = 2 ||K_2||^2 int sigma_zeta^4 g d psi with d psi = dG / f_Z^2."""
    grid = plan.grid
    tau2 = np.asarray(calibrate_tau2(model, noise, theta0, grid.nodes))
    density = np.asarray(f_z(grid.nodes), dtype=float)
    return (
        2.0
        * k2_norm_sq(plan.kernel)
        * float(np.sum(grid.weights * (sigma_eps2 + tau2) ** 2 * grid.density / density**2))
    )


def ks_normal(values: Sequence[float]) -> float:
    """Kolmogorov-Smirnov distance between the empirical CDF and N(0, 1)."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("ks_normal needs at least 2 values")
    return float(kstest(values, "norm").statistic)


def calibration_distance(data: Dataset, dgp: DGPSpec, plan: SmoothingPlan) -> float:
    """
    L2(G) distance between the ratio estimator H_hat_n and the true
    H(z) = E[mu(z + eta)] on the plan's grid.
    """
    grid = plan.grid
    estimate = np.asarray(
        regression_estimate(
            data, plan.kernel, plan.h, plan.kernel_star, plan.w, grid.nodes, plan.floor
        )
    )
    truth = expectation(regression_function(dgp), grid.nodes, gauss_hermite_rule(noise_for(dgp)))
    return math.sqrt(float(np.sum(grid.weights * (estimate - truth) ** 2)))


# Naive double-smoothing demo


@dataclass(frozen=True)
class NaiveDemo:
    """Curves of J_hat_n, J and mu on the reporting grid and their L2 distances."""

    x: np.ndarray
    j_hat: np.ndarray
    j_true: np.ndarray
    mu: np.ndarray
    l2_to_J: float
    l2_to_mu: float

    def __iter__(self):
        return iter((self.l2_to_J, self.l2_to_mu))


def convolved_kernel(
    k: Kernel,
    h: float,
    sigma_eta2: float,
    x: np.ndarray,
    z: np.ndarray,
    nodes: int = 40,
) -> np.ndarray:
    """
    K_bar_h(x, z) = int K(u) f_eta(x - z + h u) du for d = 1, shape (len(x), len(z)).

    With sigma_eta2 = 0 this is K_h(x - z).
    """
    diff = np.asarray(x, dtype=float)[:, None] - np.asarray(z, dtype=float)[None, :]
    if sigma_eta2 == 0:
        return kernel_profile(k.kind, diff / h) / h
    t, wt = roots_legendre(nodes)
    kernel_weights = wt * kernel_profile(k.kind, t)
    arg = diff[..., None] + h * t
    density = np.exp(-0.5 * arg**2 / sigma_eta2) / math.sqrt(2.0 * math.pi * sigma_eta2)
    return density @ kernel_weights


def demo_j_curve(x: np.ndarray, sigma_z2: float, sigma_eta2: float) -> np.ndarray:
    """
    J(x) = E[H(Z) | X = x] for mu(x) = x^2, Z ~ N(0, sigma_z2):
    s^2 x^2 + s sigma_eta2 + sigma_eta2 with s = sigma_z2 / (sigma_z2 + sigma_eta2).
    """
    s = sigma_z2 / (sigma_z2 + sigma_eta2)
    return s**2 * x**2 + s * sigma_eta2 + sigma_eta2


def naive_J_demo(
    n: int = 500,
    seed: int = 20240101,
    sigma_eps2: float = 0.01,
    sigma_eta2: float = 0.05,
    sigma_z2: float = 1.0,
    h: Optional[float] = None,
    region: Tuple[float, float] = (-2.0, 2.0),
    grid_nodes: int = 401,
    kernel: str = "epanechnikov",
) -> NaiveDemo:
    """
    J_hat_n(x) = sum_i K_bar_h(x, Z_i) Y_i / sum_i K_bar_h(x, Z_i) for
    Y = X^2 + epsilon, X = Z + eta, compared in L2 on ``region`` with
    J(x) and mu(x) = x^2. The bandwidth defaults to 0.5 n^{-1/5}.
    """
    if n < 2:
        raise ConfigurationError("must be >= 2", key="n")
    h = 0.5 * n ** (-1.0 / 5.0) if h is None else h
    rng = stream(seed)
    z = standard_normal(rng, n) * math.sqrt(sigma_z2)
    eta = standard_normal(rng, n) * math.sqrt(sigma_eta2)
    eps = standard_normal(rng, n) * math.sqrt(sigma_eps2)
    y = (z + eta) ** 2 + eps

    grid = midpoint_grid((region[0],), (region[1],), (grid_nodes,))
    x = grid.nodes[:, 0]
    weights = convolved_kernel(Kernel(kind=kernel, d=1), h, sigma_eta2, x, z)
    total = weights.sum(axis=1)
    j_hat = np.where(total > 0, weights @ y / np.where(total > 0, total, 1.0), np.nan)
    j_true = demo_j_curve(x, sigma_z2, sigma_eta2)
    mu = x**2

    covered = np.isfinite(j_hat)
    w = grid.weights[covered]
    l2_to_J = math.sqrt(float(np.sum(w * (j_hat[covered] - j_true[covered]) ** 2)))
    l2_to_mu = math.sqrt(float(np.sum(w * (j_hat[covered] - mu[covered]) ** 2)))
    return NaiveDemo(x=x, j_hat=j_hat, j_true=j_true, mu=mu, l2_to_J=l2_to_J, l2_to_mu=l2_to_mu)


# Monte Carlo runner


@dataclass(frozen=True)
class ReplicationJob:
    """Everything one worker needs; picklable."""

    template: DGPSpec
    rep: int
    task: Task
    plan_config: PlanConfig
    alpha: float
    theta_init: Optional[Tuple[float, ...]]
    options: FitOptions


@dataclass(frozen=True)
class ReplicationFailure:
    rep: int
    seed: int
    reason: str


def prepare_dgp(template: DGPSpec, plan_config: PlanConfig) -> DGPSpec:
    """Fill gamma_n of a local alternative from the plan's h at the template's n."""
    if template.model_id != "local-alt" or template.gamma_n is not None:
        return template
    h = plan_config.bandwidths(template.n, template.d).h
    return template.model_copy(update={"gamma_n": local_gamma(template.n, h, template.d)})


def run_replication(job: ReplicationJob) -> Union[ReplicationRow, ReplicationFailure]:
    """One replication; numerical failures are returned, not raised."""
    seed = replication_seed(job.template.seed, job.rep)
    dgp = job.template.with_seed(seed)
    try:
        data = sample(dgp)
        model = get_family(dgp.null_family)
        noise = noise_for(dgp)
        plan = job.plan_config.build(dgp.n, dgp.d)
        problem = MinimumDistanceProblem(data, model, noise, plan)
        fit_result = fit(
            problem,
            theta_init=job.theta_init,
            options=job.options,
            sigma_eps2=dgp.sigma_eps**2,
            f_z=uniform_box_density,
        )
        if not fit_result.converged:
            return ReplicationFailure(job.rep, seed, "fit did not converge")
        row = {
            "rep": job.rep,
            "seed": seed,
            "theta_hat": fit_result.theta_hat,
            "converged": True,
            "asym_var": fit_result.asym_var,
        }
        if fit_result.asym_cov_true_fz is not None:
            row["asym_var_true_fz"] = [
                fit_result.asym_cov_true_fz[k][k] for k in range(len(fit_result.theta_hat))
            ]
        if job.task in ("test", "both"):
            test = lack_of_fit(problem, fit_result, job.alpha)
            row.update(
                d_hat=test.d_hat,
                p_value=test.p_value,
                reject=test.reject,
                gamma_hat=test.gamma_hat,
            )
        return ReplicationRow(**row)
    except BerksonMDError as e:
        if e.exit_code == 1:
            raise
        return ReplicationFailure(job.rep, seed, f"{type(e).__name__}: {e}")


def _execute(jobs: List[ReplicationJob], parallelism: int):
    if parallelism <= 1 or len(jobs) <= 1:
        return [run_replication(job) for job in jobs]
    workers = max(1, min(parallelism, len(jobs)))
    chunksize = max(1, len(jobs) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as executor:
        # map preserves job order, so slot r holds replication r
        return list(executor.map(run_replication, jobs, chunksize=chunksize))


def _column(values: List[List[float]]) -> np.ndarray:
    return np.asarray(values, dtype=float)


def aggregate(
    template: DGPSpec,
    task: Task,
    rows: List[ReplicationRow],
    failures: int,
    alpha: float,
    plan_config: PlanConfig,
    keep_rows: bool,
    runtime: float,
) -> MCReport:
    """Summaries over the successful replications."""
    q = len(template.true_theta)
    theta0 = np.asarray(template.true_theta, dtype=float)
    if rows:
        thetas = _column([r.theta_hat for r in rows])
    else:
        thetas = np.empty((0, q))
    errors = thetas - theta0
    reps = len(rows)

    def _mean(a: np.ndarray) -> List[float]:
        return a.mean(axis=0).tolist() if reps else [math.nan] * q

    emp_cov = (
        (template.n * np.atleast_2d(np.cov(thetas, rowvar=False, ddof=1))).tolist()
        if reps > 1
        else [[math.nan] * q for _ in range(q)]
    )
    report = {
        "case": template.case,
        "model_id": template.model_id,
        "n": template.n,
        "a": plan_config.a,
        "b": plan_config.b,
        "task": task,
        "reps": reps,
        "failures": failures,
        "true_theta": list(template.true_theta),
        "mean_theta": _mean(thetas),
        "mse_theta": _mean(errors**2),
        "var_theta": thetas.var(axis=0, ddof=1).tolist() if reps > 1 else [0.0] * q,
        "emp_cov_scaled": emp_cov,
        "outside_theory": template.outside_theory,
        "per_rep_rows": rows if keep_rows else None,
        "runtime": runtime,
    }
    if reps and rows[0].asym_var is not None:
        report["mean_asym_cov_diag"] = _mean(_column([r.asym_var for r in rows]))
    if reps and rows[0].asym_var_true_fz is not None:
        report["mean_asym_cov_diag_true_fz"] = _mean(_column([r.asym_var_true_fz for r in rows]))
    if task in ("test", "both") and reps:
        d_hats = np.asarray([r.d_hat for r in rows], dtype=float)
        report.update(
            rejection_rate=float(np.mean([r.reject for r in rows])),
            ks_stat=ks_normal(d_hats) if reps >= 2 else None,
            mean_d_hat=float(d_hats.mean()),
            var_d_hat=float(d_hats.var(ddof=1)) if reps >= 2 else None,
            median_abs_d_hat=float(np.median(np.abs(d_hats))),
            gamma_hat_mean=float(np.mean([r.gamma_hat for r in rows])),
        )
    return MCReport(**report)


def run_mc(
    template: DGPSpec,
    reps: int,
    task: Task = "both",
    plan_config: Optional[PlanConfig] = None,
    alpha: float = 0.05,
    parallelism: Optional[int] = None,
    theta_init: Optional[Sequence[float]] = None,
    options: Optional[FitOptions] = None,
    keep_rows: bool = False,
) -> MCReport:
    """
    Monte Carlo over ``reps`` replications of ``template``.

    Replication r uses seed ``template.seed + r``. Failed replications are
    excluded and counted.

    Raises:
        ConfigurationError: If reps < 1 or alpha is outside (0, 1)
        MonteCarloError: If more than 5% of replications fail
    """
    if reps < 1:
        raise ConfigurationError("must be >= 1", key="reps")
    if not 0 < alpha < 1:
        raise ConfigurationError("alpha ∈ (0,1)", key="alpha")
    plan_config = plan_config or PlanConfig(
        bandwidth_rule="case1" if template.case == 1 else "case2"
    )
    parallelism = settings.worker_count(parallelism)
    template = prepare_dgp(template, plan_config)
    if template.model_id == "local-alt":
        grid = plan_config.grid(template.d)
        check_orthogonality(
            get_family(template.null_family),
            noise_for(template),
            grid,
            get_perturbation(template.r_fn),
            [np.asarray(template.true_theta) + shift for shift in (-0.5, 0.0, 0.5)],
        )

    jobs = [
        ReplicationJob(
            template=template,
            rep=rep,
            task=task,
            plan_config=plan_config,
            alpha=alpha,
            theta_init=None if theta_init is None else tuple(float(t) for t in theta_init),
            options=options or FitOptions(),
        )
        for rep in range(reps)
    ]

    started = time.perf_counter()
    outcomes = _execute(jobs, parallelism)
    runtime = time.perf_counter() - started

    rows: List[ReplicationRow] = []
    failures = 0
    for outcome in outcomes:
        if isinstance(outcome, ReplicationFailure):
            failures += 1
            log_replication_failure(logger, outcome.rep, outcome.seed, outcome.reason)
        else:
            rows.append(outcome)
    if failures > MAX_FAILURE_RATE * reps:
        raise MonteCarloError(failures, reps)

    logger.info(
        f"Monte Carlo case {template.case} model {template.model_id} n={template.n}: "
        f"{len(rows)} of {reps} replications in {runtime:.1f}s",
        extra={"event_type": "mc_completed", "reps": len(rows), "failures": failures},
    )
    return aggregate(template, task, rows, failures, alpha, plan_config, keep_rows, runtime)
