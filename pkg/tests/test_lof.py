"""
Unit tests for the lack-of-fit statistic chain
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError
from scipy.stats import norm

from berkson_md.core.exceptions import ConfigurationError, DegenerateVarianceError
from berkson_md.schemas.results import TestResult
from berkson_md.schemas.simulation import DGPSpec
from berkson_md.schemas.smoothing import Dataset, PlanConfig
from berkson_md.services.lof import (
    c_hat,
    critical_value,
    gamma_hat,
    is_exact_fit,
    lack_of_fit,
    residuals,
    run_test,
)
from berkson_md.services.families import get_family
from berkson_md.services.mdfit import MinimumDistanceProblem, fit
from berkson_md.services.simulation import noise_for, sample
from berkson_md.services.smoothing import GridSmoother


SEEDS = st.integers(min_value=0, max_value=2**32 - 1)
SMALL_PLAN = PlanConfig(bandwidth_rule="case1").build(n=60, d=1)


def _random_residuals(seed):
    rng = np.random.default_rng(seed)
    data = Dataset(z=rng.uniform(-1, 1, 60), y=rng.normal(size=60))
    return rng, data, rng.normal(scale=0.1, size=60)


def _brute_force_gamma(data, zeta, plan):
    smoother = GridSmoother.build(data, plan)
    kh = smoother.kh.toarray()
    weights = plan.grid.weights / smoother.density**2
    total = 0.0
    for i in range(data.n):
        for j in range(data.n):
            if i != j:
                inner = np.sum(weights * kh[:, i] * kh[:, j]) * zeta[i] * zeta[j]
                total += inner**2
    return 2.0 * plan.h**plan.d / data.n**2 * total


def _result(**overrides):
    fields = dict(
        theta_hat=[1.0],
        mn_value=0.002,
        c_hat=0.001,
        gamma_hat=0.0004,
        d_hat=0.0,
        p_value=0.5,
        reject=False,
        alpha=0.05,
        floored_nodes=0,
        n=100,
        h=0.2,
        d=1,
    )
    fields["d_hat"] = 100 * 0.2**0.5 * 0.001 / 0.02
    fields.update(overrides)
    return TestResult(**fields)


class TestCentering:
    """Test C_hat"""

    def test_homogeneous_of_degree_two(self, case1_data, case1_plan):
        """Test C_hat(c zeta) = c^2 C_hat(zeta)"""
        zeta = np.random.default_rng(2).normal(size=case1_data.n)
        base = c_hat(case1_data, zeta, case1_plan)
        assert base >= 0
        assert c_hat(case1_data, 3.0 * zeta, case1_plan) == pytest.approx(9.0 * base, rel=1e-12)

    def test_zero_residuals(self, case1_data, case1_plan):
        """Test C_hat = 0 when every residual vanishes"""
        assert c_hat(case1_data, np.zeros(case1_data.n), case1_plan) == 0.0

    @settings(max_examples=15, deadline=None)
    @given(seed=SEEDS)
    def test_permutation_invariant(self, seed):
        """Test C_hat does not depend on the order of observations"""
        rng, data, zeta = _random_residuals(seed)
        order = rng.permutation(data.n)
        assert c_hat(data.permuted(order), zeta[order], SMALL_PLAN) == pytest.approx(
            c_hat(data, zeta, SMALL_PLAN), rel=1e-10
        )


class TestGammaHat:
    """Test the variance estimate"""

    def test_gram_route_matches_double_sum(self):
        """Test the sparse Gram computation against the explicit pair sum"""
        data = sample(DGPSpec(case=1, model_id="0", n=50, seed=7))
        plan = PlanConfig(bandwidth_rule="case1", a=0.5, b=0.5).build(n=50, d=1)
        zeta = np.random.default_rng(3).normal(scale=0.1, size=50)
        assert gamma_hat(data, zeta, plan) == pytest.approx(
            _brute_force_gamma(data, zeta, plan), rel=1e-10
        )

    @settings(max_examples=15, deadline=None)
    @given(seed=SEEDS)
    def test_permutation_invariant(self, seed):
        """Test Gamma_hat does not depend on the order of observations"""
        rng, data, zeta = _random_residuals(seed)
        order = rng.permutation(data.n)
        assert gamma_hat(data.permuted(order), zeta[order], SMALL_PLAN) == pytest.approx(
            gamma_hat(data, zeta, SMALL_PLAN), rel=1e-10
        )

    @settings(max_examples=15, deadline=None)
    @given(seed=SEEDS, scale=st.floats(min_value=0.1, max_value=10.0))
    def test_even_and_quartic_in_residuals(self, seed, scale):
        """Test Gamma_hat(-zeta) = Gamma_hat(zeta) and Gamma_hat(c zeta) = c^4 Gamma_hat(zeta)"""
        _, data, zeta = _random_residuals(seed)
        base = gamma_hat(data, zeta, SMALL_PLAN)
        assert gamma_hat(data, -zeta, SMALL_PLAN) == pytest.approx(base, rel=1e-12)
        assert gamma_hat(data, scale * zeta, SMALL_PLAN) == pytest.approx(scale**4 * base, rel=1e-10)

    def test_no_overlapping_kernels(self):
        """Test DegenerateVarianceError when kernel supports are disjoint"""
        data = Dataset(z=[-0.9, 0.9], y=[0.3, -0.2])
        plan = PlanConfig(bandwidth_rule="explicit", h=0.05, w=0.3).build(n=2, d=1)
        with pytest.raises(DegenerateVarianceError, match="increase the bandwidth"):
            gamma_hat(data, np.array([0.3, -0.2]), plan)

    def test_needs_two_observations(self):
        """Test n >= 2"""
        plan = PlanConfig(bandwidth_rule="explicit", h=0.3, w=0.3).build(n=2, d=1)
        with pytest.raises(ConfigurationError, match="n"):
            gamma_hat(Dataset(z=[0.0], y=[1.0]), np.array([1.0]), plan)


class TestLackOfFit:
    """Test D_hat, its p-value and the decision"""

    def test_critical_value(self):
        """Test z_{0.025}"""
        assert critical_value(0.05) == pytest.approx(1.959964, abs=1e-6)

    def test_invalid_alpha(self, case1_data, linear_model, noise1, case1_plan):
        """Test alpha must lie in (0, 1)"""
        with pytest.raises(ConfigurationError, match="alpha"):
            run_test(case1_data, linear_model, noise1, case1_plan, alpha=1.5)

    def test_statistic_chain(self, case1_data, linear_model, noise1, case1_plan):
        """Test D_hat = n h^{1/2} (M - C) / sqrt(Gamma) and p = 2 sf(|D|)"""
        result = run_test(case1_data, linear_model, noise1, case1_plan)
        expected = (
            case1_data.n
            * case1_plan.h**0.5
            * (result.mn_value - result.c_hat)
            / np.sqrt(result.gamma_hat)
        )
        assert result.d_hat == pytest.approx(expected, rel=1e-12)
        assert result.p_value == pytest.approx(2 * norm.sf(abs(result.d_hat)), rel=1e-12)
        assert result.reject == (abs(result.d_hat) > critical_value(0.05))
        assert result.n == 200 and result.d == 1

    def test_exact_fit_does_not_reject(self, noiseless_linear, linear_model, noise1):
        """Test Y = 2 Z reports Gamma_hat = 0, D_hat = 0 and p = 1"""
        plan = PlanConfig().build(n=noiseless_linear.n, d=1)
        result = run_test(noiseless_linear, linear_model, noise1, plan)
        assert result.gamma_hat == 0.0
        assert result.d_hat == 0.0
        assert result.p_value == 1.0
        assert not result.reject

    def test_quadratic_alternative_is_rejected(self, linear_model, noise1):
        """Test case-1 model 1 at n = 500"""
        data = sample(DGPSpec(case=1, model_id="1", n=500, seed=11))
        plan = PlanConfig(bandwidth_rule="case1", a=0.5, b=0.5).build(n=500, d=1)
        result = run_test(data, linear_model, noise1, plan)
        assert result.reject
        assert result.d_hat > critical_value(0.05)

    @settings(max_examples=10, deadline=None)
    @given(seed=SEEDS)
    def test_grid_relabelling_leaves_statistic_unchanged(self, seed):
        """Test D_hat does not depend on the order of the grid nodes"""
        data = sample(DGPSpec(case=1, model_id="1", n=60, seed=seed))
        model, noise = get_family("linear-1d"), noise_for(DGPSpec())
        order = np.random.default_rng(seed).permutation(SMALL_PLAN.grid.size)
        relabelled = SMALL_PLAN.with_grid(SMALL_PLAN.grid.relabeled(order))
        base = run_test(data, model, noise, SMALL_PLAN)
        moved = run_test(data, model, noise, relabelled)
        assert moved.d_hat == pytest.approx(base.d_hat, rel=1e-9, abs=1e-12)
        assert moved.gamma_hat == pytest.approx(base.gamma_hat, rel=1e-9)

    def test_reuses_fitted_problem(self, case2_data, case2_model, noise2, case2_plan):
        """Test lack_of_fit on an already fitted case-2 problem"""
        problem = MinimumDistanceProblem(case2_data, case2_model, noise2, case2_plan)
        fitted = fit(problem, theta_init=[0.8, 1.8])
        result = lack_of_fit(problem, fitted, alpha=0.1)
        assert result.theta_hat == fitted.theta_hat
        assert result.mn_value == pytest.approx(fitted.objective)
        assert result.gamma_hat > 0

    def test_logs_completion(self, case1_data, linear_model, noise1, case1_plan, events):
        """Test the test_completed event"""
        result = run_test(case1_data, linear_model, noise1, case1_plan)
        records = events("test_completed")
        assert records and records[-1].reject == result.reject

    def test_residuals(self, case1_data, linear_model):
        """Test zeta = Y - theta Z for the linear family"""
        zeta = residuals(case1_data, linear_model, noise_for(DGPSpec()), [1.0])
        assert np.allclose(zeta, case1_data.y - case1_data.z[:, 0])
        assert not is_exact_fit(case1_data, zeta)


class TestTestResult:
    """Test the TestResult record"""

    def test_consistent_record(self):
        """Test a record whose D_hat matches the chain"""
        assert _result().d_hat == pytest.approx(1.0 * 100 * 0.2**0.5 * 0.05)

    def test_inconsistent_d_hat(self):
        """Test the reconstruction check"""
        with pytest.raises(ValidationError, match="d_hat"):
            _result(d_hat=3.0)

    def test_exact_fit_record_must_not_reject(self):
        """Test Gamma_hat = 0 requires D_hat = 0 and no rejection"""
        with pytest.raises(ValidationError):
            _result(gamma_hat=0.0, d_hat=0.0, reject=True)

    def test_alpha_bounds(self):
        """Test alpha in (0, 1)"""
        with pytest.raises(ValidationError):
            _result(alpha=1.0)
