"""
Unit tests for regression calibration and the model family registry
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from berkson_md.core.exceptions import CalibrationError, ConfigurationError
from berkson_md.schemas.model import ModelFamily, NoiseSpec
from berkson_md.services.calibration import (
    CalibrationCache,
    calibrate_H,
    calibrate_Hdot,
    calibrate_tau2,
    gauss_hermite_rule,
    mc_oracle_H,
)
from berkson_md.services.families import available_families, gaussian_moment, get_family


def _case2_no_closed_form():
    base = get_family("case2-2d")
    return ModelFamily(
        name="case2-quadrature",
        q=2,
        d=2,
        mean_fn=base.mean_fn,
        grad_fn=base.grad_fn,
        lower=base.lower,
        upper=base.upper,
    )


def _mean_only(family):
    return ModelFamily(
        name=f"{family.name}-mean-only",
        q=family.q,
        d=family.d,
        mean_fn=family.mean_fn,
        lower=family.lower,
        upper=family.upper,
    )


class TestGaussHermiteRule:
    """Test the tensor Gauss-Hermite rule"""

    def test_weights_sum_to_one(self, noise2):
        """Test normalized weights"""
        rule = gauss_hermite_rule(noise2)
        assert rule.size == 900
        assert rule.weights.sum() == pytest.approx(1.0, rel=1e-12)

    def test_gaussian_moments_are_exact(self):
        """Test second and fourth moments of N(0, 0.04)"""
        rule = gauss_hermite_rule(NoiseSpec(variances=(0.04,)))
        eta = rule.nodes[:, 0]
        assert rule.integrate(eta**2) == pytest.approx(0.04, rel=1e-12)
        assert rule.integrate(eta**4) == pytest.approx(3 * 0.04**2, rel=1e-12)
        assert abs(rule.integrate(eta**3)) < 1e-15

    def test_rejects_zero_nodes(self, noise1):
        """Test node count validation"""
        with pytest.raises(ConfigurationError, match="hermite_nodes"):
            gauss_hermite_rule(noise1, 0)


class TestCalibrateH:
    """Test H_theta(z) = E[m_theta(z + eta)]"""

    def test_linear_is_identity_in_z(self, linear_model, noise1):
        """Test H_theta(z) = theta z for the linear family"""
        z = np.linspace(-1, 1, 11)
        assert np.allclose(calibrate_H(linear_model, noise1, 1.7, z), 1.7 * z)

    def test_case2_quadrature_matches_closed_form(self, case2_model, noise2):
        """Test quadrature against exp(theta_2 z_2 + 0.005 theta_2^2)"""
        z = np.array([[0.3, -0.4], [-0.9, 0.8], [0.0, 0.0]])
        theta = [1.0, 2.0]
        quad = calibrate_H(case2_model, noise2, theta, z, method="quadrature")
        closed = calibrate_H(case2_model, noise2, theta, z, method="analytic")
        expected = z[:, 0] + np.exp(2.0 * z[:, 1] + 0.005 * 4.0)
        assert np.allclose(quad, closed, rtol=1e-8, atol=0)
        assert np.allclose(closed, expected, rtol=1e-12)

    def test_poly_quadrature_matches_closed_form(self, noise1):
        """Test the Gaussian-moment calibration of poly-1d"""
        model = get_family("poly-1d", coefficients=4)
        z = np.linspace(-1, 1, 7)
        theta = [0.5, -1.0, 2.0, 0.3]
        quad = calibrate_H(model, noise1, theta, z, method="quadrature")
        closed = calibrate_H(model, noise1, theta, z, method="analytic")
        assert np.allclose(quad, closed, rtol=1e-8, atol=1e-14)

    def test_scalar_point_returns_scalar(self, case2_model, noise2):
        """Test that a single 2-vector gives a single value"""
        value = calibrate_H(case2_model, noise2, [1.0, 2.0], [0.0, 0.0])
        assert float(value) == pytest.approx(np.exp(0.02), rel=1e-12)

    def test_zero_noise_returns_model(self, case2_model):
        """Test H = m when eta is degenerate"""
        noise = NoiseSpec(variances=(0.0, 0.0))
        z = np.array([[0.2, 0.3]])
        value = calibrate_H(_case2_no_closed_form(), noise, [1.0, 2.0], z)
        assert value[0] == pytest.approx(0.2 + np.exp(0.6), rel=1e-12)

    def test_non_finite_model_raises(self, noise1):
        """Test CalibrationError naming theta and z"""
        bad = ModelFamily(
            name="log-1d",
            q=1,
            d=1,
            mean_fn=lambda theta, x: theta[0] * np.log(x[..., 0]),
        )
        with np.errstate(invalid="ignore", divide="ignore"):
            with pytest.raises(CalibrationError) as exc:
                calibrate_H(bad, noise1, [1.0], [-2.0, 0.5])
        assert exc.value.z == (-2.0,)
        assert exc.value.exit_code == 2

    def test_monte_carlo_oracle_agrees(self, case2_model, noise2):
        """Test the quadrature value lies within 4 standard errors of plain Monte Carlo"""
        mean, se = mc_oracle_H(case2_model, noise2, [1.0, 2.0], [0.3, 0.5], 200_000, seed=11)
        exact = calibrate_H(case2_model, noise2, [1.0, 2.0], [0.3, 0.5])
        assert abs(mean - exact) < 4 * se

    def test_monte_carlo_oracle_is_deterministic(self, case2_model, noise2):
        """Test that the same seed gives the same estimate"""
        first = mc_oracle_H(case2_model, noise2, [1.0, 2.0], [0.3, 0.5], 1000, seed=3)
        second = mc_oracle_H(case2_model, noise2, [1.0, 2.0], [0.3, 0.5], 1000, seed=3)
        assert first == second

    @settings(max_examples=25, deadline=None)
    @given(
        theta=st.floats(min_value=-3, max_value=3),
        scale=st.floats(min_value=-2, max_value=2),
    )
    def test_linear_calibration_is_homogeneous(self, theta, scale):
        """Test H_{c theta} = c H_theta for the linear family"""
        model = get_family("linear-1d")
        noise = NoiseSpec(variances=(0.01,))
        z = np.linspace(-1, 1, 5)
        left = calibrate_H(model, noise, scale * theta, z, method="quadrature")
        right = scale * calibrate_H(model, noise, theta, z, method="quadrature")
        assert np.allclose(left, right, atol=1e-12)


class TestCalibrateHdot:
    """Test the calibrated gradient"""

    def test_quadrature_matches_closed_form(self, case2_model, noise2):
        """Test grad_fn quadrature against the analytic gradient"""
        z = np.array([[0.3, -0.4], [-0.9, 0.8]])
        quad = calibrate_Hdot(_case2_no_closed_form(), noise2, [1.0, 2.0], z)
        closed = calibrate_Hdot(case2_model, noise2, [1.0, 2.0], z)
        assert quad.shape == (2, 2)
        assert np.allclose(quad, closed, rtol=1e-8)

    def test_finite_differences(self, case2_model, noise2):
        """Test central differences when the family has no gradient"""
        z = np.array([[0.3, -0.4], [-0.9, 0.8]])
        approx = calibrate_Hdot(
            _mean_only(case2_model), noise2, [1.0, 2.0], z, finite_differences=True
        )
        closed = calibrate_Hdot(case2_model, noise2, [1.0, 2.0], z)
        assert np.allclose(approx, closed, rtol=1e-6)

    def test_missing_gradient_is_a_configuration_error(self, case2_model, noise2):
        """Test that no gradient route raises"""
        with pytest.raises(ConfigurationError, match="finite_differences"):
            calibrate_Hdot(_mean_only(case2_model), noise2, [1.0, 2.0], [0.0, 0.0])


class TestCalibrateTau2:
    """Test tau^2(z) = Var(m_theta(z + eta))"""

    def test_linear_variance(self, linear_model, noise1):
        """Test tau^2 = theta^2 sigma_eta^2"""
        tau2 = calibrate_tau2(linear_model, noise1, 1.5, np.linspace(-1, 1, 9))
        assert np.allclose(tau2, 1.5**2 * 0.01, rtol=1e-10)

    def test_zero_noise(self, linear_model):
        """Test tau^2 = 0 without Berkson noise"""
        tau2 = calibrate_tau2(linear_model, NoiseSpec(variances=(0.0,)), 2.0, [0.1, 0.7])
        assert np.all(tau2 == 0.0)

    def test_nonnegative(self, case2_model, noise2):
        """Test tau^2 >= 0 for the exponential family"""
        z = np.random.default_rng(0).uniform(-1, 1, (50, 2))
        assert np.all(calibrate_tau2(case2_model, noise2, [1.0, 2.0], z) >= 0)


class TestCalibrationCache:
    """Test the per-dataset memo"""

    def test_hit_equals_miss(self, case2_model, noise2, case2_data):
        """Test that cached values equal fresh computations"""
        cache = CalibrationCache(case2_model, noise2, case2_data.z)
        first = cache.values([1.0, 2.0])
        second = cache.values([1.0, 2.0])
        assert first is second
        fresh = calibrate_H(case2_model, noise2, [1.0, 2.0], case2_data.z)
        assert np.array_equal(first, fresh)

    def test_entries_are_read_only(self, case2_model, noise2, case2_data):
        """Test cached arrays cannot be mutated"""
        cache = CalibrationCache(case2_model, noise2, case2_data.z)
        with pytest.raises(ValueError):
            cache.gradients([1.0, 2.0])[0, 0] = 0.0


class TestFamilies:
    """Test the family registry"""

    def test_builtin_families(self):
        """Test the registered names"""
        assert {"linear-1d", "case2-2d", "poly-1d"} <= set(available_families())

    def test_unknown_family(self):
        """Test unknown names raise a configuration error"""
        with pytest.raises(ConfigurationError, match="unknown model family"):
            get_family("quartic-9d")

    def test_invalid_parameters(self):
        """Test bad factory parameters raise a configuration error"""
        with pytest.raises(ConfigurationError, match="model_params"):
            get_family("poly-1d", coefficients=0)

    def test_gaussian_moments(self):
        """Test E[eta^k] for N(0, 0.01)"""
        assert gaussian_moment(0, 0.01) == 1.0
        assert gaussian_moment(3, 0.01) == 0.0
        assert gaussian_moment(4, 0.01) == pytest.approx(3e-4)

    def test_projection_clamps_to_box(self, linear_model):
        """Test the box clamp"""
        assert linear_model.project(np.array([25.0]))[0] == 10.0
        assert linear_model.contains(np.array([10.0]))
        assert not linear_model.is_interior(np.array([10.0]))


class TestQuadraticCalibration:
    """Test E[(z + eta)^2] and Var((z + eta)^2) through poly-1d"""

    @pytest.fixture
    def square(self):
        return get_family("poly-1d", coefficients=3), [0.0, 0.0, 1.0]

    def test_h_adds_noise_variance(self, square):
        """Test H(1) = 1 + 0.05"""
        model, theta = square
        noise = NoiseSpec(variances=(0.05,))
        for method in ("analytic", "quadrature"):
            assert float(calibrate_H(model, noise, theta, [1.0], method=method)[0]) == pytest.approx(
                1.05, rel=1e-12
            )

    def test_tau2_is_fourth_moment(self, square):
        """Test Var(eta^2) = 2 sigma^4 at z = 0"""
        model, theta = square
        tau2 = calibrate_tau2(model, NoiseSpec(variances=(0.05,)), theta, [0.0])
        assert float(tau2[0]) == pytest.approx(0.005, rel=1e-10)

    @pytest.mark.parametrize("nodes", [2, 5, 10])
    def test_rule_exact_through_degree_2m_minus_1(self, nodes):
        """Test E[eta^k] for k < 2M"""
        noise = NoiseSpec(variances=(0.3,))
        rule = gauss_hermite_rule(noise, nodes)
        eta = rule.nodes[:, 0]
        for k in range(2 * nodes):
            assert rule.integrate(eta**k) == pytest.approx(gaussian_moment(k, 0.3), abs=1e-12)

    def test_linear_in_the_model(self, noise1):
        """Test calibrating a m1 + b m2 equals a H1 + b H2"""
        model = get_family("poly-1d", coefficients=3)
        z = np.linspace(-1, 1, 9)
        first, second = [0.5, 1.0, 0.0], [0.0, -2.0, 3.0]
        theta = 2 * np.array(first) - np.array(second)
        combined = calibrate_H(model, noise1, theta, z, method="quadrature")
        parts = 2 * calibrate_H(model, noise1, first, z, method="quadrature") - calibrate_H(
            model, noise1, second, z, method="quadrature"
        )
        assert np.allclose(combined, parts, atol=1e-12)
