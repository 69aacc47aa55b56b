"""
Registry of parametric regression families.

Built-in families:

- ``linear-1d``: m_theta(x) = theta x, H_theta(z) = theta z
- ``case2-2d``: m_theta(x) = theta_1 x_1 + exp(theta_2 x_2),
  H_theta(z) = theta_1 z_1 + exp(theta_2 z_2 + sigma_2^2 theta_2^2 / 2)
- ``poly-1d``: m_theta(x) = sum_k theta_k x^k, k < coefficients

Custom families are registered programmatically:

    ```python
    from berkson_md.services.families import register_family

    @register_family("cubic-1d")
    def cubic(**params):
        return ModelFamily(name="cubic-1d", q=1, d=1, mean_fn=..., grad_fn=...)
    ```

Registered functions are module-level (or ``functools.partial`` of
module-level functions) so families survive pickling into worker processes.
"""

from typing import Callable, Dict, List

import numpy as np
from scipy.special import comb, factorial2

from berkson_md.core.exceptions import ConfigurationError
from berkson_md.schemas.model import ModelFamily, NoiseSpec

FamilyFactory = Callable[..., ModelFamily]

_REGISTRY: Dict[str, FamilyFactory] = {}


def register_family(name: str) -> Callable[[FamilyFactory], FamilyFactory]:
    """Decorator registering a factory under ``name``."""

    def decorator(factory: FamilyFactory) -> FamilyFactory:
        _REGISTRY[name] = factory
        return factory

    return decorator


def get_family(name: str, **params) -> ModelFamily:
    """
    Build a registered family.

    Raises:
        ConfigurationError: If ``name`` is unknown or the parameters are invalid
    """
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown model family '{name}'; available: {available_families()}",
            key="model",
        ) from None
    try:
        return factory(**params)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(str(e), key="model_params") from e


def available_families() -> List[str]:
    return sorted(_REGISTRY)


# linear-1d


def _linear_mean(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    return theta[0] * x[..., 0]


def _linear_grad(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    return x[..., :1].copy()


def _linear_calibration(theta: np.ndarray, z: np.ndarray, noise: NoiseSpec):
    return theta[0] * z[:, 0], z[:, :1].copy()


@register_family("linear-1d")
def linear_1d(lower: float = -10.0, upper: float = 10.0) -> ModelFamily:
    return ModelFamily(
        name="linear-1d",
        q=1,
        d=1,
        mean_fn=_linear_mean,
        grad_fn=_linear_grad,
        analytic_calibration=_linear_calibration,
        lower=np.array([lower]),
        upper=np.array([upper]),
        linear_in_parameters=True,
    )


# case2-2d


def _case2_mean(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    return theta[0] * x[..., 0] + np.exp(theta[1] * x[..., 1])


def _case2_grad(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.stack([x[..., 0], x[..., 1] * np.exp(theta[1] * x[..., 1])], axis=-1)


def _case2_calibration(theta: np.ndarray, z: np.ndarray, noise: NoiseSpec):
    var2 = noise.variances[1]
    growth = np.exp(theta[1] * z[:, 1] + 0.5 * var2 * theta[1] ** 2)
    H = theta[0] * z[:, 0] + growth
    Hdot = np.stack([z[:, 0], (z[:, 1] + var2 * theta[1]) * growth], axis=-1)
    return H, Hdot


@register_family("case2-2d")
def case2_2d(
    lower: tuple = (-10.0, -5.0), upper: tuple = (10.0, 5.0)
) -> ModelFamily:
    return ModelFamily(
        name="case2-2d",
        q=2,
        d=2,
        mean_fn=_case2_mean,
        grad_fn=_case2_grad,
        analytic_calibration=_case2_calibration,
        lower=np.asarray(lower, dtype=float),
        upper=np.asarray(upper, dtype=float),
    )


# poly-1d


def _powers(x: np.ndarray, count: int) -> np.ndarray:
    return np.stack([x**k for k in range(count)], axis=-1)


def _poly_mean(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    return _powers(x[..., 0], theta.shape[0]) @ theta


def _poly_grad(theta: np.ndarray, x: np.ndarray) -> np.ndarray:
    return _powers(x[..., 0], theta.shape[0])


def gaussian_moment(order: int, variance: float) -> float:
    """E[eta^order] for eta ~ N(0, variance)."""
    if order % 2:
        return 0.0
    if order == 0:
        return 1.0
    return float(factorial2(order - 1, exact=True)) * variance ** (order // 2)


def _poly_calibration(theta: np.ndarray, z: np.ndarray, noise: NoiseSpec):
    var = noise.variances[0]
    z1 = z[:, 0]
    regressors = np.empty((z1.shape[0], theta.shape[0]))
    for k in range(theta.shape[0]):
        regressors[:, k] = sum(
            comb(k, j, exact=True) * z1 ** (k - j) * gaussian_moment(j, var)
            for j in range(k + 1)
        )
    return regressors @ theta, regressors


@register_family("poly-1d")
def poly_1d(coefficients: int = 2, lower: float = -10.0, upper: float = 10.0) -> ModelFamily:
    if coefficients < 1:
        raise ValueError("poly-1d needs coefficients >= 1")
    return ModelFamily(
        name="poly-1d",
        q=int(coefficients),
        d=1,
        mean_fn=_poly_mean,
        grad_fn=_poly_grad,
        analytic_calibration=_poly_calibration,
        lower=np.full(coefficients, lower),
        upper=np.full(coefficients, upper),
        linear_in_parameters=True,
    )
