"""
Types describing the parametric regression family and the Berkson noise law.

- ``NoiseSpec``: the known law of eta in X = Z + eta (mean-zero Gaussian with
  diagonal covariance).
- ``QuadratureRule``: nodes and positive weights realizing an expectation or
  an integral.
- ``ModelFamily``: the regression family m_theta together with its optional
  gradient and closed-form calibration.

Example:
    ```python
    from berkson_md.schemas.model import NoiseSpec

    noise = NoiseSpec(variances=[0.01, 0.01])
    assert noise.d == 2
    ```

Note:
    ``NoiseSpec.kind`` is a closed set containing only ``"gaussian"``. Adding a
    noise law means adding a kind here and a matching rule constructor in
    ``berkson_md.services.calibration``.
"""

from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

# (theta, x[..., d]) -> values[...]
MeanFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
# (theta, x[..., d]) -> gradients[..., q]
GradFn = Callable[[np.ndarray, np.ndarray], np.ndarray]
# (theta, z[n, d], noise) -> (H[n], Hdot[n, q])
AnalyticCalibration = Callable[
    [np.ndarray, np.ndarray, "NoiseSpec"], Tuple[np.ndarray, np.ndarray]
]


class NoiseSpec(BaseModel):
    """
    Law of the Berkson noise eta.

    Attributes:
        kind (str): Distribution family; only mean-zero ``"gaussian"``
        variances (tuple[float, ...]): Per-coordinate variances (units of X^2)
    """

    model_config = ConfigDict(frozen=True)

    kind: Literal["gaussian"] = "gaussian"
    variances: Tuple[float, ...]

    @field_validator("variances")
    @classmethod
    def validate_variances(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        """
        Validate the variance sequence.

        Raises:
            ValueError: If the sequence is empty or holds a negative/non-finite value
        """
        if len(v) < 1:
            raise ValueError("variances must have length d >= 1")
        if any(not np.isfinite(s) or s < 0 for s in v):
            raise ValueError("variances must be finite and >= 0")
        return tuple(float(s) for s in v)

    @property
    def d(self) -> int:
        """Design dimension"""
        return len(self.variances)

    @property
    def std(self) -> np.ndarray:
        """Per-coordinate standard deviations"""
        return np.sqrt(np.asarray(self.variances, dtype=float))

    def density(self, u: np.ndarray) -> np.ndarray:
        """Evaluate f_eta at points u[..., d]; coordinates with zero variance are
        not absolutely continuous and are rejected."""
        var = np.asarray(self.variances, dtype=float)
        if np.any(var == 0):
            raise ValueError("density undefined for a degenerate (zero-variance) coordinate")
        u = np.asarray(u, dtype=float)
        quad = np.sum(u**2 / var, axis=-1)
        norm = np.prod(np.sqrt(2.0 * np.pi * var))
        return np.exp(-0.5 * quad) / norm


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes (m, d) and strictly positive weights (m,)."""

    nodes: np.ndarray
    weights: np.ndarray
    kind: Literal["gauss-hermite", "midpoint", "gauss-legendre"]

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        weights = np.asarray(self.weights, dtype=float)
        if weights.ndim != 1 or nodes.shape[0] != weights.shape[0]:
            raise ValueError("nodes and weights must have matching lengths")
        if np.any(weights <= 0) or not np.all(np.isfinite(weights)):
            raise ValueError("quadrature weights must be strictly positive and finite")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def d(self) -> int:
        return int(self.nodes.shape[1])

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Weighted sum over the last node axis of ``values``."""
        return np.sum(values * self.weights, axis=-1)


@dataclass(frozen=True)
class ModelFamily:
    """
    Parametric regression family m_theta(x).

    Attributes:
        name (str): Registry name
        q (int): Parameter dimension
        d (int): Design dimension
        mean_fn (MeanFn): Vectorized m_theta(x) over x[..., d]
        grad_fn (Optional[GradFn]): Vectorized gradient in theta, shape [..., q]
        analytic_calibration (Optional[AnalyticCalibration]): Closed-form
            (H_theta(z), Hdot_theta(z)) under Gaussian noise
        lower, upper (np.ndarray): Box Theta
        linear_in_parameters (bool): m_theta(x) = theta' gamma(x)
    """

    name: str
    q: int
    d: int
    mean_fn: MeanFn
    grad_fn: Optional[GradFn] = None
    analytic_calibration: Optional[AnalyticCalibration] = None
    lower: np.ndarray = field(default_factory=lambda: np.array([-10.0]))
    upper: np.ndarray = field(default_factory=lambda: np.array([10.0]))
    linear_in_parameters: bool = False

    def __post_init__(self) -> None:
        if self.q < 1 or self.d < 1:
            raise ValueError("model dimensions q and d must be >= 1")
        lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.q,)).copy()
        upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.q,)).copy()
        if np.any(lower >= upper):
            raise ValueError("parameter region must satisfy lower < upper")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    def contains(self, theta: np.ndarray) -> bool:
        """True when theta lies in the closed box Theta."""
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def is_interior(self, theta: np.ndarray) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta > self.lower) and np.all(theta < self.upper))

    def project(self, theta: np.ndarray) -> np.ndarray:
        """Box clamp into Theta."""
        return np.clip(np.asarray(theta, dtype=float), self.lower, self.upper)
