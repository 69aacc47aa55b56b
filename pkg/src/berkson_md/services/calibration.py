"""
Regression calibration under Berkson noise.

This module computes, for a parametric family m_theta and the known noise
law of eta, the calibrated quantities every estimator works with:

- H_theta(z) = E[m_theta(z + eta)]
- Hdot_theta(z) = E[grad_theta m_theta(z + eta)]
- tau^2(z) = Var(m_theta(z + eta))

Expectations are taken with a tensor-product Gauss-Hermite rule scaled to the
noise variances, or with the family's closed form when it has one. A plain
Monte Carlo estimate is provided as an independent oracle.

Example:
    ```python
    from berkson_md.schemas.model import NoiseSpec
    from berkson_md.services.calibration import calibrate_H
    from berkson_md.services.families import get_family

    model = get_family("case2-2d")
    noise = NoiseSpec(variances=[0.01, 0.01])
    calibrate_H(model, noise, [1.0, 2.0], [0.0, 0.0])  # exp(0.02)
    ```

Note:
    ``CalibrationCache`` memoizes per-observation values for one dataset, since
    the objective evaluates H_theta(Z_i) for every i at each theta.
"""

import threading
from collections import OrderedDict
from typing import Callable, Literal, Optional, Tuple, Union

import numpy as np
from scipy.special import roots_hermitenorm

from berkson_md.core.exceptions import CalibrationError, ConfigurationError
from berkson_md.core.logging import get_logger
from berkson_md.schemas.model import ModelFamily, NoiseSpec, QuadratureRule
from berkson_md.services.random_streams import standard_normal, stream

logger = get_logger(__name__)

DEFAULT_HERMITE_NODES = 30

Method = Literal["auto", "analytic", "quadrature"]
ScalarOrArray = Union[float, np.ndarray]


def gauss_hermite_rule(
    noise: NoiseSpec, nodes_per_axis: int = DEFAULT_HERMITE_NODES
) -> QuadratureRule:
    """
    Tensor-product Gauss-Hermite rule for E[f(eta)], eta ~ N(0, diag(variances)).

    Weights are normalized to sum to one; a rule with M nodes per axis is exact
    for polynomials of degree up to 2M - 1 in each coordinate.
    """
    if nodes_per_axis < 1:
        raise ConfigurationError("must be >= 1", key="hermite_nodes")
    x, w = roots_hermitenorm(nodes_per_axis)
    w = w / np.sqrt(2.0 * np.pi)
    axes_x = [x * s for s in noise.std]
    axes_w = [w] * noise.d
    mesh_x = np.meshgrid(*axes_x, indexing="ij")
    mesh_w = np.meshgrid(*axes_w, indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in mesh_x], axis=-1)
    weights = np.prod(np.stack([g.reshape(-1) for g in mesh_w], axis=-1), axis=-1)
    return QuadratureRule(nodes=nodes, weights=weights, kind="gauss-hermite")


def as_points(z, d: int) -> Tuple[np.ndarray, bool]:
    """Return z as an (n, d) matrix and whether the caller passed a single point."""
    arr = np.asarray(z, dtype=float)
    if arr.ndim == 0:
        if d != 1:
            raise ValueError(f"scalar z given for a {d}-dimensional design")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if d == 1:
            return arr[:, None], False
        if arr.shape[0] != d:
            raise ValueError(f"point of length {arr.shape[0]} given for d={d}")
        return arr[None, :], True
    if arr.shape[1] != d:
        raise ValueError(f"points of dimension {arr.shape[1]} given for d={d}")
    return arr, False


def _resolve_rule(noise: NoiseSpec, rule: Optional[QuadratureRule]) -> QuadratureRule:
    if rule is None:
        return gauss_hermite_rule(noise)
    if rule.d != noise.d:
        raise ConfigurationError(
            f"quadrature rule has dimension {rule.d}, noise has {noise.d}", key="rule"
        )
    return rule


def _check_finite(values: np.ndarray, theta: np.ndarray, pts: np.ndarray) -> None:
    finite = np.isfinite(values)
    if not np.all(finite):
        bad_rows = ~finite.reshape(finite.shape[0], -1).all(axis=1)
        row = int(np.argmax(bad_rows))
        raise CalibrationError(theta, pts[row])


def expectation(
    fn: Callable[[np.ndarray], np.ndarray], pts: np.ndarray, rule: QuadratureRule
) -> np.ndarray:
    """E[fn(z + eta)] for each row z of ``pts``; fn maps x[..., d] to values[..., k?]."""
    x = pts[:, None, :] + rule.nodes[None, :, :]
    values = np.asarray(fn(x), dtype=float)
    if values.ndim == 2:
        return np.sum(values * rule.weights, axis=1)
    return np.einsum("nm...,m->n...", values, rule.weights)


def _model_values(
    model: ModelFamily, theta: np.ndarray, pts: np.ndarray, rule: QuadratureRule
) -> np.ndarray:
    x = pts[:, None, :] + rule.nodes[None, :, :]
    values = np.asarray(model.mean_fn(theta, x), dtype=float)
    _check_finite(values, theta, pts)
    return values


def _theta(model: ModelFamily, theta) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(theta, dtype=float))
    if arr.shape != (model.q,):
        raise ValueError(f"theta must have length q={model.q}")
    return arr


def _ret(values: np.ndarray, single: bool):
    return values[0] if single else values


def calibrate_H(
    model: ModelFamily,
    noise: NoiseSpec,
    theta,
    z,
    rule: Optional[QuadratureRule] = None,
    method: Method = "auto",
) -> ScalarOrArray:
    """
    H_theta(z) = E[m_theta(z + eta)].

    Uses the family's closed form when present (``method="auto"``), the
    Gauss-Hermite rule otherwise.

    Raises:
        CalibrationError: If m_theta is non-finite at any node
    """
    theta = _theta(model, theta)
    pts, single = as_points(z, model.d)
    if method == "analytic" or (method == "auto" and model.analytic_calibration):
        if model.analytic_calibration is None:
            raise ConfigurationError(f"family '{model.name}' has no closed form", key="method")
        H, _ = model.analytic_calibration(theta, pts, noise)
        H = np.asarray(H, dtype=float)
        _check_finite(H, theta, pts)
        return _ret(H, single)
    rule = _resolve_rule(noise, rule)
    values = _model_values(model, theta, pts, rule)
    return _ret(np.sum(values * rule.weights, axis=1), single)


def calibrate_Hdot(
    model: ModelFamily,
    noise: NoiseSpec,
    theta,
    z,
    rule: Optional[QuadratureRule] = None,
    finite_differences: bool = False,
    method: Method = "auto",
) -> np.ndarray:
    """
    Hdot_theta(z) = E[grad_theta m_theta(z + eta)], shape (q,) or (n, q).

    Order of preference: closed form, quadrature of ``grad_fn``, central
    finite differences of ``calibrate_H`` with step 1e-6 * max(1, |theta_k|).

    Raises:
        ConfigurationError: If no gradient route is available
    """
    theta = _theta(model, theta)
    pts, single = as_points(z, model.d)

    if method != "quadrature" and model.analytic_calibration is not None:
        _, Hdot = model.analytic_calibration(theta, pts, noise)
        Hdot = np.asarray(Hdot, dtype=float).reshape(pts.shape[0], model.q)
        _check_finite(Hdot, theta, pts)
        return _ret(Hdot, single)

    if model.grad_fn is not None:
        rule = _resolve_rule(noise, rule)
        x = pts[:, None, :] + rule.nodes[None, :, :]
        grads = np.asarray(model.grad_fn(theta, x), dtype=float)
        _check_finite(grads, theta, pts)
        Hdot = np.einsum("nmq,m->nq", grads.reshape(pts.shape[0], rule.size, model.q), rule.weights)
        return _ret(Hdot, single)

    if finite_differences:
        return _ret(_finite_difference_Hdot(model, noise, theta, pts, rule, method), single)

    raise ConfigurationError(
        f"family '{model.name}' has no gradient; enable finite differences",
        key="finite_differences",
    )


def _finite_difference_Hdot(
    model: ModelFamily,
    noise: NoiseSpec,
    theta: np.ndarray,
    pts: np.ndarray,
    rule: Optional[QuadratureRule],
    method: Method,
) -> np.ndarray:
    out = np.empty((pts.shape[0], model.q))
    for k in range(model.q):
        delta = 1e-6 * max(1.0, abs(theta[k]))
        step = np.zeros(model.q)
        step[k] = delta
        up = calibrate_H(model, noise, theta + step, pts, rule, method)
        down = calibrate_H(model, noise, theta - step, pts, rule, method)
        out[:, k] = (up - down) / (2.0 * delta)
    return out


def calibrate_tau2(
    model: ModelFamily,
    noise: NoiseSpec,
    theta,
    z,
    rule: Optional[QuadratureRule] = None,
) -> ScalarOrArray:
    """
    tau^2(z) = E[m_theta(z + eta)^2] - H_theta(z)^2, computed in centered form
    and clamped at zero.
    """
    theta = _theta(model, theta)
    pts, single = as_points(z, model.d)
    rule = _resolve_rule(noise, rule)
    values = _model_values(model, theta, pts, rule)
    H = np.sum(values * rule.weights, axis=1)
    tau2 = np.sum((values - H[:, None]) ** 2 * rule.weights, axis=1)
    return _ret(np.maximum(tau2, 0.0), single)


def mc_oracle_H(
    model: ModelFamily,
    noise: NoiseSpec,
    theta,
    z,
    n_draws: int,
    seed: int,
) -> Tuple[float, float]:
    """
    Plain Monte Carlo estimate of E[m_theta(z + eta)] and its standard error.

    Deterministic given ``seed``.
    """
    if n_draws < 1:
        raise ConfigurationError("must be >= 1", key="n_draws")
    theta = _theta(model, theta)
    pts, _ = as_points(z, model.d)
    if pts.shape[0] != 1:
        raise ValueError("mc_oracle_H takes a single point z")
    rng = stream(seed)
    eta = standard_normal(rng, (n_draws, model.d)) * noise.std
    values = np.asarray(model.mean_fn(theta, pts[0] + eta), dtype=float)
    _check_finite(values[None, :], theta, pts)
    mean = float(np.mean(values))
    if n_draws == 1:
        return mean, float("nan")
    return mean, float(np.std(values, ddof=1) / np.sqrt(n_draws))


class CalibrationCache:
    """
    Memo of H_theta(Z_i), Hdot_theta(Z_i) and tau^2(Z_i) for one dataset.

    Entries are keyed by the exact bytes of theta; the cache is guarded by a
    lock and bounded, and results never depend on whether an entry was hit.
    """

    def __init__(
        self,
        model: ModelFamily,
        noise: NoiseSpec,
        z: np.ndarray,
        rule: Optional[QuadratureRule] = None,
        finite_differences: bool = False,
        maxsize: int = 16,
    ):
        self.model = model
        self.noise = noise
        self.z = np.asarray(z, dtype=float).reshape(-1, model.d)
        self.rule = _resolve_rule(noise, rule)
        self.finite_differences = finite_differences
        self._maxsize = maxsize
        self._lock = threading.Lock()
        self._entries: "OrderedDict[Tuple[str, bytes], np.ndarray]" = OrderedDict()

    def _get(self, kind: str, theta: np.ndarray, compute: Callable[[], np.ndarray]) -> np.ndarray:
        key = (kind, np.ascontiguousarray(theta, dtype=float).tobytes())
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                return self._entries[key]
        value = compute()
        value.setflags(write=False)
        with self._lock:
            self._entries[key] = value
            while len(self._entries) > self._maxsize:
                self._entries.popitem(last=False)
        return value

    def values(self, theta) -> np.ndarray:
        theta = _theta(self.model, theta)
        return self._get(
            "H",
            theta,
            lambda: np.asarray(
                calibrate_H(self.model, self.noise, theta, self.z, self.rule), dtype=float
            ).reshape(-1),
        )

    def gradients(self, theta) -> np.ndarray:
        theta = _theta(self.model, theta)
        return self._get(
            "Hdot",
            theta,
            lambda: np.asarray(
                calibrate_Hdot(
                    self.model,
                    self.noise,
                    theta,
                    self.z,
                    self.rule,
                    finite_differences=self.finite_differences,
                ),
                dtype=float,
            ).reshape(-1, self.model.q),
        )

    def tau2(self, theta) -> np.ndarray:
        theta = _theta(self.model, theta)
        return self._get(
            "tau2",
            theta,
            lambda: np.asarray(
                calibrate_tau2(self.model, self.noise, theta, self.z, self.rule), dtype=float
            ).reshape(-1),
        )
