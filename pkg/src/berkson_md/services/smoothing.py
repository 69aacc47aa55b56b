"""
Kernel-smoothing primitives.

Every downstream formula is built from kernel-weighted averages of the
observations:

- density_estimate: f_hat(z) = (1/n) sum_i K_w(z - Z_i)
- regression_estimate: H_hat(z) = sum_i K_h(z - Z_i) Y_i / (n max(f_hat_w(z), floor))
- mu_n, mu_dot_n, u_n: kernel averages of H_theta(Z_i), Hdot_theta(Z_i) and
  of the residuals Y_i - H_theta(Z_i)

Kernel weights are stored as sparse matrices: observations are sorted on the
first coordinate and, for each evaluation point, only the window
|z_1 - Z_i1| <= h is scanned, then filtered on the remaining coordinates.

``GridSmoother`` binds a dataset to a plan's integration grid once, so the
objective, gradient, centering and variance terms share one weight matrix
and one floored density estimate.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.special import roots_legendre

from berkson_md.core.logging import get_logger, log_bandwidth_warning, log_floored_nodes
from berkson_md.schemas.smoothing import Dataset, Kernel, SmoothingPlan, h3_warning
from berkson_md.services.calibration import as_points

logger = get_logger(__name__)


def kernel_profile(kind: str, t: np.ndarray) -> np.ndarray:
    inside = np.abs(t) <= 1.0
    if kind == "epanechnikov":
        return np.where(inside, 0.75 * (1.0 - t**2), 0.0)
    return np.where(inside, 0.5, 0.0)


def kernel_at(k: Kernel, u):
    """
    Product kernel K(u) = prod_j K1(u_j), zero outside [-1, 1]^d.

    For d = 1 a scalar or a flat array of scalars is accepted.
    """
    u = np.asarray(u, dtype=float)
    if k.d == 1 and (u.ndim == 0 or u.shape[-1] != 1):
        u = u[..., None]
    if u.shape[-1] != k.d:
        raise ValueError(f"kernel of dimension {k.d} evaluated at {u.shape[-1]}-vectors")
    values = np.prod(kernel_profile(k.kind, u), axis=-1)
    return float(values) if values.ndim == 0 else values


def scaled_kernel(k: Kernel, h: float, u):
    """K_h(u) = K(u / h) / h^d."""
    if h <= 0:
        raise ValueError("bandwidth must be > 0")
    values = kernel_at(k, np.asarray(u, dtype=float) / h)
    return values / h**k.d


def kernel_matrix(
    k: Kernel, h: float, points: np.ndarray, centers: np.ndarray
) -> sparse.csr_matrix:
    """
    Sparse matrix W[p, i] = K_h(points_p - centers_i).

    Only pairs with ||points_p - centers_i||_inf <= h are visited.
    """
    points = np.asarray(points, dtype=float).reshape(-1, k.d)
    centers = np.asarray(centers, dtype=float).reshape(-1, k.d)
    n_points, n_centers = points.shape[0], centers.shape[0]

    order = np.argsort(centers[:, 0], kind="stable")
    first = centers[order, 0]
    lo = np.searchsorted(first, points[:, 0] - h, side="left")
    hi = np.searchsorted(first, points[:, 0] + h, side="right")
    counts = hi - lo
    total = int(counts.sum())

    rows = np.repeat(np.arange(n_points), counts)
    run_starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    offsets = np.arange(total) - np.repeat(run_starts, counts) + np.repeat(lo, counts)
    cols = order[offsets]

    diffs = (points[rows] - centers[cols]) / h
    values = np.prod(kernel_profile(k.kind, diffs), axis=-1) / h**k.d
    keep = values > 0
    matrix = sparse.csr_matrix(
        (values[keep], (rows[keep], cols[keep])), shape=(n_points, n_centers)
    )
    matrix.sort_indices()
    return matrix


def _ret(values: np.ndarray, single: bool):
    return float(values[0]) if single else values


def density_estimate(data: Dataset, k: Kernel, bw: float, z):
    """f_hat_bw(z) = (1/n) sum_i K_bw(z - Z_i)."""
    if bw <= 0:
        raise ValueError("bandwidth must be > 0")
    pts, single = as_points(z, data.d)
    weights = kernel_matrix(k, bw, pts, data.z)
    return _ret(np.asarray(weights.sum(axis=1)).ravel() / data.n, single)


def regression_estimate(
    data: Dataset,
    k_num: Kernel,
    h: float,
    k_den: Kernel,
    w: float,
    z,
    floor: float = 1e-4,
):
    """Ratio estimator with numerator (k_num, h) and denominator max(f_hat_w, floor)."""
    if h <= 0 or w <= 0 or floor <= 0:
        raise ValueError("bandwidths and floor must be > 0")
    pts, single = as_points(z, data.d)
    numerator = kernel_matrix(k_num, h, pts, data.z) @ data.y / data.n
    denominator = np.asarray(density_estimate(data, k_den, w, pts), dtype=float)
    return _ret(numerator / np.maximum(denominator, floor), single)


def mu_n(data: Dataset, H_values, k: Kernel, h: float, z):
    """mu_n(z, theta) = (1/n) sum_i K_h(z - Z_i) H_theta(Z_i)."""
    pts, single = as_points(z, data.d)
    H_values = np.asarray(H_values, dtype=float).reshape(data.n)
    return _ret(kernel_matrix(k, h, pts, data.z) @ H_values / data.n, single)


def mu_dot_n(data: Dataset, Hdot_values, k: Kernel, h: float, z) -> np.ndarray:
    """mu_dot_n(z, theta) = (1/n) sum_i K_h(z - Z_i) Hdot_theta(Z_i); shape (q,) or (m, q)."""
    pts, single = as_points(z, data.d)
    Hdot_values = np.asarray(Hdot_values, dtype=float).reshape(data.n, -1)
    values = kernel_matrix(k, h, pts, data.z) @ Hdot_values / data.n
    return values[0] if single else values


def u_n(data: Dataset, H_values, k: Kernel, h: float, z):
    """U_n(z, theta) = (1/n) sum_i K_h(z - Z_i) [Y_i - H_theta(Z_i)]."""
    H_values = np.asarray(H_values, dtype=float).reshape(data.n)
    return mu_n(data, data.y - H_values, k, h, z)


def k2_norm_sq(k: Kernel, nodes: int = 32) -> float:
    """
    ||K_2||^2 = integral of (K * K)(v)^2 over [-2, 2]^d.

    Nested Gauss-Legendre: the inner integral runs over the overlap
    [-1, 1 - v] of the two supports, where the integrand is polynomial, so
    both levels are exact for the supported kernels.
    """
    t, wt = roots_legendre(nodes)
    # outer nodes on [0, 2]; K_2 is even
    v = 1.0 + t
    half_len = (2.0 - v) / 2.0
    u = -1.0 + half_len[:, None] * (t[None, :] + 1.0)
    inner = kernel_profile(k.kind, u + v[:, None]) * kernel_profile(k.kind, u)
    k2 = np.sum(inner * wt[None, :], axis=1) * half_len
    one_dim = 2.0 * float(np.sum(wt * k2**2))
    return one_dim**k.d


@dataclass(frozen=True)
class GridSmoother:
    """
    A dataset bound to a plan's grid.

    Attributes:
        kh: sparse (nodes x n) matrix of K_h(z_k - Z_i)
        density: f_hat_Zw at the nodes, floored
        floored_nodes: number of nodes where the floor was applied
        psi: quadrature weights of d psi_hat = dG / f_hat_Zw^2
    """

    data: Dataset
    plan: SmoothingPlan
    kh: sparse.csr_matrix
    density: np.ndarray
    floored_nodes: int
    psi: np.ndarray

    @classmethod
    def build(cls, data: Dataset, plan: SmoothingPlan) -> "GridSmoother":
        if data.d != plan.d:
            raise ValueError(f"dataset has d={data.d}, plan has d={plan.d}")
        nodes = plan.grid.nodes
        kh = kernel_matrix(plan.kernel, plan.h, nodes, data.z)
        raw = np.asarray(
            kernel_matrix(plan.kernel_star, plan.w, nodes, data.z).sum(axis=1)
        ).ravel() / data.n
        floored = int(np.count_nonzero(raw < plan.floor))
        density = np.maximum(raw, plan.floor)
        log_floored_nodes(logger, floored, nodes.shape[0])
        return cls(
            data=data,
            plan=plan,
            kh=kh,
            density=density,
            floored_nodes=floored,
            psi=plan.grid.weights / density**2,
        )

    @property
    def n(self) -> int:
        return self.data.n

    def smooth(self, values: np.ndarray) -> np.ndarray:
        """(1/n) sum_i K_h(z_k - Z_i) values_i at every node; values may be (n,) or (n, q)."""
        return self.kh @ np.asarray(values, dtype=float) / self.n

    def integrate(self, field_values: np.ndarray) -> float:
        """Quadrature of a node field against d psi_hat."""
        return float(np.sum(self.psi * field_values))


def check_bandwidth_rate(exponent: Optional[float], d: int) -> Optional[str]:
    """Log and return the (h3) warning for h ~ n^{-exponent}, if any."""
    message = h3_warning(exponent, d)
    if message:
        log_bandwidth_warning(logger, message, exponent if exponent is not None else math.nan)
    return message
