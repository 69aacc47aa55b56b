"""
Types for the kernel-smoothing layer: the observed sample, kernels,
bandwidths, the integrating measure and the plan that bundles them.

Example:
    ```python
    from berkson_md.schemas.smoothing import PlanConfig

    plan = PlanConfig(bandwidth_rule="case1", a=0.5, b=0.5).build(n=500, d=1)
    print(plan.bandwidths.h, plan.bandwidths.w)
    ```
"""

import math
from dataclasses import dataclass
from typing import Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

KernelKind = Literal["epanechnikov", "uniform"]
BandwidthRule = Literal["case1", "case2", "power", "explicit"]


@dataclass(frozen=True)
class Dataset:
    """
    Observed sample (Z_i, Y_i).

    Smoothing primitives accept n >= 1 so single-observation identities hold;
    estimation and testing require n >= 2 (checked where they need it).
    """

    z: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        z = np.asarray(self.z, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if z.ndim != 2 or z.shape[0] != y.shape[0]:
            raise ValueError(
                f"row count of z ({z.shape[0]}) must equal length of y ({y.shape[0]})"
            )
        if y.shape[0] < 1:
            raise ValueError("dataset must contain at least one observation")
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(y))):
            raise ValueError("dataset entries must be finite")
        z.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return int(self.y.shape[0])

    @property
    def d(self) -> int:
        return int(self.z.shape[1])

    def permuted(self, order: np.ndarray) -> "Dataset":
        return Dataset(z=self.z[order], y=self.y[order])


class Kernel(BaseModel):
    """Product kernel supported on [-1, 1]^d."""

    model_config = ConfigDict(frozen=True)

    kind: KernelKind = "epanechnikov"
    d: int = Field(default=1, ge=1)


class Bandwidths(BaseModel):
    """
    Numerator bandwidth h and denominator bandwidth w.

    Use ``Bandwidths.from_rule`` to apply one of the named rules; ``explicit``
    takes h and w as given.
    """

    model_config = ConfigDict(frozen=True)

    h: float = Field(gt=0)
    w: float = Field(gt=0)
    a: float = Field(default=0.5, gt=0)
    b: float = Field(default=0.5, gt=0)
    rule: BandwidthRule = "explicit"
    h_exponent: Optional[float] = None

    @classmethod
    def from_rule(
        cls,
        rule: BandwidthRule,
        n: int,
        d: int,
        a: float = 0.5,
        b: float = 0.5,
        h: Optional[float] = None,
        w: Optional[float] = None,
        h_exponent: Optional[float] = None,
    ) -> "Bandwidths":
        """
        Compute (h, w) for sample size n.

        Rules:
            case1: h = a n^{-1/3}, w = b (log n / n)^{1/5}
            case2: h = n^{-1/4.5}, w = n^{-1/6} (log n)^{1/6}
            power: h = a n^{-c}, w = b (log n / n)^{1/(d+4)}, c = h_exponent
            explicit: h and w as given

        Raises:
            ValueError: If n < 2 or a required value is missing
        """
        if n < 2:
            raise ValueError("bandwidth rules need n >= 2")
        if rule == "case1":
            return cls(
                h=a * n ** (-1.0 / 3.0),
                w=b * (math.log(n) / n) ** (1.0 / 5.0),
                a=a,
                b=b,
                rule=rule,
                h_exponent=1.0 / 3.0,
            )
        if rule == "case2":
            return cls(
                h=n ** (-1.0 / 4.5),
                w=n ** (-1.0 / 6.0) * math.log(n) ** (1.0 / 6.0),
                a=a,
                b=b,
                rule=rule,
                h_exponent=1.0 / 4.5,
            )
        if rule == "power":
            if h_exponent is None:
                raise ValueError("bandwidth rule 'power' requires h_exponent")
            return cls(
                h=a * n ** (-h_exponent),
                w=b * (math.log(n) / n) ** (1.0 / (d + 4)),
                a=a,
                b=b,
                rule=rule,
                h_exponent=h_exponent,
            )
        if h is None or w is None:
            raise ValueError("bandwidth rule 'explicit' requires h and w")
        implied = -math.log(h) / math.log(n) if h_exponent is None else h_exponent
        return cls(h=h, w=w, a=a, b=b, rule="explicit", h_exponent=implied)


def h3_upper_bound(d: int) -> float:
    """Supremum of admissible h exponents, min(1/(2d), 4/(d(d+4)))."""
    return min(1.0 / (2 * d), 4.0 / (d * (d + 4)))


def h3_warning(exponent: Optional[float], d: int) -> Optional[str]:
    """Warning text when h ~ n^{-exponent} violates the rate condition, else None."""
    if exponent is None:
        return None
    bound = h3_upper_bound(d)
    if not 0 < exponent < bound:
        return (
            f"bandwidth exponent {exponent:.4f} outside the rate condition (h3): "
            f"need 0 < a < min(1/(2d), 4/(d(d+4))) = {bound:.4f} for d={d}"
        )
    return None


@dataclass(frozen=True)
class GridMeasure:
    """
    Quadrature realization of the integrating measure G on a box I.

    ``weights`` realize integrals against dG; ``density`` holds g at the nodes
    (weights = cell volume * g).
    """

    lower: np.ndarray
    upper: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    density: np.ndarray

    def __post_init__(self) -> None:
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        lower = np.asarray(self.lower, dtype=float).reshape(-1)
        upper = np.asarray(self.upper, dtype=float).reshape(-1)
        weights = np.asarray(self.weights, dtype=float)
        density = np.asarray(self.density, dtype=float)
        if nodes.shape[1] != lower.shape[0] or lower.shape != upper.shape:
            raise ValueError("grid nodes and region bounds disagree in dimension")
        if weights.shape != (nodes.shape[0],) or density.shape != weights.shape:
            raise ValueError("grid weights and density must match the node count")
        if np.any(weights <= 0):
            raise ValueError("grid weights must be strictly positive")
        if np.any(nodes < lower) or np.any(nodes > upper):
            raise ValueError("grid nodes must lie inside the region")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "density", density)

    @property
    def d(self) -> int:
        return int(self.nodes.shape[1])

    @property
    def size(self) -> int:
        return int(self.weights.shape[0])

    @property
    def total_mass(self) -> float:
        return float(np.sum(self.weights))

    def scaled(self, factor: float) -> "GridMeasure":
        """Same nodes, measure multiplied by ``factor`` > 0."""
        return GridMeasure(
            lower=self.lower,
            upper=self.upper,
            nodes=self.nodes,
            weights=self.weights * factor,
            density=self.density * factor,
        )

    def relabeled(self, order: np.ndarray) -> "GridMeasure":
        return GridMeasure(
            lower=self.lower,
            upper=self.upper,
            nodes=self.nodes[order],
            weights=self.weights[order],
            density=self.density[order],
        )


def midpoint_grid(
    lower: Tuple[float, ...], upper: Tuple[float, ...], counts: Tuple[int, ...]
) -> GridMeasure:
    """Composite midpoint rule for Lebesgue measure (g = 1) on a box."""
    lower_arr = np.asarray(lower, dtype=float).reshape(-1)
    upper_arr = np.asarray(upper, dtype=float).reshape(-1)
    counts = tuple(int(c) for c in counts)
    if not (len(counts) == lower_arr.shape[0] == upper_arr.shape[0]):
        raise ValueError("region bounds and node counts must share the dimension")
    if any(c < 1 for c in counts):
        raise ValueError("node counts must be >= 1")
    axes = []
    volume = 1.0
    for lo, hi, m in zip(lower_arr, upper_arr, counts):
        step = (hi - lo) / m
        axes.append(lo + step * (np.arange(m) + 0.5))
        volume *= step
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([g.reshape(-1) for g in mesh], axis=-1)
    weights = np.full(nodes.shape[0], volume)
    return GridMeasure(
        lower=lower_arr,
        upper=upper_arr,
        nodes=nodes,
        weights=weights,
        density=np.ones(nodes.shape[0]),
    )


@dataclass(frozen=True)
class SmoothingPlan:
    """Kernels K (numerator) and K* (denominator), bandwidths, grid and floor."""

    kernel: Kernel
    kernel_star: Kernel
    bandwidths: Bandwidths
    grid: GridMeasure
    floor: float = 1e-4

    def __post_init__(self) -> None:
        if not (self.kernel.d == self.kernel_star.d == self.grid.d):
            raise ValueError("kernels and grid must share the design dimension")
        if self.floor <= 0:
            raise ValueError("density floor must be > 0")

    @property
    def d(self) -> int:
        return self.grid.d

    @property
    def h(self) -> float:
        return self.bandwidths.h

    @property
    def w(self) -> float:
        return self.bandwidths.w

    def with_grid(self, grid: GridMeasure) -> "SmoothingPlan":
        return SmoothingPlan(
            kernel=self.kernel,
            kernel_star=self.kernel_star,
            bandwidths=self.bandwidths,
            grid=grid,
            floor=self.floor,
        )


class PlanConfig(BaseModel):
    """
    Serializable recipe for a SmoothingPlan; the bandwidths depend on n, so
    the plan is built per dataset with ``build``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kernel: KernelKind = "epanechnikov"
    kernel_star: KernelKind = "epanechnikov"
    bandwidth_rule: BandwidthRule = "case1"
    a: float = Field(default=0.5, gt=0)
    b: float = Field(default=0.5, gt=0)
    h: Optional[float] = Field(default=None, gt=0)
    w: Optional[float] = Field(default=None, gt=0)
    h_exponent: Optional[float] = None
    grid_nodes: Optional[Tuple[int, ...]] = None
    region_lower: Optional[Tuple[float, ...]] = None
    region_upper: Optional[Tuple[float, ...]] = None
    floor: float = Field(default=1e-4, gt=0)

    @model_validator(mode="after")
    def check_rule_inputs(self) -> "PlanConfig":
        if self.bandwidth_rule == "explicit" and (self.h is None or self.w is None):
            raise ValueError("bandwidth_rule 'explicit' requires h and w")
        if self.bandwidth_rule == "power" and self.h_exponent is None:
            raise ValueError("bandwidth_rule 'power' requires h_exponent")
        return self

    @field_validator("grid_nodes")
    @classmethod
    def validate_grid_nodes(cls, v):
        if v is not None and any(c < 1 for c in v):
            raise ValueError("grid_nodes entries must be >= 1")
        return v

    def bandwidths(self, n: int, d: int) -> Bandwidths:
        return Bandwidths.from_rule(
            self.bandwidth_rule,
            n=n,
            d=d,
            a=self.a,
            b=self.b,
            h=self.h,
            w=self.w,
            h_exponent=self.h_exponent,
        )

    def grid(self, d: int) -> GridMeasure:
        """Midpoint grid: 401 nodes on [-1,1] for d=1, 101 per axis otherwise."""
        lower = self.region_lower or tuple([-1.0] * d)
        upper = self.region_upper or tuple([1.0] * d)
        counts = self.grid_nodes or tuple([401 if d == 1 else 101] * d)
        if len(counts) == 1 and d > 1:
            counts = tuple(counts * d)
        return midpoint_grid(lower, upper, counts)

    def build(self, n: int, d: int) -> SmoothingPlan:
        return SmoothingPlan(
            kernel=Kernel(kind=self.kernel, d=d),
            kernel_star=Kernel(kind=self.kernel_star, d=d),
            bandwidths=self.bandwidths(n, d),
            grid=self.grid(d),
            floor=self.floor,
        )
