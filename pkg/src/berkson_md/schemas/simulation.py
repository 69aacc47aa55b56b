"""
Data-generating process settings for the simulation studies.

Case 1: d = q = 1, Z ~ Uniform[-1, 1], null family m_theta(x) = theta x.
Case 2: d = q = 2, Z ~ Uniform[-1, 1]^2, null family
m_theta(x) = theta_1 x_1 + exp(theta_2 x_2).

In both cases X = Z + eta, Y = mu(X) + epsilon with eta and epsilon
independent centered Gaussians of standard deviation 0.1 per coordinate
unless overridden.
"""

from typing import Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ModelId = Literal["0", "1", "2", "3", "local-alt"]

DEFAULT_THETA = {1: (1.0,), 2: (1.0, 2.0)}
NULL_FAMILY = {1: "linear-1d", 2: "case2-2d"}
DEFAULT_PERTURBATION = {1: "x1-squared-centered", 2: "x1-x2-product"}


class DGPSpec(BaseModel):
    """
    One data-generating configuration.

    Attributes:
        case (int): 1 or 2
        model_id (str): "0" (null) to "3", or "local-alt"
        n (int): Sample size, at least 10
        seed (int): 64-bit stream key
        true_theta (tuple[float, ...]): theta_0 of the null family
        sigma_eps, sigma_eta (float): Error and Berkson noise scales
        r_fn (str): Registered perturbation r(x) for local alternatives
        gamma_n (float): Perturbation scale; 1/sqrt(n h^{d/2}) when unset
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    case: Literal[1, 2] = 1
    model_id: ModelId = "0"
    n: int = Field(default=500, ge=10)
    seed: int = Field(default=20240101, ge=0, lt=2**64)
    true_theta: Optional[Tuple[float, ...]] = None
    sigma_eps: float = Field(default=0.1, ge=0)
    sigma_eta: float = Field(default=0.1, ge=0)
    r_fn: Optional[str] = None
    gamma_n: Optional[float] = Field(default=None, ge=0)

    @field_validator("model_id", mode="before")
    @classmethod
    def coerce_model_id(cls, v):
        return str(v) if isinstance(v, int) else v

    @model_validator(mode="before")
    @classmethod
    def fill_defaults(cls, data):
        if not isinstance(data, dict):
            return data
        data = dict(data)
        case = data.get("case", 1)
        if data.get("true_theta") is None and case in DEFAULT_THETA:
            data["true_theta"] = DEFAULT_THETA[case]
        if str(data.get("model_id", "0")) == "local-alt" and data.get("r_fn") is None:
            data["r_fn"] = DEFAULT_PERTURBATION.get(case, "x1-squared-centered")
        return data

    @model_validator(mode="after")
    def check_theta_length(self) -> "DGPSpec":
        if len(self.true_theta) != self.d:
            raise ValueError(f"true_theta must have length {self.d} for case {self.case}")
        return self

    @property
    def d(self) -> int:
        return self.case

    @property
    def null_family(self) -> str:
        return NULL_FAMILY[self.case]

    @property
    def outside_theory(self) -> bool:
        """Case-1 model 3 has a discontinuous regression function."""
        return self.case == 1 and self.model_id == "3"

    def with_seed(self, seed: int) -> "DGPSpec":
        return self.model_copy(update={"seed": seed})
