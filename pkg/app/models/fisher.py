from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.channel import AngleParameter, ArrayGeometry


class FimSource(str, Enum):
    CLOSED_FORM = "closed_form"
    COVARIANCE_FORM = "covariance_form"
    NONPARAMETRIC = "nonparametric"


class CrlbConvention(str, Enum):
    SCALAR = "scalar"
    MATRIX = "matrix"


class FimScaling(str, Enum):
    POWER = "power"
    SNR = "snr"


class PerturbationDesign(str, Enum):
    AXIAL = "axial"
    RANDOM = "random"


class FimPipelineKind(str, Enum):
    CLOSED_FORM = "closed_form"
    NONPARAMETRIC = "nonparametric"


class SensingModel(BaseModel):
    """Steering response G and its angle derivatives A_theta, A_phi"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    G: np.ndarray
    dG_dtheta: np.ndarray
    dG_dphi: np.ndarray
    sigma_s2: float = Field(1.0, gt=0)
    snr_sense: float = Field(1.0, ge=0)
    scaling: FimScaling = FimScaling.POWER
    noise_cov: Optional[np.ndarray] = None
    # where G was evaluated; needed to draw echoes at perturbed angles
    geometry: Optional[ArrayGeometry] = None
    theta: float = 0.0
    phi: float = 0.0

    @model_validator(mode="after")
    def _check(self):
        if self.dG_dtheta.shape != self.G.shape or self.dG_dphi.shape != self.G.shape:
            raise ValueError("steering derivatives must match the shape of G")
        if self.noise_cov is not None:
            n = self.G.shape[0]
            if self.noise_cov.shape != (n, n):
                raise ValueError(f"noise_cov must be {n}x{n}")
        return self

    def derivative(self, which) -> np.ndarray:
        return self.dG_dtheta if AngleParameter(which) == AngleParameter.THETA else self.dG_dphi


class PerturbationSet(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    deltas: np.ndarray
    scale: float = Field(0.05, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.deltas.ndim != 2:
            raise ValueError("deltas must be a (D, d) array")
        D, d = self.deltas.shape
        if D < d * (d + 1) // 2:
            raise ValueError(f"need at least d(d+1)/2 = {d * (d + 1) // 2} perturbations, got {D}")
        return self

    @property
    def d(self) -> int:
        return self.deltas.shape[1]

    @property
    def D(self) -> int:
        return self.deltas.shape[0]


class FimEstimate(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    J: np.ndarray
    source: FimSource
    convention: CrlbConvention = CrlbConvention.SCALAR
    f_vec: Optional[np.ndarray] = None
    U: Optional[np.ndarray] = None
    d_vec: Optional[np.ndarray] = None
    crlb_theta: float = float("inf")
    crlb_phi: float = float("inf")
    converged: bool = True

    @property
    def trace(self) -> float:
        return float(np.trace(self.J))

    @property
    def crlb_db(self):
        return to_db(self.crlb_theta), to_db(self.crlb_phi)


def to_db(value: float) -> float:
    if value == float("inf"):
        return float("inf")
    if value <= 0:
        return float("-inf")
    return float(10.0 * np.log10(value))


def from_db(value_db: float) -> float:
    if value_db == float("inf"):
        return float("inf")
    return float(10.0 ** (value_db / 10.0))


class DiscriminatorConfig(BaseModel):
    """Shape and schedule of the Donsker-Varadhan critics"""

    model_config = ConfigDict(frozen=True)

    hidden: int = Field(128, ge=1)
    steps: int = Field(300, ge=1)
    step_size: float = Field(1e-3, gt=0)
    batch: int = Field(128, ge=1)
    n_samples: int = Field(5000, ge=10)
    eval_fraction: float = Field(0.2, gt=0, lt=1)
    threads: int = Field(1, ge=1)
