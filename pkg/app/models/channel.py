from enum import Enum
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class SteeringMode(str, Enum):
    PLANAR = "planar"
    BISTATIC = "bistatic"


class PhaseReference(str, Enum):
    FIRST = "first"
    CENTER = "center"


class AngleParameter(str, Enum):
    THETA = "theta"
    PHI = "phi"


def default_tx_grid(n_tx: int) -> Tuple[int, int]:
    """(N_x, N_y) with N_y the largest divisor of N_t not above sqrt(N_t)"""
    n_y = 1
    for candidate in range(1, int(np.floor(np.sqrt(n_tx))) + 1):
        if n_tx % candidate == 0:
            n_y = candidate
    return n_tx // n_y, n_y


class ArrayGeometry(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_tx: int = Field(16, ge=1)
    n_rx: int = Field(4, ge=1)
    n_eve: int = Field(2, ge=1)
    spacing: float = Field(0.5, gt=0)
    tx_grid: Optional[Tuple[int, int]] = None
    mode: SteeringMode = SteeringMode.BISTATIC
    phase_reference: PhaseReference = PhaseReference.FIRST

    @model_validator(mode="after")
    def _resolve_grid(self):
        if self.tx_grid is None:
            object.__setattr__(self, "tx_grid", default_tx_grid(self.n_tx))
        n_x, n_y = self.tx_grid
        if n_x < 1 or n_y < 1 or n_x * n_y != self.n_tx:
            raise ValueError(f"tx_grid {self.tx_grid} does not factor n_tx={self.n_tx}")
        return self


class ChannelRealization(BaseModel):
    """
    Per-subcarrier channels.

    h_users has shape (N, K, N_t) with row k equal to h_k^H, so H_B @ f gives
    the received amplitudes. h_eve has shape (N, N_t, N_e) and Eve observes
    H_E^H x.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    h_users: np.ndarray
    h_eve: np.ndarray
    sigma_c2: float = Field(1.0, gt=0)
    sigma_e2: float = Field(1.0, gt=0)
    sigma_s2: float = Field(1.0, gt=0)
    alpha: complex = 1.0 + 0.0j

    @model_validator(mode="after")
    def _check_shapes(self):
        if self.h_users.ndim != 3 or self.h_eve.ndim != 3:
            raise ValueError("channels must be stacked per subcarrier as 3-D arrays")
        if self.h_users.shape[0] != self.h_eve.shape[0]:
            raise ValueError("user and Eve channels disagree on the subcarrier count")
        if self.h_users.shape[2] != self.h_eve.shape[1]:
            raise ValueError("user and Eve channels disagree on N_t")
        return self

    @property
    def n_sub(self) -> int:
        return self.h_users.shape[0]

    @property
    def n_users(self) -> int:
        return self.h_users.shape[1]

    @property
    def n_tx(self) -> int:
        return self.h_users.shape[2]

    def with_users(self, h_users: np.ndarray) -> "ChannelRealization":
        return self.model_copy(update={"h_users": h_users})

    def subcarrier(self, n: int) -> "ChannelRealization":
        """Single-subcarrier view, N = 1"""
        return self.model_copy(
            update={"h_users": self.h_users[n : n + 1], "h_eve": self.h_eve[n : n + 1]}
        )


class CsiEstimate(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    h_hat: np.ndarray
    delta_h: np.ndarray
    rho_csi: float = Field(0.0, ge=0)


class AngleState(BaseModel):
    model_config = ConfigDict(frozen=True)

    theta: float = Field(np.deg2rad(10.0), gt=-np.pi / 2, lt=np.pi / 2)
    phi: float = Field(np.deg2rad(15.0), gt=-np.pi / 2, lt=np.pi / 2)
    theta_hat: Optional[float] = None
    phi_hat: Optional[float] = None
    sigma_theta2: float = Field(0.0, ge=0)
    sigma_phi2: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _default_estimates(self):
        if self.theta_hat is None:
            object.__setattr__(self, "theta_hat", self.theta)
        if self.phi_hat is None:
            object.__setattr__(self, "phi_hat", self.phi)
        return self
