from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class PowerMode(str, Enum):
    AVERAGE = "average"
    PER_SUBCARRIER = "per_subcarrier"


class PowerAllocation(BaseModel):
    """comm_power is (K, N) (gamma / xi), jam_power is (N,) (zeta), p_max linear"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    comm_power: np.ndarray
    jam_power: np.ndarray
    p_max: float = Field(1000.0, gt=0)
    mode: PowerMode = PowerMode.AVERAGE

    @model_validator(mode="after")
    def _check(self):
        if self.comm_power.ndim != 2 or self.jam_power.ndim != 1:
            raise ValueError("comm_power must be (K, N) and jam_power (N,)")
        if self.comm_power.shape[1] != self.jam_power.shape[0]:
            raise ValueError("comm_power and jam_power disagree on N")
        if np.any(self.comm_power < 0) or np.any(self.jam_power < 0):
            raise ValueError("power entries must be non-negative")
        return self

    @property
    def n_sub(self) -> int:
        return self.jam_power.shape[0]

    @property
    def n_users(self) -> int:
        return self.comm_power.shape[0]

    def subcarrier_budget(self) -> float:
        """Budget one subcarrier may spend when power is spread evenly"""
        if self.mode == PowerMode.PER_SUBCARRIER:
            return self.p_max / self.n_sub
        return self.p_max


class TransmitFrame(BaseModel):
    """
    messages/symbols are (K, N); jam_samples is (N,); x is (N_t, N) once assembled.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    messages: np.ndarray
    symbols: np.ndarray
    jam_samples: np.ndarray
    x: Optional[np.ndarray] = None
    time_slots: int = Field(16, ge=1)


class ImpairmentParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    sigma_pn2: float = Field(0.0, ge=0)
    eps_iq: float = 0.0
    dtheta_iq: float = 0.0
    per_antenna: bool = True

    @property
    def mu(self) -> complex:
        half = self.dtheta_iq / 2.0
        return complex(np.cos(half), self.eps_iq * np.sin(half))

    @property
    def nu(self) -> complex:
        half = self.dtheta_iq / 2.0
        return complex(self.eps_iq * np.cos(half), -np.sin(half))

    @property
    def is_ideal(self) -> bool:
        return self.sigma_pn2 == 0 and self.eps_iq == 0 and self.dtheta_iq == 0
