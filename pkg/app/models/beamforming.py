from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.waveform import PowerAllocation


class LogBase(str, Enum):
    NATURAL = "e"
    BINARY = "2"


class BeamPolicy(str, Enum):
    ZF_FJ = "zf_fj"
    ISOTROPIC = "isotropic"
    FJ_OFF = "fj_off"
    LEARNED = "learned"


class BeamformingSolution(BaseModel):
    """
    user_beams is (N, N_t, K) with unit-norm columns f_k^(n); fj_beam is (N, N_t).

    image_beams / image_fj are only set for hardware-distorted evaluation copies
    and carry the conjugate (image) component of the transmit signal.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    user_beams: np.ndarray
    fj_beam: np.ndarray
    pa: PowerAllocation
    image_beams: Optional[np.ndarray] = None
    image_fj: Optional[np.ndarray] = None

    @model_validator(mode="after")
    def _check(self):
        if self.user_beams.ndim != 3 or self.fj_beam.ndim != 2:
            raise ValueError("user_beams must be (N, N_t, K) and fj_beam (N, N_t)")
        n_sub, n_tx, n_users = self.user_beams.shape
        if self.fj_beam.shape != (n_sub, n_tx):
            raise ValueError("fj_beam shape disagrees with user_beams")
        if self.pa.comm_power.shape != (n_users, n_sub):
            raise ValueError("power allocation shape disagrees with the beams")
        return self

    @property
    def n_sub(self) -> int:
        return self.user_beams.shape[0]

    @property
    def distorted(self) -> bool:
        return self.image_beams is not None


class RateReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    user_rates: np.ndarray
    eve_rates: np.ndarray
    secrecy: np.ndarray
    sum_secrecy: float
    tau_bar: float = Field(1.0, ge=0, le=1)
    log_base: LogBase = LogBase.NATURAL

    @property
    def worst_user_secrecy(self) -> float:
        return float(np.min(np.sum(self.secrecy, axis=1)))
