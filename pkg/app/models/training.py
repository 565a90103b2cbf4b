from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.models.beamforming import BeamformingSolution, LogBase
from app.models.channel import AngleState, ArrayGeometry
from app.models.fisher import CrlbConvention, FimEstimate, SensingModel
from app.models.waveform import PowerAllocation, PowerMode


class TrainingMode(str, Enum):
    ALGORITHM1 = "algorithm1"
    MULTICARRIER = "multicarrier"


class TrainingObjective(str, Enum):
    SUM = "sum"
    WORST_USER = "worst_user"


class TrainConfig(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    epochs_stage1: int = Field(200, ge=1)
    iters_stage2: int = Field(20, ge=1)
    batch: int = Field(128, ge=1)
    step_size: float = Field(1e-3, gt=0)
    lambda_crlb: float = Field(100.0, ge=0)
    crlb0_theta: float = Field(1e-3, gt=0)
    crlb0_phi: float = Field(1e-3, gt=0)
    msg_alphabet: int = Field(4, ge=2)
    candidate_count: int = Field(16, ge=0)
    reinit_after: int = Field(5, ge=1)
    fj_step: float = Field(0.5, gt=0)
    rate_weight: float = Field(1.0, ge=0)
    jam_fraction: float = Field(0.2, ge=0, lt=1)
    objective: TrainingObjective = TrainingObjective.SUM
    eve_draws: int = Field(4, ge=1)
    train_sigma_pn2: float = Field(0.0, ge=0)
    quant_delta: float = Field(0.0, ge=0)
    # explicit FJ candidates (N_t,) replace the random null-space draws when given
    candidate_pool: Optional[List[np.ndarray]] = None


class FeatureVector(BaseModel):
    """[Re vec(H_hat), Im vec(H_hat), gamma..., zeta, theta, phi, n/N] for one subcarrier"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    values: np.ndarray
    n_users: int
    n_tx: int

    @model_validator(mode="after")
    def _check(self):
        expected = 2 * self.n_users * self.n_tx + 5
        if self.values.shape != (expected,):
            raise ValueError(f"feature vector must have length {expected}, got {self.values.shape}")
        return self


class SubcarrierAllocation(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_sub: int = Field(..., ge=1)
    comm_set: Tuple[int, ...]
    sense_set: Tuple[int, ...]

    @model_validator(mode="after")
    def _partition(self):
        comm, sense = set(self.comm_set), set(self.sense_set)
        if comm & sense:
            raise ValueError("communication-only and sensing sets overlap")
        if comm | sense != set(range(self.n_sub)):
            raise ValueError("allocation does not cover every subcarrier")
        return self

    def sense_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_sub, dtype=bool)
        mask[list(self.sense_set)] = True
        return mask


class TrainingLogEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    epoch: int
    loss: float
    sum_secrecy: float
    crlb_theta_db: float
    crlb_phi_db: float
    accepted: int


class Stage1Result(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    user_beams: np.ndarray
    log: List[TrainingLogEntry]
    decoder_accuracy: float
    encoder: Optional[object] = None
    decoder: Optional[object] = None
    mapper: Optional[object] = None
    fj_beam: Optional[np.ndarray] = None
    power: Optional[PowerAllocation] = None


class Stage2Result(BaseModel):
    """fj_beam is (N, N_t); feasible and fims are per subcarrier (None off the sensing set)"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    fj_beam: np.ndarray
    feasible: np.ndarray
    fims: List[Optional[FimEstimate]] = []
    accepted_count: int = 0
    log: List[TrainingLogEntry] = []


class TrainingOutcome(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    solution: BeamformingSolution
    log: List[TrainingLogEntry]
    feasible: np.ndarray
    crlb_theta: float
    crlb_phi: float
    encoder: Optional[object] = None


class NetworkBundle(BaseModel):
    """Trainable pieces of one run; decoder and mapper are only used by stage 1"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    encoder: object
    decoder: Optional[object] = None
    mapper: Optional[object] = None


class TrainingScenario(BaseModel):
    """
    What the transmitter knows while training: its geometry, the estimated
    angles, a sensing model evaluated there, the subcarrier split and its own
    draws of Eve channels, shape (draws, N, N_t, N_e).
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    geometry: ArrayGeometry
    angles: AngleState
    sensing: SensingModel
    allocation: SubcarrierAllocation
    design_eve: np.ndarray
    p_max: float = Field(1000.0, gt=0)
    power_mode: PowerMode = PowerMode.AVERAGE
    convention: CrlbConvention = CrlbConvention.SCALAR
    tau_bar: float = Field(1.0, ge=0, le=1)
    log_base: LogBase = LogBase.NATURAL

    @model_validator(mode="after")
    def _check(self):
        if self.design_eve.ndim != 4:
            raise ValueError("design_eve must be (draws, N, N_t, N_e)")
        if self.design_eve.shape[1] != self.allocation.n_sub:
            raise ValueError("design_eve disagrees with the allocation on N")
        return self
