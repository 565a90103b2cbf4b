from enum import Enum
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.channel import AngleState, ChannelRealization, CsiEstimate
from app.models.fisher import SensingModel
from app.models.training import TrainingScenario

RESULT_COLUMNS = [
    "experiment_id",
    "axis_name",
    "axis_value",
    "trial",
    "seed",
    "sum_secrecy",
    "worst_user_secrecy",
    "bler_user_mean",
    "bler_eve",
    "crlb_theta_db",
    "crlb_phi_db",
    "feasible",
]

METRIC_COLUMNS = [
    "sum_secrecy",
    "worst_user_secrecy",
    "bler_user_mean",
    "bler_eve",
    "crlb_theta_db",
    "crlb_phi_db",
]

TRAINING_LOG_COLUMNS = ["epoch", "loss", "sum_secrecy", "crlb_theta_db", "crlb_phi_db", "accepted"]


class SweepAxis(str, Enum):
    SNR_DB = "snr_db"
    RHO_CSI = "rho_csi"
    CRLB_BUDGET_DB = "crlb_budget_db"
    PN_VARIANCE = "pn_variance"
    FRAC_COMM_ONLY = "frac_comm_only"
    N_SUBCARRIERS = "n_subcarriers"

    @property
    def index(self) -> int:
        return list(SweepAxis).index(self)


class ExperimentKind(str, Enum):
    SWEEP = "sweep"
    TRADEOFF = "tradeoff"
    ROBUSTNESS = "robustness"


class SweepSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    axis: SweepAxis
    points: List[float]
    trials: int = Field(..., ge=1)
    seed: int = Field(..., ge=0)

    @field_validator("points")
    @classmethod
    def _non_empty(cls, value):
        if not value:
            raise ValueError("a sweep needs at least one point")
        return value


class TrialRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    experiment_id: str
    axis_name: str
    axis_value: float
    trial: int
    seed: int
    sum_secrecy: float
    worst_user_secrecy: float
    bler_user_mean: float
    bler_eve: float
    crlb_theta_db: float
    crlb_phi_db: float
    feasible: int


class PointSummary(BaseModel):
    model_config = ConfigDict(frozen=True)

    axis_value: float
    trials: int
    mean: Dict[str, float]
    stderr: Dict[str, float]
    feasible_fraction: float
    infeasible: bool


class ExperimentResult(BaseModel):
    model_config = ConfigDict(frozen=True)

    experiment_id: str
    axis: SweepAxis
    records: List[TrialRecord]

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame([r.model_dump() for r in self.records], columns=RESULT_COLUMNS)
        return frame.sort_values(["axis_value", "trial"], kind="stable").reset_index(drop=True)

    def raw(self, metric: str, axis_value: float) -> np.ndarray:
        return np.asarray(
            [getattr(r, metric) for r in self.records if r.axis_value == axis_value], dtype=np.float64
        )

    def summaries(self) -> List[PointSummary]:
        out = []
        points = sorted({r.axis_value for r in self.records})
        for value in points:
            rows = [r for r in self.records if r.axis_value == value]
            means, errors = {}, {}
            for metric in METRIC_COLUMNS:
                values = np.asarray([getattr(r, metric) for r in rows], dtype=np.float64)
                means[metric] = float(np.mean(values))
                errors[metric] = (
                    float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
                )
            feasible = float(np.mean([r.feasible for r in rows]))
            out.append(
                PointSummary(
                    axis_value=value,
                    trials=len(rows),
                    mean=means,
                    stderr=errors,
                    feasible_fraction=feasible,
                    infeasible=feasible == 0.0,
                )
            )
        return out


class TrialContext(BaseModel):
    """Everything one Monte Carlo trial draws before a policy designs its beams"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    trial: int
    seed: int
    channel: ChannelRealization
    csi: CsiEstimate
    angles: AngleState
    eve_set: Optional[np.ndarray] = None
    scenario: TrainingScenario
    true_sensing: SensingModel
    streams: Dict[str, np.random.Generator]
