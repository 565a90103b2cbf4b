"""
Experiment configuration sections. Defaults mirror the simulation parameter table.
"""

from typing import Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from app.models.beamforming import BeamPolicy, LogBase
from app.models.channel import PhaseReference, SteeringMode
from app.models.experiment import ExperimentKind, SweepAxis
from app.models.fisher import CrlbConvention, FimPipelineKind, FimScaling, PerturbationDesign
from app.models.neural import EncoderKind
from app.models.training import TrainingMode, TrainingObjective
from app.models.waveform import PowerMode


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)


class RunSection(_Section):
    seed: int = Field(7, ge=0)
    policy: BeamPolicy = BeamPolicy.ZF_FJ


class GeometrySection(_Section):
    n_tx: int = Field(16, ge=1)
    n_rx: int = Field(4, ge=1)
    n_eve: int = Field(2, ge=1)
    spacing: float = Field(0.5, gt=0)
    tx_grid_x: int = Field(0, ge=0)
    tx_grid_y: int = Field(0, ge=0)
    steering_mode: SteeringMode = SteeringMode.BISTATIC
    phase_reference: PhaseReference = PhaseReference.FIRST


class ScenarioSection(_Section):
    n_users: int = Field(2, ge=1)
    n_subcarriers: int = Field(64, ge=1)
    theta_deg: float = Field(10.0, gt=-90, lt=90)
    phi_deg: float = Field(15.0, gt=-90, lt=90)
    sigma_theta2: float = Field(0.0, ge=0)
    sigma_phi2: float = Field(0.0, ge=0)
    sigma_c2: float = Field(1.0, gt=0)
    sigma_e2: float = Field(1.0, gt=0)
    sigma_s2: float = Field(1.0, gt=0)
    alpha_re: float = 1.0
    alpha_im: float = 0.0
    rho_csi: float = Field(0.0, ge=0)
    eve_draws: int = Field(8, ge=1)
    design_eve_draws: int = Field(4, ge=1)
    tau_bar: float = Field(1.0, ge=0, le=1)
    log_base: LogBase = LogBase.NATURAL


class PowerSection(_Section):
    p_max_db: float = 30.0
    mode: PowerMode = PowerMode.AVERAGE
    jam_fraction: float = Field(0.2, ge=0, lt=1)
    kappa_grid: Tuple[float, ...] = (0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

    @field_validator("kappa_grid")
    @classmethod
    def _fractions(cls, value):
        if not value or any(k < 0 or k >= 1 for k in value):
            raise ValueError("kappa_grid entries must lie in [0, 1)")
        return tuple(sorted(value))


class SensingSection(_Section):
    crlb0_theta_db: float = -30.0
    crlb0_phi_db: float = -30.0
    convention: CrlbConvention = CrlbConvention.SCALAR
    scaling: FimScaling = FimScaling.POWER
    snr_sense_db: float = 0.0
    time_slots: int = Field(16, ge=1)
    fim_pipeline: FimPipelineKind = FimPipelineKind.CLOSED_FORM


class FisherSection(_Section):
    n_samples: int = Field(5000, ge=10)
    perturbations: int = Field(4, ge=3)
    design: PerturbationDesign = PerturbationDesign.AXIAL
    scale: float = Field(0.05, gt=0)
    steps: int = Field(300, ge=1)
    batch: int = Field(128, ge=1)
    hidden: int = Field(128, ge=1)
    step_size: float = Field(1e-3, gt=0)
    validate_steps: int = Field(1500, ge=1)
    validate_zeta: float = Field(2.0, gt=0)
    validate_seeds: int = Field(5, ge=1)
    validate_n_tx: int = Field(4, ge=1)
    validate_n_rx: int = Field(4, ge=1)
    tolerance: float = Field(0.15, gt=0)


class ImpairmentSection(_Section):
    sigma_pn2: float = Field(0.0, ge=0)
    eps_iq: float = 0.0
    dtheta_iq_deg: float = 0.0
    per_antenna: bool = True
    train_sigma_pn2: float = Field(0.2, ge=0)


class TrainingSection(_Section):
    mode: TrainingMode = TrainingMode.MULTICARRIER
    encoder: EncoderKind = EncoderKind.DTTE
    epochs_stage1: int = Field(200, ge=1)
    iters_stage2: int = Field(20, ge=1)
    batch: int = Field(128, ge=1)
    step_size: float = Field(1e-3, gt=0)
    lambda_crlb: float = Field(100.0, ge=0)
    rate_weight: float = Field(1.0, ge=0)
    msg_alphabet: int = Field(4, ge=2)
    candidate_count: int = Field(16, ge=1)
    reinit_after: int = Field(5, ge=1)
    fj_step: float = Field(0.5, gt=0)
    objective: TrainingObjective = TrainingObjective.SUM
    frac_comm_only: float = Field(0.0, ge=0, le=1)
    quant_delta: float = Field(0.0, ge=0)
    hidden: int = Field(171, ge=1)
    tt_out_dim: int = Field(64, ge=1)
    tt_rank: int = Field(5, ge=1)
    eve_draws: int = Field(4, ge=1)


class SweepSection(_Section):
    experiment: ExperimentKind = ExperimentKind.SWEEP
    axis: SweepAxis = SweepAxis.RHO_CSI
    points: Tuple[float, ...] = (0.0, 0.05, 0.1, 0.2)
    trials: int = Field(20, ge=1)
    block_len: int = Field(64, ge=1)
    bler_blocks: int = Field(4, ge=1)

    @field_validator("points")
    @classmethod
    def _non_empty(cls, value):
        if not value:
            raise ValueError("points must not be empty")
        return tuple(value)


class OutputSection(_Section):
    directory: str = "results"
    experiment_id: str = "isac"


class RunConfig(_Section):
    run: RunSection = RunSection()
    geometry: GeometrySection = GeometrySection()
    scenario: ScenarioSection = ScenarioSection()
    power: PowerSection = PowerSection()
    sensing: SensingSection = SensingSection()
    fisher: FisherSection = FisherSection()
    impairments: ImpairmentSection = ImpairmentSection()
    training: TrainingSection = TrainingSection()
    sweep: SweepSection = SweepSection()
    output: OutputSection = OutputSection()

    @property
    def seed(self) -> int:
        return self.run.seed

    def with_value(self, section: str, key: str, value) -> "RunConfig":
        """Copy with one field replaced, re-validated"""
        data = self.model_dump()
        data[section][key] = value
        return RunConfig.model_validate(data)


SECTION_NAMES = tuple(RunConfig.model_fields.keys())
