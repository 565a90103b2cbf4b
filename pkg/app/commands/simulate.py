import logging

from app.commands import CommandContext
from app.models.experiment import ExperimentResult
from app.services.experiment_service import experiment_service

logger = logging.getLogger(__name__)


def run(ctx: CommandContext) -> bool:
    """One end-to-end trial at the configured scenario"""
    cfg = ctx.cfg
    axis = cfg.sweep.axis
    value = experiment_service.axis_value(cfg, axis)
    record = experiment_service.run_trial(cfg, axis, value, trial=0)
    result = ExperimentResult(experiment_id=cfg.output.experiment_id, axis=axis, records=[record])
    experiment_service.write_results(result, ctx.out_dir / "results.csv")
    logger.info(
        f"Trial done: sum secrecy {record.sum_secrecy:.4f}, worst user {record.worst_user_secrecy:.4f}, "
        f"BLER user {record.bler_user_mean:.4f} / Eve {record.bler_eve:.4f}, "
        f"CRLB ({record.crlb_theta_db:.2f}, {record.crlb_phi_db:.2f}) dB, feasible={bool(record.feasible)}"
    )
    return True
