import logging

from app.commands import CommandContext
from app.models.neural import QuantizationSpec
from app.models.training import TrainingMode
from app.networks.checkpoint import save_encoder
from app.services.experiment_service import experiment_service
from app.services.training_service import training_service

logger = logging.getLogger(__name__)


def run(ctx: CommandContext) -> bool:
    cfg = ctx.cfg
    t = cfg.training
    trial = experiment_service.prepare_trial(cfg, cfg.sweep.axis, 0)
    rng = trial.streams["training"]
    nets = training_service.build_networks(
        t.encoder, cfg.scenario.n_users, cfg.geometry.n_tx, rng, t.msg_alphabet, t.hidden, t.tt_out_dim, t.tt_rank
    )
    train_cfg = experiment_service.train_config(cfg)
    pipeline = experiment_service.fim_pipeline(cfg, trial.streams["design"], ctx.threads)
    logger.info(
        f"Training {t.encoder.value} encoder ({nets.encoder.parameter_count()} parameters), "
        f"mode={t.mode.value}, FIM {cfg.sensing.fim_pipeline.value}"
    )

    if t.mode == TrainingMode.ALGORITHM1:
        outcome = training_service.train_algorithm1(
            train_cfg, trial.channel, trial.csi, nets, rng, trial.scenario, pipeline
        )
        quantization = None
    else:
        outcome = training_service.multicarrier_train(
            train_cfg, trial.channel, trial.csi, nets, pipeline, rng, trial.scenario
        )
        quantization = QuantizationSpec(delta=t.quant_delta) if t.quant_delta > 0 else None

    training_service.write_log(outcome.log, ctx.out_dir / "training_log.csv")
    save_encoder(ctx.out_dir / "encoder.pt", outcome.encoder, quantization)
    logger.info(
        f"Training finished: CRLB ({outcome.crlb_theta:.3e}, {outcome.crlb_phi:.3e}), "
        f"feasible on {int(outcome.feasible.sum())}/{len(outcome.feasible)} subcarrier(s)"
    )
    return True
