import logging

from app.commands import CommandContext
from app.models.experiment import ExperimentKind, SweepSpec
from app.services.experiment_service import experiment_service

logger = logging.getLogger(__name__)


def run(ctx: CommandContext) -> bool:
    """Writes the results CSVs, then reports whether the experiment's trend gate held"""
    cfg = ctx.cfg
    spec = SweepSpec(axis=cfg.sweep.axis, points=list(cfg.sweep.points), trials=cfg.sweep.trials, seed=cfg.seed)
    kind = cfg.sweep.experiment

    if kind == ExperimentKind.ROBUSTNESS:
        results = experiment_service.impairment_robustness(spec, cfg, ctx.threads)
        for name, result in results.items():
            experiment_service.write_results(result, ctx.out_dir / f"results_{name}.csv")
            summaries = result.summaries()
            logger.info(
                f"{name}: secrecy degradation {experiment_service.degradation(result):.4f} from pn_variance "
                f"{summaries[0].axis_value} to {summaries[-1].axis_value}"
            )
        return experiment_service.robustness_gate(results)

    if kind == ExperimentKind.TRADEOFF:
        result = experiment_service.crlb_secrecy_tradeoff(spec, cfg, ctx.threads)
        experiment_service.write_results(result, ctx.out_dir / "results_tradeoff.csv")
    else:
        result = experiment_service.run_sweep(spec, cfg, ctx.threads)
        experiment_service.write_results(result, ctx.out_dir / "results.csv")

    for point in result.summaries():
        logger.info(
            f"{spec.axis.value}={point.axis_value}: sum secrecy {point.mean['sum_secrecy']:.4f} "
            f"+- {point.stderr['sum_secrecy']:.4f}, feasible {point.feasible_fraction:.2f}"
        )
    return experiment_service.sweep_gate(result)
