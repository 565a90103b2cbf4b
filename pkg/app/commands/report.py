import logging

from app.commands import CommandContext
from app.services.report_service import report_service

logger = logging.getLogger(__name__)


def run(ctx: CommandContext) -> bool:
    summary = report_service.write_report(ctx.out_dir)
    logger.info(f"Report covers {summary['experiment_id'].nunique()} experiment(s)")
    return True
