import logging
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd
from openpyxl.styles import Font, PatternFill

from app.models.experiment import METRIC_COLUMNS, RESULT_COLUMNS
from app.utils.errors import SimulationError

logger = logging.getLogger(__name__)

SUMMARY_SHEET = "Summary"


class ReportService:
    """Aggregates results CSVs into per-point summary tables (CSV and styled workbook)"""

    def collect(self, directory: Union[str, Path]) -> pd.DataFrame:
        directory = Path(directory)
        files = sorted(p for p in directory.rglob("results*.csv") if p.is_file())
        if not files:
            raise SimulationError(f"no results*.csv files under {directory}")
        frames = []
        for path in files:
            frame = pd.read_csv(path)
            missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
            if missing:
                raise SimulationError(f"{path} is missing columns {missing}")
            frames.append(frame[RESULT_COLUMNS])
        logger.info(f"Collected {len(files)} results file(s) from {directory}")
        return pd.concat(frames, ignore_index=True)

    def summarize(self, frame: pd.DataFrame) -> pd.DataFrame:
        """Mean and standard error (std / sqrt(trials)) per experiment, axis and point"""
        rows: List[dict] = []
        keys = ["experiment_id", "axis_name", "axis_value"]
        for (experiment_id, axis_name, axis_value), group in frame.groupby(keys, sort=True):
            trials = len(group)
            row = {
                "experiment_id": experiment_id,
                "axis_name": axis_name,
                "axis_value": axis_value,
                "trials": trials,
            }
            for metric in METRIC_COLUMNS:
                values = group[metric].to_numpy(dtype=np.float64)
                row[f"{metric}_mean"] = float(np.mean(values))
                row[f"{metric}_se"] = (
                    float(np.std(values, ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0
                )
            row["feasible_fraction"] = float(group["feasible"].mean())
            rows.append(row)
        return pd.DataFrame(rows)

    def _write_workbook(self, summary: pd.DataFrame, path: Path) -> None:
        with pd.ExcelWriter(path, engine="openpyxl") as writer:
            summary.to_excel(writer, sheet_name=SUMMARY_SHEET, index=False)
            worksheet = writer.sheets[SUMMARY_SHEET]

            # Auto-adjust column widths
            for column in worksheet.columns:
                width = max(len(str(cell.value)) for cell in column if cell.value is not None)
                worksheet.column_dimensions[column[0].column_letter].width = min(width + 2, 50)

            header_font = Font(bold=True, color="FFFFFF")
            header_fill = PatternFill(start_color="366092", end_color="366092", fill_type="solid")
            for cell in worksheet[1]:
                cell.font = header_font
                cell.fill = header_fill

    def write_report(self, directory: Union[str, Path]) -> pd.DataFrame:
        directory = Path(directory)
        try:
            summary = self.summarize(self.collect(directory))
            summary.to_csv(directory / "summary.csv", index=False, lineterminator="\n", encoding="utf-8")
            self._write_workbook(summary, directory / "summary.xlsx")
        except Exception as e:
            logger.error(f"Failed to build report in {directory}: {e}")
            raise
        logger.info(f"Summary written for {len(summary)} point(s) in {directory}")
        return summary


# Global instance
report_service = ReportService()
