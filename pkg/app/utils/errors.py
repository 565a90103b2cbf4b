"""
Exception types raised by the simulation services.
"""

from typing import Any, Dict, Optional


class SimulationError(Exception):
    """Base class for every error raised inside the simulator"""


class InvalidParameterError(SimulationError, ValueError):
    pass


class ShapeMismatchError(SimulationError, ValueError):
    pass


class NoJammingSubspaceError(SimulationError):
    """Raised when the legitimate channel leaves no null space for jamming"""

    def __init__(self, rows: int, cols: int, rank: int):
        self.rows = rows
        self.cols = cols
        self.rank = rank
        super().__init__(
            f"no jamming subspace: channel is {rows}x{cols} with numerical rank {rank}"
        )


class AsymmetricMatrixError(SimulationError, ValueError):
    pass


class NotPositiveDefiniteError(SimulationError, ValueError):
    pass


class RankDeficientPerturbationError(SimulationError):
    """U matrix built from the perturbations lacks full column rank; draw new ones"""


class DivergenceEstimationError(SimulationError):
    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None):
        self.diagnostics = diagnostics or {}
        super().__init__(f"{message} (diagnostics: {self.diagnostics})")


class TrainingDivergedError(SimulationError):
    def __init__(self, stage: str, epoch: int, last_finite_loss: Optional[float]):
        self.stage = stage
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss
        super().__init__(
            f"{stage} loss became NaN at epoch {epoch} "
            f"(last finite loss: {last_finite_loss})"
        )


class MissingForwardCacheError(SimulationError):
    pass


class ConfigError(SimulationError):
    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None):
        self.key = key
        self.line = line
        location = ""
        if key is not None:
            location += f" key '{key}'"
        if line is not None:
            location += f" (line {line})"
        super().__init__(f"{message}{':' if location else ''}{location}")
