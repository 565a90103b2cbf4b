from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


class Activation(str, Enum):
    RELU = "relu"
    SOFTMAX = "softmax"
    NONE = "none"


class EncoderKind(str, Enum):
    FC = "fc"
    DTTE = "dtte"
    TT = "tt"


class DenseLayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    in_dim: int = Field(..., ge=1)
    out_dim: int = Field(..., ge=1)
    activation: Activation = Activation.NONE
    batch_norm: bool = False


class TTLayerSpec(BaseModel):
    """Core k has shape (r_{k-1}, m_k, n_k, r_k); in_modes n_k, out_modes m_k"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    in_modes: Tuple[int, ...]
    out_modes: Tuple[int, ...]
    ranks: Tuple[int, ...]
    cores: Optional[List[np.ndarray]] = None

    @model_validator(mode="after")
    def _check(self):
        q = len(self.in_modes)
        if q < 1 or len(self.out_modes) != q:
            raise ValueError("in_modes and out_modes must have the same non-zero length")
        if len(self.ranks) != q + 1:
            raise ValueError(f"need {q + 1} ranks, got {len(self.ranks)}")
        if self.ranks[0] != 1 or self.ranks[-1] != 1:
            raise ValueError("boundary ranks must equal 1")
        if any(r < 1 for r in self.ranks):
            raise ValueError("ranks must be positive")
        if self.cores is not None:
            for k, core in enumerate(self.cores):
                expected = (self.ranks[k], self.out_modes[k], self.in_modes[k], self.ranks[k + 1])
                if core.shape != expected:
                    raise ValueError(f"core {k} has shape {core.shape}, expected {expected}")
        return self

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_modes))

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.out_modes))


class QuantizationSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta: float = Field(..., gt=0)


class AdamState(BaseModel):
    """Hyper-parameters plus the torch optimizer that owns the moment buffers"""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    step_size: float = Field(1e-3, gt=0)
    beta1: float = Field(0.9, ge=0, lt=1)
    beta2: float = Field(0.999, ge=0, lt=1)
    eps: float = Field(1e-8, gt=0)
    optimizer: Optional[object] = None

    @property
    def step_count(self) -> int:
        if self.optimizer is None:
            return 0
        steps = [s.get("step", 0) for s in self.optimizer.state.values()]
        return int(max((float(s) for s in steps), default=0))


class EncoderArchitecture(BaseModel):
    """Everything needed to rebuild an encoder from a checkpoint"""

    model_config = ConfigDict(frozen=True)

    kind: EncoderKind = EncoderKind.DTTE
    in_dim: int = Field(..., ge=1)
    out_dim: int = Field(..., ge=1)
    hidden: int = Field(171, ge=1)
    tt_in_modes: Tuple[int, ...] = ()
    tt_out_modes: Tuple[int, ...] = ()
    tt_ranks: Tuple[int, ...] = ()
