"""
Dense and tensor-train layers.

TT cores use the (r_{k-1}, m_k, n_k, r_k) layout with C-order mode indices:
the first input mode is the most significant digit of the flat input index,
and likewise for outputs.
"""

import logging
from typing import Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy import linalg
from torch import nn

from app.models.neural import Activation, DenseLayerSpec, QuantizationSpec, TTLayerSpec
from app.utils.errors import ShapeMismatchError

logger = logging.getLogger(__name__)

BN_MOMENTUM = 0.1  # torch convention: running = 0.9 * running + 0.1 * batch


def quantize_values(values, delta: float):
    """Delta * round(values / Delta) with ties rounded away from zero"""
    if isinstance(values, torch.Tensor):
        return torch.sign(values) * torch.floor(torch.abs(values) / delta + 0.5) * delta
    values = np.asarray(values, dtype=np.float64)
    return np.sign(values) * np.floor(np.abs(values) / delta + 0.5) * delta


class DenseLayer(nn.Module):
    """Linear -> optional BatchNorm (no affine) -> activation"""

    def __init__(self, spec: DenseLayerSpec):
        super().__init__()
        self.spec = spec
        self.linear = nn.Linear(spec.in_dim, spec.out_dim, dtype=torch.float64)
        self.norm = (
            nn.BatchNorm1d(spec.out_dim, affine=False, momentum=BN_MOMENTUM, dtype=torch.float64)
            if spec.batch_norm
            else None
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.spec.in_dim:
            raise ShapeMismatchError(f"dense layer expects width {self.spec.in_dim}, got {x.shape[-1]}")
        out = self.linear(x)
        if self.norm is not None:
            if self.training and out.shape[0] == 1:
                # a single row has no batch statistics; fall back to the running ones
                out = nn.functional.batch_norm(
                    out, self.norm.running_mean, self.norm.running_var, training=False, eps=self.norm.eps
                )
            else:
                out = self.norm(out)
        if self.spec.activation == Activation.RELU:
            out = torch.relu(out)
        elif self.spec.activation == Activation.SOFTMAX:
            out = torch.softmax(out, dim=-1)
        return out


def tt_contract(
    cores: Sequence[torch.Tensor],
    x: torch.Tensor,
    in_modes: Sequence[int],
    out_modes: Sequence[int],
) -> torch.Tensor:
    """y = W x for a batch x of shape (B, prod(in_modes)), contracting one core at a time"""
    in_dim = int(np.prod(in_modes))
    if x.shape[-1] != in_dim:
        raise ShapeMismatchError(f"TT layer expects width {in_dim}, got {x.shape[-1]}")
    batch = x.shape[0]

    state = x.reshape(batch, 1, 1, in_dim)  # (B, M_done, r, N_rest)
    m_done = 1
    rest = in_dim
    for core, n_k, m_k in zip(cores, in_modes, out_modes):
        rest //= n_k
        r_prev, r_next = core.shape[0], core.shape[3]
        state = state.reshape(batch, m_done, r_prev, n_k, rest)
        state = torch.einsum("bprnz,rmns->bpmsz", state, core)
        m_done *= m_k
        state = state.reshape(batch, m_done, r_next, rest)
    return state.reshape(batch, m_done)


class TTLinear(nn.Module):
    def __init__(
        self,
        spec: TTLayerSpec,
        bias: bool = True,
        generator: Optional[torch.Generator] = None,
    ):
        super().__init__()
        self.in_modes = tuple(spec.in_modes)
        self.out_modes = tuple(spec.out_modes)
        self.ranks = tuple(spec.ranks)

        if spec.cores is not None:
            tensors = [torch.as_tensor(c, dtype=torch.float64).clone() for c in spec.cores]
        else:
            q = len(self.in_modes)
            inner = float(np.prod(self.ranks[1:-1])) if q > 1 else 1.0
            std = (spec.in_dim * inner) ** (-1.0 / (2 * q))
            tensors = [
                torch.randn(
                    (self.ranks[k], self.out_modes[k], self.in_modes[k], self.ranks[k + 1]),
                    generator=generator,
                    dtype=torch.float64,
                )
                * std
                for k in range(q)
            ]
        self.cores = nn.ParameterList([nn.Parameter(t) for t in tensors])
        self.bias = nn.Parameter(torch.zeros(spec.out_dim, dtype=torch.float64)) if bias else None

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_modes))

    @property
    def out_dim(self) -> int:
        return int(np.prod(self.out_modes))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = tt_contract(list(self.cores), x, self.in_modes, self.out_modes)
        if self.bias is not None:
            out = out + self.bias
        return out

    def to_spec(self) -> TTLayerSpec:
        return TTLayerSpec(
            in_modes=self.in_modes,
            out_modes=self.out_modes,
            ranks=self.ranks,
            cores=[c.detach().cpu().numpy().copy() for c in self.cores],
        )

    def quantize_(self, q: QuantizationSpec) -> None:
        quantized = quantize_cores(self.to_spec(), q)
        with torch.no_grad():
            for core, values in zip(self.cores, quantized.cores):
                core.copy_(torch.as_tensor(values))


def tt_forward(tt: TTLayerSpec, x: np.ndarray) -> np.ndarray:
    """TT matrix-vector product for a vector or a batch of rows"""
    if tt.cores is None:
        raise ShapeMismatchError("TT spec carries no cores")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = torch.as_tensor(np.atleast_2d(x))
    cores = [torch.as_tensor(c, dtype=torch.float64) for c in tt.cores]
    out = tt_contract(cores, batch, tt.in_modes, tt.out_modes).numpy()
    return out[0] if single else out


def tt_materialize(tt: TTLayerSpec) -> np.ndarray:
    """Dense M x N matrix represented by the cores"""
    return tt_forward(tt, np.eye(tt.in_dim)).T


def tt_param_count(tt: Union[TTLayerSpec, TTLinear]) -> int:
    ranks, in_modes, out_modes = tt.ranks, tt.in_modes, tt.out_modes
    return int(
        sum(ranks[k] * out_modes[k] * in_modes[k] * ranks[k + 1] for k in range(len(in_modes)))
    )


def tt_from_dense(
    W: np.ndarray,
    in_modes: Sequence[int],
    out_modes: Sequence[int],
    max_ranks: Optional[Union[int, Sequence[int]]] = None,
) -> TTLayerSpec:
    """TT-SVD of W (M x N) on the tensor ordered (m_1, n_1, ..., m_q, n_q)"""
    W = np.asarray(W, dtype=np.float64)
    in_modes, out_modes = tuple(in_modes), tuple(out_modes)
    q = len(in_modes)
    if len(out_modes) != q:
        raise ShapeMismatchError("in_modes and out_modes must have the same length")
    if W.shape != (int(np.prod(out_modes)), int(np.prod(in_modes))):
        raise ShapeMismatchError(
            f"modes {out_modes} x {in_modes} do not factor a {W.shape[0]}x{W.shape[1]} matrix"
        )

    if max_ranks is None:
        caps: Tuple[Optional[int], ...] = (None,) * (q + 1)
    elif isinstance(max_ranks, int):
        caps = (1,) + (max_ranks,) * (q - 1) + (1,)
    else:
        caps = tuple(max_ranks)
        if len(caps) != q + 1:
            raise ShapeMismatchError(f"need {q + 1} rank caps, got {len(caps)}")

    order = [axis for k in range(q) for axis in (k, q + k)]
    tensor = W.reshape(out_modes + in_modes).transpose(order)

    cores = []
    ranks = [1]
    remainder = tensor.reshape(out_modes[0] * in_modes[0], -1)
    for k in range(q - 1):
        remainder = remainder.reshape(ranks[-1] * out_modes[k] * in_modes[k], -1)
        U, s, Vh = linalg.svd(remainder, full_matrices=False)
        rank = len(s) if caps[k + 1] is None else min(len(s), caps[k + 1])
        cores.append(U[:, :rank].reshape(ranks[-1], out_modes[k], in_modes[k], rank))
        remainder = s[:rank, np.newaxis] * Vh[:rank]
        ranks.append(rank)
    cores.append(remainder.reshape(ranks[-1], out_modes[-1], in_modes[-1], 1))
    ranks.append(1)

    return TTLayerSpec(in_modes=in_modes, out_modes=out_modes, ranks=tuple(ranks), cores=cores)


def quantize_cores(tt: TTLayerSpec, q: QuantizationSpec) -> TTLayerSpec:
    if tt.cores is None:
        return tt
    return tt.model_copy(update={"cores": [quantize_values(c, q.delta) for c in tt.cores]})
