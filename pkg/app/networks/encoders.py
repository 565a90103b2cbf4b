"""
Beam encoders, the message decoder and the learnable symbol mapper.
"""

import logging
from typing import List, Optional, Tuple

import numpy as np
import torch
from torch import nn

from app.models.neural import (
    Activation,
    DenseLayerSpec,
    EncoderArchitecture,
    EncoderKind,
    QuantizationSpec,
    TTLayerSpec,
)
from app.networks.layers import DenseLayer, TTLinear, tt_materialize, tt_param_count
from app.utils.random_streams import init_linear_layers

logger = logging.getLogger(__name__)

FC_HIDDEN = 128
DECODER_HIDDEN = 128


def padded_modes(width: int) -> Tuple[int, int]:
    """Smallest a*a or a*(a+1) not below width, returned as (a, a) or (a, a+1)"""
    a = 1
    while True:
        for b in (a, a + 1):
            if a * b >= width:
                return a, b
        a += 1


def balanced_factors(n: int) -> Tuple[int, int]:
    a = int(np.floor(np.sqrt(n)))
    while n % a:
        a -= 1
    return a, n // a


def default_architecture(
    kind: EncoderKind,
    in_dim: int,
    out_dim: int,
    hidden: int = 171,
    tt_out_dim: int = 64,
    tt_rank: int = 5,
) -> EncoderArchitecture:
    kind = EncoderKind(kind)
    if kind == EncoderKind.FC:
        return EncoderArchitecture(kind=kind, in_dim=in_dim, out_dim=out_dim, hidden=FC_HIDDEN)

    in_modes = padded_modes(in_dim)
    out_modes = padded_modes(tt_out_dim) if kind == EncoderKind.DTTE else balanced_factors(out_dim)
    return EncoderArchitecture(
        kind=kind,
        in_dim=in_dim,
        out_dim=out_dim,
        hidden=hidden,
        tt_in_modes=in_modes,
        tt_out_modes=out_modes,
        tt_ranks=(1, tt_rank, 1),
    )


class Encoder(nn.Module):
    """
    fc:   FC(in -> 128) -> ReLU -> FC(128 -> out) -> BatchNorm
    dtte: TT(in -> tt_out) -> ReLU -> FC(tt_out -> hidden) -> ReLU -> FC(hidden -> out)
    tt:   TT(in -> out) only
    """

    def __init__(self, arch: EncoderArchitecture, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.arch = arch
        layers = []
        if arch.kind == EncoderKind.FC:
            layers.append(DenseLayer(DenseLayerSpec(in_dim=arch.in_dim, out_dim=arch.hidden, activation=Activation.RELU)))
            layers.append(DenseLayer(DenseLayerSpec(in_dim=arch.hidden, out_dim=arch.out_dim, batch_norm=True)))
        else:
            tt = TTLinear(
                TTLayerSpec(in_modes=arch.tt_in_modes, out_modes=arch.tt_out_modes, ranks=arch.tt_ranks),
                generator=generator,
            )
            layers.append(tt)
            if arch.kind == EncoderKind.DTTE:
                layers.append(nn.ReLU())
                layers.append(DenseLayer(DenseLayerSpec(in_dim=tt.out_dim, out_dim=arch.hidden, activation=Activation.RELU)))
                layers.append(DenseLayer(DenseLayerSpec(in_dim=arch.hidden, out_dim=arch.out_dim)))
        self.body = nn.Sequential(*layers)
        if generator is not None:
            init_linear_layers(self, generator)

    @property
    def padded_width(self) -> int:
        if self.arch.kind == EncoderKind.FC:
            return self.arch.in_dim
        return int(np.prod(self.arch.tt_in_modes))

    def tt_layers(self):
        return [m for m in self.modules() if isinstance(m, TTLinear)]

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        pad = self.padded_width - z.shape[-1]
        if pad > 0:
            z = nn.functional.pad(z, (0, pad))
        return self.body(z)

    def quantize_(self, q: QuantizationSpec) -> List[float]:
        """Rounds every TT core onto the grid; returns each layer's relative Frobenius change"""
        changes = []
        for layer in self.tt_layers():
            before = tt_materialize(layer.to_spec())
            layer.quantize_(q)
            after = tt_materialize(layer.to_spec())
            changes.append(float(np.linalg.norm(after - before) / max(np.linalg.norm(before), 1e-300)))
        return changes

    def parameter_count(self) -> int:
        return int(sum(p.numel() for p in self.parameters()))

    def tt_parameter_count(self) -> int:
        return int(sum(tt_param_count(layer) for layer in self.tt_layers()))


class Decoder(nn.Module):
    """FC(2 -> 128) -> ReLU -> FC(128 -> M); softmax applied on demand"""

    def __init__(self, n_messages: int = 4, generator: Optional[torch.Generator] = None):
        super().__init__()
        self.body = nn.Sequential(
            DenseLayer(DenseLayerSpec(in_dim=2, out_dim=DECODER_HIDDEN, activation=Activation.RELU)),
            DenseLayer(DenseLayerSpec(in_dim=DECODER_HIDDEN, out_dim=n_messages)),
        )
        if generator is not None:
            init_linear_layers(self, generator)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        return self.body(y)

    def probabilities(self, y: torch.Tensor) -> torch.Tensor:
        return torch.softmax(self.forward(y), dim=-1)


class SymbolMapper(nn.Module):
    """One learnable complex point per message, renormalised to unit average energy"""

    def __init__(self, n_messages: int = 4):
        super().__init__()
        angles = np.pi / 4 + np.pi / 2 * np.arange(n_messages)
        init = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        self.points = nn.Parameter(torch.as_tensor(init, dtype=torch.float64))

    def constellation(self) -> torch.Tensor:
        c = torch.complex(self.points[:, 0], self.points[:, 1])
        return c / torch.sqrt(torch.mean(torch.abs(c) ** 2))

    def forward(self, messages: torch.Tensor) -> torch.Tensor:
        return self.constellation()[messages]


def build_encoder(arch: EncoderArchitecture, generator: Optional[torch.Generator] = None) -> Encoder:
    encoder = Encoder(arch, generator)
    logger.debug(
        f"Built {arch.kind.value} encoder: {encoder.parameter_count()} parameters "
        f"({encoder.tt_parameter_count()} in TT cores)"
    )
    return encoder
