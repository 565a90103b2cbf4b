import logging
from pathlib import Path
from typing import Optional, Tuple, Union

import torch

from app.models.neural import EncoderArchitecture, QuantizationSpec
from app.networks.encoders import Encoder

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def save_encoder(
    path: Union[str, Path],
    encoder: Encoder,
    quantization: Optional[QuantizationSpec] = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format_version": FORMAT_VERSION,
            "architecture": encoder.arch.model_dump(mode="json"),
            "quantization": quantization.delta if quantization else None,
            "state_dict": encoder.state_dict(),
        },
        path,
    )
    logger.info(f"Encoder checkpoint written: {path}")
    return path


def load_encoder(path: Union[str, Path]) -> Tuple[Encoder, Optional[QuantizationSpec]]:
    payload = torch.load(Path(path), map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version}")
    encoder = Encoder(EncoderArchitecture(**payload["architecture"]))
    encoder.load_state_dict(payload["state_dict"])
    delta = payload.get("quantization")
    return encoder, QuantizationSpec(delta=delta) if delta else None
