"""
Counter-based random streams for reproducible Monte Carlo runs.

A trial stream is addressed by (master seed, axis index, trial index) and split
into named children so that the channel draws never depend on how many noise
samples a policy consumed.
"""

from typing import Dict, Iterable, Tuple

import numpy as np
import torch

STREAM_NAMES: Tuple[str, ...] = (
    "channel",
    "eve",
    "design",
    "csi",
    "angles",
    "impairments",
    "noise",
    "training",
)


def trial_seed_sequence(master_seed: int, axis_index: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(axis_index), int(trial)))


def seed_word(seq: np.random.SeedSequence) -> int:
    """First 64-bit word of the sequence state, reported in result rows"""
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_generator(seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seq))


def child_streams(
    seq: np.random.SeedSequence, names: Iterable[str] = STREAM_NAMES
) -> Dict[str, np.random.Generator]:
    names = tuple(names)
    # spawn_key extension keeps each purpose's stream fixed regardless of the others
    return {
        name: make_generator(
            np.random.SeedSequence(entropy=seq.entropy, spawn_key=seq.spawn_key + (index,))
        )
        for index, name in enumerate(names)
    }


def generator_from_seed(seed: int) -> np.random.Generator:
    return make_generator(np.random.SeedSequence(int(seed)))


def torch_generator(rng: np.random.Generator) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(rng.integers(0, 2**62)))
    return gen


def init_linear_layers(module: torch.nn.Module, gen: torch.Generator) -> None:
    """Re-draw every nn.Linear with the default uniform(+-1/sqrt(fan_in)) law from gen"""
    with torch.no_grad():
        for layer in module.modules():
            if isinstance(layer, torch.nn.Linear):
                bound = 1.0 / np.sqrt(layer.in_features)
                layer.weight.uniform_(-bound, bound, generator=gen)
                if layer.bias is not None:
                    layer.bias.uniform_(-bound, bound, generator=gen)
