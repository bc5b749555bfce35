import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict

import numpy as np
import torch

from src.models.spactor.model import SpacTorModel

STREAM_NAMES = ('data', 'spans', 'mlm', 'sampling', 'init')


def lr(step: int, kappa: int) -> float:
    """1 / sqrt(max(step, kappa))"""
    if kappa < 1:
        raise ValueError(f'kappa must be >= 1, got {kappa}')
    return 1.0 / math.sqrt(max(step, kappa))


class InverseSqrtLRPolicy(object):
    def __init__(self, kappa):
        self.kappa = kappa

    def __call__(self, step):
        return lr(step, self.kappa)

    def __repr__(self):
        return str(vars(self))

    def __str__(self):
        return str(vars(self))


@dataclass
class RngStreams:
    """Named streams spawned from one seed. `data` and `init` are plain integer seeds,
    the other three are generators whose positions travel with checkpoints."""
    data: int
    init: int
    spans: np.random.Generator
    mlm: np.random.Generator
    sampling: np.random.Generator

    @classmethod
    def from_seed(cls, seed: int) -> 'RngStreams':
        children = dict(zip(STREAM_NAMES, np.random.SeedSequence(seed).spawn(len(STREAM_NAMES))))
        return cls(data=int(children['data'].generate_state(1)[0]),
                   init=int(children['init'].generate_state(1)[0]),
                   spans=np.random.default_rng(children['spans']),
                   mlm=np.random.default_rng(children['mlm']),
                   sampling=np.random.default_rng(children['sampling']))

    def generator_states(self) -> Dict[str, dict]:
        return {name: getattr(self, name).bit_generator.state for name in ('spans', 'mlm', 'sampling')}

    def restore(self, states: Dict[str, dict]):
        for name, state in states.items():
            getattr(self, name).bit_generator.state = state


class Stage(str, Enum):
    HYBRID = 'hybrid'
    SC_ONLY = 'sc_only'


@dataclass
class TrainState:
    step: int
    stage: Stage
    model: SpacTorModel
    optimizer: torch.optim.Optimizer
    rng: RngStreams
    batches_consumed: int = 0
