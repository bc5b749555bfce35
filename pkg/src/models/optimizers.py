"""Optimizer factory.

Training uses `torch.optim.Adafactor`: factored second moments for matrices, parameter-scaled steps and
update clipping at RMS 1, with the group `lr` set by the caller each step. Its relative step is
min(lr, 1/sqrt(t)) for the 1-based optimizer step t.
"""
import torch


def build_optimizer(name: str, params, lr: float = 1e-2) -> torch.optim.Optimizer:
    """`adafactor` for training, `sgd` (plain, no momentum) for gradient checks."""
    params = list(params)
    if name == 'adafactor':
        return torch.optim.Adafactor(params, lr=lr, weight_decay=0.0)
    if name == 'sgd':
        return torch.optim.SGD(params, lr=lr)
    raise ValueError(f'Unknown optimizer: {name}')
