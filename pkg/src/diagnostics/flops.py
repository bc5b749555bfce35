"""Analytic training FLOPs, non-embedding convention.

Per sequence, with expected corrupted lengths n = N - (B - p) (encoder) and t = B + p + 1 (decoder):

  encoder layer:  2 (4 d^2 + 2 d mlp) n + 4 n^2 d
  decoder layer:  2 (8 d^2 + 2 d mlp) t + 4 t^2 d + 4 t n d
  generator:      gen_layers encoder layers at gen_mlp over n, plus 2 v d n for W^G   (hybrid only)
  RTD head:       2 (d rtd + rtd) n                                                   (hybrid only)

The weight terms are 2 * params * tokens, each stack charged for its own tokens; attention scores and
their weighted sums add the n^2 and t n terms. The shared embedder is an embedding matrix and is not
charged, neither for lookups nor for the tied decoder read-out; W^G is a separate projection and is.
One training step costs forward + backward = 3 x forward. A zero-layer generator and a zero-width RTD
head count as absent.
"""
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import pandas as pd

from src.data.corruption import span_budget
from src.models.spactor.model import ModelConfig
from src.models.spactor.utils import Stage

BACKWARD_FACTOR = 3
REFERENCE_STEPS = 500000


def expected_lengths(input_len: int, r_sc: float, mu: float) -> Tuple[int, int]:
    budget, p = span_budget(input_len, r_sc, mu)
    return input_len - (budget - p), budget + p + 1


def encoder_flops(layers: int, d: int, mlp: int, n: int) -> int:
    return layers * (2 * (4 * d * d + 2 * d * mlp) * n + 4 * n * n * d)


def decoder_flops(layers: int, d: int, mlp: int, t: int, n: int) -> int:
    return layers * (2 * (8 * d * d + 2 * d * mlp) * t + 4 * t * t * d + 4 * t * n * d)


def forward_flops(cfg: ModelConfig, input_len: int, r_sc: float, mu: float, stage: Stage) -> int:
    n, t = expected_lengths(input_len, r_sc, mu)
    d = cfg.d
    total = encoder_flops(cfg.disc_layers, d, cfg.disc_mlp, n) + decoder_flops(cfg.disc_layers, d, cfg.disc_mlp, t, n)
    if Stage(stage) is Stage.HYBRID:
        if cfg.gen_layers > 0:
            total += encoder_flops(cfg.gen_layers, d, cfg.gen_mlp, n) + 2 * cfg.v * d * n
        if cfg.rtd_mlp > 0:
            total += 2 * (d * cfg.rtd_mlp + cfg.rtd_mlp) * n
    return total


def flops_per_step(cfg: ModelConfig, batch_size: int, input_len: int, r_sc: float, mu: float,
                   stage: Stage) -> float:
    """Training GFLOPs for one step of `batch_size` sequences."""
    return BACKWARD_FACTOR * batch_size * forward_flops(cfg, input_len, r_sc, mu, stage) / 1e9


def normalized_cumulative_flops(tau: float, total_steps: int, ratio: float,
                                reference_steps: int = REFERENCE_STEPS) -> float:
    """(tau * ratio + (total - tau)) / reference, in units of a baseline run of `reference_steps` steps.

    tau = inf means the hybrid objective runs for the whole run.
    """
    if math.isinf(tau):
        tau = total_steps
    if not 0 <= tau <= total_steps:
        raise ValueError(f'tau must be in [0, total_steps={total_steps}], got {tau}')
    if reference_steps < 1:
        raise ValueError(f'reference_steps must be >= 1, got {reference_steps}')
    return (tau * ratio + (total_steps - tau)) / reference_steps


@dataclass
class FlopsReport:
    baseline_gflops_per_step: float
    hybrid_gflops_per_step: float
    cumulative: List[Tuple[float, int, float]] = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return self.hybrid_gflops_per_step / self.baseline_gflops_per_step

    def add(self, tau: float, total_steps: int, reference_steps: int = REFERENCE_STEPS) -> float:
        value = normalized_cumulative_flops(tau, total_steps, self.ratio, reference_steps)
        self.cumulative.append((tau, total_steps, value))
        return value

    def to_frame(self) -> pd.DataFrame:
        rows = [dict(tau=tau, steps=steps, baseline_gflops_per_step=self.baseline_gflops_per_step,
                     hybrid_gflops_per_step=self.hybrid_gflops_per_step, ratio=self.ratio,
                     normalized_flops=value)
                for tau, steps, value in self.cumulative]
        return pd.DataFrame(rows, columns=['tau', 'steps', 'baseline_gflops_per_step', 'hybrid_gflops_per_step',
                                           'ratio', 'normalized_flops'])


def flops_report(cfg: ModelConfig, batch_size: int, input_len: int, r_sc: float, mu: float) -> FlopsReport:
    return FlopsReport(
        baseline_gflops_per_step=flops_per_step(cfg, batch_size, input_len, r_sc, mu, Stage.SC_ONLY),
        hybrid_gflops_per_step=flops_per_step(cfg, batch_size, input_len, r_sc, mu, Stage.HYBRID),
    )
