"""Span corruption followed by token-level MLM masking, decoder targets and RTD labels.

All sequences are 1-D int64 numpy arrays. Randomness comes only from the explicit
`np.random.Generator` streams passed in.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from src.data.vocabulary import MLM_ID, PAD_ID, Vocabulary, decode
from src.errors import CorruptionError

logger = logging.getLogger(__name__)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class CorruptionConfig:
    r_sc: float = 0.15
    mu: float = 3.0
    r_mlm: float = 0.15

    def without_mlm(self) -> 'CorruptionConfig':
        return CorruptionConfig(r_sc=self.r_sc, mu=self.mu, r_mlm=0.0)


def span_budget(N: int, r_sc: float, mu: float) -> Tuple[int, int]:
    """Corrupted-token budget B and span count p for a sequence of N tokens."""
    budget = max(1, round_half_up(N * r_sc))
    return budget, max(1, round_half_up(budget / mu))


def corruptible(N: int, r_sc: float, mu: float) -> bool:
    budget, p = span_budget(N, r_sc, mu)
    return N >= mu + 2 and N - budget >= p


@dataclass(frozen=True)
class SpanSet:
    spans: Tuple[Tuple[int, int], ...] = ()

    @property
    def p(self) -> int:
        return len(self.spans)

    @property
    def lengths(self) -> List[int]:
        return [end - start + 1 for start, end in self.spans]

    @property
    def covered(self) -> int:
        return sum(self.lengths)

    def validate(self, N: int):
        previous_end = None
        for start, end in self.spans:
            if not 0 <= start <= end < N:
                raise CorruptionError(f'span ({start}, {end}) outside a sequence of {N} tokens')
            if previous_end is not None and start <= previous_end + 1:
                raise CorruptionError(f'span ({start}, {end}) overlaps or touches the previous span')
            previous_end = end


@dataclass(frozen=True)
class MlmSet:
    positions: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def q(self) -> int:
        return len(self.positions)


@dataclass(frozen=True)
class CorruptedExample:
    original: np.ndarray
    sc_text: np.ndarray
    masked_text: np.ndarray
    target: np.ndarray
    span_set: SpanSet
    mlm_set: MlmSet

    @property
    def n(self) -> int:
        return len(self.sc_text)


def plan_spans(N: int, r_sc: float, mu: float, rng: np.random.Generator) -> SpanSet:
    """Draws p disjoint, non-adjacent spans covering B = round(N * r_sc) tokens.

    Span lengths are a uniformly random composition of B into p positive parts; the free tokens are
    then spread uniformly over the p + 1 gaps, interior gaps holding at least one token.
    """
    if not 0 < r_sc < 1:
        raise ValueError(f'r_sc must be in (0, 1), got {r_sc}')
    if mu < 1:
        raise ValueError(f'mu must be >= 1, got {mu}')

    budget, p = span_budget(N, r_sc, mu)
    if not corruptible(N, r_sc, mu):
        raise CorruptionError(f'sequence too short: N={N} cannot hold {p} span(s) of {budget} tokens '
                              f'with a free slack token')

    if p > 1:
        cuts = np.sort(rng.choice(np.arange(1, budget), size=p - 1, replace=False))
        lengths = np.diff(np.concatenate([[0], cuts, [budget]]))
    else:
        lengths = np.array([budget])

    slack = N - budget - (p - 1)
    bars = np.sort(rng.choice(slack + p, size=p, replace=False))
    gaps = np.diff(np.concatenate([[-1], bars])) - 1
    gaps[1:] += 1

    spans = []
    position = 0
    for gap, length in zip(gaps.tolist(), lengths.tolist()):
        start = position + gap
        spans.append((start, start + length - 1))
        position = start + length
    return SpanSet(tuple(spans))


def _check_sentinel_budget(spans: SpanSet, vocab: Vocabulary):
    if spans.p > vocab.num_sentinels:
        raise CorruptionError(f'sentinel budget exceeded: {spans.p} spans, {vocab.num_sentinels} sentinels')


def apply_span_corruption(x: np.ndarray, spans: SpanSet, vocab: Vocabulary) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    spans.validate(len(x))
    _check_sentinel_budget(spans, vocab)

    pieces = []
    position = 0
    for sentinel, (start, end) in zip(vocab.sentinel_ids, spans.spans):
        pieces.append(x[position:start])
        pieces.append(np.array([sentinel], dtype=np.int64))
        position = end + 1
    pieces.append(x[position:])
    return np.concatenate(pieces)


def build_decoder_target(x: np.ndarray, spans: SpanSet, vocab: Vocabulary) -> np.ndarray:
    x = np.asarray(x, dtype=np.int64)
    spans.validate(len(x))
    _check_sentinel_budget(spans, vocab)

    pieces = []
    for sentinel, (start, end) in zip(vocab.sentinel_ids, spans.spans):
        pieces.append(np.array([sentinel], dtype=np.int64))
        pieces.append(x[start:end + 1])
    pieces.append(np.array([vocab.eos_id], dtype=np.int64))
    return np.concatenate(pieces)


def plan_mlm(x_c: np.ndarray, r_mlm: float, rng: np.random.Generator, vocab: Vocabulary) -> MlmSet:
    """Selects q = round(r_mlm * #non-sentinel tokens) positions uniformly without replacement."""
    if not 0 <= r_mlm < 1:
        raise ValueError(f'r_mlm must be in [0, 1), got {r_mlm}')
    x_c = np.asarray(x_c, dtype=np.int64)
    candidates = np.flatnonzero(~vocab.is_sentinel(x_c) & (x_c != PAD_ID))
    q = round_half_up(r_mlm * len(candidates))
    if q == 0:
        return MlmSet()
    return MlmSet(np.sort(rng.choice(candidates, size=q, replace=False)).astype(np.int64))


def apply_mlm(x_c: np.ndarray, m: MlmSet, vocab: Vocabulary) -> np.ndarray:
    masked = np.array(x_c, dtype=np.int64, copy=True)
    if m.q == 0:
        return masked
    if vocab.is_sentinel(masked[m.positions]).any():
        raise CorruptionError('MLM over sentinel')
    masked[m.positions] = vocab.mlm_id
    return masked


def corrupt_example(x: np.ndarray, cfg: CorruptionConfig, rng: np.random.Generator, vocab: Vocabulary,
                    mlm_rng: Optional[np.random.Generator] = None) -> CorruptedExample:
    """SC then MLM over one pad-free sequence; `mlm_rng` defaults to `rng`."""
    x = np.asarray(x, dtype=np.int64)
    spans = plan_spans(len(x), cfg.r_sc, cfg.mu, rng)
    sc_text = apply_span_corruption(x, spans, vocab)
    target = build_decoder_target(x, spans, vocab)
    mlm_set = plan_mlm(sc_text, cfg.r_mlm, rng if mlm_rng is None else mlm_rng, vocab)
    masked_text = apply_mlm(sc_text, mlm_set, vocab)
    return CorruptedExample(original=x, sc_text=sc_text, masked_text=masked_text, target=target,
                            span_set=spans, mlm_set=mlm_set)


def rtd_labels(masked_text, replaced_text, sc_text, mlm_id: int = MLM_ID):
    """True where a masked position was filled with a token different from the ground truth.

    Accepts numpy arrays or torch tensors of any matching shape.
    """
    if not (masked_text.shape == replaced_text.shape == sc_text.shape):
        raise CorruptionError(f'length mismatch: {tuple(masked_text.shape)}, {tuple(replaced_text.shape)}, '
                              f'{tuple(sc_text.shape)}')
    return (replaced_text != sc_text) & (masked_text == mlm_id)


def strip_padding(row: np.ndarray) -> np.ndarray:
    row = np.asarray(row, dtype=np.int64)
    return row[row != PAD_ID]


def format_example(example: CorruptedExample, vocab: Vocabulary) -> str:
    """The `dump-examples` line: decoded original / sc_text / masked_text / target, tab separated."""
    return '\t'.join(decode(ids, vocab) for ids in
                     (example.original, example.sc_text, example.masked_text, example.target))


@dataclass
class CorruptedBatch:
    masked_text: torch.Tensor
    sc_text: torch.Tensor
    valid_mask: torch.Tensor
    mlm_mask: torch.Tensor
    target: torch.Tensor
    decoder_input: torch.Tensor
    target_mask: torch.Tensor

    @property
    def batch_size(self) -> int:
        return self.sc_text.size(0)


def _pad_rows(rows: Sequence[np.ndarray]) -> torch.Tensor:
    width = max(len(row) for row in rows)
    out = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, :len(row)] = row
    return torch.from_numpy(out)


def shift_right(target: torch.Tensor, start_id: int = PAD_ID) -> torch.Tensor:
    """Teacher-forcing decoder input: the start id followed by target[:-1]."""
    start = torch.full_like(target[:, :1], start_id)
    return torch.cat([start, target[:, :-1]], dim=1)


def collate_examples(examples: Sequence[CorruptedExample]) -> CorruptedBatch:
    if not examples:
        raise CorruptionError('cannot collate an empty batch')
    sc_text = _pad_rows([example.sc_text for example in examples])
    masked_text = _pad_rows([example.masked_text for example in examples])
    target = _pad_rows([example.target for example in examples])
    valid_mask = _pad_rows([np.ones(example.n, dtype=np.int64) for example in examples]).bool()
    target_mask = _pad_rows([np.ones(len(example.target), dtype=np.int64) for example in examples]).bool()
    return CorruptedBatch(masked_text=masked_text, sc_text=sc_text, valid_mask=valid_mask,
                          mlm_mask=(masked_text == MLM_ID) & valid_mask, target=target,
                          decoder_input=shift_right(target), target_mask=target_mask)


class CorruptionTransform:
    """Corrupts packed rows: pads are stripped, rows too short to corrupt are skipped."""

    def __init__(self, cfg: CorruptionConfig, vocab: Vocabulary, span_rng: np.random.Generator,
                 mlm_rng: np.random.Generator):
        self.cfg = cfg
        self.vocab = vocab
        self.span_rng = span_rng
        self.mlm_rng = mlm_rng

    def __call__(self, rows: np.ndarray, cfg: Optional[CorruptionConfig] = None) -> List[CorruptedExample]:
        cfg = self.cfg if cfg is None else cfg
        examples = []
        for row in rows:
            x = strip_padding(row)
            if not corruptible(len(x), cfg.r_sc, cfg.mu):
                logger.debug(f'Skipping a row of {len(x)} tokens: too short to corrupt')
                continue
            examples.append(corrupt_example(x, cfg, self.span_rng, self.vocab, mlm_rng=self.mlm_rng))
        return examples
