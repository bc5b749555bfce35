"""Span-corruption validation loss with the discriminator encoder reading either the clean corrupted
text X_c or the noisy text produced by the frozen generator."""
import logging
from pathlib import Path
from typing import Callable, Optional, Union

import pandas as pd
import torch
import torch.nn.functional as F

from src.config import RunConfig
from src.data.corpus import encode_corpus, pack_batches, read_corpus
from src.data.corruption import CorruptionTransform, collate_examples
from src.errors import EvaluationError
from src.models.checkpoint import list_checkpoints, load_checkpoint
from src.models.spactor import model as spactor_model
from src.models.spactor.utils import RngStreams

logger = logging.getLogger(__name__)

MODES = ('clean', 'noisy')


def eval_sc_loss(checkpoint_dir: Union[str, Path], val_path: Union[str, Path], mode: str = 'clean', seed: int = 0,
                 batch_size: Optional[int] = None, max_batches: Optional[int] = None,
                 sampler: Optional[Callable] = None) -> float:
    """Token-mean span-corruption loss over one pass of the validation corpus.

    Spans are planned from the same seeded stream in both modes, so the two modes see identical X_c.
    `sampler` replaces `sample_replacements` (same signature).
    """
    if mode not in MODES:
        raise EvaluationError(f'mode must be one of {MODES}, got {mode}')
    state, vocab, manifest = load_checkpoint(checkpoint_dir, restore_torch_rng=False)
    if mode == 'noisy' and not state.model.has_generator:
        raise EvaluationError(f'noisy context needs a generator: {checkpoint_dir} was saved without one')

    cfg = RunConfig.from_dict(manifest['config'])
    sampler = spactor_model.sample_replacements if sampler is None else sampler
    rng = RngStreams.from_seed(seed)
    corruption = cfg.corruption_config() if mode == 'noisy' else cfg.corruption_config().without_mlm()
    transform = CorruptionTransform(corruption, vocab, rng.spans, rng.mlm)
    model = state.model.eval()

    corpus = encode_corpus(read_corpus(val_path), vocab)
    total, count = 0.0, 0
    with torch.no_grad():
        batches = pack_batches(corpus, cfg.input_len, batch_size or cfg.batch_size, rng.data, vocab)
        for i, rows in enumerate(batches):
            if max_batches is not None and i >= max_batches:
                break
            examples = transform(rows)
            if not examples:
                continue
            batch = collate_examples(examples)
            encoder_input = batch.sc_text
            if mode == 'noisy':
                gen_logits = model.generator_forward(batch.masked_text, batch.valid_mask)
                encoder_input = sampler(gen_logits, batch.mlm_mask, batch.sc_text, rng.sampling)
            hidden = model.discriminator_encode(encoder_input, batch.valid_mask)
            dec_logits = model.discriminator_decode(hidden, batch.decoder_input, batch.valid_mask)
            total += F.cross_entropy(dec_logits[batch.target_mask], batch.target[batch.target_mask],
                                     reduction='sum').item()
            count += int(batch.target_mask.sum())

    if count == 0:
        raise EvaluationError(f'{val_path} yields no sequence long enough to corrupt')
    loss = total / count
    logger.info(f'{mode} SC loss at step {state.step}: {loss:.5f} over {count} target tokens')
    return loss


def eval_run(run_dir: Union[str, Path], val_path: Union[str, Path], mode: str, seed: int = 0,
             start_step: int = 0, **kwargs) -> pd.Series:
    """Validation loss of every checkpoint at or after `start_step`, indexed by step."""
    checkpoints = {step: path for step, path in list_checkpoints(run_dir).items() if step >= start_step}
    if not checkpoints:
        raise EvaluationError(f'no checkpoint at or after step {start_step} under {run_dir}')
    return pd.Series({step: eval_sc_loss(path, val_path, mode, seed, **kwargs)
                      for step, path in sorted(checkpoints.items())}, name=f'{Path(run_dir).name}:{mode}')
