"""Deterministic synthetic corpus: a first-order Markov chain over a Zipfian word list.

Each word prefers a handful of successors, so the text carries structure a small
model can learn while its unigram statistics stay heavy-tailed.
"""
import logging
from pathlib import Path
from typing import Union

import numpy as np

logger = logging.getLogger(__name__)


def word_list(num_words: int):
    return [f'w{i}' for i in range(num_words)]


def zipf_weights(num_words: int, exponent: float) -> np.ndarray:
    weights = np.arange(1, num_words + 1, dtype=np.float64) ** -exponent
    return weights / weights.sum()


def make_synthetic_corpus(path: Union[str, Path], size_bytes: int, num_words: int = 2000, seed: int = 0,
                          exponent: float = 1.1, branching: int = 8, stickiness: float = 0.8,
                          min_doc_len: int = 20, max_doc_len: int = 200) -> int:
    """
    :param path: Output file, one document per line
    :param size_bytes: Stop once at least this many bytes were written
    :param num_words: Distinct words
    :param seed: Seed; equal arguments write byte-identical files
    :param exponent: Zipf exponent of the unigram distribution
    :param branching: Preferred successors per word
    :param stickiness: Probability of moving to a preferred successor instead of a unigram draw
    :return: Number of documents written
    """
    if size_bytes < 1 or num_words < 2:
        raise ValueError('size_bytes must be >= 1 and num_words >= 2')
    if not 0 <= stickiness <= 1:
        raise ValueError(f'stickiness must be in [0, 1], got {stickiness}')
    if not 1 <= min_doc_len <= max_doc_len:
        raise ValueError('document lengths must satisfy 1 <= min_doc_len <= max_doc_len')

    rng = np.random.default_rng(seed)
    words = word_list(num_words)
    unigram = zipf_weights(num_words, exponent)
    successors = rng.choice(num_words, size=(num_words, branching), p=unigram)
    successor_weights = zipf_weights(branching, 1.0)

    written = 0
    n_docs = 0
    with open(path, 'w', encoding='utf-8') as f:
        while written < size_bytes:
            length = int(rng.integers(min_doc_len, max_doc_len + 1))
            stay = rng.random(length) < stickiness
            unigram_draws = rng.choice(num_words, size=length, p=unigram)
            successor_draws = rng.choice(branching, size=length, p=successor_weights)

            current = unigram_draws[0]
            document = [words[current]]
            for i in range(1, length):
                current = successors[current, successor_draws[i]] if stay[i] else unigram_draws[i]
                document.append(words[current])
            line = ' '.join(document) + '\n'
            f.write(line)
            written += len(line.encode('utf-8'))
            n_docs += 1

    logger.info(f'Wrote {n_docs} synthetic documents ({written} bytes) to {path}')
    return n_docs
