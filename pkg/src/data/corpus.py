import itertools
import logging
from pathlib import Path
from typing import Iterator, List, Sequence, Union

import numpy as np
from torch.utils.data import DataLoader, IterableDataset

from src.data.vocabulary import Vocabulary, encode

logger = logging.getLogger(__name__)

MIN_INPUT_LEN = 8


def read_corpus(path: Union[str, Path]) -> List[str]:
    """One document per non-blank line of a UTF-8 file."""
    with open(path, encoding='utf-8') as f:
        return [line.rstrip('\n') for line in f if line.strip()]


def encode_corpus(documents: Sequence[str], vocab: Vocabulary) -> List[np.ndarray]:
    return [encode(document, vocab) for document in documents]


def pack_batches(corpus: Sequence[np.ndarray], input_len: int, batch_size: int, seed: int,
                 vocab: Vocabulary) -> Iterator[np.ndarray]:
    """Packs token documents into [batch_size x input_len] matrices.

    Documents are shuffled with `seed`, joined with eos separators and chunked; the final chunk is
    right-padded with pad ids and the final batch may hold fewer rows.
    """
    if input_len < MIN_INPUT_LEN:
        raise ValueError(f'input_len must be >= {MIN_INPUT_LEN}, got {input_len}')
    if batch_size < 1:
        raise ValueError(f'batch_size must be >= 1, got {batch_size}')

    order = np.random.default_rng(seed).permutation(len(corpus))
    pieces = []
    for k, i in enumerate(order):
        if k > 0:
            pieces.append(np.array([vocab.eos_id], dtype=np.int64))
        pieces.append(np.asarray(corpus[i], dtype=np.int64))
    stream = np.concatenate(pieces) if pieces else np.zeros(0, dtype=np.int64)

    n_rows = -(-len(stream) // input_len)
    rows = np.full((n_rows, input_len), vocab.pad_id, dtype=np.int64)
    rows.reshape(-1)[:len(stream)] = stream

    for start in range(0, n_rows, batch_size):
        yield rows[start:start + batch_size]


def batch_stream(corpus: Sequence[np.ndarray], input_len: int, batch_size: int, seed: int,
                 vocab: Vocabulary, skip: int = 0) -> Iterator[np.ndarray]:
    """Endless epochs of `pack_batches`, epoch e shuffled with seed + e; the first `skip` batches are dropped."""
    if not any(len(document) for document in corpus):
        raise ValueError('empty corpus')

    def epochs():
        for epoch in itertools.count():
            yield from pack_batches(corpus, input_len, batch_size, seed + epoch, vocab)

    return itertools.islice(epochs(), skip, None)


class PackedCorpus(IterableDataset):
    def __init__(self, corpus, input_len, batch_size, seed, vocab, skip=0):
        super().__init__()
        self.corpus = corpus
        self.input_len = input_len
        self.batch_size = batch_size
        self.seed = seed
        self.vocab = vocab
        self.skip = skip

    def __iter__(self):
        return batch_stream(self.corpus, self.input_len, self.batch_size, self.seed, self.vocab, skip=self.skip)


def make_loader(corpus, input_len, batch_size, seed, vocab, skip=0, num_workers=0):
    """Training batch iterator; with one worker the batches are produced ahead under a bounded prefetch queue."""
    if num_workers == 0:
        return batch_stream(corpus, input_len, batch_size, seed, vocab, skip=skip)
    if num_workers != 1:
        raise ValueError('a packed stream is a single sequence: num_workers must be 0 or 1')
    dataset = PackedCorpus(corpus, input_len, batch_size, seed, vocab, skip=skip)
    loader = DataLoader(dataset, batch_size=None, num_workers=1, prefetch_factor=2)
    return (batch.numpy() for batch in loader)
