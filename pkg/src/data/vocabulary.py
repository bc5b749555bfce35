"""Whitespace vocabulary with reserved ids for the corruption pipeline.

Specials always occupy the lowest ids in the fixed order pad, eos, unk, mlm,
then sentinels [S0]..[S(K-1)] ascending; content tokens follow, ranked by
corpus frequency.
"""
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, Tuple, Union

import numpy as np

from src.errors import VocabularyError

logger = logging.getLogger(__name__)

PAD_TOKEN = '[PAD]'
EOS_TOKEN = '[EOS]'
UNK_TOKEN = '[UNK]'
MLM_TOKEN = '[M]'

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2
MLM_ID = 3
FIRST_SENTINEL_ID = 4

DEFAULT_NUM_SENTINELS = 100


def sentinel_token(k: int) -> str:
    return f'[S{k}]'


def num_specials(num_sentinels: int) -> int:
    return FIRST_SENTINEL_ID + num_sentinels


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: Tuple[str, ...]
    num_sentinels: int
    token_to_id: Dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        token_to_id = {token: i for i, token in enumerate(self.id_to_token)}
        if len(token_to_id) != len(self.id_to_token):
            raise VocabularyError('duplicate tokens in vocabulary')
        expected = [PAD_TOKEN, EOS_TOKEN, UNK_TOKEN, MLM_TOKEN] + \
                   [sentinel_token(k) for k in range(self.num_sentinels)]
        if list(self.id_to_token[:len(expected)]) != expected:
            raise VocabularyError('specials must occupy the leading ids in the order pad, eos, unk, mlm, sentinels')
        object.__setattr__(self, 'token_to_id', token_to_id)

    @property
    def v(self) -> int:
        return len(self.id_to_token)

    def __len__(self):
        return self.v

    @property
    def pad_id(self) -> int:
        return PAD_ID

    @property
    def eos_id(self) -> int:
        return EOS_ID

    @property
    def unk_id(self) -> int:
        return UNK_ID

    @property
    def mlm_id(self) -> int:
        return MLM_ID

    @property
    def sentinel_ids(self) -> Tuple[int, ...]:
        return tuple(range(FIRST_SENTINEL_ID, FIRST_SENTINEL_ID + self.num_sentinels))

    @property
    def num_specials(self) -> int:
        return num_specials(self.num_sentinels)

    @property
    def content_tokens(self) -> Tuple[str, ...]:
        return self.id_to_token[self.num_specials:]

    def is_sentinel(self, ids):
        ids = np.asarray(ids)
        return (ids >= FIRST_SENTINEL_ID) & (ids < FIRST_SENTINEL_ID + self.num_sentinels)

    def save(self, path: Union[str, Path]):
        Path(path).write_text(''.join(f'{token}\n' for token in self.id_to_token), encoding='utf-8')

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'Vocabulary':
        tokens = Path(path).read_text(encoding='utf-8').splitlines()
        num_sentinels = 0
        while FIRST_SENTINEL_ID + num_sentinels < len(tokens) and \
                tokens[FIRST_SENTINEL_ID + num_sentinels] == sentinel_token(num_sentinels):
            num_sentinels += 1
        return cls(tuple(tokens), num_sentinels)


def _is_reserved(token: str) -> bool:
    return token.startswith('[') and token.endswith(']')


def build_vocab(corpus: Iterable[str], max_size: int, num_sentinels: int = DEFAULT_NUM_SENTINELS) -> Vocabulary:
    """
    :param corpus: Documents (one string each)
    :param max_size: Total vocabulary size, specials included
    :param num_sentinels: Sentinel budget K
    """
    specials = num_specials(num_sentinels)
    if max_size <= specials:
        raise VocabularyError(f'vocab too small: max_size={max_size} cannot hold {specials} specials '
                              f'plus one content token')

    counts = Counter()
    n_docs = 0
    for document in corpus:
        n_docs += 1
        counts.update(document.split())
    if not counts:
        raise VocabularyError('empty corpus')

    # Bracketed tokens would render like specials on decode
    ranked = sorted((token for token in counts if not _is_reserved(token)), key=lambda t: (-counts[t], t))
    content = ranked[:max_size - specials]
    logger.info(f'Built vocabulary from {n_docs} documents: {len(content)} content tokens '
                f'of {len(ranked)} distinct, {specials} specials')

    tokens = [PAD_TOKEN, EOS_TOKEN, UNK_TOKEN, MLM_TOKEN] + [sentinel_token(k) for k in range(num_sentinels)]
    return Vocabulary(tuple(tokens + content), num_sentinels)


def encode(text: str, vocab: Vocabulary) -> np.ndarray:
    lookup = vocab.token_to_id
    specials = vocab.num_specials
    ids = []
    for token in text.split():
        i = lookup.get(token, UNK_ID)
        ids.append(i if i >= specials else UNK_ID)
    return np.asarray(ids, dtype=np.int64)


def decode(ids, vocab: Vocabulary) -> str:
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.max() >= vocab.v or ids.min() < 0):
        raise VocabularyError(f'id out of range: vocabulary has {vocab.v} ids')
    return ' '.join(vocab.id_to_token[i] for i in ids.tolist())
