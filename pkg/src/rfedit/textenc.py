"""Toy keyword text encoder: token table for the context, pooled projection for modulation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rfedit.numcore import tensor as T

NULL = "<null>"
UNK = "<unk>"
NULL_ID = 0
UNK_ID = 1


@dataclass
class Vocabulary:
    words: list = field(default_factory=list)

    def __post_init__(self):
        for w in self.words:
            if w in (NULL, UNK):
                raise ValueError(f"{w!r} is reserved")
        self._index = {w: i + 2 for i, w in enumerate(self.words)}

    @property
    def tokens(self):
        return [NULL, UNK, *self.words]

    def __len__(self):
        return len(self.words) + 2

    def ids(self, prompt):
        words = normalize(prompt)
        if not words:
            return [NULL_ID]
        return [self._index.get(w, UNK_ID) for w in words]

    def to_json(self):
        return list(self.words)

    @classmethod
    def from_json(cls, words):
        return cls(list(words))


def normalize(prompt):
    return prompt.lower().split()


@dataclass
class PromptEmbedding:
    c_pool: np.ndarray  # (d_pool,)
    c_ctxt: np.ndarray  # (n_tokens, d_ctxt)
    token_ids: list

    @property
    def n_tokens(self):
        return self.c_ctxt.shape[0]


def encode_ids(table, pool, ids):
    """Differentiable encoding of a batch of equal-length id lists.

    ``table`` is (V, d_ctxt), ``pool`` is (d_ctxt, d_pool), ``ids`` is (B, n).
    Returns ``(c_pool (B, d_pool), c_ctxt (B, n, d_ctxt))`` as tensors.
    """
    ids = np.asarray(ids, dtype=np.int64)
    ctxt = T.take_rows(table, ids)
    pooled = T.matmul(T.mean(ctxt, axis=1), pool)
    return pooled, ctxt


def encode(prompt, vocab, table, pool):
    ids = vocab.ids(prompt)
    with T.no_grad():
        c_pool, c_ctxt = encode_ids(T.as_tensor(table), T.as_tensor(pool), [ids])
    return PromptEmbedding(c_pool.data[0].copy(), c_ctxt.data[0].copy(), ids)


def null_condition(vocab, table, pool):
    return encode("", vocab, table, pool)
