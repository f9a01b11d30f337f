"""Title encoder: word embeddings, multihead self-attention, aggregation.

A title of |T| token ids becomes one d-dimensional vector. Pad positions
are masked out of every attention softmax; a title that is nothing but
padding keeps position 0 unmasked so the distributions stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .data import PAD_ID, NewsItem
from .errors import ContractError
from .params import ParamStore, glorot_uniform
from .tensor import Tensor

ENCODER_PREFIX = "encoder"


@dataclass(frozen=True)
class EncoderConfig:
    word_dim: int = 300
    d: int = 400
    heads: int = 8
    att_hidden: int = 200
    title_len: int = 32
    dropout: float = 0.2

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    def validate(self) -> None:
        if self.d % self.heads != 0:
            raise ContractError(
                f"model width {self.d} is not divisible by {self.heads} heads")
        if min(self.word_dim, self.d, self.heads, self.att_hidden,
               self.title_len) < 1:
            raise ContractError("encoder dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractError(f"dropout must be in [0, 1), got {self.dropout}")


def init_encoder_params(store: ParamStore, config: EncoderConfig,
                        rng: np.random.Generator,
                        word_matrix: np.ndarray) -> None:
    """Register encoder weights: embedding table, MSA projections, scorer."""
    config.validate()
    if word_matrix.ndim != 2 or word_matrix.shape[1] != config.word_dim:
        raise ContractError(
            f"word matrix shape {word_matrix.shape} does not match "
            f"word_dim {config.word_dim}")
    p = ENCODER_PREFIX
    store.add(f"{p}.word_emb", word_matrix.astype(np.float64, copy=True))
    for name in ("wq", "wk", "wv"):
        store.add(f"{p}.{name}",
                  glorot_uniform(rng, config.word_dim, config.d))
    store.add(f"{p}.wo", glorot_uniform(rng, config.d, config.d))
    store.add(f"{p}.att_w1", glorot_uniform(rng, config.d, config.att_hidden))
    store.add(f"{p}.att_b1", np.zeros(config.att_hidden))
    store.add(f"{p}.att_w2", glorot_uniform(rng, config.att_hidden, 1))
    store.add(f"{p}.att_b2", np.zeros(1))


def token_matrix(items: Sequence[NewsItem], title_len: int) -> np.ndarray:
    """Stack NewsItem token ids into a (batch, title_len) int array."""
    out = np.zeros((len(items), title_len), dtype=np.int64)
    for row, item in enumerate(items):
        if len(item.title_tokens) != title_len:
            raise ContractError(
                f"news {item.news_id!r} has {len(item.title_tokens)} tokens, "
                f"encoder expects {title_len}")
        out[row] = item.title_tokens
    return out


def _key_mask(token_ids: np.ndarray) -> np.ndarray:
    mask = token_ids != PAD_ID
    all_pad = ~mask.any(axis=1)
    mask[all_pad, 0] = True
    return mask


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None,
            training: bool) -> Tensor:
    """Inverted dropout; identity when not training or rate is zero."""
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ContractError("training-mode dropout needs a generator")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, Tensor(keep))


def encode_token_ids(store: ParamStore, config: EncoderConfig,
                     token_ids: np.ndarray, training: bool = False,
                     rng: np.random.Generator | None = None,
                     trace=None) -> Tensor:
    """Encode a (batch, |T|) id matrix into a (batch, d) tensor."""
    token_ids = np.asarray(token_ids, dtype=np.int64)
    if token_ids.ndim != 2 or token_ids.shape[1] != config.title_len:
        raise ContractError(
            f"token id matrix must be (batch, {config.title_len}), "
            f"got {token_ids.shape}")
    word_emb = store[f"{ENCODER_PREFIX}.word_emb"]
    if token_ids.max(initial=0) >= word_emb.shape[0]:
        raise ContractError(
            f"token id {int(token_ids.max())} outside embedding table of "
            f"{word_emb.shape[0]} rows")
    batch, title_len = token_ids.shape
    mask = _key_mask(token_ids)

    embedded = T.reshape(T.take_rows(word_emb, token_ids.ravel()),
                         (batch, title_len, config.word_dim))
    embedded = dropout(embedded, config.dropout, rng, training)

    head_outputs = []
    scale = float(np.sqrt(config.head_dim))
    key_mask_3d = mask[:, None, :]
    for head in range(config.heads):
        start = head * config.head_dim
        wq = T.narrow(store[f"{ENCODER_PREFIX}.wq"], 1, start, config.head_dim)
        wk = T.narrow(store[f"{ENCODER_PREFIX}.wk"], 1, start, config.head_dim)
        wv = T.narrow(store[f"{ENCODER_PREFIX}.wv"], 1, start, config.head_dim)
        queries = T.matmul(embedded, wq)
        keys = T.matmul(embedded, wk)
        values = T.matmul(embedded, wv)
        scores = T.div_scalar(T.matmul(queries, T.transpose(keys)), scale)
        attn = T.softmax(scores, mask=key_mask_3d)
        if trace is not None:
            trace.record(f"encoder.msa.head{head}", attn.data)
        head_outputs.append(T.matmul(attn, values))
    mixed = T.matmul(T.concat(head_outputs, axis=-1),
                     store[f"{ENCODER_PREFIX}.wo"])
    mixed = dropout(mixed, config.dropout, rng, training)

    activated = T.relu(mixed)
    hidden = T.tanh(T.add(T.matmul(activated, store[f"{ENCODER_PREFIX}.att_w1"]),
                          store[f"{ENCODER_PREFIX}.att_b1"]))
    scores = T.add(T.matmul(hidden, store[f"{ENCODER_PREFIX}.att_w2"]),
                   store[f"{ENCODER_PREFIX}.att_b2"])
    beta = T.softmax(T.reshape(scores, (batch, title_len)), mask=mask)
    if trace is not None:
        trace.record("encoder.beta", beta.data)
    pooled = T.matmul(T.reshape(beta, (batch, 1, title_len)), activated)
    return T.reshape(pooled, (batch, config.d))


def encode_batch(store: ParamStore, config: EncoderConfig,
                 items: Sequence[NewsItem], training: bool = False,
                 rng: np.random.Generator | None = None,
                 trace=None) -> Tensor:
    """Encode a list of NewsItems into a (len(items), d) tensor."""
    if not items:
        raise ContractError("encode_batch needs at least one item")
    ids = token_matrix(items, config.title_len)
    return encode_token_ids(store, config, ids, training=training, rng=rng,
                            trace=trace)


def encode_news(store: ParamStore, config: EncoderConfig, item: NewsItem,
                training: bool = False,
                rng: np.random.Generator | None = None,
                trace=None) -> Tensor:
    """Encode a single NewsItem into a (d,) tensor."""
    batch = encode_batch(store, config, [item], training=training, rng=rng,
                         trace=trace)
    return T.reshape(batch, (config.d,))
