"""User graph construction and the two graph-context extractors.

The news channel squeezes a rooted relevance graph into one context
vector through root-query attention plus a sigmoid blend gate. The user
channel runs two levels of scaled dot-product attention over history
news grouped by topic, queried by the news context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .data import EMPTY_TOPIC, NewsItem
from .errors import ContractError
from .params import ParamStore, glorot_uniform, uniform_init
from .tensor import Tensor

UNK_TOPIC = "⟨unk⟩"
CHANNELS_PREFIX = "channels"


class TopicTable:
    """Topic label to embedding row map with reserved fallback labels."""

    def __init__(self, topics: Iterable[str]) -> None:
        names = sorted(set(topics) | {EMPTY_TOPIC, UNK_TOPIC})
        self._names = names
        self._index = {name: i for i, name in enumerate(names)}

    def index(self, topic: str) -> int:
        return self._index.get(topic, self._index[UNK_TOPIC])

    def names(self) -> list[str]:
        return list(self._names)

    def __len__(self) -> int:
        return len(self._names)


def init_channel_params(store: ParamStore, d: int, topic_table: TopicTable,
                        rng: np.random.Generator) -> None:
    """Register the context-extractor weights, shared across all layers."""
    p = CHANNELS_PREFIX
    store.add(f"{p}.news_wq", glorot_uniform(rng, d, d))
    store.add(f"{p}.news_wk", glorot_uniform(rng, d, d))
    store.add(f"{p}.gate_w", glorot_uniform(rng, 2 * d, d))
    store.add(f"{p}.gate_b", np.zeros(d))
    store.add(f"{p}.topic_emb", uniform_init(rng, (len(topic_table), d)))


@dataclass(frozen=True)
class UserGraph:
    """History news nodes plus topic nodes with three typed edge sets.

    News nodes are indexed by history position; topic nodes by position
    in topic_names (first appearance order). Edge pairs are stored with
    the smaller index first within their own index space.
    """

    news_topics: tuple[str, ...]
    topic_names: tuple[str, ...]
    news_news_edges: frozenset[tuple[int, int]]
    news_topic_edges: frozenset[tuple[int, int]]
    topic_topic_edges: frozenset[tuple[int, int]]

    @property
    def n_news(self) -> int:
        return len(self.news_topics)

    @property
    def n_topics(self) -> int:
        return len(self.topic_names)

    def group_mask(self) -> np.ndarray:
        """(n_topics, n_news) booleans marking each topic's news members."""
        mask = np.zeros((self.n_topics, self.n_news), dtype=bool)
        position = {name: i for i, name in enumerate(self.topic_names)}
        for i, topic in enumerate(self.news_topics):
            mask[position[topic], i] = True
        return mask

    def adjacency_matrix(self) -> np.ndarray:
        """Symmetric (n_news + n_topics)^2 booleans over all three edge sets.

        News nodes occupy indices [0, n_news); topic nodes follow.
        """
        total = self.n_news + self.n_topics
        adj = np.zeros((total, total), dtype=bool)
        for i, j in self.news_news_edges:
            adj[i, j] = adj[j, i] = True
        for i, t in self.news_topic_edges:
            adj[i, self.n_news + t] = adj[self.n_news + t, i] = True
        for a, b in self.topic_topic_edges:
            adj[self.n_news + a, self.n_news + b] = True
            adj[self.n_news + b, self.n_news + a] = True
        return adj


def build_user_graph(history: Sequence[NewsItem]) -> UserGraph:
    """Apply the three topology rules to one click history.

    Same-topic news pairs connect, each news connects to its topic node,
    and topic nodes form a complete graph. Placeholder entries group
    under their own reserved topic like any other news.
    """
    if not history:
        raise ContractError("user graph needs a non-empty history")
    news_topics = tuple(item.topic for item in history)
    topic_names: list[str] = []
    members: dict[str, list[int]] = {}
    for i, topic in enumerate(news_topics):
        if topic not in members:
            members[topic] = []
            topic_names.append(topic)
        members[topic].append(i)
    news_news = set()
    for indices in members.values():
        for a in range(len(indices)):
            for b in range(a + 1, len(indices)):
                news_news.add((indices[a], indices[b]))
    position = {name: i for i, name in enumerate(topic_names)}
    news_topic = {(i, position[topic]) for i, topic in enumerate(news_topics)}
    topic_topic = {(a, b) for a in range(len(topic_names))
                   for b in range(a + 1, len(topic_names))}
    return UserGraph(
        news_topics=news_topics,
        topic_names=tuple(topic_names),
        news_news_edges=frozenset(news_news),
        news_topic_edges=frozenset(news_topic),
        topic_topic_edges=frozenset(topic_topic),
    )


def news_graph_context(store: ParamStore, node_embeddings: Tensor,
                       trace=None, trace_name: str = "news_ctx.alpha"
                       ) -> Tensor:
    """Blend the root embedding with root-query attention over the rest.

    Row 0 is the root. With no other rows the root embedding passes
    through unchanged. Values are the raw node embeddings; only queries
    and keys are projected.
    """
    if node_embeddings.ndim != 2:
        raise ContractError(
            f"node embeddings must be 2-D, got {node_embeddings.shape}")
    n, d = node_embeddings.shape
    expected = store[f"{CHANNELS_PREFIX}.news_wq"].shape[0]
    if d != expected:
        raise ContractError(
            f"node embedding width {d} does not match channel width {expected}")
    root = T.narrow(node_embeddings, 0, 0, 1)
    if n == 1:
        return T.reshape(root, (d,))
    others = T.narrow(node_embeddings, 0, 1, n - 1)
    query = T.matmul(root, store[f"{CHANNELS_PREFIX}.news_wq"])
    keys = T.matmul(others, store[f"{CHANNELS_PREFIX}.news_wk"])
    scores = T.div_scalar(T.matmul(query, T.transpose(keys)),
                          float(np.sqrt(d)))
    alpha = T.softmax(scores)
    if trace is not None:
        trace.record(trace_name, alpha.data)
    h_global = T.matmul(alpha, others)
    gate = T.sigmoid(T.add(T.matmul(T.concat([root, h_global], axis=-1),
                                    store[f"{CHANNELS_PREFIX}.gate_w"]),
                           store[f"{CHANNELS_PREFIX}.gate_b"]))
    blended = T.add(T.mul(gate, root),
                    T.mul(T.sub(Tensor(np.ones((1, d))), gate), h_global))
    return T.reshape(blended, (d,))


def sequence_sa_context(store: ParamStore, node_embeddings: Tensor,
                        trace=None) -> Tensor:
    """Context over a flat relevant-news list; same math, no graph."""
    return news_graph_context(store, node_embeddings, trace=trace,
                              trace_name="seq_ctx.alpha")


def user_graph_context(news_embeddings: Tensor, news_context: Tensor,
                       group_mask: np.ndarray, trace=None) -> Tensor:
    """Two-level attention over history news, queried by the news context.

    Level one attends within each topic group over its news embeddings;
    level two attends across the per-topic summaries. Both levels are
    single-query scaled dot-product with raw values.
    """
    if news_embeddings.ndim != 2:
        raise ContractError(
            f"news embeddings must be 2-D, got {news_embeddings.shape}")
    n_news, d = news_embeddings.shape
    group_mask = np.asarray(group_mask, dtype=bool)
    if group_mask.ndim != 2 or group_mask.shape[1] != n_news:
        raise ContractError(
            f"group mask {group_mask.shape} does not match {n_news} news rows")
    if not group_mask.any(axis=1).all():
        raise ContractError("a topic group has no news members")
    scale = float(np.sqrt(d))
    query = T.reshape(news_context, (1, d))
    news_scores = T.div_scalar(T.matmul(query, T.transpose(news_embeddings)),
                               scale)
    within = T.softmax(news_scores, mask=group_mask)
    if trace is not None:
        trace.record("user_ctx.within_topic", within.data)
    topic_summaries = T.matmul(within, news_embeddings)
    topic_scores = T.div_scalar(
        T.matmul(query, T.transpose(topic_summaries)), scale)
    across = T.softmax(topic_scores)
    if trace is not None:
        trace.record("user_ctx.across_topics", across.data)
    pooled = T.matmul(across, topic_summaries)
    return T.reshape(pooled, (d,))
