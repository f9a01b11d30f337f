"""Stacked mutually conditioned graph attention over both channels.

Each layer linearly transforms node embeddings, scores each edge with a
key network fed by the opposite channel's context vector, normalizes
scores over neighborhoods, and applies a ReLU residual update. Contexts
are re-extracted after both channels update, so layer l+1 sees fresh
conditioning. Ablation flags swap the key networks for context-free
ones, turning either side into a plain graph attention stack.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .channels import news_graph_context, sequence_sa_context, user_graph_context
from .errors import ContractError
from .params import ParamStore, glorot_uniform, uniform_init
from .tensor import Tensor

SA_MODES = ("graph", "seq", "none")


@dataclass(frozen=True)
class InteractionConfig:
    layers: int = 3
    interact_news: bool = True
    interact_user: bool = True
    sa_mode: str = "graph"

    def validate(self) -> None:
        if self.layers < 1:
            raise ContractError(f"layer count must be >= 1, got {self.layers}")
        if self.sa_mode not in SA_MODES:
            raise ContractError(
                f"sa_mode must be one of {SA_MODES}, got {self.sa_mode!r}")


def _layer_prefix(side: str, layer: int) -> str:
    return f"interact.{side}.l{layer}"


def init_interaction_params(store: ParamStore, d: int,
                            config: InteractionConfig,
                            rng: np.random.Generator) -> None:
    """Register per-layer weights for both channels.

    The key network takes [context; h_i; h_j] (3d) on an interactive
    side and [h_i; h_j] (2d) on an ablated one. News-side weights exist
    only when the news channel is an actual graph.
    """
    config.validate()
    sides = []
    if config.sa_mode == "graph":
        sides.append(("news", config.interact_news))
    sides.append(("user", config.interact_user))
    for side, interactive in sides:
        key_in = (3 if interactive else 2) * d
        for layer in range(config.layers):
            p = _layer_prefix(side, layer)
            store.add(f"{p}.w_hat", glorot_uniform(rng, d, d))
            store.add(f"{p}.b_hat", np.zeros(d))
            store.add(f"{p}.key_w1", glorot_uniform(rng, key_in, d))
            store.add(f"{p}.key_b1", np.zeros(d))
            store.add(f"{p}.key_w2", glorot_uniform(rng, d, d))
            store.add(f"{p}.key_b2", np.zeros(d))
            store.add(f"{p}.attn", uniform_init(rng, (d,)))


def _gat_update(store: ParamStore, side: str, layer: int, nodes: Tensor,
                context: Tensor | None, adjacency: np.ndarray,
                interactive: bool, trace=None) -> Tensor:
    n, d = nodes.shape
    if adjacency.shape != (n, n):
        raise ContractError(
            f"adjacency {adjacency.shape} does not match {n} nodes")
    p = _layer_prefix(side, layer)
    transformed = T.add(T.matmul(nodes, store[f"{p}.w_hat"]),
                        store[f"{p}.b_hat"])
    key_w1 = store[f"{p}.key_w1"]
    if interactive:
        if context is None:
            raise ContractError(f"{side} update at layer {layer} needs the "
                                "opposite channel context")
        w1_ctx = T.narrow(key_w1, 0, 0, d)
        w1_self = T.narrow(key_w1, 0, d, d)
        w1_peer = T.narrow(key_w1, 0, 2 * d, d)
        base = T.add(T.matmul(T.reshape(context, (1, d)), w1_ctx),
                     store[f"{p}.key_b1"])
    else:
        w1_self = T.narrow(key_w1, 0, 0, d)
        w1_peer = T.narrow(key_w1, 0, d, d)
        base = store[f"{p}.key_b1"]
    from_self = T.reshape(T.matmul(nodes, w1_self), (n, 1, d))
    from_peer = T.reshape(T.matmul(nodes, w1_peer), (1, n, d))
    hidden = T.relu(T.add(T.add(from_self, from_peer), base))
    keys = T.add(T.matmul(hidden, store[f"{p}.key_w2"]),
                 store[f"{p}.key_b2"])
    logits = T.leaky_relu(T.matmul(keys, store[f"{p}.attn"]))
    alpha = T.softmax(logits, mask=adjacency)
    if trace is not None:
        trace.record(f"{side}_gat.l{layer}.alpha", alpha.data)
    return T.add(T.relu(T.matmul(alpha, transformed)), nodes)


def update_news_nodes(store: ParamStore, layer: int, nodes: Tensor,
                      user_context: Tensor | None, adjacency: np.ndarray,
                      interactive: bool = True, trace=None) -> Tensor:
    """One attention update over the candidate's relevance graph.

    The context argument is ignored on the ablated path. An isolated
    node is a caller bug here: construction guarantees every node is
    root-connected.
    """
    adjacency = np.asarray(adjacency, dtype=bool)
    if adjacency.diagonal().any():
        raise ContractError("news adjacency must not contain self loops")
    if not adjacency.any(axis=1).all():
        raise ContractError("news graph has an isolated node")
    return _gat_update(store, "news", layer, nodes,
                       user_context if interactive else None, adjacency,
                       interactive, trace=trace)


def update_user_nodes(store: ParamStore, layer: int, nodes: Tensor,
                      news_context: Tensor | None, adjacency: np.ndarray,
                      interactive: bool = True, trace=None) -> Tensor:
    """One attention update over the heterogeneous user graph.

    All three edge types count uniformly as neighbors. A node with no
    neighbors attends to itself alone so its softmax stays defined.
    """
    adjacency = np.asarray(adjacency, dtype=bool)
    if adjacency.diagonal().any():
        raise ContractError("user adjacency must not contain self loops")
    isolated = ~adjacency.any(axis=1)
    if isolated.any():
        adjacency = adjacency.copy()
        idx = np.flatnonzero(isolated)
        adjacency[idx, idx] = True
    return _gat_update(store, "user", layer, nodes,
                       news_context if interactive else None, adjacency,
                       interactive, trace=trace)


def dual_interact(store: ParamStore, config: InteractionConfig,
                  news_nodes: Tensor, history_news: Tensor,
                  topic_nodes: Tensor, news_adjacency: np.ndarray | None,
                  user_adjacency: np.ndarray, group_mask: np.ndarray,
                  trace=None) -> tuple[Tensor, Tensor]:
    """Run the full interaction stack; returns final (r_n, r_u) contexts.

    news_nodes is the candidate graph embedding matrix with the root in
    row 0 (a bare root in the augmentation-free mode, the flat retrieval
    list in sequence mode). history_news and topic_nodes concatenate
    into the user node matrix. The news channel only updates when it has
    edges to attend over; its context is still re-extracted per layer.
    """
    config.validate()
    extract_news = (sequence_sa_context if config.sa_mode == "seq"
                    else news_graph_context)
    n_history = history_news.shape[0]
    user_nodes = T.concat([history_news, topic_nodes], axis=0)
    run_news_updates = (config.sa_mode == "graph"
                        and news_adjacency is not None
                        and bool(np.asarray(news_adjacency).any()))

    def user_context_of(h_u: Tensor, c_n: Tensor) -> Tensor:
        news_rows = T.narrow(h_u, 0, 0, n_history)
        return user_graph_context(news_rows, c_n, group_mask, trace=trace)

    c_n = extract_news(store, news_nodes, trace=trace)
    c_u = user_context_of(user_nodes, c_n)
    for layer in range(config.layers):
        if run_news_updates:
            news_nodes = update_news_nodes(
                store, layer, news_nodes, c_u, news_adjacency,
                interactive=config.interact_news, trace=trace)
        user_nodes = update_user_nodes(
            store, layer, user_nodes, c_n, user_adjacency,
            interactive=config.interact_user, trace=trace)
        if run_news_updates:
            c_n = extract_news(store, news_nodes, trace=trace)
        c_u = user_context_of(user_nodes, c_n)
    return c_n, c_u
