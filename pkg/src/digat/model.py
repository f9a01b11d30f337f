"""Full recommender assembly: shared parameter store, per-impression
forward pass, candidate-graph materialization, and checkpoint I/O.

A forward pass encodes every distinct news title exactly once (history
plus all candidate graph nodes in one batch), then routes rows into the
user graph and each candidate's augmented graph before the interaction
stack produces the two final context vectors whose dot product is the
click score.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .channels import TopicTable, build_user_graph, init_channel_params
from .data import NewsStore
from .encoder import EncoderConfig, encode_batch, init_encoder_params
from .errors import ContractError, DataFormatError
from .interaction import InteractionConfig, dual_interact, init_interaction_params
from .optim import AdamState
from .params import ParamStore
from .sag import SemanticAugmentedGraph
from .tensor import Tensor

__all__ = [
    "ModelConfig",
    "CandidateGraph",
    "DigatModel",
    "graph_for_candidate",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_META_KEY = "__meta__"


@dataclass(frozen=True)
class ModelConfig:
    """Everything that fixes parameter shapes and the forward topology."""

    d: int = 400
    word_dim: int = 300
    heads: int = 8
    att_hidden: int = 200
    title_len: int = 32
    history_len: int = 50
    dropout: float = 0.2
    layers: int = 3
    sa_mode: str = "graph"
    interact_news: bool = True
    interact_user: bool = True
    neighbors: int = 5
    hops: int = 2

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(word_dim=self.word_dim, d=self.d, heads=self.heads,
                             att_hidden=self.att_hidden, title_len=self.title_len,
                             dropout=self.dropout)

    def interaction_config(self) -> InteractionConfig:
        return InteractionConfig(layers=self.layers,
                                 interact_news=self.interact_news,
                                 interact_user=self.interact_user,
                                 sa_mode=self.sa_mode)

    def validate(self) -> None:
        self.encoder_config().validate()
        self.interaction_config().validate()
        if self.history_len < 1:
            raise ContractError(f"history_len must be positive, got {self.history_len}")
        if self.neighbors < 1:
            raise ContractError(f"neighbors must be at least 1, got {self.neighbors}")
        if self.hops < 0:
            raise ContractError(f"hops must be non-negative, got {self.hops}")


@dataclass(frozen=True)
class CandidateGraph:
    """Materialized per-candidate node list, root first.

    adjacency is the dense symmetric boolean matrix for graph-structured
    candidates and None when the nodes are a flat list (sequence mode)
    or a bare root (augmentation off).
    """

    news_ids: tuple[str, ...]
    adjacency: np.ndarray | None

    def __post_init__(self) -> None:
        if not self.news_ids:
            raise ContractError("candidate graph needs at least the root node")
        if self.adjacency is not None:
            n = len(self.news_ids)
            if self.adjacency.shape != (n, n):
                raise ContractError(
                    f"adjacency shape {self.adjacency.shape} does not match "
                    f"{n} nodes")

    @property
    def candidate_id(self) -> str:
        return self.news_ids[0]


def graph_for_candidate(sa_mode: str, candidate_id: str,
                        cache: Mapping[str, SemanticAugmentedGraph] | None,
                        ) -> CandidateGraph:
    """Turn a cache entry (or nothing) into the model-facing graph.

    In sequence mode the cached graph is the flat star built with a
    single hop; its edges are deliberately dropped because the nodes are
    consumed as an unstructured list.
    """
    if sa_mode == "none":
        return CandidateGraph((candidate_id,), None)
    if cache is None or candidate_id not in cache:
        raise DataFormatError(
            f"no cached graph for candidate {candidate_id!r}; "
            f"run build-sag first")
    sag = cache[candidate_id]
    if sag.root_id != candidate_id:
        raise ContractError(
            f"cache entry for {candidate_id!r} is rooted at {sag.root_id!r}")
    if sa_mode == "seq":
        return CandidateGraph(sag.nodes, None)
    return CandidateGraph(sag.nodes, sag.adjacency_matrix())


class DigatModel:
    """Parameter owner plus the impression-level forward pass."""

    def __init__(self, config: ModelConfig, news_store: NewsStore,
                 word_matrix: np.ndarray, seed: int) -> None:
        config.validate()
        word_matrix = np.asarray(word_matrix, dtype=np.float64)
        if word_matrix.ndim != 2 or word_matrix.shape[1] != config.word_dim:
            raise ContractError(
                f"word matrix shape {word_matrix.shape} does not match "
                f"word_dim={config.word_dim}")
        self.config = config
        self.news = news_store
        self.topics = TopicTable(news_store.topics())
        self._encoder_cfg = config.encoder_config()
        self._interaction_cfg = config.interaction_config()
        rng = np.random.default_rng(seed)
        self.params = ParamStore()
        init_encoder_params(self.params, self._encoder_cfg, rng, word_matrix)
        init_channel_params(self.params, config.d, self.topics, rng)
        init_interaction_params(self.params, config.d, self._interaction_cfg, rng)

    def score_impression(self, history_ids: Sequence[str],
                         candidates: Sequence[CandidateGraph],
                         training: bool = False,
                         rng: np.random.Generator | None = None,
                         trace=None) -> Tensor:
        """Score every candidate against the user; returns (n_candidates,).

        history_ids is the fixed-length padded history from the data
        layer. Scores come back in candidate order.
        """
        if not history_ids:
            raise ContractError("cannot score an impression with an empty history")
        if not candidates:
            raise ContractError("cannot score an impression without candidates")

        unique_ids: dict[str, int] = {}
        for nid in history_ids:
            unique_ids.setdefault(nid, len(unique_ids))
        for graph in candidates:
            for nid in graph.news_ids:
                unique_ids.setdefault(nid, len(unique_ids))
        items = [self.news.resolve(nid) for nid in unique_ids]
        encoded = encode_batch(self.params, self._encoder_cfg, items,
                               training=training, rng=rng, trace=trace)

        history_items = [self.news.resolve(nid) for nid in history_ids]
        user_graph = build_user_graph(history_items)
        user_adjacency = user_graph.adjacency_matrix()
        group_mask = user_graph.group_mask()
        history_rows = T.take_rows(
            encoded, [unique_ids[nid] for nid in history_ids])
        topic_rows = T.take_rows(
            self.params["channels.topic_emb"],
            [self.topics.index(name) for name in user_graph.topic_names])

        scores = []
        for graph in candidates:
            news_rows = T.take_rows(
                encoded, [unique_ids[nid] for nid in graph.news_ids])
            r_n, r_u = dual_interact(
                self.params, self._interaction_cfg, news_rows, history_rows,
                topic_rows, graph.adjacency, user_adjacency, group_mask,
                trace=trace)
            scores.append(T.dot(r_n, r_u))
        return T.stack_scalars(scores)


def save_checkpoint(path, params: ParamStore, meta: dict,
                    optimizer: AdamState | None = None) -> None:
    """Write parameters (and optionally optimizer moments) to an npz file.

    meta is stored as a JSON string so shapes, hashes, and counters
    survive the round trip without numpy coercion surprises.
    """
    arrays: dict[str, np.ndarray] = {}
    for name, value in params.state_arrays().items():
        arrays[f"param:{name}"] = value
    meta = dict(meta)
    if optimizer is not None:
        for name, m in optimizer.first_moment.items():
            arrays[f"adam_m:{name}"] = m
        for name, v in optimizer.second_moment.items():
            arrays[f"adam_v:{name}"] = v
        meta["adam"] = {
            "step": optimizer.step,
            "learning_rate": optimizer.learning_rate,
            "beta1": optimizer.beta1,
            "beta2": optimizer.beta2,
            "epsilon": optimizer.epsilon,
        }
    arrays[CHECKPOINT_META_KEY] = np.frombuffer(
        json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], AdamState | None, dict]:
    """Read back (parameter arrays, optimizer state or None, meta dict)."""
    try:
        with np.load(path) as bundle:
            raw = {key: bundle[key] for key in bundle.files}
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    if CHECKPOINT_META_KEY not in raw:
        raise DataFormatError(f"checkpoint {path} has no metadata record")
    meta = json.loads(raw.pop(CHECKPOINT_META_KEY).tobytes().decode("utf-8"))
    param_arrays: dict[str, np.ndarray] = {}
    moments_m: dict[str, np.ndarray] = {}
    moments_v: dict[str, np.ndarray] = {}
    for key, value in raw.items():
        kind, _, name = key.partition(":")
        if kind == "param":
            param_arrays[name] = value
        elif kind == "adam_m":
            moments_m[name] = value
        elif kind == "adam_v":
            moments_v[name] = value
        else:
            raise DataFormatError(f"checkpoint {path} has unknown record {key!r}")
    optimizer = None
    if "adam" in meta:
        settings = meta["adam"]
        optimizer = AdamState(
            learning_rate=float(settings["learning_rate"]),
            beta1=float(settings["beta1"]),
            beta2=float(settings["beta2"]),
            epsilon=float(settings["epsilon"]),
            step=int(settings["step"]),
            first_moment=moments_m,
            second_moment=moments_v)
    return param_arrays, optimizer, meta
