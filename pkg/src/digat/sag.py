"""Semantic-augmented graph construction over a news corpus.

Each candidate news item becomes the root of a small undirected graph
grown by repeated top-M similarity retrieval out to at most K hops.
Similarity backends are pluggable; a TF-IDF provider and a precomputed
embedding-file provider ship here. Graphs serialize to a line-oriented
JSON cache so construction can run once, offline.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .data import PAD_ID, NewsItem, open_text
from .errors import ContractError, DataFormatError

CACHE_FORMAT = "sag-cache-v1"


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors; zero vectors score 0.0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(
            f"cosine_similarity dimension mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


@dataclass(frozen=True)
class SemanticAugmentedGraph:
    """Rooted undirected news graph with per-node hop labels.

    nodes[0] is the root (hop 0); nodes are unique and listed in
    insertion order. Edges are canonical sorted id pairs, no self loops.
    """

    nodes: tuple[str, ...]
    hops: tuple[int, ...]
    edges: frozenset[tuple[str, str]]

    @property
    def root_id(self) -> str:
        return self.nodes[0]

    def hop_of(self, news_id: str) -> int:
        return self.hops[self.nodes.index(news_id)]

    def adjacency_matrix(self) -> np.ndarray:
        """Symmetric boolean (n, n) matrix; diagonal stays False."""
        index = {nid: i for i, nid in enumerate(self.nodes)}
        adj = np.zeros((len(self.nodes), len(self.nodes)), dtype=bool)
        for a, b in self.edges:
            adj[index[a], index[b]] = True
            adj[index[b], index[a]] = True
        return adj


def _canonical_edge(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class SimilarityProvider:
    """Exact-search retrieval shared by every similarity backend.

    Subclasses store one L2-normalized vector per corpus news id and
    expose scores through score_all; cosine then reduces to dot product.
    """

    tag = "abstract"

    def ids(self) -> list[str]:
        raise NotImplementedError

    def score(self, a: str, b: str) -> float:
        raise NotImplementedError

    def score_all(self, query_id: str) -> np.ndarray:
        """Scores of the query against every corpus id, aligned to ids()."""
        raise NotImplementedError

    def _check_known(self, news_id: str) -> None:
        if news_id not in self._index:
            raise DataFormatError(f"unknown news id {news_id!r} in retrieval")

    def retrieve_top_m(self, query_id: str, m: int,
                       exclude: Iterable[str] = ()) -> list[tuple[str, float]]:
        """The m best-scoring items, never the query itself.

        Ties break on ascending news id; when fewer than m candidates
        remain everything left is returned.
        """
        if m < 1:
            raise ContractError(f"retrieval size must be >= 1, got {m}")
        self._check_known(query_id)
        skip = set(exclude)
        skip.add(query_id)
        scores = self.score_all(query_id)
        ranked = sorted(
            ((nid, float(s)) for nid, s in zip(self.ids(), scores)
             if nid not in skip),
            key=lambda pair: (-pair[1], pair[0]))
        return ranked[:m]


class TfidfProvider(SimilarityProvider):
    """Title-token TF-IDF vectors with idf(t) = ln(|C| / (1 + df(t))) + 1.

    Rows are L2-normalized; all-pad documents keep a zero vector and
    score 0 against everything.
    """

    tag = "tfidf"

    def __init__(self, corpus: Sequence[NewsItem]) -> None:
        if not corpus:
            raise ContractError("TF-IDF provider needs a non-empty corpus")
        self._ids = [item.news_id for item in corpus]
        self._index = {nid: i for i, nid in enumerate(self._ids)}
        if len(self._index) != len(self._ids):
            raise ContractError("duplicate news ids in TF-IDF corpus")
        n_docs = len(corpus)
        width = 1 + max((max(item.title_tokens, default=0) for item in corpus),
                        default=0)
        matrix = sp.lil_matrix((n_docs, width), dtype=np.float64)
        df = np.zeros(width, dtype=np.float64)
        counts_per_doc = []
        for row, item in enumerate(corpus):
            counts: dict[int, int] = {}
            for token in item.title_tokens:
                if token == PAD_ID:
                    continue
                counts[token] = counts.get(token, 0) + 1
            counts_per_doc.append(counts)
            for token in counts:
                df[token] += 1.0
        idf = np.log(n_docs / (1.0 + df)) + 1.0
        for row, counts in enumerate(counts_per_doc):
            for token, count in counts.items():
                matrix[row, token] = count * idf[token]
        matrix = matrix.tocsr()
        norms = np.sqrt(np.asarray(matrix.multiply(matrix).sum(axis=1)).ravel())
        norms[norms == 0.0] = 1.0
        self._matrix = sp.diags(1.0 / norms) @ matrix

    def ids(self) -> list[str]:
        return list(self._ids)

    def score(self, a: str, b: str) -> float:
        self._check_known(a)
        self._check_known(b)
        va = self._matrix.getrow(self._index[a])
        vb = self._matrix.getrow(self._index[b])
        return float(va.multiply(vb).sum())

    def score_all(self, query_id: str) -> np.ndarray:
        self._check_known(query_id)
        row = self._matrix.getrow(self._index[query_id])
        return np.asarray((self._matrix @ row.T).todense()).ravel()


class EmbeddingProvider(SimilarityProvider):
    """Dense per-news vectors supplied by an offline encoder run."""

    tag = "embeddings"

    def __init__(self, vectors: Mapping[str, np.ndarray]) -> None:
        if not vectors:
            raise ContractError("embedding provider needs at least one vector")
        self._ids = list(vectors)
        self._index = {nid: i for i, nid in enumerate(self._ids)}
        dims = {np.asarray(v).shape for v in vectors.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise ContractError(
                f"embedding vectors must share one 1-D shape, saw {sorted(map(str, dims))}")
        matrix = np.stack([np.asarray(vectors[nid], dtype=np.float64)
                           for nid in self._ids])
        norms = np.linalg.norm(matrix, axis=1)
        norms[norms == 0.0] = 1.0
        self._matrix = matrix / norms[:, None]

    def ids(self) -> list[str]:
        return list(self._ids)

    def vector(self, news_id: str) -> np.ndarray:
        self._check_known(news_id)
        return self._matrix[self._index[news_id]].copy()

    def score(self, a: str, b: str) -> float:
        self._check_known(a)
        self._check_known(b)
        return float(self._matrix[self._index[a]] @ self._matrix[self._index[b]])

    def score_all(self, query_id: str) -> np.ndarray:
        self._check_known(query_id)
        return self._matrix @ self._matrix[self._index[query_id]]


def load_embedding_store(path, corpus_ids: Iterable[str] | None = None
                         ) -> EmbeddingProvider:
    """Read "news_id<TAB>f1 f2 ... fD" lines into an EmbeddingProvider.

    When corpus_ids is given, every corpus id must appear in the file.
    """
    vectors: dict[str, np.ndarray] = {}
    dim: int | None = None
    with open_text(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            news_id, tab, rest = line.partition("\t")
            if not tab or not news_id:
                raise DataFormatError(
                    f"{path}:{line_no}: expected 'news_id<TAB>values'")
            if news_id in vectors:
                raise DataFormatError(
                    f"{path}:{line_no}: duplicate news id {news_id!r}")
            try:
                values = np.array([float(v) for v in rest.split()],
                                  dtype=np.float64)
            except ValueError:
                raise DataFormatError(
                    f"{path}:{line_no}: non-numeric vector entry") from None
            if dim is None:
                dim = values.size
                if dim == 0:
                    raise DataFormatError(f"{path}:{line_no}: empty vector")
            elif values.size != dim:
                raise DataFormatError(
                    f"{path}:{line_no}: vector for {news_id!r} has "
                    f"{values.size} values, expected {dim}")
            vectors[news_id] = values
    if corpus_ids is not None:
        missing = sorted(set(corpus_ids) - set(vectors))
        if missing:
            raise DataFormatError(
                f"{path}: embedding store is missing corpus news ids: "
                f"{', '.join(missing)}")
    if not vectors:
        raise DataFormatError(f"{path}: no vectors found")
    return EmbeddingProvider(vectors)


def build_sag(candidate: str, provider: SimilarityProvider, m: int,
              k: int) -> SemanticAugmentedGraph:
    """Grow the candidate's graph by FIFO hop-bounded top-m retrieval.

    Each popped node retrieves its m most similar corpus items (itself
    excluded). New arrivals get hop = parent hop + 1 and keep expanding
    while their hop is below k; an already-present arrival only gains
    the connecting edge. k = 0 yields the bare root.
    """
    if m < 1:
        raise ContractError(f"m must be >= 1, got {m}")
    if k < 0:
        raise ContractError(f"k must be >= 0, got {k}")
    provider._check_known(candidate)
    nodes = [candidate]
    hop = {candidate: 0}
    edges: set[tuple[str, str]] = set()
    frontier: deque[str] = deque([candidate] if k > 0 else [])
    while frontier:
        current = frontier.popleft()
        for neighbor, _score in provider.retrieve_top_m(current, m):
            if neighbor not in hop:
                hop[neighbor] = hop[current] + 1
                nodes.append(neighbor)
                if hop[neighbor] < k:
                    frontier.append(neighbor)
            edges.add(_canonical_edge(current, neighbor))
    return SemanticAugmentedGraph(
        nodes=tuple(nodes),
        hops=tuple(hop[nid] for nid in nodes),
        edges=frozenset(edges),
    )


def _validate_graph(graph: SemanticAugmentedGraph, k: int,
                    where: str) -> None:
    nodes = graph.nodes
    if not nodes:
        raise DataFormatError(f"{where}: graph has no nodes")
    if len(set(nodes)) != len(nodes):
        raise DataFormatError(f"{where}: duplicate node ids")
    if len(graph.hops) != len(nodes):
        raise DataFormatError(f"{where}: node and hop counts differ")
    if graph.hops[0] != 0:
        raise DataFormatError(f"{where}: root hop must be 0")
    if any(h < 0 or h > k for h in graph.hops):
        raise DataFormatError(f"{where}: hop label outside [0, {k}]")
    node_set = set(nodes)
    neighbors: dict[str, set[str]] = {nid: set() for nid in nodes}
    for edge in graph.edges:
        a, b = edge
        if a == b:
            raise DataFormatError(f"{where}: self edge on {a!r}")
        if a not in node_set or b not in node_set:
            raise DataFormatError(f"{where}: edge {edge!r} has a dangling endpoint")
        neighbors[a].add(b)
        neighbors[b].add(a)
    seen = {graph.root_id}
    queue = deque([graph.root_id])
    while queue:
        for nxt in neighbors[queue.popleft()]:
            if nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    if seen != node_set:
        stranded = sorted(node_set - seen)
        raise DataFormatError(f"{where}: nodes not connected to root: {stranded}")


def serialize_sag(graph: SemanticAugmentedGraph, m: int, k: int,
                  provider_tag: str) -> str:
    """One self-describing JSON line: header fields, node table, edges."""
    record = {
        "candidate": graph.root_id,
        "m": m,
        "k": k,
        "provider": provider_tag,
        "nodes": [[nid, int(h)] for nid, h in zip(graph.nodes, graph.hops)],
        "edges": sorted(list(edge) for edge in graph.edges),
    }
    return json.dumps(record, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"))


def load_sag(line: str, where: str = "sag record"
             ) -> tuple[SemanticAugmentedGraph, dict]:
    """Parse one serialized graph, enforcing every structural invariant."""
    try:
        record = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{where}: invalid JSON at column "
                              f"{exc.colno}: {exc.msg}") from None
    for field in ("candidate", "m", "k", "provider", "nodes", "edges"):
        if field not in record:
            raise DataFormatError(f"{where}: missing field {field!r}")
    try:
        nodes = tuple(str(nid) for nid, _ in record["nodes"])
        hops = tuple(int(h) for _, h in record["nodes"])
        edges = frozenset(_canonical_edge(str(a), str(b))
                          for a, b in record["edges"])
    except (TypeError, ValueError):
        raise DataFormatError(f"{where}: malformed node or edge table") from None
    graph = SemanticAugmentedGraph(nodes=nodes, hops=hops, edges=edges)
    if not nodes or nodes[0] != record["candidate"]:
        raise DataFormatError(f"{where}: node 0 must be the candidate")
    _validate_graph(graph, int(record["k"]), where)
    meta = {"m": int(record["m"]), "k": int(record["k"]),
            "provider": str(record["provider"])}
    return graph, meta


def write_sag_cache(path, graphs: Mapping[str, SemanticAugmentedGraph],
                    m: int, k: int, provider_tag: str,
                    config_hash: str | None = None) -> None:
    """Write one graph per line, sorted by candidate id for stable bytes.

    An optional header line carries the configuration digest the cache
    was built under, letting downstream commands refuse a stale cache.
    """
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash is not None:
            header = {"cache_format": CACHE_FORMAT, "config_hash": config_hash}
            fh.write(json.dumps(header, sort_keys=True,
                                separators=(",", ":")) + "\n")
        for candidate in sorted(graphs):
            graph = graphs[candidate]
            if graph.root_id != candidate:
                raise ContractError(
                    f"cache key {candidate!r} does not match graph root "
                    f"{graph.root_id!r}")
            fh.write(serialize_sag(graph, m, k, provider_tag) + "\n")


def read_sag_cache(path) -> tuple[dict[str, SemanticAugmentedGraph], dict]:
    """Load a cache file back into {candidate: graph} plus shared meta.

    meta holds the common m/k/provider of every record, plus the header's
    config_hash when present (None for headerless caches).
    """
    graphs: dict[str, SemanticAugmentedGraph] = {}
    meta: dict | None = None
    header_hash: str | None = None
    with open_text(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line_no == 1 and '"cache_format"' in line:
                try:
                    header = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataFormatError(
                        f"{path}:1: unreadable cache header: {exc}")
                if header.get("cache_format") != CACHE_FORMAT:
                    raise DataFormatError(
                        f"{path}:1: unsupported cache format "
                        f"{header.get('cache_format')!r}")
                header_hash = header.get("config_hash")
                continue
            graph, record_meta = load_sag(line, where=f"{path}:{line_no}")
            if meta is None:
                meta = record_meta
            elif record_meta != meta:
                raise DataFormatError(
                    f"{path}:{line_no}: mixed m/k/provider settings in one cache")
            if graph.root_id in graphs:
                raise DataFormatError(
                    f"{path}:{line_no}: duplicate graph for {graph.root_id!r}")
            graphs[graph.root_id] = graph
    if meta is None:
        raise DataFormatError(f"{path}: empty cache file")
    meta = dict(meta)
    meta["config_hash"] = header_hash
    return graphs, meta
