"""Command-line entry points.

Commands: build-sag, train, evaluate, inspect-graph, sweep. Each takes a
declarative YAML config (``--config``) plus repeatable ``--set key=value``
overrides. Artifacts embed the configuration digest so a later command
can refuse inputs built under different settings.

Exit codes: 0 success, 2 configuration problems, 3 malformed data or
artifacts, 4 numeric faults during training, 5 any other package error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np

from .channels import build_user_graph
from .config import RunConfig, load_config
from .data import (PAD_ID, NewsStore, Vocabulary, build_vocabulary,
                   load_word_embeddings, parse_behaviors_file, parse_news_file)
from .errors import (ConfigError, DataFormatError, DigatError,
                     NumericFaultError)
from .model import DigatModel, load_checkpoint
from .sag import (SimilarityProvider, TfidfProvider, build_sag,
                  load_embedding_store, read_sag_cache, write_sag_cache)
from .training import evaluate as run_evaluate
from .training import train as run_train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4
EXIT_OTHER = 5


# ---------------------------------------------------------------------------
# shared loading helpers

def _require(value, key: str):
    if value is None:
        raise ConfigError(f"config key {key!r} is required for this command")
    return value


def _load_corpus(cfg: RunConfig):
    news_path = _require(cfg.data.news, "data.news")
    vocab = build_vocabulary([news_path], embedding_dim=cfg.model.word_dim)
    items = parse_news_file(news_path, vocab, title_len=cfg.data.title_len)
    store = NewsStore(items, title_len=cfg.data.title_len)
    return vocab, items, store


def _make_provider(cfg: RunConfig, items) -> SimilarityProvider:
    if cfg.sag.provider == "tfidf":
        return TfidfProvider(items)
    if cfg.sag.embedding_store is None:
        raise ConfigError(
            "sag.embedding_store is required when sag.provider=precomputed")
    return load_embedding_store(cfg.sag.embedding_store,
                                [item.news_id for item in items])


def _word_matrix(cfg: RunConfig, vocab: Vocabulary) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    if cfg.data.embeddings is not None:
        return load_word_embeddings(cfg.data.embeddings, vocab, rng)
    table = rng.uniform(-0.1, 0.1, size=(len(vocab), cfg.model.word_dim))
    table[PAD_ID] = 0.0
    return table


def _cache_geometry(cfg: RunConfig) -> tuple[int, int]:
    """The (m, k) a cache must have been built with under this config.

    Sequence mode flattens retrieval into one hop of neighbors*hops
    peers; a zero product degenerates to the bare root.
    """
    if cfg.model.sa_mode == "seq":
        flat = cfg.sag.neighbors * cfg.sag.hops
        return (flat, 1) if flat > 0 else (1, 0)
    return cfg.sag.neighbors, cfg.sag.hops


def _load_cache(cfg: RunConfig):
    if cfg.model.sa_mode == "none":
        return None
    cache_path = _require(cfg.sag.cache, "sag.cache")
    graphs, meta = read_sag_cache(cache_path)
    expected_hash = cfg.sag_hash()
    if meta.get("config_hash") is not None:
        if meta["config_hash"] != expected_hash:
            raise ConfigError(
                f"cache {cache_path} was built under a different "
                f"configuration (hash {meta['config_hash'][:12]}, expected "
                f"{expected_hash[:12]}); rerun build-sag")
    else:
        expected_m, expected_k = _cache_geometry(cfg)
        if (meta["m"], meta["k"]) != (expected_m, expected_k):
            raise ConfigError(
                f"cache {cache_path} was built with m={meta['m']}, "
                f"k={meta['k']}, but this configuration needs "
                f"m={expected_m}, k={expected_k}; rerun build-sag")
    return graphs


def _build_model(cfg: RunConfig, store: NewsStore,
                 word_matrix: np.ndarray) -> DigatModel:
    return DigatModel(cfg.model_config(), store, word_matrix, seed=cfg.seed)


def _write_manifest(cfg: RunConfig, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "sag_hash": cfg.sag_hash(),
    }
    (run_dir / "config.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n",
        encoding="utf-8")


# ---------------------------------------------------------------------------
# commands

def cmd_build_sag(args) -> int:
    cfg = load_config(args.config, args.overrides)
    if cfg.model.sa_mode == "none":
        print("sa_mode=none uses bare candidates; no cache to build")
        return EXIT_OK
    cache_path = Path(_require(cfg.sag.cache, "sag.cache"))
    _, items, _ = _load_corpus(cfg)
    provider = _make_provider(cfg, items)
    m, k = _cache_geometry(cfg)
    started = time.perf_counter()
    graphs = {item.news_id: build_sag(item.news_id, provider, m, k)
              for item in items}
    elapsed = time.perf_counter() - started
    cache_path.parent.mkdir(parents=True, exist_ok=True)
    write_sag_cache(cache_path, graphs, m, k, provider.tag,
                    config_hash=cfg.sag_hash())
    histogram = Counter(len(g.nodes) for g in graphs.values())
    print(f"cached {len(graphs)} graphs to {cache_path}")
    print("node-count histogram:")
    for size in sorted(histogram):
        print(f"  nodes={size:3d}  graphs={histogram[size]}")
    print(f"construction took {elapsed:.2f} s")
    print(f"sag hash: {cfg.sag_hash()}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args.config, args.overrides)
    vocab, items, store = _load_corpus(cfg)
    behaviors_path = _require(cfg.data.train_behaviors, "data.train_behaviors")
    records = parse_behaviors_file(behaviors_path,
                                   history_len=cfg.data.history_len)
    cache = _load_cache(cfg)
    model = _build_model(cfg, store, _word_matrix(cfg, vocab))

    optimizer = None
    start_epoch = 0
    if args.resume is not None:
        arrays, optimizer, meta = load_checkpoint(args.resume)
        if meta.get("config_hash") != cfg.config_hash():
            raise ConfigError(
                f"checkpoint {args.resume} carries config hash "
                f"{str(meta.get('config_hash'))[:12]}, expected "
                f"{cfg.config_hash()[:12]}")
        model.params.load_arrays(arrays)
        start_epoch = int(meta.get("epoch", 0))
        print(f"resuming from {args.resume} at epoch {start_epoch}, "
              f"step {optimizer.step if optimizer else 0}")

    run_dir = Path(cfg.outputs.run_dir)
    _write_manifest(cfg, run_dir)
    result = run_train(model, records, cache, cfg.train_config(),
                       checkpoint_dir=run_dir / "checkpoints",
                       loss_csv=run_dir / "loss.csv",
                       config_hash=cfg.config_hash(),
                       optimizer=optimizer, start_epoch=start_epoch)
    print(f"trained {len(result.steps)} steps over "
          f"{len(result.epoch_losses)} epochs")
    for i, loss in enumerate(result.epoch_losses, start=start_epoch + 1):
        print(f"  epoch {i}: mean loss {loss:.6f}")
    if result.checkpoints:
        print(f"final checkpoint: {result.checkpoints[-1]}")
    print(f"loss curve: {run_dir / 'loss.csv'}")
    print(f"config hash: {cfg.config_hash()}")
    return EXIT_OK


def _latest_checkpoint(run_dir: Path) -> Path:
    candidates = sorted((run_dir / "checkpoints").glob("epoch_*.npz"))
    if not candidates:
        raise ConfigError(
            f"no checkpoint under {run_dir / 'checkpoints'}; pass --checkpoint")
    return candidates[-1]


def cmd_evaluate(args) -> int:
    cfg = load_config(args.config, args.overrides)
    vocab, items, store = _load_corpus(cfg)
    behaviors_path = _require(cfg.data.eval_behaviors, "data.eval_behaviors")
    records = parse_behaviors_file(behaviors_path,
                                   history_len=cfg.data.history_len)
    cache = _load_cache(cfg)
    run_dir = Path(cfg.outputs.run_dir)
    checkpoint = Path(args.checkpoint) if args.checkpoint else _latest_checkpoint(run_dir)
    arrays, _, meta = load_checkpoint(checkpoint)
    if meta.get("config_hash") != cfg.config_hash():
        raise ConfigError(
            f"checkpoint {checkpoint} carries config hash "
            f"{str(meta.get('config_hash'))[:12]}, expected "
            f"{cfg.config_hash()[:12]}")
    model = _build_model(cfg, store, _word_matrix(cfg, vocab))
    model.params.load_arrays(arrays)

    report = run_evaluate(model, records, cache)
    text = report.to_text() + f"config_hash={cfg.config_hash()}\n"
    print(text, end="")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "eval_report.txt").write_text(text, encoding="utf-8")
    blob = report.to_json_dict()
    blob["config_hash"] = cfg.config_hash()
    (run_dir / "eval_report.json").write_text(
        json.dumps(blob, sort_keys=True, indent=2) + "\n", encoding="utf-8")

    if args.dump_scores is not None:
        dump_path = Path(args.dump_scores)
        dump_path.parent.mkdir(parents=True, exist_ok=True)
        with dump_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["impression_id", "n_candidates", "auc", "mrr",
                             "ndcg5", "ndcg10"])
            for row in report.per_impression:
                writer.writerow([
                    row.impression_id, row.n_candidates,
                    "" if row.auc is None else f"{row.auc:.17g}",
                    f"{row.mrr:.17g}", f"{row.ndcg5:.17g}",
                    f"{row.ndcg10:.17g}"])
        print(f"per-impression metrics: {dump_path}")
    return EXIT_OK


def _render_title(item, inverse_vocab: dict[int, str]) -> str:
    words = [inverse_vocab.get(tok, "?") for tok in item.title_tokens
             if tok != PAD_ID]
    return " ".join(words) if words else "(empty title)"


def _write_dot(path: Path, name: str, nodes: list[tuple[str, str]],
               edges: list[tuple[str, str]]) -> None:
    lines = [f"graph {name} {{"]
    for node_id, label in nodes:
        lines.append(f'  "{node_id}" [label="{label}"];')
    for a, b in edges:
        lines.append(f'  "{a}" -- "{b}";')
    lines.append("}")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_inspect_graph(args) -> int:
    cfg = load_config(args.config, args.overrides)
    vocab, items, store = _load_corpus(cfg)
    inverse = vocab.tokens_by_id()

    if args.news_id is not None:
        cache_path = _require(cfg.sag.cache, "sag.cache")
        graphs, meta = read_sag_cache(cache_path)
        if args.news_id not in graphs:
            raise DataFormatError(
                f"no cached graph for news id {args.news_id!r}")
        graph = graphs[args.news_id]
        print(f"candidate {graph.root_id} "
              f"(m={meta['m']}, k={meta['k']}, provider={meta['provider']})")
        print(f"nodes: {len(graph.nodes)}")
        for node, hop in zip(graph.nodes, graph.hops):
            title = _render_title(store.resolve(node), inverse) \
                if node in store else "(not in corpus)"
            print(f"  hop {hop}  {node}  {title}")
        edges = sorted(tuple(sorted(e)) for e in graph.edges)
        print(f"edges: {len(edges)}")
        for a, b in edges:
            print(f"  {a} -- {b}")
        if args.dot is not None:
            nodes = [(n, f"{n} (hop {h})")
                     for n, h in zip(graph.nodes, graph.hops)]
            _write_dot(Path(args.dot), "sag", nodes, edges)
            print(f"graph description: {args.dot}")
        return EXIT_OK

    behaviors_path = _require(cfg.data.train_behaviors, "data.train_behaviors")
    records = parse_behaviors_file(behaviors_path,
                                   history_len=cfg.data.history_len)
    mine = [r for r in records if r.user_id == args.user_id]
    if not mine:
        raise DataFormatError(f"no impressions for user id {args.user_id!r}")
    history = [store.resolve(nid) for nid in mine[0].history]
    user_graph = build_user_graph(history)
    print(f"user {args.user_id}: {user_graph.n_news} history slots, "
          f"{user_graph.n_topics} topics")
    for position, name in enumerate(user_graph.topic_names):
        members = [i for i, t in enumerate(user_graph.news_topics)
                   if t == name]
        print(f"  topic[{position}] {name}: news slots {members}")
    print(f"news-news edges: {len(user_graph.news_news_edges)}")
    print(f"news-topic edges: {len(user_graph.news_topic_edges)}")
    print(f"topic-topic edges: {len(user_graph.topic_topic_edges)}")
    if args.dot is not None:
        nodes = [(f"n{i}", f"{mine[0].history[i]}")
                 for i in range(user_graph.n_news)]
        nodes += [(f"t{j}", name)
                  for j, name in enumerate(user_graph.topic_names)]
        edges = [(f"n{a}", f"n{b}")
                 for a, b in sorted(user_graph.news_news_edges)]
        edges += [(f"n{a}", f"t{b}")
                  for a, b in sorted(user_graph.news_topic_edges)]
        edges += [(f"t{a}", f"t{b}")
                  for a, b in sorted(user_graph.topic_topic_edges)]
        _write_dot(Path(args.dot), "user_graph", nodes, edges)
        print(f"graph description: {args.dot}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value in --values")
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in values:
        overrides = list(args.overrides) + [f"{args.param}={value}"]
        cfg = load_config(args.config, overrides)
        print(f"sweep {args.param}={value} "
              f"(config hash {cfg.config_hash()[:12]})")
        vocab, items, store = _load_corpus(cfg)
        train_recs = parse_behaviors_file(
            _require(cfg.data.train_behaviors, "data.train_behaviors"),
            history_len=cfg.data.history_len)
        eval_recs = parse_behaviors_file(
            _require(cfg.data.eval_behaviors, "data.eval_behaviors"),
            history_len=cfg.data.history_len)
        if cfg.model.sa_mode == "none":
            cache = None
        else:
            provider = _make_provider(cfg, items)
            m, k = _cache_geometry(cfg)
            cache = {item.news_id: build_sag(item.news_id, provider, m, k)
                     for item in items}
        model = _build_model(cfg, store, _word_matrix(cfg, vocab))
        result = run_train(model, train_recs, cache, cfg.train_config())
        report = run_evaluate(model, eval_recs, cache)
        rows.append([args.param, value, f"{report.auc:.6f}",
                     f"{report.mrr:.6f}", f"{report.ndcg5:.6f}",
                     f"{report.ndcg10:.6f}",
                     f"{result.epoch_losses[-1]:.6f}",
                     cfg.config_hash()])
    with out_path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["param", "value", "auc", "mrr", "ndcg5", "ndcg10",
                         "final_loss", "config_hash"])
        writer.writerows(rows)
    print(f"wrote {len(rows)} sweep rows to {out_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument plumbing

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="digat",
        description="Graph-attention news recommender pipeline")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="enable debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", default=None,
                        help="YAML run configuration")
        sp.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="KEY=VALUE",
                        help="override a config key (repeatable)")

    sp = sub.add_parser("build-sag",
                        help="build and cache candidate graphs")
    add_common(sp)
    sp.set_defaults(func=cmd_build_sag)

    sp = sub.add_parser("train", help="train a model from a behaviors log")
    add_common(sp)
    sp.add_argument("--resume", default=None,
                    help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("evaluate", help="score a split and report metrics")
    add_common(sp)
    sp.add_argument("--checkpoint", default=None,
                    help="checkpoint to load (default: latest in run_dir)")
    sp.add_argument("--dump-scores", default=None, metavar="PATH",
                    help="write per-impression metrics CSV")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("inspect-graph",
                        help="print a cached candidate graph or a user graph")
    add_common(sp)
    target = sp.add_mutually_exclusive_group(required=True)
    target.add_argument("--news-id", default=None)
    target.add_argument("--user-id", default=None)
    sp.add_argument("--dot", default=None, metavar="PATH",
                    help="also write a graphviz description file")
    sp.set_defaults(func=cmd_inspect_graph)

    sp = sub.add_parser("sweep",
                        help="train/evaluate once per value of one config key")
    add_common(sp)
    sp.add_argument("--param", required=True,
                    help="dotted config key to vary, e.g. model.layers")
    sp.add_argument("--values", required=True,
                    help="comma-separated values, e.g. 1,2,3")
    sp.add_argument("--out", required=True, help="output CSV path")
    sp.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataFormatError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericFaultError as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DigatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
