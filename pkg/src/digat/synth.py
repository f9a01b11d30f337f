"""Synthetic topic-preference dataset in the production TSV formats.

Each generated user strongly prefers one topic; clicked candidates come
from that topic and non-clicked ones from the rest. Topic word pools are
disjoint, so title similarity clusters by topic and the preference is
learnable by a small model. The files round-trip through the normal
parsers, exercising the whole ingest path.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError

__all__ = ["SynthSpec", "SynthDataset", "generate"]

_FAKE_TIME = "11/15/2019 8:00:00 AM"


@dataclass(frozen=True)
class SynthSpec:
    n_topics: int = 4
    words_per_topic: int = 120
    n_news: int = 120
    n_users: int = 40
    n_train_impressions: int = 200
    n_eval_impressions: int = 60
    title_words: int = 6
    history_clicks: int = 8
    candidates_per_impression: int = 5
    word_dim: int = 16
    noise: float = 0.1
    seed: int = 7

    def validate(self) -> None:
        if self.n_topics < 2:
            raise ContractError("need at least two topics to form negatives")
        if self.n_news < self.n_topics * 2:
            raise ContractError("need at least two news items per topic")
        if self.candidates_per_impression < 2:
            raise ContractError("impressions need a positive and a negative")
        if not 0.0 <= self.noise < 1.0:
            raise ContractError(f"noise must be in [0, 1), got {self.noise}")


@dataclass(frozen=True)
class SynthDataset:
    news_tsv: str
    train_tsv: str
    eval_tsv: str
    embeddings_txt: str

    def write(self, out_dir) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "news": out / "news.tsv",
            "train_behaviors": out / "train_behaviors.tsv",
            "eval_behaviors": out / "eval_behaviors.tsv",
            "embeddings": out / "embeddings.txt",
        }
        paths["news"].write_text(self.news_tsv, encoding="utf-8")
        paths["train_behaviors"].write_text(self.train_tsv, encoding="utf-8")
        paths["eval_behaviors"].write_text(self.eval_tsv, encoding="utf-8")
        paths["embeddings"].write_text(self.embeddings_txt, encoding="utf-8")
        return paths


def _topic_name(i: int) -> str:
    return f"topic{i}"


def _word(topic: int, j: int) -> str:
    return f"t{topic}w{j}"


def generate(spec: SynthSpec) -> SynthDataset:
    """Build the four files as strings; fully determined by spec.seed."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    news_topic = [i % spec.n_topics for i in range(spec.n_news)]
    by_topic: dict[int, list[int]] = {t: [] for t in range(spec.n_topics)}
    for idx, topic in enumerate(news_topic):
        by_topic[topic].append(idx)

    def news_id(idx: int) -> str:
        return f"N{idx + 1:04d}"

    news_lines = []
    vocabulary: list[str] = []
    seen_words: set[str] = set()
    for idx, topic in enumerate(news_topic):
        word_ids = rng.choice(spec.words_per_topic, size=spec.title_words,
                              replace=spec.title_words > spec.words_per_topic)
        words = [_word(topic, int(j)) for j in word_ids]
        for w in words:
            if w not in seen_words:
                seen_words.add(w)
                vocabulary.append(w)
        title = " ".join(words)
        news_lines.append("\t".join([
            news_id(idx), _topic_name(topic), "general", title,
            f"abstract for {news_id(idx)}", f"https://example.invalid/{idx}",
            "[]", "[]",
        ]))

    user_pref = [int(rng.integers(spec.n_topics)) for _ in range(spec.n_users)]

    def sample_history(pref: int) -> list[str]:
        picks = []
        for _ in range(spec.history_clicks):
            if rng.random() < spec.noise:
                topic = int(rng.integers(spec.n_topics))
            else:
                topic = pref
            picks.append(news_id(int(rng.choice(by_topic[topic]))))
        return picks

    def sample_impression(imp_no: int, user: int) -> str:
        pref = user_pref[user]
        positive = news_id(int(rng.choice(by_topic[pref])))
        negatives = []
        while len(negatives) < spec.candidates_per_impression - 1:
            topic = int(rng.integers(spec.n_topics))
            if topic == pref:
                continue
            negatives.append(news_id(int(rng.choice(by_topic[topic]))))
        pairs = [(positive, 1)] + [(nid, 0) for nid in negatives]
        order = rng.permutation(len(pairs))
        cand_field = " ".join(f"{pairs[i][0]}-{pairs[i][1]}" for i in order)
        history = " ".join(sample_history(pref))
        return "\t".join([f"I{imp_no}", f"U{user + 1:03d}", _FAKE_TIME,
                          history, cand_field])

    train_lines = []
    for i in range(spec.n_train_impressions):
        user = int(rng.integers(spec.n_users))
        train_lines.append(sample_impression(i + 1, user))
    eval_lines = []
    for i in range(spec.n_eval_impressions):
        user = int(rng.integers(spec.n_users))
        eval_lines.append(sample_impression(spec.n_train_impressions + i + 1, user))

    emb_lines = []
    for word in vocabulary:
        vec = rng.uniform(-0.5, 0.5, size=spec.word_dim)
        emb_lines.append(word + " " + " ".join(f"{v:.6f}" for v in vec))

    def block(lines: list[str]) -> str:
        return "\n".join(lines) + "\n"

    return SynthDataset(
        news_tsv=block(news_lines),
        train_tsv=block(train_lines),
        eval_tsv=block(eval_lines),
        embeddings_txt=block(emb_lines),
    )
