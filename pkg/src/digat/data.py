"""MIND-format corpus loading, vocabulary, embeddings, negative sampling.

The on-disk layout is the MIND standard: a tab-separated news file
(news_id, category, subcategory, title, abstract, url, title_entities,
abstract_entities) and a behaviors file (impression_id, user_id, time,
space-separated history ids, space-separated "newsid-label" pairs).
Only the id, category, and title columns feed the model.
"""

from __future__ import annotations

import logging
import string
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ContractError, DataFormatError

logger = logging.getLogger(__name__)

PAD_TOKEN = "⟨pad⟩"
UNK_TOKEN = "⟨unk⟩"
PAD_ID = 0
UNK_ID = 1

EMPTY_NEWS_ID = "⟨empty⟩"
EMPTY_TOPIC = "⟨none⟩"

DEFAULT_TITLE_LEN = 32
DEFAULT_HISTORY_LEN = 50


def open_text(path):
    """Open a UTF-8 text file for reading, mapping OS errors to data errors."""
    try:
        return open(path, encoding="utf-8")
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, strip surrounding punctuation.

    Tokens that are nothing but punctuation disappear.
    """
    out = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class NewsItem:
    """One article: stable id, topic label, fixed-length token-id title."""

    news_id: str
    topic: str
    title_tokens: tuple[int, ...]


@dataclass(frozen=True)
class ImpressionRecord:
    """One logged impression: history (most recent last) plus candidates.

    The history is always exactly the configured length; short histories
    are front-padded with the empty-news placeholder id.
    """

    impression_id: str
    user_id: str
    history: tuple[str, ...]
    candidates: tuple[tuple[str, int], ...]

    def positives(self) -> list[str]:
        return [nid for nid, label in self.candidates if label == 1]

    def negatives(self) -> list[str]:
        return [nid for nid, label in self.candidates if label == 0]


@dataclass(frozen=True)
class TrainingExample:
    """A positive click with its sampled non-clicked companions."""

    impression_id: str
    history: tuple[NewsItem, ...]
    positive: NewsItem
    negatives: tuple[NewsItem, ...]


class Vocabulary:
    """Token-to-id map whose ids double as embedding row indices.

    Id 0 is the pad token and id 1 the unknown token; real words get
    dense ids in first-occurrence order.
    """

    def __init__(self, embedding_dim: int = 300) -> None:
        self.embedding_dim = embedding_dim
        self._token_to_id: dict[str, int] = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}

    def add(self, token: str) -> int:
        return self._token_to_id.setdefault(token, len(self._token_to_id))

    def lookup(self, token: str) -> int:
        return self._token_to_id.get(token, UNK_ID)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def __len__(self) -> int:
        return len(self._token_to_id)

    def tokens_by_id(self) -> dict[int, str]:
        """Inverse map, mainly for rendering token ids back to text."""
        return {idx: token for token, idx in self._token_to_id.items()}

    def dump(self, path) -> None:
        """Write one "token<TAB>id" line per entry, in id order."""
        with open(path, "w", encoding="utf-8") as fh:
            for token, idx in sorted(self._token_to_id.items(), key=lambda kv: kv[1]):
                fh.write(f"{token}\t{idx}\n")

    @classmethod
    def from_dump(cls, path, embedding_dim: int = 300) -> "Vocabulary":
        vocab = cls(embedding_dim=embedding_dim)
        with open_text(path) as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                token, _, idx_txt = line.partition("\t")
                try:
                    idx = int(idx_txt)
                except ValueError:
                    raise DataFormatError(
                        f"{path}:{line_no}: bad vocabulary line {line!r}") from None
                current = vocab._token_to_id.setdefault(token, idx)
                if current != idx:
                    raise DataFormatError(
                        f"{path}:{line_no}: token {token!r} maps to both "
                        f"{current} and {idx}")
        ids = sorted(vocab._token_to_id.values())
        if ids != list(range(len(ids))):
            raise DataFormatError(f"{path}: vocabulary ids are not dense from 0")
        return vocab


def _news_rows(path) -> Iterator[tuple[int, list[str]]]:
    with open_text(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 8:
                raise DataFormatError(
                    f"{path}:{line_no}: expected 8 tab-separated columns, "
                    f"got {len(cols)}")
            yield line_no, cols


def build_vocabulary(news_paths: Sequence, embedding_dim: int = 300) -> Vocabulary:
    """Collect title tokens from the given news files, minimum frequency 1."""
    vocab = Vocabulary(embedding_dim=embedding_dim)
    for path in news_paths:
        for _, cols in _news_rows(path):
            for token in tokenize(cols[3]):
                vocab.add(token)
    return vocab


def parse_news_file(path, vocab: Vocabulary,
                    title_len: int = DEFAULT_TITLE_LEN) -> list[NewsItem]:
    """Read a news file into NewsItems with padded, truncated token ids."""
    items: list[NewsItem] = []
    seen: set[str] = set()
    for line_no, cols in _news_rows(path):
        news_id, topic, title = cols[0], cols[1], cols[3]
        if not news_id:
            raise DataFormatError(f"{path}:{line_no}: empty news id")
        if news_id in seen:
            logger.warning("%s:%d: duplicate news id %s ignored, keeping the "
                           "first occurrence", path, line_no, news_id)
            continue
        seen.add(news_id)
        ids = [vocab.lookup(token) for token in tokenize(title)][:title_len]
        ids.extend([PAD_ID] * (title_len - len(ids)))
        items.append(NewsItem(news_id, topic, tuple(ids)))
    return items


class NewsStore:
    """Immutable news_id to NewsItem lookup, including the placeholder.

    The placeholder is an all-pad item under a reserved id and topic so
    front-padded histories resolve like any other reference.
    """

    def __init__(self, items: Iterable[NewsItem],
                 title_len: int = DEFAULT_TITLE_LEN) -> None:
        self.title_len = title_len
        self.placeholder = NewsItem(EMPTY_NEWS_ID, EMPTY_TOPIC,
                                    (PAD_ID,) * title_len)
        self._items: dict[str, NewsItem] = {EMPTY_NEWS_ID: self.placeholder}
        for item in items:
            if len(item.title_tokens) != title_len:
                raise ContractError(
                    f"news {item.news_id!r} has {len(item.title_tokens)} "
                    f"tokens, store expects {title_len}")
            self._items.setdefault(item.news_id, item)

    def resolve(self, news_id: str) -> NewsItem:
        try:
            return self._items[news_id]
        except KeyError:
            raise DataFormatError(f"unknown news id {news_id!r}") from None

    def __contains__(self, news_id: str) -> bool:
        return news_id in self._items

    def __len__(self) -> int:
        return len(self._items)

    def all_items(self) -> list[NewsItem]:
        return list(self._items.values())

    def topics(self) -> list[str]:
        """Sorted unique topic labels, placeholder topic included."""
        return sorted({item.topic for item in self._items.values()})


def parse_behaviors_file(path,
                         history_len: int = DEFAULT_HISTORY_LEN
                         ) -> list[ImpressionRecord]:
    """Read a behaviors file, normalizing histories to a fixed length."""
    records: list[ImpressionRecord] = []
    with open_text(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            cols = line.split("\t")
            if len(cols) != 5:
                raise DataFormatError(
                    f"{path}:{line_no}: expected 5 tab-separated columns, "
                    f"got {len(cols)}")
            imp_id, user_id, _time, hist_field, cand_field = cols
            history = hist_field.split()[-history_len:]
            history = [EMPTY_NEWS_ID] * (history_len - len(history)) + history
            candidates = []
            for pair in cand_field.split():
                news_id, dash, label_txt = pair.rpartition("-")
                if not dash or label_txt not in ("0", "1"):
                    raise DataFormatError(
                        f"{path}:{line_no}: bad candidate entry {pair!r}")
                candidates.append((news_id, int(label_txt)))
            if not candidates:
                logger.warning("%s:%d: impression %s has no candidates, "
                               "record skipped", path, line_no, imp_id)
                continue
            records.append(ImpressionRecord(imp_id, user_id, tuple(history),
                                            tuple(candidates)))
    return records


def load_word_embeddings(path, vocab: Vocabulary,
                         rng: np.random.Generator) -> np.ndarray:
    """Build the |V| x dim table from a Glove-style text file.

    Rows for words absent from the file stay at their uniform(-0.1, 0.1)
    draw; the pad row is zero. The whole table is drawn up front from the
    given generator, so the result is bit-reproducible for a fixed seed
    and vocabulary regardless of file ordering.
    """
    dim = vocab.embedding_dim
    matrix = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    matrix[PAD_ID] = 0.0
    with open_text(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            word = parts[0]
            if len(parts) - 1 != dim:
                raise DataFormatError(
                    f"{path}:{line_no}: embedding for {word!r} has "
                    f"{len(parts) - 1} values, expected {dim}")
            if word in vocab:
                matrix[vocab.lookup(word)] = [float(v) for v in parts[1:]]
    return matrix


def sample_negatives(record: ImpressionRecord, store: NewsStore, s: int,
                     rng: np.random.Generator) -> list[TrainingExample]:
    """One TrainingExample per positive, with s sampled negatives each.

    Negatives are drawn uniformly without replacement from the record's
    non-clicked candidates, falling back to replacement when fewer than
    s exist. Records with no negatives yield nothing.
    """
    positives = record.positives()
    if not positives:
        raise ContractError(
            f"impression {record.impression_id!r} has no positive candidate")
    negative_ids = record.negatives()
    if not negative_ids:
        return []
    history = tuple(store.resolve(nid) for nid in record.history)
    examples = []
    for pos_id in positives:
        replace = len(negative_ids) < s
        chosen = rng.choice(len(negative_ids), size=s, replace=replace)
        examples.append(TrainingExample(
            impression_id=record.impression_id,
            history=history,
            positive=store.resolve(pos_id),
            negatives=tuple(store.resolve(negative_ids[i]) for i in chosen),
        ))
    return examples


def build_training_examples(records: Sequence[ImpressionRecord],
                            store: NewsStore, s: int,
                            rng: np.random.Generator) -> list[TrainingExample]:
    """Sample negatives for every record that has at least one positive."""
    examples: list[TrainingExample] = []
    for record in records:
        if not record.positives():
            continue
        examples.extend(sample_negatives(record, store, s, rng))
    return examples
