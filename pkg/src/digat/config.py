"""Declarative run configuration: one YAML file drives every command.

Sections mirror the pipeline stages. Key names are literal (M, K, L, S
match the usual symbols for neighbors, hops, interaction layers, and
sampled negatives). Unknown keys fail loudly instead of being ignored,
and command-line overrides go through the same validation as file keys.

Two digests derive from a config: config_hash() pins everything that
shapes parameters and training, and sag_hash() pins just what shapes
the candidate-graph cache. Artifacts embed them so downstream commands
can refuse mismatched inputs.
"""

import dataclasses
import hashlib
import json
import types
import typing
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError
from .interaction import SA_MODES
from .model import ModelConfig
from .training import TrainConfig

__all__ = [
    "DataSection",
    "SagSection",
    "ModelSection",
    "TrainSection",
    "OutputSection",
    "RunConfig",
    "load_config",
    "parse_override",
]

PROVIDERS = ("tfidf", "precomputed")


@dataclass
class DataSection:
    news: str | None = None
    train_behaviors: str | None = None
    eval_behaviors: str | None = None
    embeddings: str | None = None
    title_len: int = 32
    history_len: int = 50


@dataclass
class SagSection:
    provider: str = "tfidf"
    embedding_store: str | None = None
    neighbors: int = 5
    hops: int = 2
    cache: str | None = None


@dataclass
class ModelSection:
    d: int = 400
    word_dim: int = 300
    heads: int = 8
    att_hidden: int = 200
    dropout: float = 0.2
    layers: int = 3
    sa_mode: str = "graph"
    interact_news: bool = True
    interact_user: bool = True


@dataclass
class TrainSection:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 1e-4
    negatives: int = 4
    clip_max_norm: float = 1.0


@dataclass
class OutputSection:
    run_dir: str = "runs/default"


_SECTIONS = {
    "data": DataSection,
    "sag": SagSection,
    "model": ModelSection,
    "train": TrainSection,
    "outputs": OutputSection,
}


@dataclass
class RunConfig:
    seed: int = 1234
    deterministic: bool = True
    data: DataSection = field(default_factory=DataSection)
    sag: SagSection = field(default_factory=SagSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    outputs: OutputSection = field(default_factory=OutputSection)

    def validate(self) -> None:
        if self.model.sa_mode not in SA_MODES:
            raise ConfigError(
                f"model.sa_mode must be one of {SA_MODES}, "
                f"got {self.model.sa_mode!r}")
        if self.sag.provider not in PROVIDERS:
            raise ConfigError(
                f"sag.provider must be one of {PROVIDERS}, "
                f"got {self.sag.provider!r}")
        if self.sag.neighbors < 1:
            raise ConfigError(
                f"sag.neighbors must be at least 1, got {self.sag.neighbors}")
        if self.sag.hops < 0:
            raise ConfigError(
                f"sag.hops must be non-negative, got {self.sag.hops}")
        if self.train.negatives < 1:
            raise ConfigError(
                f"train.negatives must be at least 1, got {self.train.negatives}")
        if self.train.learning_rate <= 0:
            raise ConfigError(
                f"train.learning_rate must be positive, "
                f"got {self.train.learning_rate}")
        if self.data.title_len < 1 or self.data.history_len < 1:
            raise ConfigError("data.title_len and data.history_len must be positive")
        try:
            self.model_config().validate()
        except Exception as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            d=self.model.d, word_dim=self.model.word_dim,
            heads=self.model.heads, att_hidden=self.model.att_hidden,
            title_len=self.data.title_len, history_len=self.data.history_len,
            dropout=self.model.dropout, layers=self.model.layers,
            sa_mode=self.model.sa_mode,
            interact_news=self.model.interact_news,
            interact_user=self.model.interact_user,
            neighbors=self.sag.neighbors, hops=self.sag.hops)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.train.epochs, batch_size=self.train.batch_size,
            learning_rate=self.train.learning_rate,
            negatives=self.train.negatives,
            clip_max_norm=self.train.clip_max_norm,
            seed=self.seed, deterministic=self.deterministic)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        """Digest of everything that shapes parameters and graph topology.

        Input and output paths are deliberately left out (moving files
        around must not invalidate a checkpoint), and so are the train
        section's run-length knobs, so a checkpoint stays resumable
        under an extended epoch budget.
        """
        payload = self.to_dict()
        payload.pop("outputs")
        payload.pop("train")
        data = payload["data"]
        for key in ("news", "train_behaviors", "eval_behaviors", "embeddings"):
            data.pop(key)
        payload["sag"].pop("cache")
        payload["sag"].pop("embedding_store")
        return _digest(payload)

    def sag_hash(self) -> str:
        """Digest of the settings that shape the candidate-graph cache."""
        payload = {
            "provider": self.sag.provider,
            "neighbors": self.sag.neighbors,
            "hops": self.sag.hops,
            "sa_mode": self.model.sa_mode,
            "title_len": self.data.title_len,
        }
        return _digest(payload)


def _digest(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _type_name(annotation) -> str:
    return getattr(annotation, "__name__", str(annotation))


def _coerce(key: str, value, annotation):
    """Check (and minimally convert) a YAML value against a field type."""
    if isinstance(annotation, types.UnionType):
        members = typing.get_args(annotation)
        if value is None and type(None) in members:
            return None
        inner = [m for m in members if m is not type(None)]
        return _coerce(key, value, inner[0])
    if annotation is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"config key {key!r} expects a boolean, "
                              f"got {value!r}")
        return value
    if annotation is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"config key {key!r} expects an integer, "
                              f"got {value!r}")
        return value
    if annotation is float:
        if isinstance(value, str):
            # YAML 1.1 reads bare scientific notation such as 2e-3 as a
            # string; accept anything float() can parse.
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"config key {key!r} expects a number, "
                                  f"got {value!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {key!r} expects a number, "
                              f"got {value!r}")
        return float(value)
    if annotation is str:
        if not isinstance(value, str):
            raise ConfigError(f"config key {key!r} expects a string, "
                              f"got {value!r}")
        return value
    raise ConfigError(f"config key {key!r} has unsupported type "
                      f"{_type_name(annotation)}")


def _apply_mapping(section, mapping: dict, prefix: str) -> None:
    valid = {f.name: f.type for f in fields(section)}
    for key, value in mapping.items():
        if key not in valid:
            raise ConfigError(f"unknown config key {prefix + key!r}")
        setattr(section, key, _coerce(f"{prefix}{key}", value, valid[key]))


def _apply_tree(config: RunConfig, tree: dict) -> None:
    scalars = {"seed": int, "deterministic": bool}
    for key, value in tree.items():
        if key in scalars:
            setattr(config, key, _coerce(key, value, scalars[key]))
        elif key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(
                    f"config section {key!r} must be a mapping, got {value!r}")
            _apply_mapping(getattr(config, key), value, f"{key}.")
        else:
            raise ConfigError(f"unknown config key {key!r}")


def parse_override(text: str) -> tuple[str, object]:
    """Split a ``section.key=value`` flag; the value parses as YAML."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r} has an unparseable value: {exc}")
    return key.strip(), value


def _apply_override(config: RunConfig, dotted: str, value) -> None:
    parts = dotted.split(".")
    if len(parts) == 1:
        _apply_tree(config, {parts[0]: value})
    elif len(parts) == 2 and parts[0] in _SECTIONS:
        _apply_tree(config, {parts[0]: {parts[1]: value}})
    else:
        raise ConfigError(f"unknown config key {dotted!r}")


def load_config(path=None, overrides=()) -> RunConfig:
    """Build a RunConfig from an optional YAML file plus override flags."""
    config = RunConfig()
    if path is not None:
        try:
            text = open(path, encoding="utf-8").read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}")
        try:
            tree = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config file {path} is not valid YAML: {exc}")
        if tree is None:
            tree = {}
        if not isinstance(tree, dict):
            raise ConfigError(f"config file {path} must contain a mapping")
        _apply_tree(config, tree)
    for item in overrides:
        key, value = parse_override(item)
        _apply_override(config, key, value)
    config.validate()
    return config
