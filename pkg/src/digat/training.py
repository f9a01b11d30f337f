"""Training loop, click scoring, sampled-softmax loss, and impression
evaluation.

The loop resamples negatives and reshuffles example order every epoch
from a single seeded generator, so a fixed seed reproduces the loss
curve bit for bit. Each optimizer step logs the global-norm of the
gradient before clipping along with the batch loss.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .data import ImpressionRecord, TrainingExample, build_training_examples
from .errors import ContractError, NumericFaultError
from .metrics import auc, mrr, ndcg_at_k
from .model import CandidateGraph, DigatModel, graph_for_candidate, save_checkpoint
from .optim import AdamState, adam_step, clip_global_norm
from .sag import SemanticAugmentedGraph
from .tensor import GradientTape, Tensor

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "StepRecord",
    "TrainResult",
    "EvalReport",
    "PerImpression",
    "click_score",
    "nce_loss",
    "train",
    "evaluate",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 1e-4
    negatives: int = 4
    clip_max_norm: float = 1.0
    seed: int = 1234
    deterministic: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ContractError(f"epochs must be positive, got {self.epochs}")
        if self.batch_size < 1:
            raise ContractError(f"batch_size must be positive, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ContractError(
                f"learning_rate must be positive, got {self.learning_rate}")
        if self.negatives < 1:
            raise ContractError(
                f"negatives must be at least 1, got {self.negatives}")
        if self.clip_max_norm <= 0:
            raise ContractError(
                f"clip_max_norm must be positive, got {self.clip_max_norm}")


@dataclass(frozen=True)
class StepRecord:
    step: int
    loss: float
    grad_norm: float


@dataclass
class TrainResult:
    steps: list[StepRecord] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)


def click_score(r_n: Tensor, r_u: Tensor) -> Tensor:
    """Dot product of the final news and user representations."""
    if r_n.ndim != 1 or r_u.ndim != 1 or r_n.shape != r_u.shape:
        raise ContractError(
            f"click_score needs two equal-length vectors, got shapes "
            f"{r_n.shape} and {r_u.shape}")
    return T.dot(r_n, r_u)


def _as_scalar(t: Tensor, what: str) -> Tensor:
    if t.data.size != 1:
        raise ContractError(f"{what} must be a scalar, got shape {t.shape}")
    return t if t.ndim == 0 else T.reshape(t, ())


def nce_loss(s_plus: Tensor, s_neg: Tensor) -> Tensor:
    """Sampled-softmax loss: logsumexp over all scores minus the positive.

    Algebraically -log(exp(s+) / (exp(s+) + sum_j exp(s-_j))), evaluated
    through the stable log-sum-exp so large scores cannot overflow.
    """
    plus = _as_scalar(s_plus, "positive score")
    if s_neg.ndim != 1 or s_neg.shape[0] < 1:
        raise ContractError(
            f"negative scores must be a nonempty vector, got shape {s_neg.shape}")
    combined = T.concat([T.reshape(plus, (1,)), s_neg], axis=0)
    return T.sub(T.logsumexp(combined), plus)


def _example_graphs(example: TrainingExample, sa_mode: str,
                    cache: Mapping[str, SemanticAugmentedGraph] | None,
                    ) -> list[CandidateGraph]:
    ids = [example.positive.news_id] + [n.news_id for n in example.negatives]
    return [graph_for_candidate(sa_mode, nid, cache) for nid in ids]


def _example_loss(model: DigatModel, example: TrainingExample,
                  cache: Mapping[str, SemanticAugmentedGraph] | None,
                  training: bool, rng: np.random.Generator | None) -> Tensor:
    graphs = _example_graphs(example, model.config.sa_mode, cache)
    history_ids = [item.news_id for item in example.history]
    scores = model.score_impression(history_ids, graphs,
                                    training=training, rng=rng)
    s_plus = T.narrow(scores, 0, 0, 1)
    s_neg = T.narrow(scores, 0, 1, len(example.negatives))
    return nce_loss(s_plus, s_neg)


def _grad_norm_summary(grads: Mapping[str, np.ndarray], top: int = 5) -> str:
    norms = sorted(((float(np.linalg.norm(g)), name) for name, g in grads.items()),
                   reverse=True)
    return ", ".join(f"{name}={norm:.3e}" for norm, name in norms[:top])


def train(model: DigatModel, records: Sequence[ImpressionRecord],
          sag_cache: Mapping[str, SemanticAugmentedGraph] | None,
          config: TrainConfig,
          checkpoint_dir: str | Path | None = None,
          loss_csv: str | Path | None = None,
          config_hash: str | None = None,
          optimizer: AdamState | None = None,
          start_epoch: int = 0) -> TrainResult:
    """Optimize the model in place over the impression log.

    Every epoch draws fresh negatives and a fresh example order. Batch
    losses are means over examples; the per-example sum equivalent goes
    to the logger. Pass the optimizer and start_epoch from a loaded
    checkpoint to resume with a continuing step counter.
    """
    config.validate()
    if not records:
        raise ContractError("cannot train on an empty impression log")
    if start_epoch >= config.epochs:
        raise ContractError(
            f"start_epoch {start_epoch} leaves no epochs to run "
            f"(epochs={config.epochs})")
    if optimizer is None:
        optimizer = AdamState.for_params(model.params,
                                         learning_rate=config.learning_rate)
    result = TrainResult()
    csv_writer = None
    csv_handle = None
    if loss_csv is not None:
        path = Path(loss_csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        resume_mode = "a" if start_epoch > 0 and path.exists() else "w"
        csv_handle = path.open(resume_mode, newline="")
        csv_writer = csv.writer(csv_handle)
        if resume_mode == "w":
            csv_writer.writerow(["step", "loss", "grad_norm"])

    use_dropout = not config.deterministic
    try:
        for epoch in range(start_epoch, config.epochs):
            # Seed per epoch so a resumed run draws the same negatives and
            # example order the uninterrupted run would have.
            rng = np.random.default_rng((config.seed, epoch))
            examples = build_training_examples(records, model.news,
                                               config.negatives, rng)
            if not examples:
                raise ContractError(
                    "no training examples: every impression lacks a positive "
                    "or a negative candidate")
            order = rng.permutation(len(examples))
            epoch_loss_sum = 0.0
            epoch_examples = 0
            for lo in range(0, len(order), config.batch_size):
                batch = [examples[i] for i in order[lo:lo + config.batch_size]]
                step_number = optimizer.step + 1
                model.params.zero_grad()
                with GradientTape():
                    losses = [
                        _example_loss(model, ex, sag_cache,
                                      training=use_dropout,
                                      rng=rng if use_dropout else None)
                        for ex in batch
                    ]
                    batch_loss = T.tmean(T.stack_scalars(losses))
                    loss_value = float(batch_loss.data)
                    if not np.isfinite(loss_value):
                        raise NumericFaultError(
                            f"non-finite loss {loss_value} at step {step_number}; "
                            f"previous grad_norm="
                            f"{result.steps[-1].grad_norm if result.steps else 'n/a'}")
                    T.backward(batch_loss)
                grads = model.params.gradients()
                try:
                    grad_norm = clip_global_norm(grads, config.clip_max_norm)
                except NumericFaultError as exc:
                    raise NumericFaultError(
                        f"step {step_number}: {exc}; largest gradients: "
                        f"{_grad_norm_summary(grads)}") from exc
                adam_step(model.params, grads, optimizer)
                record = StepRecord(step=optimizer.step, loss=loss_value,
                                    grad_norm=grad_norm)
                result.steps.append(record)
                if csv_writer is not None:
                    csv_writer.writerow([record.step,
                                         f"{record.loss:.17g}",
                                         f"{record.grad_norm:.17g}"])
                epoch_loss_sum += loss_value * len(batch)
                epoch_examples += len(batch)
                logger.debug("step %d loss=%.6f (sum-equivalent %.6f) "
                             "grad_norm=%.6f", record.step, record.loss,
                             record.loss * len(batch), record.grad_norm)
            epoch_mean = epoch_loss_sum / epoch_examples
            result.epoch_losses.append(epoch_mean)
            logger.info("epoch %d mean loss %.6f over %d examples",
                        epoch + 1, epoch_mean, epoch_examples)
            if checkpoint_dir is not None:
                out_dir = Path(checkpoint_dir)
                out_dir.mkdir(parents=True, exist_ok=True)
                ckpt = out_dir / f"epoch_{epoch + 1:03d}.npz"
                save_checkpoint(ckpt, model.params,
                                meta={"epoch": epoch + 1,
                                      "step": optimizer.step,
                                      "config_hash": config_hash},
                                optimizer=optimizer)
                result.checkpoints.append(ckpt)
    finally:
        if csv_handle is not None:
            csv_handle.close()
    return result


@dataclass(frozen=True)
class PerImpression:
    impression_id: str
    n_candidates: int
    auc: float | None
    mrr: float
    ndcg5: float
    ndcg10: float


@dataclass(frozen=True)
class EvalReport:
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    impressions: int
    auc_impressions: int
    auc_excluded: int
    skipped_no_positive: int
    per_impression: tuple[PerImpression, ...] = ()

    def to_text(self) -> str:
        lines = [
            f"auc={self.auc:.6f}",
            f"mrr={self.mrr:.6f}",
            f"ndcg5={self.ndcg5:.6f}",
            f"ndcg10={self.ndcg10:.6f}",
            f"impressions={self.impressions}",
            f"auc_impressions={self.auc_impressions}",
            f"auc_excluded={self.auc_excluded}",
            f"skipped_no_positive={self.skipped_no_positive}",
        ]
        return "\n".join(lines) + "\n"

    def to_json_dict(self) -> dict:
        return {
            "auc": self.auc,
            "mrr": self.mrr,
            "ndcg5": self.ndcg5,
            "ndcg10": self.ndcg10,
            "impressions": self.impressions,
            "auc_impressions": self.auc_impressions,
            "auc_excluded": self.auc_excluded,
            "skipped_no_positive": self.skipped_no_positive,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, indent=2)


def evaluate(model: DigatModel, records: Sequence[ImpressionRecord],
             sag_cache: Mapping[str, SemanticAugmentedGraph] | None,
             ) -> EvalReport:
    """Score every impression and average the four ranking metrics.

    Impressions without a positive are skipped entirely (reciprocal rank
    and gain are undefined); impressions without a negative keep their
    MRR/nDCG but sit out of the AUC mean. Both counts are reported.
    """
    if not records:
        raise ContractError("cannot evaluate an empty impression log")
    rows: list[PerImpression] = []
    skipped = 0
    for record in records:
        labels = [label for _, label in record.candidates]
        if sum(labels) == 0:
            skipped += 1
            continue
        graphs = [graph_for_candidate(model.config.sa_mode, nid, sag_cache)
                  for nid, _ in record.candidates]
        scores = model.score_impression(list(record.history), graphs).data
        has_negative = any(label == 0 for label in labels)
        rows.append(PerImpression(
            impression_id=record.impression_id,
            n_candidates=len(labels),
            auc=auc(labels, scores) if has_negative else None,
            mrr=mrr(labels, scores),
            ndcg5=ndcg_at_k(labels, scores, 5),
            ndcg10=ndcg_at_k(labels, scores, 10),
        ))
    if not rows:
        raise ContractError("no impression had a positive candidate")
    auc_values = [r.auc for r in rows if r.auc is not None]
    if not auc_values:
        raise ContractError("AUC undefined for every impression")
    return EvalReport(
        auc=float(np.mean(auc_values)),
        mrr=float(np.mean([r.mrr for r in rows])),
        ndcg5=float(np.mean([r.ndcg5 for r in rows])),
        ndcg10=float(np.mean([r.ndcg10 for r in rows])),
        impressions=len(rows),
        auc_impressions=len(auc_values),
        auc_excluded=len(rows) - len(auc_values),
        skipped_no_positive=skipped,
        per_impression=tuple(rows),
    )
