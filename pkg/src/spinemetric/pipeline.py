"""Staged training: region pre-training, grade-aware representation
learning, and binary fracture fine-tuning.

Stages run strictly in the order label-pretrain -> representation-learn ->
fracture-train; any stage may be disabled. Metric stages mine one tuple per
training sample per epoch (re-mined each epoch from a shifted seed) and
minimize the configured loss with Adam. Entering the fracture stage swaps
the embedding head for the two-logit classifier head; batch-norm running
statistics carry across stages.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .backbone.model import (
    HEAD_CLASSIFIER,
    HEAD_EMBEDDING,
    NetworkConfig,
    PatchEncoder,
    init_model,
)
from .backbone.optim import adam_init, adam_step
from .data import stack_samples
from .evaluation import (
    Metrics,
    binary_fracture_labels,
    confusion_metrics,
    embed_samples,
    linear_probe_train,
)
from .losses import GradingMargins, contrastive_loss, cross_entropy, grading_loss, triplet_loss
from .mining import FoldSplit, mine_pairs, mine_quadruplets, mine_triplets

STAGE_LABEL = "LabelPretrain"
STAGE_REPRESENTATION = "RepresentationLearn"
STAGE_FRACTURE = "FractureTrain"
STAGE_ORDER = (STAGE_LABEL, STAGE_REPRESENTATION, STAGE_FRACTURE)

_STAGE_LOSSES = {
    STAGE_LABEL: ("contrastive", "triplet"),
    STAGE_REPRESENTATION: ("contrastive", "triplet", "grading"),
    STAGE_FRACTURE: ("cross_entropy",),
}

# Seed offsets keeping per-stage mining streams disjoint.
_STAGE_SEED_OFFSET = {STAGE_LABEL: 100_000, STAGE_REPRESENTATION: 200_000, STAGE_FRACTURE: 300_000}
_HEAD_SEED_OFFSET = 400_000


@dataclass(frozen=True)
class StagePlan:
    stage: str
    loss_kind: str
    epochs: int
    batch_size: int = 32
    enabled: bool = True

    def __post_init__(self):
        if self.stage not in STAGE_ORDER:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.loss_kind not in _STAGE_LOSSES[self.stage]:
            raise ValueError(
                f"stage {self.stage} cannot use loss {self.loss_kind!r}; "
                f"allowed: {_STAGE_LOSSES[self.stage]}"
            )
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")


def validate_stage_plans(plans) -> None:
    """Reject out-of-order or duplicated stages."""
    order = [STAGE_ORDER.index(p.stage) for p in plans]
    if sorted(order) != order or len(set(order)) != len(order):
        raise ValueError(f"stages must appear once each, in the order {STAGE_ORDER}")


@dataclass
class RunRecord:
    stage: str
    loss_kind: str
    epoch_losses: list = field(default_factory=list)
    seconds: float = 0.0
    checkpoint: str | None = None

    def to_dict(self) -> dict:
        return {
            "stage": self.stage,
            "loss_kind": self.loss_kind,
            "epoch_losses": [float(v) for v in self.epoch_losses],
            "seconds": self.seconds,
            "checkpoint": self.checkpoint,
        }


@dataclass(frozen=True)
class PipelineConfig:
    network: NetworkConfig = NetworkConfig()
    margins: GradingMargins = GradingMargins()
    stages: tuple = (
        StagePlan(STAGE_LABEL, "contrastive", epochs=30),
        StagePlan(STAGE_REPRESENTATION, "grading", epochs=30),
        StagePlan(STAGE_FRACTURE, "cross_entropy", epochs=40),
    )
    learning_rate: float = 1e-4
    triplet_margin: float = 1.0
    contrastive_margin: float = 1.0
    clustering_mode: str = "textual"
    probe_regularization: float = 1e-3
    probe_steps: int = 100_000
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        validate_stage_plans(self.stages)

    def to_dict(self) -> dict:
        return {
            "network": self.network.to_dict(),
            "margins": {
                "alpha": self.margins.alpha,
                "beta": self.margins.beta,
                "gamma": self.margins.gamma,
            },
            "stages": [
                {
                    "stage": p.stage,
                    "loss_kind": p.loss_kind,
                    "epochs": p.epochs,
                    "batch_size": p.batch_size,
                    "enabled": p.enabled,
                }
                for p in self.stages
            ],
            "learning_rate": self.learning_rate,
            "triplet_margin": self.triplet_margin,
            "contrastive_margin": self.contrastive_margin,
            "clustering_mode": self.clustering_mode,
            "probe_regularization": self.probe_regularization,
            "probe_steps": self.probe_steps,
            "seed": self.seed,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d) -> "PipelineConfig":
        d = dict(d)
        if "network" in d:
            d["network"] = NetworkConfig.from_dict(d["network"])
        if "margins" in d:
            d["margins"] = GradingMargins(**d["margins"])
        if "stages" in d:
            d["stages"] = tuple(StagePlan(**p) for p in d["stages"])
        return cls(**d)


def label_targets(regions) -> list[int]:
    """Five-class region targets with the fixed T1_T5=0 ... L5=4 ordering."""
    return [int(r) for r in regions]


def _metric_rows(samples, tuples, loss_kind):
    """Flatten mined tuples into a forward batch, tuple members contiguous."""
    idxs = []
    for t in tuples:
        if loss_kind == "grading":
            idxs.extend([t.idx_g0, t.idx_g2, t.idx_g3, t.idx_anchor])
        elif loss_kind == "triplet":
            idxs.extend(t)
        else:
            idxs.extend([t[0], t[1]])
    return [samples[i] for i in idxs]


def _tuple_width(loss_kind) -> int:
    return {"grading": 4, "triplet": 3, "contrastive": 2}[loss_kind]


def _metric_batch_loss(emb, tuples, loss_kind, config):
    """Mean loss over the tuples in one batch plus d(mean)/d(embeddings)."""
    width = _tuple_width(loss_kind)
    upstream = np.zeros_like(emb)
    total = 0.0
    inv = 1.0 / len(tuples)
    for i, t in enumerate(tuples):
        rows = slice(i * width, (i + 1) * width)
        e = emb[rows]
        if loss_kind == "grading":
            lv = grading_loss(
                e[0], e[1], e[2], e[3],
                anchor_class=t.anchor_class,
                margins=config.margins,
                clustering_mode=config.clustering_mode,
            )
            keys = ("g0", "g2", "g3", "anchor")
        elif loss_kind == "triplet":
            lv = triplet_loss(e[0], e[1], e[2], margin=config.triplet_margin)
            keys = ("anchor", "positive", "negative")
        else:
            lv = contrastive_loss(e[0], e[1], similar=t[2], margin=config.contrastive_margin)
            keys = ("a", "b")
        total += lv.total
        for j, key in enumerate(keys):
            upstream[i * width + j] += lv.gradients[key] * inv
    return total * inv, upstream


def _stage_labels(plan, samples):
    if plan.stage == STAGE_LABEL:
        return label_targets([s.region for s in samples])
    return [int(s.grade) for s in samples]


def _mine(plan, labels, count, seed):
    if plan.loss_kind == "grading":
        return mine_quadruplets(labels, count, seed)
    if plan.loss_kind == "triplet":
        return mine_triplets(labels, count, seed)
    return mine_pairs(labels, count, similar_fraction=0.5, seed=seed)


def run_stage(model: PatchEncoder, plan: StagePlan, samples, seed: int, config: PipelineConfig) -> RunRecord:
    """Train one stage in place over the given training samples."""
    if not samples:
        raise ValueError("empty training split")
    started = time.perf_counter()
    record = RunRecord(stage=plan.stage, loss_kind=plan.loss_kind)

    if plan.stage == STAGE_FRACTURE:
        if model.head != HEAD_CLASSIFIER:
            model.swap_head(HEAD_CLASSIFIER, seed=seed + _HEAD_SEED_OFFSET)
        _train_fracture(model, plan, samples, seed, config, record)
    else:
        if model.head != HEAD_EMBEDDING:
            raise ValueError(f"stage {plan.stage} requires the embedding head")
        _train_metric(model, plan, samples, seed, config, record)

    record.seconds = time.perf_counter() - started
    return record


def _train_metric(model, plan, samples, seed, config, record):
    labels = _stage_labels(plan, samples)
    base_seed = seed + _STAGE_SEED_OFFSET[plan.stage]
    opt = adam_init(model, learning_rate=config.learning_rate)
    model.mode = "train"
    for epoch in range(plan.epochs):
        tuples = _mine(plan, labels, count=len(samples), seed=base_seed + epoch)
        losses = []
        for start in range(0, len(tuples), plan.batch_size):
            chunk = tuples[start : start + plan.batch_size]
            rows = _metric_rows(samples, chunk, plan.loss_kind)
            batch = stack_samples(rows, model.config.input_size)
            emb = model.forward(batch, train=True)
            mean_loss, upstream = _metric_batch_loss(emb, chunk, plan.loss_kind, config)
            if not np.isfinite(mean_loss):
                raise FloatingPointError(
                    f"{plan.stage} diverged at epoch {epoch} (loss={mean_loss})"
                )
            model.zero_grad()
            grads = model.backward(upstream)
            adam_step(model, opt, grads)
            losses.append((mean_loss, len(chunk)))
        record.epoch_losses.append(
            float(sum(l * n for l, n in losses) / sum(n for _, n in losses))
        )


def _train_fracture(model, plan, samples, seed, config, record):
    y = binary_fracture_labels(samples)
    if len(np.unique(y)) < 2:
        raise ValueError("fracture training split contains a single class")
    base_seed = seed + _STAGE_SEED_OFFSET[STAGE_FRACTURE]
    opt = adam_init(model, learning_rate=config.learning_rate)
    model.mode = "train"
    for epoch in range(plan.epochs):
        order = np.random.default_rng([base_seed + epoch]).permutation(len(samples))
        losses = []
        for start in range(0, len(order), plan.batch_size):
            ids = order[start : start + plan.batch_size]
            batch = stack_samples([samples[i] for i in ids], model.config.input_size)
            logits = model.forward(batch, train=True)
            upstream = np.zeros_like(logits)
            total = 0.0
            for j, i in enumerate(ids):
                lv = cross_entropy(logits[j], int(y[i]))
                total += lv.total
                upstream[j] = lv.gradients["logits"] / len(ids)
            mean_loss = total / len(ids)
            if not np.isfinite(mean_loss):
                raise FloatingPointError(
                    f"{plan.stage} diverged at epoch {epoch} (loss={mean_loss})"
                )
            model.zero_grad()
            grads = model.backward(upstream)
            adam_step(model, opt, grads)
            losses.append((mean_loss, len(ids)))
        record.epoch_losses.append(
            float(sum(l * n for l, n in losses) / sum(n for _, n in losses))
        )


def model_seed_for_fold(config: PipelineConfig, fold_id: int) -> int:
    return config.seed + 1009 * fold_id


def run_pipeline(config: PipelineConfig, samples, fold: FoldSplit, checkpoint_dir=None):
    """Run the enabled stages on the fold's training split, then score the
    test split.

    Classifier-headed models are scored by argmax over the two logits;
    embedding-headed runs fall back to the linear-probe protocol on this
    fold. With ``checkpoint_dir`` set, a checkpoint is written after every
    stage (recorded on its RunRecord). Returns (model, Metrics, [RunRecord]).
    """
    from pathlib import Path

    from .backbone.checkpoint import save_model

    n = len(samples)
    ids = set(fold.train_ids) | set(fold.test_ids)
    if ids != set(range(n)):
        raise ValueError("fold does not cover the dataset exactly")

    model = init_model(config.network, seed=model_seed_for_fold(config, fold.fold_id))
    train_samples = [samples[i] for i in fold.train_ids]
    records = []
    for k, plan in enumerate(config.stages, start=1):
        if not plan.enabled or plan.epochs == 0:
            continue
        record = run_stage(model, plan, train_samples, seed=config.seed, config=config)
        if checkpoint_dir is not None:
            path = Path(checkpoint_dir) / f"stage{k}_{plan.stage}.gmck"
            save_model(model, path)
            record.checkpoint = path.name
        records.append(record)

    metrics = score_fold(model, samples, fold, config)
    return model, metrics, records


def score_fold(model, samples, fold, config: PipelineConfig) -> Metrics:
    y = binary_fracture_labels(samples)
    test_samples = [samples[i] for i in fold.test_ids]
    y_test = y[list(fold.test_ids)]
    model.mode = "eval"
    if model.head == HEAD_CLASSIFIER:
        from .evaluation import embed_logits

        logits = embed_logits(model, test_samples)
        preds = np.argmax(logits, axis=1)
    else:
        train_emb = embed_samples(model, [samples[i] for i in fold.train_ids])
        probe = linear_probe_train(
            train_emb,
            y[list(fold.train_ids)],
            regularization=config.probe_regularization,
            n_steps=config.probe_steps,
        )
        preds = probe.predict(embed_samples(model, test_samples))
    return confusion_metrics(preds, y_test)
