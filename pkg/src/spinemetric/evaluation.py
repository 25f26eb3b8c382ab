"""Frozen-embedding probing, classification metrics, and 2D projection.

The linear probe is a maximum-margin classifier trained by deterministic
full-batch subgradient descent on the L2-regularized hinge objective
(Pegasos-style 1/(lambda*t) steps with ball projection, fixed iteration
budget), so probe results are reproducible without an external solver.
Fractured is the positive class everywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data import stack_samples
from .mining import GradeLabel

METRIC_NAMES = ("sensitivity", "specificity", "f1")


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def sensitivity(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def specificity(self) -> float:
        return self.tn / (self.tn + self.fp) if (self.tn + self.fp) else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "fp": self.fp,
            "tn": self.tn,
            "fn": self.fn,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "f1": self.f1,
        }


@dataclass
class FoldSummary:
    folds: list = field(default_factory=list)  # Metrics per fold

    @property
    def mean(self) -> dict:
        return {
            name: float(np.mean([getattr(m, name) for m in self.folds]))
            for name in METRIC_NAMES
        }

    @property
    def std(self) -> dict:
        out = {}
        for name in METRIC_NAMES:
            vals = [getattr(m, name) for m in self.folds]
            out[name] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
        return out

    def to_dict(self) -> dict:
        return {
            "folds": [m.to_dict() for m in self.folds],
            "mean": self.mean,
            "std": self.std,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


def confusion_metrics(predictions, truths) -> Metrics:
    """Count the confusion matrix; 1 = fractured = positive."""
    predictions = np.asarray(predictions, dtype=int)
    truths = np.asarray(truths, dtype=int)
    if predictions.shape != truths.shape:
        raise ValueError(
            f"length mismatch: {predictions.shape} predictions vs {truths.shape} truths"
        )
    tp = int(np.sum((predictions == 1) & (truths == 1)))
    fp = int(np.sum((predictions == 1) & (truths == 0)))
    tn = int(np.sum((predictions == 0) & (truths == 0)))
    fn = int(np.sum((predictions == 0) & (truths == 1)))
    return Metrics(tp=tp, fp=fp, tn=tn, fn=fn)


@dataclass
class LinearProbe:
    weights: np.ndarray
    bias: float

    def decision(self, embeddings) -> np.ndarray:
        return np.asarray(embeddings) @ self.weights + self.bias

    def predict(self, embeddings) -> np.ndarray:
        return (self.decision(embeddings) > 0).astype(int)


def linear_probe_train(
    embeddings,
    labels,
    regularization: float = 1e-3,
    seed: int = 0,
    n_steps: int = 100_000,
) -> LinearProbe:
    """Fit the maximum-margin linear probe on frozen embeddings.

    Full-batch subgradient descent is deterministic, so the seed does not
    influence the result; it is accepted for interface uniformity.
    """
    del seed
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError("embeddings must be (N, D) with one label per row")
    if not np.all(np.isfinite(x)):
        raise ValueError("embeddings contain non-finite values")
    classes = np.unique(y)
    if len(classes) < 2:
        raise ValueError("probe training needs both classes present")

    ypm = np.where(y == 1, 1.0, -1.0)
    xa = np.concatenate([x, np.ones((x.shape[0], 1))], axis=1)
    lam = regularization
    w = np.zeros(xa.shape[1])
    radius = 1.0 / np.sqrt(lam)
    n = xa.shape[0]
    for t in range(1, n_steps + 1):
        margins = ypm * (xa @ w)
        viol = margins < 1.0
        grad = lam * w
        if np.any(viol):
            grad = grad - (ypm[viol][:, None] * xa[viol]).sum(axis=0) / n
        w = w - grad / (lam * t)
        norm = np.linalg.norm(w)
        if norm > radius:
            w *= radius / norm
    return LinearProbe(weights=w[:-1].copy(), bias=float(w[-1]))


def binary_fracture_labels(samples) -> np.ndarray:
    """Fractured = {G2, G3}, healthy = {G0}."""
    return np.array([0 if s.grade == GradeLabel.G0 else 1 for s in samples], dtype=int)


def embed_samples(model, samples, batch_size: int = 64) -> np.ndarray:
    """Eval-mode embeddings for a sample list, in order."""
    chunks = []
    for i in range(0, len(samples), batch_size):
        batch = stack_samples(samples[i : i + batch_size], model.config.input_size)
        chunks.append(model.forward(batch, train=False))
    return np.concatenate(chunks, axis=0)


def evaluate_probe_protocol(
    model,
    samples,
    folds,
    regularization: float = 1e-3,
    n_steps: int = 100_000,
    seed: int = 0,
) -> FoldSummary:
    """Linear separability of a frozen embedding model.

    Per fold: fit the probe on the training split's embeddings, score the
    test split. The model is embedded once; only the probe varies by fold.
    """
    from .backbone.model import HEAD_EMBEDDING

    if model.head != HEAD_EMBEDDING:
        raise ValueError("probe protocol requires the embedding head")
    emb = embed_samples(model, samples)
    y = binary_fracture_labels(samples)
    summary = FoldSummary()
    for fold in folds:
        tr = np.array(fold.train_ids)
        te = np.array(fold.test_ids)
        probe = linear_probe_train(
            emb[tr], y[tr], regularization=regularization, seed=seed, n_steps=n_steps
        )
        summary.folds.append(confusion_metrics(probe.predict(emb[te]), y[te]))
    return summary


def evaluate_classifier(models, samples, folds) -> FoldSummary:
    """Per-fold metrics of trained two-logit classifiers (argmax decision)."""
    if len(models) != len(folds):
        raise ValueError("need one trained model per fold")
    y = binary_fracture_labels(samples)
    summary = FoldSummary()
    for model, fold in zip(models, folds):
        te = list(fold.test_ids)
        logits = embed_logits(model, [samples[i] for i in te])
        preds = np.argmax(logits, axis=1)
        summary.folds.append(confusion_metrics(preds, y[te]))
    return summary


def embed_logits(model, samples, batch_size: int = 64) -> np.ndarray:
    from .backbone.model import HEAD_CLASSIFIER

    if model.head != HEAD_CLASSIFIER:
        raise ValueError("classifier evaluation requires the classifier head")
    chunks = []
    for i in range(0, len(samples), batch_size):
        batch = stack_samples(samples[i : i + batch_size], model.config.input_size)
        chunks.append(model.forward(batch, train=False))
    return np.concatenate(chunks, axis=0)


def project_2d(embeddings) -> np.ndarray:
    """Deterministic PCA projection onto the top-2 principal directions.

    Sign convention: each direction's largest-magnitude component is made
    positive, so repeated runs and rotated inputs give reproducible plots.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("projection needs at least 2 embeddings")
    xc = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    dirs = vt[:2] if vt.shape[0] >= 2 else np.vstack([vt, np.zeros_like(vt[:1])])
    fixed = []
    for d in dirs:
        k = int(np.argmax(np.abs(d)))
        fixed.append(-d if d[k] < 0 else d)
    return xc @ np.vstack(fixed).T


GRADE_COLORS = {GradeLabel.G0: "#4878d0", GradeLabel.G2: "#ee854a", GradeLabel.G3: "#d65f5f"}


def projection_csv(ids, grades, coords) -> str:
    lines = ["id,grade,x,y"]
    for i, g, (px, py) in zip(ids, grades, coords):
        lines.append(f"{i},{int(g)},{px:.6f},{py:.6f}")
    return "\n".join(lines) + "\n"


def projection_svg(grades, coords, size: int = 480, pad: int = 32) -> str:
    """Minimal deterministic scatter plot, colored by grade."""
    coords = np.asarray(coords, dtype=np.float64)
    lo = coords.min(axis=0)
    hi = coords.max(axis=0)
    span = np.where(hi - lo > 0, hi - lo, 1.0)
    scaled = (coords - lo) / span * (size - 2 * pad) + pad
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for (px, py), g in zip(scaled, grades):
        color = GRADE_COLORS[GradeLabel(int(g))]
        parts.append(
            f'<circle cx="{px:.2f}" cy="{size - py:.2f}" r="3" '
            f'fill="{color}" fill-opacity="0.75"/>'
        )
    for i, (g, color) in enumerate(GRADE_COLORS.items()):
        y = pad + 16 * i
        parts.append(f'<circle cx="{pad}" cy="{y}" r="4" fill="{color}"/>')
        parts.append(
            f'<text x="{pad + 10}" y="{y + 4}" font-size="12" '
            f'font-family="sans-serif">{g.name}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
