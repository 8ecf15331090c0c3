"""Utterance confidence: logistic regression on decoder features, scaled to [0, 1000] and binned."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .decoder import FEATURE_NAMES, ConfidenceFeatures
from .selection import N_BINS

__all__ = [
    "ConfidenceFeatures", "ConfidenceModel", "ConfidenceRecord", "train_confidence",
    "score", "score_many", "calibration_report", "scale_and_bin",
]


@dataclass
class ConfidenceModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if (self.std <= 0).any():
            raise ValueError("feature stddevs must be positive")

    def logits(self, X):
        return ((np.asarray(X, dtype=np.float64) - self.mean) / self.std) @ self.weights + self.bias

    def to_json(self) -> dict:
        return {"features": list(FEATURE_NAMES), "weights": self.weights.tolist(), "bias": self.bias,
                "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(d["weights"], d["bias"], d["mean"], d["std"])


@dataclass(frozen=True)
class ConfidenceRecord:
    uid: str
    score: float
    scaled_score: int
    bin: int

    def to_json(self):
        return {"uid": self.uid, "score": round(self.score, 12), "scaled_score": self.scaled_score, "bin": self.bin}


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _bce(w, b, Z, y, l2):
    z = Z @ w + b
    # log(1 + exp(-z)) for y=1, log(1 + exp(z)) for y=0
    loss = np.mean(np.logaddexp(0.0, -z) * y + np.logaddexp(0.0, z) * (1 - y)) + 0.5 * l2 * w @ w
    r = _sigmoid(z) - y
    return loss, Z.T @ r / len(y) + l2 * w, r.mean()


def train_confidence(features, targets, l2: float = 1e-4, lr: float = 1.0,
                     max_iter: int = 20000, tol: float = 1e-6, history: list | None = None) -> ConfidenceModel:
    """Fit the confidence classifier by full-batch gradient descent on mean cross-entropy.

    ``targets`` are 1 where the hypothesis was fully correct. A step that
    would raise the loss is retried at half the step size, so the training
    loss never increases. Accepted losses are appended to ``history`` if given.
    """
    X = np.asarray([f.values if isinstance(f, ConfidenceFeatures) else f for f in features], dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("features and targets must align")
    if (y == 1).sum() < 2 or (y == 0).sum() < 2:
        raise ValueError("need at least two examples of each class")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std[std == 0] = 1.0
    Z = (X - mean) / std
    w = np.zeros(X.shape[1])
    b = 0.0
    loss, gw, gb = _bce(w, b, Z, y, l2)
    step = lr
    if history is not None:
        history.append(float(loss))
    for _ in range(max_iter):
        if math.sqrt(gw @ gw + gb * gb) < tol:
            break
        while True:
            w_new, b_new = w - step * gw, b - step * gb
            new_loss, ngw, ngb = _bce(w_new, b_new, Z, y, l2)
            if new_loss <= loss or step < 1e-12:
                break
            step *= 0.5
        if new_loss > loss:
            break
        w, b, loss, gw, gb = w_new, b_new, new_loss, ngw, ngb
        if history is not None:
            history.append(float(loss))
    return ConfidenceModel(w, float(b), mean, std)


def scale_and_bin(p: float) -> tuple[int, int]:
    """Scaled score round(1000 p) and its bin; 1000 falls into the top bin."""
    scaled = int(math.floor(p * 1000.0 + 0.5))
    scaled = min(max(scaled, 0), 1000)
    return scaled, min(scaled // 100, N_BINS - 1)


def score(model: ConfidenceModel, features, uid: str = "") -> ConfidenceRecord:
    if isinstance(features, ConfidenceFeatures):
        uid = uid or features.uid
        features = features.values
    p = float(_sigmoid(model.logits(np.asarray(features, dtype=np.float64)[None, :]))[0])
    scaled, b = scale_and_bin(p)
    return ConfidenceRecord(uid, p, scaled, b)


def score_many(model: ConfidenceModel, features) -> list:
    return [score(model, f) for f in features]


def calibration_report(model: ConfidenceModel, eval_set) -> list:
    """Per-bin share of fully correct hypotheses.

    ``eval_set`` holds ``(features, correct)`` pairs. Rows are dicts
    ``{"bin", "count", "accuracy"}`` for non-empty bins only; empty input gives
    an empty table.
    """
    acc = {}
    for feats, correct in eval_set:
        rec = score(model, feats)
        n, k = acc.get(rec.bin, (0, 0))
        acc[rec.bin] = (n + 1, k + int(bool(correct)))
    return [{"bin": b, "count": n, "accuracy": k / n} for b, (n, k) in sorted(acc.items())]


def is_monotone(report) -> bool:
    accs = [r["accuracy"] for r in report]
    return all(a <= b for a, b in zip(accs, accs[1:]))


def write_confidence_manifest(path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json()) + "\n")
