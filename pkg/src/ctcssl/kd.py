"""Knowledge distillation for CTC students and the pseudo-labelling pipeline.

The sequence-level distillation loss sums over every teacher label sequence
weighted by its teacher probability. Replacing that sum by the single greedy
teacher path and treating the teacher's frame posteriors as one-hot at the
argmax leaves an ordinary CTC loss on ``collapse(argmax path)``. That hard
target is what :func:`generate_pseudo_labels` produces; the full sum is never
evaluated.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .ctc import ctc_log_likelihood
from .decoder import greedy_decode
from .model import ModelParams, posteriors

TEACHER = "teacher"
SELF_TRAINING = "self-training"


@dataclass
class PseudoLabeledUtterance:
    utterance: object
    pseudo_label: tuple
    teacher_path_log_score: float
    provenance: str = TEACHER

    def __post_init__(self):
        self.pseudo_label = tuple(int(k) for k in self.pseudo_label)
        if not self.pseudo_label:
            raise ValueError("empty pseudo-labels are dropped before this point")

    @property
    def uid(self):
        return self.utterance.uid


@dataclass
class DataPool:
    """Labelled pool D_L (utterance, reference) pairs, unlabelled pool D_U and its pseudo-labels."""

    labelled: list = field(default_factory=list)
    unlabelled: list = field(default_factory=list)
    pseudo_labelled: list = field(default_factory=list)

    def __post_init__(self):
        lab = {u.uid for u, _ in self.labelled}
        both = lab & {u.uid for u in self.unlabelled}
        if both:
            raise ValueError(f"{len(both)} utterance ids are both labelled and unlabelled, e.g. {sorted(both)[0]}")


def label_from_posteriors(post: np.ndarray, blank: int = 0):
    """``(collapse(argmax path), path log score)``; the label is ``None`` when the path is all blank."""
    dec = greedy_decode(post, blank)
    return (dec.hypothesis or None), dec.path_log_score


def _label(params: ModelParams, utterances, provenance):
    utterances = list(utterances)
    posts = posteriors(params, [u.features for u in utterances])
    out = []
    dropped = 0
    for u, post in zip(utterances, posts):
        label, score = label_from_posteriors(post, params.config.blank)
        if label is None:
            dropped += 1
            continue
        out.append(PseudoLabeledUtterance(u, label, score, provenance))
    return out, dropped


def generate_pseudo_labels(teacher: ModelParams, utterances, provenance: str = TEACHER):
    """Label each utterance with collapse(frame-wise argmax of the teacher).

    Returns ``(pseudo_labelled, n_dropped)``; utterances whose greedy path is
    all blank are dropped.
    """
    return _label(teacher, utterances, provenance)


def self_training_labels(model: ModelParams, utterances):
    """Same pipeline as :func:`generate_pseudo_labels`, driven by a student-capacity model."""
    return _label(model, utterances, SELF_TRAINING)


def frame_kd_loss(teacher_post: np.ndarray, student_post: np.ndarray):
    """Frame-level distillation: -sum_t sum_k P_T(k|x_t) ln P_S(k|x_t).

    Returns the loss and its gradient with respect to the student logits,
    ``softmax(student) - P_T`` per frame.
    """
    teacher_post = np.asarray(teacher_post, dtype=np.float64)
    student_post = np.asarray(student_post, dtype=np.float64)
    if teacher_post.shape != student_post.shape:
        raise ValueError(f"shape mismatch: teacher {teacher_post.shape} vs student {student_post.shape}")
    pt = np.exp(teacher_post)
    # 0 * (-inf) counts as 0
    loss = -float(np.multiply(pt, student_post, out=np.zeros_like(pt), where=pt > 0).sum())
    return loss, np.exp(student_post) - pt


def ssl_training_set(pool: DataPool, seed: int = 0, unlabelled_weight: float = 1.0) -> list:
    """Interleave D_L with pseudo-labelled D_U into one CTC training list.

    Items are ``(features, target, weight)``; the order is a seeded shuffle.
    With the default weight of 1.0 the summed loss is the plain sum of the
    labelled and pseudo-labelled terms.
    """
    items = [(u.features, tuple(ref), 1.0) for u, ref in pool.labelled]
    items += [(p.utterance.features, p.pseudo_label, float(unlabelled_weight)) for p in pool.pseudo_labelled]
    if not items:
        raise ValueError("no labelled or pseudo-labelled utterances to train on")
    order = np.random.default_rng(seed).permutation(len(items))
    return [items[i] for i in order]


def dataset_loss(params: ModelParams, items) -> float:
    """Summed weighted -ln P_S(target|X) over ``(features, target[, weight])`` items."""
    items = list(items)
    posts = posteriors(params, [it[0] for it in items])
    total = 0.0
    for it, post in zip(items, posts):
        w = it[2] if len(it) > 2 else 1.0
        total += -w * ctc_log_likelihood(post, it[1], params.config.blank)
    return total


def write_pseudo_manifest(path, records) -> None:
    """JSON lines: ``{"uid", "pseudo_label", "path_log_score", "provenance"}``."""
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps({
                "uid": r.uid,
                "pseudo_label": list(r.pseudo_label),
                "path_log_score": round(float(r.teacher_path_log_score), 12),
                "provenance": r.provenance,
            }) + "\n")


def read_pseudo_manifest(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
