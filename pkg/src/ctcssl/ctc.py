"""CTC label space, the collapse mapping and the sequence likelihood.

Paths and label sequences are plain tuples of label indices. A log-probability
matrix is a float64 array of shape ``(n_frames, n_labels)`` whose rows are
normalised in log space.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels

Path = tuple
LabelSequence = tuple


class InfeasibleTargetError(ValueError):
    """The target cannot be emitted in the available number of frames."""


class _Infeasible(float):
    """-inf tagged as 'no admissible path', distinguishable with ``is``."""

    def __new__(cls):
        return super().__new__(cls, float("-inf"))

    def __repr__(self):
        return "INFEASIBLE"


INFEASIBLE = _Infeasible()


@dataclass(frozen=True)
class Alphabet:
    labels: tuple
    blank_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) < 2:
            raise ValueError("alphabet needs a blank and at least one other label")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("alphabet labels must be unique")
        if not 0 <= self.blank_index < len(self.labels):
            raise ValueError(f"blank_index {self.blank_index} out of range")

    @classmethod
    def of_size(cls, n_symbols: int, blank_index: int = 0) -> "Alphabet":
        """Alphabet with ``n_symbols`` non-blank symbols named ``s1..sN`` and ``-`` as blank."""
        names = [f"s{i}" for i in range(1, n_symbols + 1)]
        names.insert(blank_index, "-")
        return cls(tuple(names), blank_index)

    def __len__(self):
        return len(self.labels)

    @property
    def blank(self) -> int:
        return self.blank_index

    def index(self, label) -> int:
        return self.labels.index(label)

    def encode(self, labels: Sequence) -> tuple:
        return tuple(self.labels.index(x) for x in labels)

    def decode(self, indices: Sequence[int]) -> tuple:
        return tuple(self.labels[i] for i in indices)


def collapse(path: Sequence[int], blank: int = 0) -> LabelSequence:
    """Map a frame-level path onto its label sequence.

    Adjacent repeats are merged first and blanks removed afterwards, so
    ``a a - a`` gives ``a a``.
    """
    out = []
    prev = None
    for k in path:
        k = int(k)
        if k != prev and k != blank:
            out.append(k)
        prev = k
    return tuple(out)


def min_frames(target: Sequence[int]) -> int:
    """Fewest frames able to emit ``target`` (one blank needed between repeats)."""
    repeats = sum(1 for a, b in zip(target, target[1:]) if a == b)
    return len(target) + repeats


def is_feasible(target: Sequence[int], n_frames: int) -> bool:
    return min_frames(target) <= n_frames


def check_log_probs(post: np.ndarray, atol: float = 1e-9) -> np.ndarray:
    """Validate and return ``post`` as a contiguous float64 log-probability matrix."""
    post = np.ascontiguousarray(post, dtype=np.float64)
    if post.ndim != 2 or post.shape[0] < 1 or post.shape[1] < 2:
        raise ValueError(f"expected (frames, labels) matrix, got shape {post.shape}")
    if np.isnan(post).any() or (post > atol).any():
        raise ValueError("log-probabilities must be <= 0 and not NaN")
    norm = np.logaddexp.reduce(post, axis=1)
    if np.abs(norm).max() > atol:
        raise ValueError(f"rows do not normalise (max |logsumexp| = {np.abs(norm).max():.3g})")
    return post


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _as_target(target, n_labels, blank):
    arr = np.asarray(tuple(target), dtype=np.intp)
    if arr.size and ((arr < 0).any() or (arr >= n_labels).any() or (arr == blank).any()):
        raise ValueError(f"target {tuple(target)} has blank or out-of-range labels")
    return arr


def ctc_log_likelihood(post: np.ndarray, target: Sequence[int], blank: int = 0) -> float:
    """ln P(target | X), summed over every path collapsing to ``target``.

    Returns :data:`INFEASIBLE` when no path of this length can produce the
    target. Rows of ``post`` are assumed normalised; validate with
    :func:`check_log_probs` where inputs are untrusted.
    """
    post = np.ascontiguousarray(post, dtype=np.float64)
    tgt = _as_target(target, post.shape[1], blank)
    if not is_feasible(tgt.tolist(), post.shape[0]):
        return INFEASIBLE
    return min(float(kernels.ctc_forward(post, tgt, blank)), 0.0)


def ctc_loss_and_grad(post: np.ndarray, target: Sequence[int], blank: int = 0):
    """CTC loss and its gradient with respect to the logits behind ``post``.

    ``post`` must equal ``log_softmax(logits)``. The gradient is
    ``softmax(logits) - gamma`` with gamma the per-frame label occupancy of
    the target lattice.

    Raises:
        InfeasibleTargetError: if the target is too long for the frame count.
    """
    post = np.ascontiguousarray(post, dtype=np.float64)
    tgt = _as_target(target, post.shape[1], blank)
    if not is_feasible(tgt.tolist(), post.shape[0]):
        raise InfeasibleTargetError(
            f"target of length {len(tgt)} needs {min_frames(tgt.tolist())} frames, have {post.shape[0]}"
        )
    ll, gamma = kernels.ctc_occupancy(post, tgt, blank)
    if not np.isfinite(ll):
        raise InfeasibleTargetError("target has zero probability under these posteriors")
    return max(-float(ll), 0.0), np.exp(post) - gamma


BRUTE_FORCE_MAX_FRAMES = 10
BRUTE_FORCE_MAX_LABELS = 5


def brute_force_log_likelihood(post: np.ndarray, target: Sequence[int], blank: int = 0) -> float:
    """Exact ln P(target | X) by enumerating all ``|Z| ** N_X`` paths (test oracle)."""
    post = np.asarray(post, dtype=np.float64)
    T, K = post.shape
    if T > BRUTE_FORCE_MAX_FRAMES or K > BRUTE_FORCE_MAX_LABELS:
        raise ValueError(
            f"brute force limited to {BRUTE_FORCE_MAX_FRAMES} frames and "
            f"{BRUTE_FORCE_MAX_LABELS} labels, got {T}x{K}"
        )
    target = tuple(int(k) for k in target)
    terms = [
        sum(post[t, k] for t, k in enumerate(path))
        for path in itertools.product(range(K), repeat=T)
        if collapse(path, blank) == target
    ]
    if not terms:
        return float("-inf")
    return float(np.logaddexp.reduce(terms))
