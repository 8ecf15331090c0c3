"""Greedy and prefix-beam CTC decoding, plus utterance-level decoder features."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ctc import collapse, ctc_log_likelihood

FEATURE_NAMES = (
    "mean_max_logp",
    "best_seq_logp",
    "nbest_gap",
    "nbest_depth",
    "hyp_length",
    "n_frames",
    "blank_fraction",
    "mean_entropy",
)
# keeps features finite when a posterior row contains exact zeros
_LOG_FLOOR = -1e3


@dataclass
class DecodeResult:
    best_path: tuple
    hypothesis: tuple
    path_log_score: float
    nbest: list = field(default_factory=list)


@dataclass
class ConfidenceFeatures:
    values: np.ndarray
    uid: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(FEATURE_NAMES),):
            raise ValueError(f"expected {len(FEATURE_NAMES)} features, got {self.values.shape}")
        if not np.isfinite(self.values).all():
            raise ValueError("confidence features must be finite")


def greedy_decode(post: np.ndarray, blank: int = 0) -> DecodeResult:
    """Best-path decoding: per-frame argmax (lowest index on ties), then collapse."""
    post = np.asarray(post, dtype=np.float64)
    path = np.argmax(post, axis=1)  # argmax returns the first maximum
    score = float(post[np.arange(len(path)), path].sum())
    best = tuple(int(k) for k in path)
    return DecodeResult(best, collapse(best, blank), score)


def _lae(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + np.log1p(np.exp(b - a))
    return b + np.log1p(np.exp(a - b))


def prefix_beam_decode(post: np.ndarray, beam_width: int, blank: int = 0, prune: float | None = None) -> DecodeResult:
    """CTC prefix beam search without a language model.

    Surviving prefixes, together with the greedy hypothesis, are rescored with
    the exact sequence likelihood, so ``nbest`` carries true ln P(h|X) values
    sorted best first. ``prune`` skips labels whose frame log-probability is
    more than ``prune`` below the frame maximum.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    post = np.asarray(post, dtype=np.float64)
    greedy = greedy_decode(post, blank)
    T, K = post.shape
    ninf = -np.inf
    beams = {(): (0.0, ninf)}  # prefix -> (ends in blank, ends in label)
    for t in range(T):
        row = post[t]
        if prune is None:
            cands = [k for k in range(K) if k != blank]
        else:
            cut = row.max() - prune
            cands = [k for k in range(K) if k != blank and row[k] >= cut]
        nxt = {}

        def add(prefix, pb, pnb):
            ob, onb = nxt.get(prefix, (ninf, ninf))
            nxt[prefix] = (_lae(ob, pb), _lae(onb, pnb))

        for prefix, (pb, pnb) in beams.items():
            tot = _lae(pb, pnb)
            add(prefix, tot + row[blank], ninf)
            last = prefix[-1] if prefix else None
            for k in cands:
                p = row[k]
                if k == last:
                    add(prefix + (k,), ninf, pb + p)
                    add(prefix, ninf, pnb + p)
                else:
                    add(prefix + (k,), ninf, tot + p)
        ranked = sorted(nxt.items(), key=lambda kv: (-_lae(*kv[1]), kv[0]))
        beams = dict(ranked[:beam_width])

    cands = set(beams) | {greedy.hypothesis}
    scored = []
    for h in cands:
        s = ctc_log_likelihood(post, h, blank)
        if s > ninf:
            scored.append((h, float(s)))
    scored.sort(key=lambda hs: (-hs[1], hs[0]))
    return DecodeResult(greedy.best_path, greedy.hypothesis, greedy.path_log_score, scored[:beam_width])


def extract_confidence_features(post: np.ndarray, decode: DecodeResult, blank: int = 0, uid: str = "") -> ConfidenceFeatures:
    """Fixed-order decoder features for the utterance confidence model (see FEATURE_NAMES)."""
    post = np.asarray(post, dtype=np.float64)
    T = post.shape[0]
    floored = np.maximum(post, _LOG_FLOOR)
    probs = np.exp(post)
    entropy = -(probs * np.where(probs > 0, floored, 0.0)).sum(axis=1)
    nbest = decode.nbest
    if nbest:
        best = max(nbest[0][1], _LOG_FLOOR)
        gap = best - max(nbest[1][1], _LOG_FLOOR) if len(nbest) > 1 else 0.0
    else:
        best = max(decode.path_log_score, _LOG_FLOOR)
        gap = 0.0
    path = np.asarray(decode.best_path)
    values = [
        floored.max(axis=1).mean(),
        best,
        gap,
        float(len(nbest)),
        float(len(decode.hypothesis)),
        float(T),
        float((path == blank).mean()),
        float(entropy.mean()),
    ]
    return ConfidenceFeatures(np.array(values), uid)
