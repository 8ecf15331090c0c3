"""Synthetic labelled/unlabelled/evaluation corpora standing in for production traffic.

Each utterance is a label sequence drawn from a per-domain bigram model,
expanded to frames (blank gaps, 2-5 frames per label) and rendered as
Gaussian feature vectors: label mean + speaker offset + utterance-level noise.
The noise level varies per utterance so that decoding difficulty, and
hence confidence, spans a wide range.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .ctc import collapse
from .selection import UtteranceMeta

SPLITS = ("labelled", "unlabelled", "eval", "calibration")


@dataclass(frozen=True)
class CorpusConfig:
    n_symbols: int = 10
    input_dim: int = 8
    n_domains: int = 5
    n_speakers: int = 60
    n_devices: int = 300
    device_zipf: float = 0.6
    n_labelled: int = 200
    n_unlabelled: int = 5000
    n_eval: int = 500
    n_calibration: int = 150
    duration_range: tuple = (2, 5)
    length_range: tuple = (3, 8)
    label_sep: float = 1.0
    speaker_sd: float = 0.35
    noise_range: tuple = (0.2, 1.4)
    domain_focus: float = 0.9
    focus_size: int = 3
    wakeword_fraction: float = 0.05
    repeat_fraction: float = 0.3
    n_popular: int = 4
    seed: int = 0

    def __post_init__(self):
        for f in ("n_symbols", "input_dim", "n_domains", "n_speakers", "n_devices",
                  "n_labelled", "n_unlabelled", "n_eval", "n_calibration"):
            if getattr(self, f) < 1:
                raise ValueError(f"{f} must be positive")
        if self.n_symbols < 2:
            raise ValueError("n_symbols must be >= 2 (one is reserved for the wakeword)")
        lo, hi = self.noise_range
        if lo < 0 or hi < lo:
            raise ValueError("noise_range must be non-negative and ordered")
        dlo, dhi = self.duration_range
        if dlo < 1 or dhi < dlo:
            raise ValueError("duration_range must be positive and ordered")
        llo, lhi = self.length_range
        if llo < 1 or lhi < llo:
            raise ValueError("length_range must be positive and ordered")
        for f in ("wakeword_fraction", "repeat_fraction", "domain_focus"):
            if not 0.0 <= getattr(self, f) <= 1.0:
                raise ValueError(f"{f} must lie in [0, 1]")
        object.__setattr__(self, "duration_range", tuple(self.duration_range))
        object.__setattr__(self, "length_range", tuple(self.length_range))
        object.__setattr__(self, "noise_range", tuple(self.noise_range))

    @property
    def n_labels(self) -> int:
        return self.n_symbols + 1

    @property
    def wakeword(self) -> int:
        return self.n_symbols

    @property
    def domains(self) -> list:
        return [f"D{i + 1}" for i in range(self.n_domains)]

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusConfig":
        known = {f.name for f in fields(cls)}
        bad = sorted(set(d) - known)
        if bad:
            raise ValueError(f"unknown corpus config field(s): {', '.join(bad)}")
        return cls(**d)


@dataclass
class SyntheticUtterance:
    uid: str
    features: np.ndarray
    truth: tuple
    truth_frames: np.ndarray
    meta: UtteranceMeta
    labelled: bool
    noise_sd: float = 0.0

    @property
    def reference(self):
        """Transcript visible to training; ``None`` for unlabelled utterances."""
        return self.truth if self.labelled else None

    @property
    def frame_labels(self):
        return self.truth_frames if self.labelled else None


@dataclass
class Corpus:
    config: CorpusConfig
    labelled: list
    unlabelled: list
    eval: list
    calibration: list = field(default_factory=list)

    def split(self, name):
        return getattr(self, name)


@dataclass
class _World:
    means: np.ndarray
    speaker_offsets: np.ndarray
    device_owner: np.ndarray
    device_weights: np.ndarray
    start: np.ndarray
    bigram: np.ndarray
    popular: list


def _build_world(cfg: CorpusConfig) -> _World:
    rng = np.random.default_rng([cfg.seed, 0])
    K = cfg.n_labels
    means = rng.normal(0.0, cfg.label_sep, (K, cfg.input_dim))
    speaker_offsets = rng.normal(0.0, cfg.speaker_sd, (cfg.n_speakers, cfg.input_dim))
    device_owner = rng.integers(0, cfg.n_speakers, cfg.n_devices)
    ranks = rng.permutation(cfg.n_devices) + 1
    device_weights = ranks ** -cfg.device_zipf
    device_weights /= device_weights.sum()

    content = np.arange(1, cfg.wakeword)  # wakeword symbol is never content
    if len(content) == 0:
        content = np.array([1])
    n = len(content)
    start = np.zeros((cfg.n_domains, K))
    bigram = np.zeros((cfg.n_domains, K, K))
    popular = []
    order = rng.permutation(n)
    for d in range(cfg.n_domains):
        focus = content[order[[(d * cfg.focus_size + j) % n for j in range(min(cfg.focus_size, n))]]]
        uni = np.full(n, (1.0 - cfg.domain_focus) / n)
        uni[np.isin(content, focus)] += cfg.domain_focus / len(focus)
        start[d, content] = uni
        for a in content:
            row = rng.dirichlet(np.full(n, 0.5)) * 0.5 + 0.5 * uni
            bigram[d, a, content] = row / row.sum()
        phrases = []
        for _ in range(cfg.n_popular):
            phrases.append(_draw_sequence(rng, cfg, start[d], bigram[d]))
        popular.append(phrases)
    return _World(means, speaker_offsets, device_owner, device_weights, start, bigram, popular)


def _draw_sequence(rng, cfg, start, bigram):
    L = int(rng.integers(cfg.length_range[0], cfg.length_range[1] + 1))
    K = len(start)
    seq = [int(rng.choice(K, p=start))]
    for _ in range(L - 1):
        seq.append(int(rng.choice(K, p=bigram[seq[-1]])))
    return tuple(seq)


def _frames_for(rng, cfg, seq, blank=0):
    lo, hi = cfg.duration_range
    frames = [blank] * int(rng.integers(1, 4))
    for i, k in enumerate(seq):
        if i:
            gap = int(rng.integers(0, 3))
            if k == seq[i - 1]:
                gap = max(gap, 1)
            frames.extend([blank] * gap)
        frames.extend([k] * int(rng.integers(lo, hi + 1)))
    frames.extend([blank] * int(rng.integers(1, 4)))
    return np.array(frames, dtype=np.intp)


def _utterance(world, cfg, split_id, split, i, labelled):
    rng = np.random.default_rng([cfg.seed, 1 + split_id, i])
    device = int(rng.choice(cfg.n_devices, p=world.device_weights))
    speaker = int(world.device_owner[device])
    d = int(rng.integers(cfg.n_domains))
    wake = bool(rng.random() < cfg.wakeword_fraction)
    if wake:
        seq = (cfg.wakeword,)
    elif rng.random() < cfg.repeat_fraction:
        seq = world.popular[d][int(rng.integers(len(world.popular[d])))]
    else:
        seq = _draw_sequence(rng, cfg, world.start[d], world.bigram[d])
    frames = _frames_for(rng, cfg, seq)
    noise = float(rng.uniform(*cfg.noise_range))
    feats = world.means[frames] + world.speaker_offsets[speaker] + noise * rng.standard_normal((len(frames), cfg.input_dim))
    uid = f"{split}-{i:06d}"
    meta = UtteranceMeta(uid, f"dev{device:04d}", f"spk{speaker:04d}", cfg.domains[d],
                         duration=len(frames), wakeword_only=wake)
    return SyntheticUtterance(uid, feats, seq, frames, meta, labelled, noise)


def generate(config: CorpusConfig) -> Corpus:
    """Deterministic corpus for ``config.seed``.

    Unlabelled utterances keep their ground truth in ``truth`` for evaluation
    oracles only; training code reads ``reference``/``frame_labels``.
    """
    world = _build_world(config)
    sizes = {"labelled": config.n_labelled, "unlabelled": config.n_unlabelled,
             "eval": config.n_eval, "calibration": config.n_calibration}
    out = {}
    for sid, split in enumerate(SPLITS):
        labelled = split != "unlabelled"
        out[split] = [_utterance(world, config, sid, split, i, labelled) for i in range(sizes[split])]
    return Corpus(config, **out)


# -- on-disk layout ---------------------------------------------------------
# <dir>/corpus.json                 config echo
# <dir>/<split>.features.f64        float64 row-major frames of all utterances
# <dir>/<split>.index.jsonl         {"uid", "offset", "n_frames", "dim"} (offset in rows)
# <dir>/<split>.jsonl               metadata, reference, frame_labels, hidden_truth


def save_corpus(corpus: Corpus, outdir) -> dict:
    os.makedirs(outdir, exist_ok=True)
    with open(os.path.join(outdir, "corpus.json"), "w") as fh:
        json.dump(asdict(corpus.config), fh, indent=1, sort_keys=True)
    counts = {}
    for split in SPLITS:
        utts = corpus.split(split)
        counts[split] = len(utts)
        offset = 0
        with open(os.path.join(outdir, f"{split}.features.f64"), "wb") as fb, \
                open(os.path.join(outdir, f"{split}.index.jsonl"), "w") as fi, \
                open(os.path.join(outdir, f"{split}.jsonl"), "w") as fm:
            for u in utts:
                arr = np.ascontiguousarray(u.features, dtype="<f8")
                fb.write(arr.tobytes())
                fi.write(json.dumps({"uid": u.uid, "offset": offset, "n_frames": arr.shape[0], "dim": arr.shape[1]}) + "\n")
                offset += arr.shape[0]
                rec = u.meta.to_json()
                rec.update(
                    labelled=u.labelled,
                    reference=list(u.reference) if u.labelled else None,
                    frame_labels=u.truth_frames.tolist() if u.labelled else None,
                    hidden_truth=None if u.labelled else list(u.truth),
                    hidden_frames=None if u.labelled else u.truth_frames.tolist(),
                    noise_sd=u.noise_sd,
                )
                fm.write(json.dumps(rec) + "\n")
    return counts


def load_config(path) -> CorpusConfig:
    with open(path) as fh:
        return CorpusConfig.from_dict(json.load(fh))


def read_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def load_split(corpus_dir, split) -> list:
    index = read_jsonl(os.path.join(corpus_dir, f"{split}.index.jsonl"))
    records = read_jsonl(os.path.join(corpus_dir, f"{split}.jsonl"))
    raw = np.fromfile(os.path.join(corpus_dir, f"{split}.features.f64"), dtype="<f8")
    out = []
    for ix, rec in zip(index, records):
        if ix["uid"] != rec["uid"]:
            raise ValueError(f"index and metadata disagree at {ix['uid']} / {rec['uid']}")
        start = ix["offset"] * ix["dim"]
        feats = raw[start:start + ix["n_frames"] * ix["dim"]].reshape(ix["n_frames"], ix["dim"]).astype(np.float64)
        labelled = bool(rec["labelled"])
        truth = tuple(rec["reference"] if labelled else rec["hidden_truth"])
        frames = np.asarray(rec["frame_labels"] if labelled else rec["hidden_frames"], dtype=np.intp)
        out.append(SyntheticUtterance(rec["uid"], feats, truth, frames, UtteranceMeta.from_json(rec),
                                      labelled, float(rec.get("noise_sd", 0.0))))
    return out


def load_corpus(corpus_dir) -> Corpus:
    cfg = load_config(os.path.join(corpus_dir, "corpus.json"))
    return Corpus(cfg, *(load_split(corpus_dir, s) for s in SPLITS))


def check_collapse_consistency(utts) -> bool:
    return all(collapse(u.truth_frames) == tuple(u.truth) for u in utts)
