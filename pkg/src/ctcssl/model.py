"""Small recurrent acoustic models trained with frame cross-entropy and CTC.

The recurrent cell is a minimal gated unit (one forget/update gate)::

    f = sigmoid(x Wf + h Uf + bf)
    c = tanh(x Wc + (f * h) Uc + bc)
    h' = (1 - f) * h + f * c

Teacher and student share the cell; they differ only in width and
directionality. Batches are time-major ``(T, B, D)`` arrays padded with zeros;
backward-direction layers see each sequence reversed within its own length.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .ctc import InfeasibleTargetError, ctc_loss_and_grad, is_feasible, log_softmax

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    n_labels: int
    hidden: int = 32
    num_layers: int = 1
    bidirectional: bool = False
    seed: int = 0
    blank: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden", "num_layers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_labels < 2:
            raise ValueError("n_labels must be >= 2")
        if not 0 <= self.blank < self.n_labels:
            raise ValueError("blank out of range")


def student_config(input_dim: int, n_labels: int, seed: int = 0, hidden: int = 24) -> ModelConfig:
    return ModelConfig(input_dim, n_labels, hidden=hidden, num_layers=1, bidirectional=False, seed=seed)


def teacher_config(input_dim: int, n_labels: int, seed: int = 0, hidden: int = 48) -> ModelConfig:
    return ModelConfig(input_dim, n_labels, hidden=hidden, num_layers=2, bidirectional=True, seed=seed)


PRESETS = {"student": student_config, "baseline": student_config, "teacher": teacher_config}


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 16
    epochs: int = 10
    optimizer: str = "sgd"
    clip: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class ModelParams:
    config: ModelConfig
    arrays: dict = field(default_factory=dict)

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def __getitem__(self, name):
        return self.arrays[name]


@dataclass
class TrainResult:
    params: ModelParams
    losses: list
    skipped: int = 0


def _directions(cfg):
    return ("f", "b") if cfg.bidirectional else ("f",)


def init_params(cfg: ModelConfig, zero_output: bool = False) -> ModelParams:
    """Uniform(-0.1, 0.1) initialisation from ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    H = cfg.hidden
    arrays = {}
    in_dim = cfg.input_dim
    for layer in range(cfg.num_layers):
        for d in _directions(cfg):
            p = f"l{layer}.{d}."
            arrays[p + "W"] = rng.uniform(-0.1, 0.1, (in_dim, 2 * H))
            arrays[p + "Uf"] = rng.uniform(-0.1, 0.1, (H, H))
            arrays[p + "Uc"] = rng.uniform(-0.1, 0.1, (H, H))
            arrays[p + "b"] = np.zeros(2 * H)
        in_dim = H * len(_directions(cfg))
    if zero_output:
        arrays["out.W"] = np.zeros((in_dim, cfg.n_labels))
    else:
        arrays["out.W"] = rng.uniform(-0.1, 0.1, (in_dim, cfg.n_labels))
    arrays["out.b"] = np.zeros(cfg.n_labels)
    return ModelParams(cfg, arrays)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _cell_forward(X, W, Uf, Uc, b):
    T, B, _ = X.shape
    H = Uf.shape[0]
    A = X @ W + b
    Hs = np.empty((T, B, H))
    F = np.empty((T, B, H))
    C = np.empty((T, B, H))
    Hp = np.empty((T, B, H))
    h = np.zeros((B, H))
    for t in range(T):
        f = _sigmoid(A[t, :, :H] + h @ Uf)
        c = np.tanh(A[t, :, H:] + (f * h) @ Uc)
        Hp[t] = h
        h = h + f * (c - h)
        F[t] = f
        C[t] = c
        Hs[t] = h
    return Hs, (X, F, C, Hp)


def _cell_backward(dHs, cache, W, Uf, Uc):
    X, F, C, Hp = cache
    T, B, H = dHs.shape
    dA = np.empty((T, B, 2 * H))
    dh = np.zeros((B, H))
    UfT, UcT = Uf.T, Uc.T
    for t in range(T - 1, -1, -1):
        dh = dh + dHs[t]
        f, c, hp = F[t], C[t], Hp[t]
        dac = dh * f * (1.0 - c * c)
        dr = dac @ UcT
        daf = (dh * (c - hp) + dr * hp) * f * (1.0 - f)
        dh = dh * (1.0 - f) + dr * f + daf @ UfT
        dA[t, :, :H] = daf
        dA[t, :, H:] = dac
    flatA = dA.reshape(T * B, 2 * H)
    grads = {
        "W": X.reshape(T * B, -1).T @ flatA,
        "Uf": Hp.reshape(T * B, H).T @ flatA[:, :H],
        "Uc": (F * Hp).reshape(T * B, H).T @ flatA[:, H:],
        "b": flatA.sum(axis=0),
    }
    return grads, dA @ W.T


def _reverse_index(lengths, T):
    t = np.arange(T)[:, None]
    L = np.asarray(lengths)[None, :]
    return np.where(t < L, L - 1 - t, t)


def _pad(feats):
    lengths = [len(x) for x in feats]
    T = max(lengths)
    X = np.zeros((T, len(feats), feats[0].shape[1]))
    for i, x in enumerate(feats):
        X[: len(x), i] = x
    return X, lengths


def _forward_batch(params, X, lengths):
    cfg = params.config
    B = X.shape[1]
    cols = np.arange(B)
    rev = _reverse_index(lengths, X.shape[0]) if cfg.bidirectional else None
    caches = []
    inp = X
    for layer in range(cfg.num_layers):
        outs = []
        for d in _directions(cfg):
            p = f"l{layer}.{d}."
            a = params.arrays
            xin = inp if d == "f" else inp[rev, cols]
            Hs, cache = _cell_forward(xin, a[p + "W"], a[p + "Uf"], a[p + "Uc"], a[p + "b"])
            outs.append(Hs if d == "f" else Hs[rev, cols])
            caches.append(cache)
        inp = outs[0] if len(outs) == 1 else np.concatenate(outs, axis=2)
    logits = inp @ params.arrays["out.W"] + params.arrays["out.b"]
    return log_softmax(logits), (inp, caches, rev)


def _backward_batch(params, dZ, state):
    """Backpropagate ``dZ`` (gradient wrt logits, (T, B, K)) to every parameter."""
    cfg = params.config
    a = params.arrays
    top, caches, rev = state
    T, B, K = dZ.shape
    cols = np.arange(B)
    grads = {
        "out.W": top.reshape(T * B, -1).T @ dZ.reshape(T * B, K),
        "out.b": dZ.sum(axis=(0, 1)),
    }
    dIn = dZ @ a["out.W"].T
    dirs = _directions(cfg)
    H = cfg.hidden
    for layer in range(cfg.num_layers - 1, -1, -1):
        dNext = None
        for j, d in enumerate(dirs):
            p = f"l{layer}.{d}."
            dH = dIn[:, :, j * H:(j + 1) * H]
            if d == "b":
                dH = dH[rev, cols]
            g, dX = _cell_backward(dH, caches[layer * len(dirs) + j], a[p + "W"], a[p + "Uf"], a[p + "Uc"])
            if d == "b":
                dX = dX[rev, cols]
            for k, v in g.items():
                grads[p + k] = v
            dNext = dX if dNext is None else dNext + dX
        dIn = dNext
    return grads


def _check_features(params, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.config.input_dim or x.shape[0] < 1:
        raise ValueError(f"features must be (frames, {params.config.input_dim}), got {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("features must be finite")
    return x


def forward(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Per-frame label log-posteriors, shape ``(N_X, n_labels)``."""
    x = _check_features(params, features)
    logp, _ = _forward_batch(params, x[:, None, :], [len(x)])
    return np.ascontiguousarray(logp[:, 0, :])


def posteriors(params: ModelParams, feature_list, batch_size: int = 64) -> list:
    """``forward`` over many utterances, batched by length for speed."""
    feats = [_check_features(params, x) for x in feature_list]
    order = sorted(range(len(feats)), key=lambda i: (len(feats[i]), i))
    out = [None] * len(feats)
    for s in range(0, len(order), batch_size):
        idx = order[s:s + batch_size]
        X, lengths = _pad([feats[i] for i in idx])
        logp, _ = _forward_batch(params, X, lengths)
        for j, i in enumerate(idx):
            out[i] = np.ascontiguousarray(logp[: lengths[j], j, :])
    return out


def ctc_batch_loss_and_grads(params: ModelParams, batch, weights=None):
    """Summed (optionally weighted) CTC loss of ``batch`` and its parameter gradients.

    ``batch`` is a list of ``(features, target)`` pairs with feasible targets.
    """
    feats = [_check_features(params, x) for x, _ in batch]
    X, lengths = _pad(feats)
    logp, state = _forward_batch(params, X, lengths)
    dZ = np.zeros_like(logp)
    total = 0.0
    blank = params.config.blank
    for j, (_, target) in enumerate(batch):
        w = 1.0 if weights is None else weights[j]
        loss, g = ctc_loss_and_grad(logp[: lengths[j], j, :], target, blank)
        total += w * loss
        dZ[: lengths[j], j, :] = w * g
    return total, _backward_batch(params, dZ, state)


def ce_batch_loss_and_grads(params: ModelParams, batch):
    """Summed frame cross-entropy of ``(features, frame_labels)`` pairs and gradients."""
    feats = [_check_features(params, x) for x, _ in batch]
    X, lengths = _pad(feats)
    logp, state = _forward_batch(params, X, lengths)
    dZ = np.zeros_like(logp)
    total = 0.0
    for j, (_, labels) in enumerate(batch):
        labels = np.asarray(labels, dtype=np.intp)
        if len(labels) != lengths[j]:
            raise ValueError("frame labels must match the frame count")
        rows = np.arange(lengths[j])
        total -= logp[rows, j, labels].sum()
        g = np.exp(logp[: lengths[j], j, :])
        g[rows, labels] -= 1.0
        dZ[: lengths[j], j, :] = g
    return total, _backward_batch(params, dZ, state)


class _Optimizer:
    def __init__(self, cfg: TrainConfig, arrays):
        self.cfg = cfg
        self.step_count = 0
        if cfg.optimizer == "adam":
            self.m = {k: np.zeros_like(v) for k, v in arrays.items()}
            self.v = {k: np.zeros_like(v) for k, v in arrays.items()}

    def step(self, arrays, grads):
        norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
        scale = self.cfg.clip / norm if self.cfg.clip and norm > self.cfg.clip else 1.0
        lr = self.cfg.learning_rate
        self.step_count += 1
        if self.cfg.optimizer == "sgd":
            for k in sorted(grads):
                arrays[k] -= lr * scale * grads[k]
            return
        b1, b2, eps = 0.9, 0.999, 1e-8
        n = self.step_count
        for k in sorted(grads):
            g = grads[k] * scale
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** n)
            vhat = self.v[k] / (1 - b2 ** n)
            arrays[k] -= lr * mhat / (np.sqrt(vhat) + eps)


def _batches(n, cfg: TrainConfig, rng):
    order = rng.permutation(n)
    return [order[s:s + cfg.batch_size] for s in range(0, n, cfg.batch_size)]


def _run(params, items, cfg, loss_fn, norm_fn):
    params = params.copy()
    rng = np.random.default_rng(cfg.seed)
    opt = _Optimizer(cfg, params.arrays)
    losses = []
    for _ in range(cfg.epochs):
        total = 0.0
        denom = 0.0
        for idx in _batches(len(items), cfg, rng):
            batch = [items[i] for i in idx]
            loss, grads = loss_fn(params, batch)
            n = norm_fn(batch)
            total += loss
            denom += n
            opt.step(params.arrays, {k: g / n for k, g in grads.items()})
        losses.append(total / denom)
    return params, losses


def train_ce(params: ModelParams, dataset, cfg: TrainConfig) -> TrainResult:
    """Frame-level cross-entropy training on ``(features, frame_labels)`` pairs.

    The reported loss is the mean per-frame cross-entropy of each epoch.
    """
    items = list(dataset)
    for x, labels in items:
        if labels is None:
            raise ValueError("every utterance needs frame labels for cross-entropy training")
    params, losses = _run(params, items, cfg, ce_batch_loss_and_grads,
                          lambda batch: float(sum(len(x) for x, _ in batch)))
    return TrainResult(params, losses)


def train_ctc(params: ModelParams, dataset, cfg: TrainConfig) -> TrainResult:
    """Minibatch CTC training on ``(features, target[, weight])`` items.

    Infeasible targets are skipped and counted; the per-epoch loss is the mean
    (weighted) negative log-likelihood per utterance.
    """
    items = []
    skipped = 0
    for item in dataset:
        x, target = item[0], tuple(item[1])
        w = float(item[2]) if len(item) > 2 else 1.0
        if is_feasible(target, len(x)):
            items.append((x, target, w))
        else:
            skipped += 1
    if not items:
        raise InfeasibleTargetError("no feasible utterances in the training set")
    if skipped:
        log.info("skipped %d infeasible utterances", skipped)

    def loss_fn(p, batch):
        return ctc_batch_loss_and_grads(p, [(x, t) for x, t, _ in batch], [w for _, _, w in batch])

    params, losses = _run(params, items, cfg, loss_fn, lambda batch: float(len(batch)))
    return TrainResult(params, losses, skipped)


def save_checkpoint(params: ModelParams, path) -> None:
    """Write an ``.npz`` container: float64 arrays by name plus a JSON ``__meta__`` entry."""
    meta = {"version": CHECKPOINT_VERSION, "config": asdict(params.config), "names": sorted(params.arrays)}
    payload = {k: np.asarray(v, dtype=np.float64) for k, v in params.arrays.items()}
    payload["__meta__"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path, expect_labels: int | None = None) -> ModelParams:
    try:
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["__meta__"]))
            arrays = {k: z[k].copy() for k in meta["names"]}
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    version = meta.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} does not match supported version {CHECKPOINT_VERSION}")
    cfg = ModelConfig(**meta["config"])
    if expect_labels is not None and cfg.n_labels != expect_labels:
        raise CheckpointError(f"checkpoint alphabet size {cfg.n_labels} != expected {expect_labels}")
    ref = init_params(replace(cfg))
    for k, v in ref.arrays.items():
        if k not in arrays or arrays[k].shape != v.shape:
            raise CheckpointError(f"checkpoint parameter {k} missing or mis-shaped")
    return ModelParams(cfg, arrays)
