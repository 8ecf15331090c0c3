"""Unlabelled-data selection: common filters, confidence bins, ND/UD/WS quotas, domains."""
from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

log = logging.getLogger(__name__)

N_BINS = 10
STRATEGIES = ("ND", "UD", "WS")


@dataclass
class UtteranceMeta:
    uid: str
    device: str
    speaker: str
    domain: str
    hypothesis: tuple = ()
    bin: int = 0
    duration: int = 1
    wakeword_only: bool = False

    def __post_init__(self):
        if not self.uid or not self.device or not self.speaker:
            raise ValueError("utterance, device and speaker ids must be non-empty")
        if not 0 <= self.bin < N_BINS:
            raise ValueError(f"bin {self.bin} outside [0, {N_BINS - 1}]")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        self.hypothesis = tuple(self.hypothesis)

    def to_json(self) -> dict:
        return {
            "uid": self.uid, "device": self.device, "speaker": self.speaker, "domain": self.domain,
            "hypothesis": list(self.hypothesis), "bin": self.bin, "duration": self.duration,
            "wakeword_only": self.wakeword_only,
        }

    @classmethod
    def from_json(cls, d: dict) -> "UtteranceMeta":
        return cls(d["uid"], d["device"], d["speaker"], d["domain"], tuple(d.get("hypothesis", ())),
                   int(d.get("bin", 0)), int(d["duration"]), bool(d.get("wakeword_only", False)))


@dataclass(frozen=True)
class SelectionConfig:
    max_per_content: int = 50
    max_per_device: int = 50
    exclude_wakeword_only: bool = True
    budget: int = 1000
    budget_unit: str = "utterances"
    strategy: str = "UD"
    ws_weights: tuple = field(default_factory=lambda: (1.0,) * N_BINS)
    domains: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if self.max_per_content < 1 or self.max_per_device < 1:
            raise ValueError("caps must be >= 1")
        if self.budget <= 0:
            raise ValueError("budget must be positive")
        if self.budget_unit not in ("utterances", "frames"):
            raise ValueError(f"unknown budget unit {self.budget_unit!r}")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        w = tuple(float(x) for x in self.ws_weights)
        if len(w) != N_BINS or any(x < 0 or not np.isfinite(x) for x in w):
            raise ValueError(f"ws_weights must be {N_BINS} non-negative reals")
        if self.strategy == "WS" and sum(w) <= 0:
            raise ValueError("WS sampling needs weights with a positive sum")
        object.__setattr__(self, "ws_weights", w)
        if isinstance(self.domains, str):
            object.__setattr__(self, "domains", (self.domains,))
        elif self.domains is not None:
            object.__setattr__(self, "domains", tuple(self.domains))


def _stable_tag(s: str) -> int:
    # str hash is salted per process; selections must be reproducible
    h = 0
    for ch in s.encode():
        h = (h * 131 + ch) % (2**31 - 1)
    return h


def _sample(items, k, seed, *tags):
    """Seeded uniform sample of ``k`` items, returned in input order."""
    if k >= len(items):
        return list(items)
    rng = np.random.default_rng([int(seed), *(_stable_tag(str(t)) for t in tags)])
    keep = np.sort(rng.choice(len(items), size=k, replace=False))
    return [items[i] for i in keep]


def _cap(pool, key, cap, seed, tag):
    groups = defaultdict(list)
    for m in pool:
        groups[key(m)].append(m)
    kept = set()
    for g, members in groups.items():
        for m in _sample(members, cap, seed, tag, g):
            kept.add(m.uid)
    return [m for m in pool if m.uid in kept]


def apply_common_filters(pool, cfg: SelectionConfig):
    """Drop wakeword-only utterances, then cap per identical hypothesis, then per device.

    Returns the surviving utterances (input order kept) and removal counts by
    reason.
    """
    pool = list(pool)
    counts = {"wakeword_only": 0, "max_per_content": 0, "max_per_device": 0}
    if cfg.exclude_wakeword_only:
        out = [m for m in pool if not m.wakeword_only]
        counts["wakeword_only"] = len(pool) - len(out)
        pool = out
    out = _cap(pool, lambda m: m.hypothesis, cfg.max_per_content, cfg.seed, "content")
    counts["max_per_content"] = len(pool) - len(out)
    pool = out
    out = _cap(pool, lambda m: m.device, cfg.max_per_device, cfg.seed, "device")
    counts["max_per_device"] = len(pool) - len(out)
    return out, counts


def partition_by_bin(pool) -> list:
    bins = [[] for _ in range(N_BINS)]
    for m in pool:
        bins[m.bin].append(m)
    return bins


def largest_remainder(weights, total: int) -> list:
    """Integer quotas proportional to ``weights`` summing to ``total`` (Hamilton method).

    Remainder ties go to the lower index. Exact rational arithmetic keeps the
    result independent of float rounding.
    """
    w = [Fraction(int(x)) if isinstance(x, (int, np.integer)) else Fraction(float(x)) for x in weights]
    s = sum(w)
    if s <= 0:
        raise ValueError("weights must have a positive sum")
    ideal = [x * total / s for x in w]
    base = [int(q) for q in ideal]  # floor; ideals are non-negative
    short = total - sum(base)
    order = sorted(range(len(w)), key=lambda i: (-(ideal[i] - base[i]), i))
    for i in order[:short]:
        base[i] += 1
    return base


def bin_quotas(sizes, cfg: SelectionConfig, budget: int | None = None) -> list:
    """Per-bin quotas for a strategy, before availability is taken into account."""
    budget = cfg.budget if budget is None else budget
    if cfg.strategy == "ND":
        weights = list(sizes)
        if sum(weights) == 0:
            return [0] * N_BINS
    elif cfg.strategy == "UD":
        weights = [1] * N_BINS
    else:
        weights = list(cfg.ws_weights)
    return largest_remainder(weights, budget)


def realise_quotas(sizes, quotas, weights) -> list:
    """Cap quotas at availability and hand shortfall to bins with room, proportional to ``weights``."""
    take = [min(q, s) for q, s in zip(quotas, sizes)]
    short = sum(quotas) - sum(take)
    while short > 0:
        room = [i for i in range(len(sizes)) if take[i] < sizes[i]]
        if not room:
            break
        w = [weights[i] if weights[i] > 0 else 0 for i in room]
        if sum(w) == 0:
            w = [1] * len(room)
        extra = largest_remainder(w, short)
        moved = 0
        for i, e in zip(room, extra):
            add = min(e, sizes[i] - take[i])
            take[i] += add
            moved += add
        short -= moved
        if moved == 0:
            break
    return take


def _budget_units(cfg, pool):
    if cfg.budget_unit == "utterances":
        return cfg.budget
    # frames budget: convert through the mean duration of the pool
    mean = np.mean([m.duration for m in pool]) if pool else 1.0
    return max(1, int(cfg.budget // mean))


def sample_combined(bins, cfg: SelectionConfig):
    """Combine confidence bins under the ND, UD or WS strategy.

    Returns ``(selected, realised_counts)``; selected utterances are ordered by
    bin, then by their order within the bin.
    """
    sizes = [len(b) for b in bins]
    available = sum(sizes)
    budget = _budget_units(cfg, [m for b in bins for m in b])
    if budget >= available:
        if budget > available:
            log.warning("budget %d exceeds %d available utterances; selecting all", budget, available)
        return [m for b in bins for m in b], sizes
    quotas = bin_quotas(sizes, cfg, budget)
    weights = {"ND": sizes, "UD": [1] * N_BINS, "WS": list(cfg.ws_weights)}[cfg.strategy]
    take = realise_quotas(sizes, quotas, weights)
    selected = []
    for i, b in enumerate(bins):
        selected.extend(_sample(b, take[i], cfg.seed, cfg.strategy, "bin", i))
    return selected, take


def sample_by_domain(pool, domains, budget: int, cfg: SelectionConfig | None = None):
    """Restrict to ``domains``, apply the common filters, then sample to ``budget``.

    With several domains the budget is split equally between them (largest
    remainder), with any shortfall handed to domains that still have data.
    """
    cfg = cfg or SelectionConfig()
    pool = list(pool)
    if isinstance(domains, str):
        domains = (domains,)
    domains = tuple(domains)
    known = sorted({m.domain for m in pool})
    unknown = [d for d in domains if d not in known]
    if unknown:
        raise ValueError(f"unknown domain(s) {unknown}; known domains: {known}")
    wanted = set(domains)
    filtered, _ = apply_common_filters([m for m in pool if m.domain in wanted], replace(cfg, domains=None))
    groups = [[m for m in filtered if m.domain == d] for d in domains]
    sizes = [len(g) for g in groups]
    if budget >= sum(sizes):
        if budget > sum(sizes):
            log.warning("budget %d exceeds %d available utterances in %s; selecting all", budget, sum(sizes), domains)
        return [m for g in groups for m in g]
    quotas = largest_remainder([1] * len(domains), budget)
    take = realise_quotas(sizes, quotas, [1] * len(domains))
    out = []
    for d, g, k in zip(domains, groups, take):
        out.extend(_sample(g, k, cfg.seed, "domain", d))
    return out


def select(pool, cfg: SelectionConfig):
    """Full pipeline behind the ``select`` command: domain restriction or filtered bin strategy."""
    if cfg.domains:
        chosen = sample_by_domain(pool, cfg.domains, _budget_units(cfg, list(pool)), cfg)
        return chosen, {"domains": list(cfg.domains)}
    filtered, removed = apply_common_filters(pool, cfg)
    chosen, counts = sample_combined(partition_by_bin(filtered), cfg)
    return chosen, {"removed": removed, "per_bin": list(counts)}
