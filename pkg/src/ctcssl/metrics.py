"""Label error rate scoring (called WER throughout, labels play the role of words)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import kernels


def edit_distance(ref, hyp) -> tuple[int, int, int]:
    """Return ``(substitutions, deletions, insertions)`` turning ``ref`` into ``hyp``.

    Unit costs; among minimal alignments substitutions are preferred over an
    insertion/deletion pair.
    """
    r = np.asarray(tuple(ref), dtype=np.intp)
    h = np.asarray(tuple(hyp), dtype=np.intp)
    s, d, i = kernels.edit_counts(r, h)
    return int(s), int(d), int(i)


@dataclass
class EvalReport:
    wer: float
    per_domain: dict = field(default_factory=dict)
    n_utterances: int = 0
    n_ref_tokens: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def _rate(errors, tokens):
    if tokens == 0:
        return 0.0 if errors == 0 else float("inf")
    return 100.0 * errors / tokens


def wer(references: dict, hypotheses: dict, domains: dict | None = None) -> EvalReport:
    """Micro-averaged WER in percent.

    Args:
        references: utterance id -> reference label sequence.
        hypotheses: utterance id -> hypothesis; must cover every reference id.
        domains: optional utterance id -> domain label for the breakdown.
    """
    if references and not hypotheses:
        raise ValueError("no hypotheses for a non-empty evaluation set")
    missing = [uid for uid in references if uid not in hypotheses]
    if missing:
        raise KeyError(f"missing hypotheses for {len(missing)} utterances, e.g. {missing[0]!r}")
    tot = np.zeros(4, dtype=np.int64)  # S, D, I, N
    by_dom = {}
    for uid in sorted(references):
        ref = references[uid]
        s, d, i = edit_distance(ref, hypotheses[uid])
        row = np.array([s, d, i, len(ref)])
        tot += row
        if domains is not None:
            dom = domains[uid]
            by_dom[dom] = by_dom.get(dom, 0) + row
    per_domain = {dom: _rate(v[:3].sum(), v[3]) for dom, v in sorted(by_dom.items())}
    return EvalReport(
        wer=_rate(tot[:3].sum(), tot[3]),
        per_domain=per_domain,
        n_utterances=len(references),
        n_ref_tokens=int(tot[3]),
        substitutions=int(tot[0]),
        deletions=int(tot[1]),
        insertions=int(tot[2]),
    )


def werr(baseline_wer: float, model_wer: float) -> float:
    """Relative WER reduction in percent; negative when the model is worse."""
    if baseline_wer <= 0:
        raise ValueError("WERR undefined for a zero baseline WER")
    return (baseline_wer - model_wer) / baseline_wer * 100.0


REPORT_FIELDS = ("model", "domain", "wer", "n_utterances", "n_ref_tokens", "substitutions", "deletions", "insertions")


def write_report_csv(path, reports: dict) -> None:
    """One row per (model, domain) plus an ``overall`` row per model."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_FIELDS)
        for model, rep in reports.items():
            w.writerow([model, "overall", f"{rep.wer:.6f}", rep.n_utterances, rep.n_ref_tokens,
                        rep.substitutions, rep.deletions, rep.insertions])
            for dom, v in rep.per_domain.items():
                w.writerow([model, dom, f"{v:.6f}", "", "", "", "", ""])
