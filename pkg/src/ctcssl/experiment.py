"""Desk-scale experiment grid: baseline, teacher, pseudo-labelling and SSL students.

One seed runs the whole chain on its own synthetic corpus:

1. CE then CTC training of the unidirectional baseline and the bidirectional
   teacher on the labelled set.
2. The baseline plays the deployed recogniser: its decodes give the 1-best
   hypotheses used by the content cap and the features of the confidence
   model, which is fitted on the held-out calibration split.
3. Teacher (and, for comparison, baseline) pseudo-labels for the whole pool.
4. One student per selection recipe, each starting from the baseline's CE
   stage and trained with CTC on D_L plus its pseudo-labelled subset.

All WERRs are relative to the same-seed baseline.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import confidence as conf
from .corpus import Corpus, CorpusConfig, generate
from .decoder import extract_confidence_features, greedy_decode, prefix_beam_decode
from .kd import DataPool, generate_pseudo_labels, self_training_labels, ssl_training_set
from .metrics import EvalReport, edit_distance, wer, werr
from .model import (ModelParams, TrainConfig, init_params, posteriors, student_config,
                    teacher_config, train_ce, train_ctc)
from .selection import (N_BINS, SelectionConfig, _sample, apply_common_filters, partition_by_bin,
                        sample_by_domain, sample_combined)

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    def __init__(self, stage, seed, cause):
        super().__init__(f"stage {stage!r} failed for seed {seed}: {cause}")
        self.stage = stage
        self.seed = seed


def _train_cfg(d):
    return TrainConfig(**d) if isinstance(d, dict) else d


@dataclass
class ExperimentPlan:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    seeds: tuple = (0, 1, 2, 3, 4)
    student_hidden: int = 24
    teacher_hidden: int = 48
    ce: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.01, epochs=8, optimizer="adam"))
    ctc_baseline: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.005, epochs=20, optimizer="adam"))
    ctc_teacher: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.005, epochs=30, optimizer="adam"))
    ctc_student: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.005, epochs=8, optimizer="adam"))
    random_budget: int = 1000
    bin_budget: int = 300
    strategy_budget: int = 500
    domain_budget: int = 200
    grid_domains: tuple | None = None
    beam_width: int = 4
    beam_prune: float = 8.0
    run_bin_sweep: bool = True
    run_strategies: bool = True
    run_domains: bool = True
    output_dir: str = "runs/grid"

    def __post_init__(self):
        if isinstance(self.corpus, dict):
            self.corpus = CorpusConfig.from_dict(self.corpus)
        for name in ("ce", "ctc_baseline", "ctc_teacher", "ctc_student"):
            setattr(self, name, _train_cfg(getattr(self, name)))
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("plan needs at least one seed")
        if self.grid_domains is not None:
            self.grid_domains = tuple(self.grid_domains)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        known = {f.name for f in fields(cls)}
        bad = sorted(set(d) - known)
        if bad:
            raise ValueError(f"unknown plan field(s): {', '.join(bad)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentPlan":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SeedOutcome:
    seed: int
    baseline: EvalReport
    teacher: EvalReport
    students: dict = field(default_factory=dict)      # name -> EvalReport
    sizes: dict = field(default_factory=dict)         # name -> number of pseudo-labelled utts
    label_error: dict = field(default_factory=dict)   # provenance -> pseudo-label error rate (%)
    bin_counts: list = field(default_factory=list)
    ws_weights: list = field(default_factory=list)
    filter_counts: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def werr(self, name, domain=None) -> float:
        rep = self.students[name] if name not in ("baseline", "teacher") else getattr(self, name)
        if domain is None:
            return werr(self.baseline.wer, rep.wer)
        return werr(self.baseline.per_domain[domain], rep.per_domain[domain])


def evaluate(params: ModelParams, utts) -> EvalReport:
    posts = posteriors(params, [u.features for u in utts])
    hyps = {u.uid: greedy_decode(p, params.config.blank).hypothesis for u, p in zip(utts, posts)}
    return wer({u.uid: u.truth for u in utts}, hyps, {u.uid: u.meta.domain for u in utts})


def train_acoustic(role: str, corpus: Corpus, plan: ExperimentPlan, seed: int):
    """CE stage then CTC stage on the labelled split; returns (ce params, final params, curves)."""
    c = corpus.config
    if role == "teacher":
        mcfg = teacher_config(c.input_dim, c.n_labels, seed=seed, hidden=plan.teacher_hidden)
        ctc_cfg = plan.ctc_teacher
    else:
        mcfg = student_config(c.input_dim, c.n_labels, seed=seed, hidden=plan.student_hidden)
        ctc_cfg = plan.ctc_baseline
    params = init_params(mcfg)
    ce = train_ce(params, [(u.features, u.frame_labels) for u in corpus.labelled], replace(plan.ce, seed=seed))
    ctc = train_ctc(ce.params, [(u.features, u.reference) for u in corpus.labelled], replace(ctc_cfg, seed=seed))
    return ce.params, ctc.params, {"ce": ce.losses, "ctc": ctc.losses}


def label_error_rate(records, utts_by_uid) -> float:
    """Pseudo-label WER against the hidden truth, in percent."""
    refs = {r.uid: utts_by_uid[r.uid].truth for r in records}
    return wer(refs, {r.uid: r.pseudo_label for r in records}).wer


def score_pool(model: ModelParams, utts, calibration, beam_width: int = 4, prune: float | None = 8.0):
    """Decode with the deployed model, fit confidence on calibration data, bin the pool.

    Returns ``(metas, confidence model, records)`` where metas carry the 1-best
    hypothesis and the bin.
    """
    blank = model.config.blank

    def feats_and_hyps(us):
        out = []
        for u, post in zip(us, posteriors(model, [u.features for u in us])):
            dec = prefix_beam_decode(post, beam_width, blank, prune=prune)
            out.append((extract_confidence_features(post, dec, blank, u.uid), dec.hypothesis))
        return out

    cal = feats_and_hyps(calibration)
    targets = [int(edit_distance(u.truth, h) == (0, 0, 0)) for u, (_, h) in zip(calibration, cal)]
    cmodel = conf.train_confidence([f for f, _ in cal], targets)
    metas, records = [], []
    for u, (f, h) in zip(utts, feats_and_hyps(utts)):
        rec = conf.score(cmodel, f)
        records.append(rec)
        metas.append(replace(u.meta, hypothesis=h, bin=rec.bin))
    return metas, cmodel, records


class _SeedRunner:
    def __init__(self, plan: ExperimentPlan, seed: int):
        self.plan = plan
        self.seed = seed
        self.timings = {}

    def stage(self, name, fn, *args):
        t0 = time.perf_counter()
        try:
            out = fn(*args)
        except Exception as e:  # noqa: BLE001 - re-raised with stage context
            raise StageError(name, self.seed, e) from e
        self.timings[name] = time.perf_counter() - t0
        log.info("seed %d: %s done in %.1fs", self.seed, name, self.timings[name])
        return out

    def run(self) -> SeedOutcome:
        plan, seed = self.plan, self.seed
        corpus = self.stage("gen-data", generate, replace(plan.corpus, seed=seed))
        by_uid = {u.uid: u for u in corpus.unlabelled}
        student_ce, baseline, _ = self.stage("train-baseline", train_acoustic, "baseline", corpus, plan, seed)
        _, teacher, _ = self.stage("train-teacher", train_acoustic, "teacher", corpus, plan, seed + 1000)
        base_rep = self.stage("eval-baseline", evaluate, baseline, corpus.eval)
        teach_rep = self.stage("eval-teacher", evaluate, teacher, corpus.eval)
        out = SeedOutcome(seed, base_rep, teach_rep)

        metas, _, _ = self.stage("confidence", score_pool, baseline, corpus.unlabelled, corpus.calibration,
                                 plan.beam_width, plan.beam_prune)
        t_labels, _ = self.stage("pseudo-label", generate_pseudo_labels, teacher, corpus.unlabelled)
        s_labels, _ = self.stage("self-label", self_training_labels, baseline, corpus.unlabelled)
        out.label_error = {"teacher": label_error_rate(t_labels, by_uid),
                           "self-training": label_error_rate(s_labels, by_uid)}
        t_by = {p.uid: p for p in t_labels}
        s_by = {p.uid: p for p in s_labels}
        # only utterances the teacher could label are candidates
        cands = [m for m in metas if m.uid in t_by]

        def student(name, chosen, labels=t_by):
            pseudo = [labels[m.uid] for m in chosen if m.uid in labels]
            pool = DataPool([(u, u.reference) for u in corpus.labelled], [by_uid[m.uid] for m in chosen], pseudo)
            items = ssl_training_set(pool, seed=seed)
            res = train_ctc(student_ce, items, replace(plan.ctc_student, seed=seed))
            out.students[name] = evaluate(res.params, corpus.eval)
            out.sizes[name] = len(pseudo)

        scfg = SelectionConfig(seed=seed, budget=plan.random_budget)
        # the large-scale random setup: uniform draw, no filters
        rand = _sample(cands, plan.random_budget, seed, "random")
        self.stage("student-random", student, "ssl_random", rand)
        self.stage("student-self", student, "self_training", rand, s_by)

        filtered, out.filter_counts = apply_common_filters(cands, scfg)
        bins = partition_by_bin(filtered)
        out.bin_counts = [len(b) for b in bins]
        if plan.run_bin_sweep:
            for b in range(N_BINS):
                if bins[b]:
                    chosen = _sample(bins[b], plan.bin_budget, seed, f"bin{b}")
                    self.stage(f"student-bin{b}", student, f"bin{b}", chosen)
            low = [m for b in bins[:3] for m in b]
            high = [m for b in bins[-3:] for m in b]
            k = min(len(low), len(high), 3 * plan.bin_budget)
            if k:
                self.stage("student-low3", student, "low3", _sample(low, k, seed, "low3"))
                self.stage("student-high3", student, "high3", _sample(high, k, seed, "high3"))
        if plan.run_strategies:
            w = [max(out.werr(f"bin{b}"), 0.0) if f"bin{b}" in out.students else 0.0 for b in range(N_BINS)]
            if sum(w) <= 0:
                w = [1.0] * N_BINS
            out.ws_weights = [x / sum(w) for x in w]
            for strat in ("ND", "UD", "WS"):
                cfg = replace(scfg, strategy=strat, budget=plan.strategy_budget, ws_weights=tuple(out.ws_weights))
                chosen, _ = sample_combined(bins, cfg)
                self.stage(f"student-{strat}", student, strat, chosen)
        if plan.run_domains:
            doms = list(plan.grid_domains or corpus.config.domains)
            for d in doms:
                chosen = sample_by_domain(cands, d, plan.domain_budget, scfg)
                self.stage(f"student-{d}", student, f"domain:{d}", chosen)
            chosen = sample_by_domain(cands, doms, plan.domain_budget * len(doms), scfg)
            self.stage("student-combined", student, "domain:combined", chosen)
        out.timings = dict(self.timings)
        return out


def run_seed(plan: ExperimentPlan, seed: int) -> SeedOutcome:
    return _SeedRunner(plan, seed).run()


# -- reports ----------------------------------------------------------------

def _f(x):
    return "" if x is None or (isinstance(x, float) and not np.isfinite(x)) else f"{x:.4f}"


def write_reports(outcomes, outdir) -> dict:
    """Write bin_sweep.csv, strategy.csv, domain_matrix.csv and summary.csv."""
    os.makedirs(outdir, exist_ok=True)
    paths = {}

    def dump(name, header, rows):
        path = os.path.join(outdir, name)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
        paths[name] = path

    rows = []
    for o in outcomes:
        for b in range(N_BINS):
            name = f"bin{b}"
            has = name in o.students
            rows.append([o.seed, b, o.bin_counts[b] if o.bin_counts else 0, o.sizes.get(name, 0),
                         _f(o.students[name].wer) if has else "", _f(o.werr(name)) if has else ""])
    dump("bin_sweep.csv", ["seed", "bin", "available", "selected", "wer", "werr"], rows)

    rows = []
    for o in outcomes:
        for name in ("ssl_random", "ND", "UD", "WS", "low3", "high3"):
            if name in o.students:
                rows.append([o.seed, name, o.sizes[name], _f(o.students[name].wer), _f(o.werr(name))])
    dump("strategy.csv", ["seed", "strategy", "selected", "wer", "werr"], rows)

    rows = []
    for o in outcomes:
        doms = list(o.baseline.per_domain)
        models = [n for n in o.students if n.startswith("domain:")]
        for n in models:
            rows.append([o.seed, n.split(":", 1)[1]] + [_f(o.werr(n, d)) for d in doms])
    header = ["seed", "model"] + (list(outcomes[0].baseline.per_domain) if outcomes else [])
    dump("domain_matrix.csv", header, rows)

    rows = []
    for o in outcomes:
        rows.append([o.seed, "baseline", 0, _f(o.baseline.wer), _f(0.0), ""])
        rows.append([o.seed, "teacher", 0, _f(o.teacher.wer), _f(o.werr("teacher")), _f(o.label_error.get("teacher"))])
        for name in ("ssl_random", "self_training"):
            if name in o.students:
                le = o.label_error.get("teacher" if name == "ssl_random" else "self-training")
                rows.append([o.seed, name, o.sizes[name], _f(o.students[name].wer), _f(o.werr(name)), _f(le)])
    dump("summary.csv", ["seed", "model", "pseudo_labelled", "wer", "werr", "pseudo_label_error"], rows)
    return paths


def run_grid(plan: ExperimentPlan, outdir: str | None = None, progress=None) -> tuple[list, dict]:
    outdir = outdir or plan.output_dir
    outcomes = []
    for seed in plan.seeds:
        o = run_seed(plan, seed)
        outcomes.append(o)
        if progress:
            progress(o)
    paths = write_reports(outcomes, outdir)
    with open(os.path.join(outdir, "plan.json"), "w") as fh:
        json.dump(plan.to_dict(), fh, indent=1, sort_keys=True)
    return outcomes, paths
