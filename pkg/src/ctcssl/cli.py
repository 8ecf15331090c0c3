"""Command-line entry point: ``ctcssl <subcommand> ...``.

Every failure ends with exit status != 0 and exactly one line on stderr::

    error:<category>: <message>

where ``<category>`` is one of the keys of :data:`EXIT_CODES`.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import defaultdict
from dataclasses import replace

import numpy as np

from .corpus import SPLITS, CorpusConfig, generate, load_corpus, load_split, read_jsonl, save_corpus
from .ctc import InfeasibleTargetError
from .experiment import ExperimentPlan, StageError, evaluate, run_grid, score_pool
from .kd import SELF_TRAINING, TEACHER, generate_pseudo_labels, write_pseudo_manifest
from .metrics import write_report_csv
from .model import (CheckpointError, init_params, load_checkpoint, save_checkpoint, student_config, teacher_config,
                    train_ce, train_ctc)
from .selection import N_BINS, STRATEGIES, SelectionConfig, UtteranceMeta, partition_by_bin, select
from . import confidence as conf

log = logging.getLogger("ctcssl")

EXIT_CODES = {
    "usage": 2,
    "config": 3,
    "data": 4,
    "checkpoint": 5,
    "infeasible": 6,
    "stage": 7,
    "io": 8,
}


class CliError(Exception):
    def __init__(self, category, message):
        super().__init__(message)
        self.category = category


def _load_json(path, what="config"):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise CliError("config", f"{what} file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CliError("config", f"{what} file {path} is not valid JSON: {e}") from None


def _config(fn, d, path):
    try:
        return fn(d)
    except (TypeError, ValueError) as e:
        raise CliError("config", f"{path}: {e}") from None


def _corpus_dir(path):
    if not os.path.isfile(os.path.join(path, "corpus.json")):
        raise CliError("data", f"no corpus found in {path} (missing corpus.json)")
    return path


def _read_manifest(path):
    try:
        return read_jsonl(path)
    except FileNotFoundError:
        raise CliError("data", f"manifest not found: {path}") from None
    except json.JSONDecodeError as e:
        raise CliError("data", f"manifest {path} is not line-delimited JSON: {e}") from None


# -- gen-data ---------------------------------------------------------------

def cmd_gen_data(args):
    cfg = _config(CorpusConfig.from_dict, _load_json(args.config), args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    counts = save_corpus(generate(cfg), args.out)
    for split in SPLITS:
        print(f"{split}\t{counts[split]}")
    return 0


# -- train ------------------------------------------------------------------

_STAGE_DEFAULTS = {
    "baseline": ExperimentPlan().ctc_baseline,
    "teacher": ExperimentPlan().ctc_teacher,
    "student": ExperimentPlan().ctc_student,
}


def _train_configs(role, args):
    d = _load_json(args.config) if args.config else {}
    bad = sorted(set(d) - {"hidden", "seed", "ce", "ctc"})
    if bad:
        raise CliError("config", f"{args.config}: unknown training config field(s): {', '.join(bad)}")
    ce = _config(lambda x: replace(ExperimentPlan().ce, **x), d.get("ce", {}), args.config)
    ctc = _config(lambda x: replace(_STAGE_DEFAULTS[role], **x), d.get("ctc", {}), args.config)
    seed = int(args.seed if args.seed is not None else d.get("seed", 0))
    if args.ce_epochs is not None:
        ce = replace(ce, epochs=args.ce_epochs)
    if args.ctc_epochs is not None:
        ctc = replace(ctc, epochs=args.ctc_epochs)
    return d.get("hidden"), replace(ce, seed=seed), replace(ctc, seed=seed), seed


def _student_items(args, corpus):
    if not args.pseudo:
        raise CliError("usage", "--role student needs --pseudo <pseudo-label manifest>")
    recs = _read_manifest(args.pseudo)
    if args.selection:
        keep = {r["uid"] for r in _read_manifest(args.selection)}
        recs = [r for r in recs if r["uid"] in keep]
    by_uid = {u.uid: u for u in corpus.unlabelled}
    missing = [r["uid"] for r in recs if r["uid"] not in by_uid]
    if missing:
        raise CliError("data", f"{len(missing)} pseudo-labelled ids are not in the unlabelled split, e.g. {missing[0]}")
    return [(by_uid[r["uid"]].features, tuple(r["pseudo_label"]), 1.0) for r in recs]


def cmd_train(args):
    corpus = load_corpus(_corpus_dir(args.data))
    c = corpus.config
    hidden, ce_cfg, ctc_cfg, seed = _train_configs(args.role, args)
    preset = teacher_config if args.role == "teacher" else student_config
    kw = {"hidden": int(hidden)} if hidden else {}
    params = init_params(preset(c.input_dim, c.n_labels, seed=seed, **kw))
    ce = train_ce(params, [(u.features, u.frame_labels) for u in corpus.labelled], ce_cfg)
    items = [(u.features, u.reference, 1.0) for u in corpus.labelled]
    if args.role == "student":
        items += _student_items(args, corpus)
        items = [items[i] for i in np.random.default_rng(seed).permutation(len(items))]
    ctc = train_ctc(ce.params, items, ctc_cfg)
    save_checkpoint(ctc.params, args.out)
    curves = args.curves or os.path.splitext(args.out)[0] + ".losses.csv"
    with open(curves, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["stage", "epoch", "loss"])
        for stage, losses in (("ce", ce.losses), ("ctc", ctc.losses)):
            for i, v in enumerate(losses):
                w.writerow([stage, i + 1, f"{v:.8f}"])
    print(f"role\t{args.role}\nbidirectional\t{ctc.params.config.bidirectional}\n"
          f"utterances\t{len(items)}\nskipped\t{ctc.skipped}\ncheckpoint\t{args.out}\ncurves\t{curves}")
    return 0


# -- pseudo-label / confidence / evaluate -------------------------------------

def _checkpoint(path, n_labels):
    if not os.path.isfile(path):
        raise CliError("checkpoint", f"checkpoint not found: {path}")
    return load_checkpoint(path, expect_labels=n_labels)


def _split(args):
    d = _corpus_dir(args.data)
    cfg = CorpusConfig.from_dict(_load_json(os.path.join(d, "corpus.json")))
    if args.split not in SPLITS:
        raise CliError("usage", f"unknown split {args.split!r}; choose from {', '.join(SPLITS)}")
    return cfg, load_split(d, args.split)


def cmd_pseudo_label(args):
    cfg, utts = _split(args)
    model = _checkpoint(args.checkpoint, cfg.n_labels)
    records, dropped = generate_pseudo_labels(model, utts, provenance=args.provenance)
    write_pseudo_manifest(args.out, records)
    print(f"input\t{len(utts)}\nlabelled\t{len(records)}\ndropped\t{dropped}")
    return 0


def cmd_confidence(args):
    d = _corpus_dir(args.data)
    corpus = load_corpus(d)
    model = _checkpoint(args.checkpoint, corpus.config.n_labels)
    utts = corpus.split(args.split)
    metas, cmodel, records = score_pool(model, utts, corpus.calibration, args.beam_width, args.beam_prune)
    with open(args.out, "w") as fh:
        for m in metas:
            fh.write(json.dumps(m.to_json()) + "\n")
    if args.scores:
        conf.write_confidence_manifest(args.scores, records)
    if args.model_out:
        with open(args.model_out, "w") as fh:
            json.dump(cmodel.to_json(), fh, indent=1)
    counts = [len(b) for b in partition_by_bin(metas)]
    print("bin\tcount")
    for b, n in enumerate(counts):
        print(f"{b}\t{n}")
    return 0


def cmd_evaluate(args):
    cfg, utts = _split(args)
    model = _checkpoint(args.checkpoint, cfg.n_labels)
    rep = evaluate(model, utts)
    if args.out:
        write_report_csv(args.out, {args.name: rep})
    print(f"model\t{args.name}\nwer\t{rep.wer:.4f}")
    for d, v in sorted(rep.per_domain.items()):
        print(f"wer:{d}\t{v:.4f}")
    return 0


# -- select -----------------------------------------------------------------

def _weights(text):
    try:
        w = tuple(float(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None
    if len(w) != N_BINS:
        raise argparse.ArgumentTypeError(f"need {N_BINS} weights, got {len(w)}")
    return w


def cmd_select(args):
    recs = _read_manifest(args.meta)
    try:
        pool = [UtteranceMeta.from_json(r) for r in recs]
    except (KeyError, TypeError, ValueError) as e:
        raise CliError("data", f"bad metadata record in {args.meta}: {e}") from None
    cfg = _config(lambda _: SelectionConfig(
        max_per_content=args.max_per_content, max_per_device=args.max_per_device,
        exclude_wakeword_only=not args.keep_wakeword, budget=args.budget, budget_unit=args.budget_unit,
        strategy=args.strategy, ws_weights=args.ws_weights or (1.0,) * N_BINS,
        domains=tuple(args.domain) if args.domain else None, seed=args.seed), None, "selection config")
    chosen, info = select(pool, cfg)
    with open(args.out, "w") as fh:
        for m in chosen:
            fh.write(json.dumps({"uid": m.uid, "domain": m.domain, "bin": m.bin, "device": m.device}) + "\n")
    print(f"pool\t{len(pool)}\nselected\t{len(chosen)}")
    if "per_bin" in info:
        for k, v in info["removed"].items():
            print(f"removed:{k}\t{v}")
        for b, n in enumerate(info["per_bin"]):
            print(f"bin{b}\t{n}")
    else:
        per = defaultdict(int)
        for m in chosen:
            per[m.domain] += 1
        for d in info["domains"]:
            print(f"{d}\t{per[d]}")
    return 0


# -- grid and report --------------------------------------------------------

def cmd_run_grid(args):
    d = _load_json(args.plan, "plan")
    plan = _config(ExperimentPlan.from_dict, d, args.plan)
    if args.seeds:
        plan = replace(plan, seeds=tuple(int(s) for s in args.seeds.split(",")))
    outdir = args.out or plan.output_dir

    def progress(o):
        print(f"seed {o.seed}: baseline {o.baseline.wer:.2f}  teacher {o.teacher.wer:.2f}  "
              f"ssl_random werr {o.werr('ssl_random'):.2f}", flush=True)

    _, paths = run_grid(plan, outdir, progress)
    for name in sorted(paths):
        print(f"wrote\t{paths[name]}")
    return 0


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _mean(xs):
    xs = [float(x) for x in xs if x != ""]
    return (sum(xs) / len(xs), len(xs)) if xs else (float("nan"), 0)


def aggregate(grid_dir) -> list:
    """Seed-averaged WERR rows ``(table, model, column, mean_werr, n_seeds)``."""
    rows = []

    def add(table, key_fields, value_fields, recs):
        groups = defaultdict(lambda: defaultdict(list))
        order = []
        for r in recs:
            key = ":".join(r[k] for k in key_fields)
            if key not in groups:
                order.append(key)
            for v in value_fields:
                groups[key][v].append(r[v])
        for key in order:
            for v in value_fields:
                m, n = _mean(groups[key][v])
                rows.append((table, key, v, m, n))

    need = ["summary.csv", "strategy.csv", "bin_sweep.csv", "domain_matrix.csv"]
    for name in need:
        if not os.path.isfile(os.path.join(grid_dir, name)):
            raise CliError("data", f"{grid_dir} is missing {name}; run run-grid first")
    add("summary", ["model"], ["werr"], _read_csv(os.path.join(grid_dir, "summary.csv")))
    add("strategy", ["strategy"], ["werr"], _read_csv(os.path.join(grid_dir, "strategy.csv")))
    add("bin_sweep", ["bin"], ["werr"], _read_csv(os.path.join(grid_dir, "bin_sweep.csv")))
    dm = _read_csv(os.path.join(grid_dir, "domain_matrix.csv"))
    if dm:
        add("domain_matrix", ["model"], [k for k in dm[0] if k not in ("seed", "model")], dm)
    return rows


def cmd_report(args):
    rows = aggregate(args.grid_dir)
    out = args.out or os.path.join(args.grid_dir, "aggregate.csv")
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["table", "model", "column", "mean_werr", "n_seeds"])
        for t, k, c, m, n in rows:
            w.writerow([t, k, c, "" if n == 0 else f"{m:.4f}", n])
    for t, k, c, m, n in rows:
        label = k if c == "werr" else f"{k} on {c}"
        print(f"{t}\t{label}\t{'n/a' if n == 0 else f'{m:.2f}'}")
    return 0


# -- parser -----------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    # usage errors become a single error line instead of argparse's usage dump
    def error(self, message):
        raise CliError("usage", f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ctcssl", description="CTC semi-supervised learning experiments at desk scale.",
                                formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--log-level", default="WARNING", help="logging level")
    sub = p.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    g = sub.add_parser("gen-data", help="generate a synthetic corpus", formatter_class=fmt)
    g.add_argument("config", help="JSON corpus config (fields of CorpusConfig; {} for defaults)")
    g.add_argument("--out", required=True, help="output corpus directory")
    g.add_argument("--seed", type=int, default=None, help="override the config seed")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", help="CE then CTC training of one model", formatter_class=fmt)
    t.add_argument("--role", choices=("baseline", "teacher", "student"), required=True)
    t.add_argument("--data", required=True, help="corpus directory")
    t.add_argument("--config", default=None,
                   help='JSON {"hidden", "seed", "ce": {...}, "ctc": {...}}; unset fields use the grid defaults')
    t.add_argument("--pseudo", default=None, help="pseudo-label manifest (student role)")
    t.add_argument("--selection", default=None, help="selection manifest restricting --pseudo (student role)")
    t.add_argument("--ce-epochs", type=int, default=None, help="override CE epochs")
    t.add_argument("--ctc-epochs", type=int, default=None, help="override CTC epochs")
    t.add_argument("--seed", type=int, default=None, help="override the config seed")
    t.add_argument("--out", required=True, help="checkpoint path (.npz)")
    t.add_argument("--curves", default=None, help="loss-curve CSV (default: <out>.losses.csv)")
    t.set_defaults(fn=cmd_train)

    pl = sub.add_parser("pseudo-label", help="greedy pseudo-labels from a checkpoint", formatter_class=fmt)
    pl.add_argument("--checkpoint", required=True)
    pl.add_argument("--data", required=True, help="corpus directory")
    pl.add_argument("--split", default="unlabelled")
    pl.add_argument("--provenance", choices=(TEACHER, SELF_TRAINING), default=TEACHER)
    pl.add_argument("--out", required=True, help="pseudo-label manifest (JSON lines)")
    pl.set_defaults(fn=cmd_pseudo_label)

    c = sub.add_parser("confidence", help="decode, fit confidence on the calibration split, bin a split",
                       formatter_class=fmt)
    c.add_argument("--checkpoint", required=True, help="deployed (baseline) model")
    c.add_argument("--data", required=True, help="corpus directory")
    c.add_argument("--split", default="unlabelled")
    c.add_argument("--beam-width", type=int, default=4)
    c.add_argument("--beam-prune", type=float, default=8.0)
    c.add_argument("--out", required=True, help="metadata manifest with hypothesis and bin")
    c.add_argument("--scores", default=None, help="confidence score manifest")
    c.add_argument("--model-out", default=None, help="fitted confidence model (JSON)")
    c.set_defaults(fn=cmd_confidence)

    s = sub.add_parser("select", help="filter and sample a metadata manifest", formatter_class=fmt)
    s.add_argument("--meta", required=True, help="metadata manifest (JSON lines)")
    s.add_argument("--out", required=True, help="selection manifest")
    s.add_argument("--strategy", choices=STRATEGIES, default="UD")
    s.add_argument("--budget", type=int, default=1000)
    s.add_argument("--budget-unit", choices=("utterances", "frames"), default="utterances")
    s.add_argument("--ws-weights", type=_weights, default=None, help=f"{N_BINS} comma-separated bin weights for WS")
    s.add_argument("--domain", action="append", default=None, help="restrict to a domain (repeatable)")
    s.add_argument("--max-per-content", type=int, default=50)
    s.add_argument("--max-per-device", type=int, default=50)
    s.add_argument("--keep-wakeword", action="store_true", help="do not drop wakeword-only utterances")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_select)

    e = sub.add_parser("evaluate", help="WER of a checkpoint on a split", formatter_class=fmt)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="corpus directory")
    e.add_argument("--split", default="eval")
    e.add_argument("--name", default="model", help="model name in the report")
    e.add_argument("--out", default=None, help="report CSV")
    e.set_defaults(fn=cmd_evaluate)

    r = sub.add_parser("run-grid", help="run the full experiment grid", formatter_class=fmt)
    r.add_argument("plan", help="JSON plan (fields of ExperimentPlan; {} for defaults)")
    r.add_argument("--out", default=None, help="report directory (default: plan output_dir)")
    r.add_argument("--seeds", default=None, help="comma-separated seeds overriding the plan")
    r.set_defaults(fn=cmd_run_grid)

    rp = sub.add_parser("report", help="seed-averaged WERR tables from a grid directory", formatter_class=fmt)
    rp.add_argument("grid_dir")
    rp.add_argument("--out", default=None, help="aggregate CSV (default: <grid_dir>/aggregate.csv)")
    rp.set_defaults(fn=cmd_report)
    return p


def _fail(category, message):
    msg = " ".join(str(message).split())
    print(f"error:{category}: {msg}", file=sys.stderr)
    return EXIT_CODES[category]


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except CliError as e:
        return _fail(e.category, e)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except CliError as e:
        return _fail(e.category, e)
    except CheckpointError as e:
        return _fail("checkpoint", e)
    except InfeasibleTargetError as e:
        return _fail("infeasible", e)
    except StageError as e:
        return _fail("stage", e)
    except FileNotFoundError as e:
        return _fail("io", f"{e.strerror}: {e.filename}")
    except OSError as e:
        return _fail("io", e)
    except (ValueError, TypeError, KeyError) as e:
        return _fail("data", e)


if __name__ == "__main__":
    sys.exit(main())
