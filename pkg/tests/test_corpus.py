import hashlib
from collections import Counter

import numpy as np
import pytest

from ctcssl.corpus import (
    SPLITS, CorpusConfig, check_collapse_consistency, generate, load_corpus, save_corpus,
)
from ctcssl.ctc import collapse
from ctcssl.experiment import ExperimentPlan, evaluate, train_acoustic
from ctcssl.metrics import edit_distance
from ctcssl.model import forward
from ctcssl.decoder import greedy_decode

SMALL = CorpusConfig(n_labelled=40, n_unlabelled=300, n_eval=60, n_calibration=30, seed=5)


@pytest.fixture(scope="module")
def small():
    return generate(SMALL)


def test_config_validation():
    with pytest.raises(ValueError, match="n_eval"):
        CorpusConfig(n_eval=0)
    with pytest.raises(ValueError, match="noise_range"):
        CorpusConfig(noise_range=(-1.0, 1.0))
    with pytest.raises(ValueError, match="bogus"):
        CorpusConfig.from_dict({"bogus": 1})


def test_same_seed_bit_identical(small):
    again = generate(SMALL)
    for split in SPLITS:
        for a, b in zip(small.split(split), again.split(split)):
            assert a.uid == b.uid and a.truth == b.truth and a.meta == b.meta
            assert a.features.tobytes() == b.features.tobytes()
    other = generate(CorpusConfig(**{**SMALL.__dict__, "seed": 6}))
    assert other.labelled[0].features.tobytes() != small.labelled[0].features.tobytes()


def test_split_sizes_and_visibility(small):
    assert [len(small.split(s)) for s in SPLITS] == [40, 300, 60, 30]
    assert all(u.reference is None and u.frame_labels is None for u in small.unlabelled)
    assert all(u.reference == u.truth for u in small.labelled)
    uids = [u.uid for s in SPLITS for u in small.split(s)]
    assert len(uids) == len(set(uids))


def test_frame_labels_collapse_to_reference(small):
    for split in SPLITS:
        assert check_collapse_consistency(small.split(split))
        for u in small.split(split):
            assert len(u.truth_frames) == len(u.features) and len(u.truth) >= 1


def test_metadata_consistent_with_config(small):
    c = small.config
    for u in small.unlabelled:
        assert u.meta.domain in c.domains
        assert 0 <= int(u.meta.device[3:]) < c.n_devices
        assert u.meta.duration == len(u.features)
        assert c.noise_range[0] <= u.noise_sd <= c.noise_range[1]
        assert u.meta.wakeword_only == (u.truth == (c.wakeword,))
        if not u.meta.wakeword_only:
            assert c.wakeword not in u.truth


def test_domain_distribution_roughly_uniform():
    c = generate(CorpusConfig(n_labelled=1, n_unlabelled=5000, n_eval=1, n_calibration=1))
    counts = Counter(u.meta.domain for u in c.unlabelled)
    assert set(counts) == set(c.config.domains)
    assert all(abs(n - 1000) < 4 * np.sqrt(1000) for n in counts.values())


def test_domains_differ_in_content():
    c = generate(CorpusConfig(n_labelled=1, n_unlabelled=3000, n_eval=1, n_calibration=1, n_domains=3))
    dist = {}
    for d in c.config.domains:
        sym = Counter(k for u in c.unlabelled if u.meta.domain == d for k in u.truth)
        tot = sum(sym.values())
        dist[d] = np.array([sym[k] / tot for k in range(1, c.config.n_labels)])
    d1, d2, d3 = dist.values()
    # total-variation distance between domain symbol distributions
    assert min(abs(d1 - d2).sum(), abs(d1 - d3).sum(), abs(d2 - d3).sum()) / 2 > 0.3


def _sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_save_load_round_trip(tmp_path, small):
    counts = save_corpus(small, tmp_path / "a")
    assert counts == {s: len(small.split(s)) for s in SPLITS}
    back = load_corpus(tmp_path / "a")
    assert back.config == small.config
    for split in SPLITS:
        for a, b in zip(small.split(split), back.split(split)):
            assert a.uid == b.uid and a.truth == b.truth and a.meta == b.meta and a.labelled == b.labelled
            np.testing.assert_array_equal(a.features, b.features)
            np.testing.assert_array_equal(a.truth_frames, b.truth_frames)
    save_corpus(generate(SMALL), tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert _sha(f) == _sha(tmp_path / "b" / f.name)


def test_wakeword_utterances_are_single_symbol(small):
    wake = [u for s in SPLITS for u in small.split(s) if u.meta.wakeword_only]
    assert wake
    assert all(collapse(u.truth_frames) == (small.config.wakeword,) for u in wake)


def _ranks(x):
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="stable")
    r = np.empty(len(x))
    r[order] = np.arange(len(x))
    for v in np.unique(x):
        m = x == v
        r[m] = r[m].mean()
    return r


def test_noise_drives_difficulty():
    plan = ExperimentPlan(corpus=CorpusConfig(n_labelled=150, n_unlabelled=1, n_eval=300, n_calibration=1))
    c = generate(plan.corpus)
    _, model, _ = train_acoustic("baseline", c, plan, 0)
    errs = []
    for u in c.eval:
        s, d, i = edit_distance(u.truth, greedy_decode(forward(model, u.features)).hypothesis)
        errs.append((s + d + i) / len(u.truth))
    rho = np.corrcoef(_ranks([u.noise_sd for u in c.eval]), _ranks(errs))[0, 1]
    assert rho > 0.3


def test_clean_separable_data_is_learnable():
    cfg = CorpusConfig(n_labelled=150, n_unlabelled=1, n_eval=100, n_calibration=1,
                       noise_range=(0.0, 0.0), speaker_sd=0.0, label_sep=3.0)
    c = generate(cfg)
    _, teacher, _ = train_acoustic("teacher", c, ExperimentPlan(corpus=cfg), 0)
    assert evaluate(teacher, c.eval).wer < 2.0
