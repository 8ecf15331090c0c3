import json

import numpy as np
import pytest

from ctcssl.corpus import CorpusConfig, generate
from ctcssl.ctc import InfeasibleTargetError
from ctcssl.decoder import greedy_decode
from ctcssl.experiment import ExperimentPlan, evaluate, train_acoustic
from ctcssl.model import (
    CHECKPOINT_VERSION, CheckpointError, ModelConfig, TrainConfig, ce_batch_loss_and_grads,
    ctc_batch_loss_and_grads, forward, init_params, load_checkpoint, posteriors, save_checkpoint,
    student_config, teacher_config, train_ce, train_ctc,
)


@pytest.fixture(scope="module")
def tiny():
    c = generate(CorpusConfig(n_labelled=10, n_unlabelled=1, n_eval=1, n_calibration=1,
                              noise_range=(0.3, 0.3), seed=3))
    return c.labelled


def test_presets():
    s = student_config(8, 11)
    t = teacher_config(8, 11)
    assert not s.bidirectional and s.num_layers == 1
    assert t.bidirectional and t.num_layers == 2 and t.hidden > s.hidden
    with pytest.raises(ValueError):
        ModelConfig(8, 1)
    with pytest.raises(ValueError):
        TrainConfig(optimizer="rmsprop")


def test_zero_output_gives_uniform_posteriors(rng):
    p = init_params(student_config(4, 5), zero_output=True)
    post = forward(p, rng.normal(size=(7, 4)))
    np.testing.assert_allclose(post, np.log(1 / 5), atol=1e-12)


@pytest.mark.parametrize("cfg", [student_config(4, 5), teacher_config(4, 5, hidden=6)])
def test_rows_normalised_and_deterministic(cfg, rng):
    p = init_params(cfg)
    x = rng.normal(size=(9, 4)) * 5
    a = forward(p, x)
    np.testing.assert_allclose(np.exp(a).sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_array_equal(a, forward(init_params(cfg), x))


def test_forward_rejects_bad_features():
    p = init_params(student_config(4, 5))
    with pytest.raises(ValueError):
        forward(p, np.zeros((3, 5)))
    with pytest.raises(ValueError):
        forward(p, np.full((3, 4), np.nan))


def test_padding_does_not_leak(rng):
    # batched posteriors must equal per-utterance forward, also for the reversed direction
    p = init_params(teacher_config(3, 4, hidden=5))
    xs = [rng.normal(size=(n, 3)) for n in (2, 7, 4, 1)]
    for x, post in zip(xs, posteriors(p, xs, batch_size=3)):
        np.testing.assert_allclose(post, forward(p, x), atol=1e-12)


def _fd_check(params, loss_of, eps=1e-6):
    _, grads = loss_of(params)
    worst = 0.0
    for name, arr in params.arrays.items():
        num = np.zeros_like(arr)
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            lp = loss_of(params)[0]
            arr[idx] = old - eps
            lm = loss_of(params)[0]
            arr[idx] = old
            num[idx] = (lp - lm) / (2 * eps)
        scale = max(np.abs(num).max(), np.abs(grads[name]).max(), 1e-8)
        worst = max(worst, np.abs(num - grads[name]).max() / scale)
    return worst


@pytest.mark.parametrize("cfg", [
    ModelConfig(3, 3, hidden=4, seed=1),
    ModelConfig(3, 3, hidden=3, num_layers=2, bidirectional=True, seed=2),
])
def test_end_to_end_ctc_gradient(cfg, rng):
    p = init_params(cfg)
    for k in p.arrays:
        p.arrays[k] = rng.uniform(-0.5, 0.5, p.arrays[k].shape)
    batch = [(rng.normal(size=(2, 3)), (1,)), (rng.normal(size=(4, 3)), (2, 1)), (rng.normal(size=(3, 3)), (1, 1))]
    assert _fd_check(p, lambda q: ctc_batch_loss_and_grads(q, batch, [1.0, 0.5, 2.0])) < 1e-3


def test_end_to_end_ce_gradient(rng):
    p = init_params(ModelConfig(3, 3, hidden=4, bidirectional=True, seed=5))
    batch = [(rng.normal(size=(2, 3)), [0, 1]), (rng.normal(size=(3, 3)), [2, 2, 0])]
    assert _fd_check(p, lambda q: ce_batch_loss_and_grads(q, batch)) < 1e-3


def test_zero_epochs_is_identity(tiny):
    p = init_params(student_config(8, 11))
    r = train_ce(p, [(u.features, u.frame_labels) for u in tiny], TrainConfig(epochs=0))
    assert r.losses == []
    for k in p.arrays:
        np.testing.assert_array_equal(r.params[k], p[k])


def test_zero_learning_rate_is_identity(tiny):
    p = init_params(student_config(8, 11))
    r = train_ctc(p, [(u.features, u.truth) for u in tiny], TrainConfig(learning_rate=0.0, epochs=2))
    assert len(r.losses) == 2 and r.losses[0] == pytest.approx(r.losses[1], rel=1e-12)
    for k in p.arrays:
        np.testing.assert_array_equal(r.params[k], p[k])


def test_training_does_not_mutate_input(tiny):
    p = init_params(student_config(8, 11))
    before = {k: v.copy() for k, v in p.arrays.items()}
    train_ce(p, [(u.features, u.frame_labels) for u in tiny], TrainConfig(epochs=1))
    for k in before:
        np.testing.assert_array_equal(p[k], before[k])


def test_ce_overfits_tiny_set(tiny):
    p = init_params(student_config(8, 11))
    r = train_ce(p, [(u.features, u.frame_labels) for u in tiny],
                 TrainConfig(learning_rate=0.02, optimizer="adam", epochs=200, batch_size=10))
    assert len(r.losses) == 200
    # full-batch Adam: each epoch no worse than 5% above the previous one
    assert all(b <= a * 1.05 for a, b in zip(r.losses, r.losses[1:]))
    acc = np.mean(np.concatenate([np.argmax(forward(r.params, u.features), 1) == u.frame_labels for u in tiny]))
    assert acc >= 0.95


def test_ctc_overfits_tiny_set(tiny):
    p = init_params(student_config(8, 11))
    r = train_ctc(p, [(u.features, u.truth) for u in tiny],
                  TrainConfig(learning_rate=0.02, optimizer="adam", epochs=500, batch_size=10))
    assert r.losses[-1] < r.losses[0]
    assert all(greedy_decode(forward(r.params, u.features)).hypothesis == u.truth for u in tiny)


def test_sgd_default_decreases_loss(tiny):
    p = init_params(student_config(8, 11))
    r = train_ctc(p, [(u.features, u.truth) for u in tiny], TrainConfig(epochs=15, batch_size=5))
    assert r.losses[-1] < r.losses[0]


def test_infeasible_targets_are_skipped(tiny):
    p = init_params(student_config(8, 11))
    u = tiny[0]
    too_long = tuple([1] * (len(u.features) + 1))
    r = train_ctc(p, [(u.features, u.truth), (u.features, too_long)], TrainConfig(epochs=1))
    assert r.skipped == 1
    with pytest.raises(InfeasibleTargetError):
        train_ctc(p, [(u.features, too_long)], TrainConfig(epochs=1))


def test_ce_requires_frame_labels(tiny):
    p = init_params(student_config(8, 11))
    with pytest.raises(ValueError):
        train_ce(p, [(tiny[0].features, None)], TrainConfig(epochs=1))


def test_checkpoint_round_trip(tmp_path, rng):
    p = init_params(teacher_config(4, 6, hidden=5, seed=9))
    path = tmp_path / "m.npz"
    save_checkpoint(p, path)
    q = load_checkpoint(path, expect_labels=6)
    assert q.config == p.config
    x = rng.normal(size=(5, 4))
    np.testing.assert_array_equal(forward(q, x), forward(p, x))


def test_checkpoint_alphabet_mismatch(tmp_path):
    path = tmp_path / "m.npz"
    save_checkpoint(init_params(student_config(4, 6)), path)
    with pytest.raises(CheckpointError, match="alphabet"):
        load_checkpoint(path, expect_labels=7)


def test_checkpoint_version_mismatch(tmp_path):
    p = init_params(student_config(4, 6))
    meta = {"version": CHECKPOINT_VERSION + 1, "config": p.config.__dict__, "names": sorted(p.arrays)}
    path = tmp_path / "m.npz"
    np.savez(path, __meta__=np.array(json.dumps(meta)), **p.arrays)
    with pytest.raises(CheckpointError, match=f"{CHECKPOINT_VERSION + 1}.*{CHECKPOINT_VERSION}"):
        load_checkpoint(path)


def test_checkpoint_corrupt_file(tmp_path):
    path = tmp_path / "m.npz"
    path.write_bytes(b"not a checkpoint")
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_teacher_beats_student_on_held_out_data():
    plan = ExperimentPlan(corpus=CorpusConfig(n_labelled=150, n_unlabelled=1, n_eval=200, n_calibration=1))
    c = generate(plan.corpus)
    _, student, _ = train_acoustic("baseline", c, plan, 0)
    _, teacher, _ = train_acoustic("teacher", c, plan, 1000)
    assert evaluate(teacher, c.eval).wer < evaluate(student, c.eval).wer
