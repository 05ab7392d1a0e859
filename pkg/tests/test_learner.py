import math

import numpy as np
import pytest

from couq.errors import ClassIdError
from couq.learner import (
    ContinualClassifier,
    ReplayBuffer,
    boundary_scores,
    boundary_scores_batch,
    replay_insert,
    update_classifier,
)
from couq.mlp import MLP, NetConfig, softmax


def blobs(n, centers, spread=0.3, seed=0):
    rng = np.random.default_rng(seed)
    xs, ys = [], []
    for cls, center in enumerate(centers):
        xs.append(rng.normal(size=(n, len(center))) * spread + np.asarray(center))
        ys.extend([cls] * n)
    return np.concatenate(xs), np.asarray(ys)


def labeled_list(x, y, start_id=0):
    return [(start_id + i, x[i].astype(np.float32), int(y[i])) for i in range(len(x))]


def test_buffer_capacity_clamp_single_class():
    buf = ReplayBuffer(capacity=50)
    samples = [(i, np.zeros(2, dtype=np.float32), 1) for i in range(100)]
    replay_insert(buf, samples, seed=0)
    assert len(buf) == 50
    assert buf.per_class_counts() == {1: 50}


def test_buffer_quota_three_classes():
    buf = ReplayBuffer(capacity=6)
    samples = [(i, np.zeros(2, dtype=np.float32), i % 3) for i in range(30)]
    replay_insert(buf, samples, seed=1)
    assert buf.per_class_counts() == {0: 2, 1: 2, 2: 2}


def test_buffer_balance_invariant_after_waves():
    buf = ReplayBuffer(capacity=20)
    rng = np.random.default_rng(2)
    next_id = 0
    for wave in range(6):
        cls_pool = list(range(wave + 1))
        samples = []
        for _ in range(15):
            samples.append((next_id, np.zeros(2, dtype=np.float32),
                            int(rng.choice(cls_pool))))
            next_id += 1
        replay_insert(buf, samples, seed=wave)
        assert len(buf) <= buf.capacity
        counts = buf.per_class_counts()
        quota = buf.capacity // len(buf.classes_seen)
        assert all(c <= quota for c in counts.values())


def test_buffer_eviction_uniform_frequency():
    # Each of n samples should be kept with probability quota/n.
    n, capacity, trials = 40, 10, 2000
    hits = np.zeros(n)
    for seed in range(trials):
        buf = ReplayBuffer(capacity=capacity)
        samples = [(i, np.zeros(1, dtype=np.float32), 0) for i in range(n)]
        replay_insert(buf, samples, seed=seed)
        for rid in buf.ids:
            hits[rid] += 1
    p = capacity / n
    sigma = math.sqrt(trials * p * (1 - p))
    assert np.all(np.abs(hits - trials * p) <= 3 * sigma)


def test_task0_separable_reaches_full_accuracy():
    x, y = blobs(50, [(0.0, 0.0), (10.0, 0.0)])
    clf = ContinualClassifier(2, NetConfig(hidden=32, max_epochs=100), seed=3)
    buf = ReplayBuffer(capacity=100)
    update_classifier(clf, labeled_list(x, y), buf, seed=5)
    held_x, held_y = blobs(30, [(0.0, 0.0), (10.0, 0.0)], seed=9)
    assert (clf.predict(held_x) == held_y).mean() == 1.0


def test_classifier_gradient_check():
    rng = np.random.default_rng(8)
    net = MLP(3, 4, 5, rng)
    x = rng.normal(size=(5, 3))
    y = np.asarray([0, 1, 2, 3, 0])
    _, grads = net.loss_and_grads(x, y)
    eps = 1e-6
    for name, param in net.params().items():
        flat = param.ravel()
        for idx in range(0, flat.size, max(1, flat.size // 8)):
            orig = flat[idx]
            flat[idx] = orig + eps
            lp, _ = net.loss_and_grads(x, y)
            flat[idx] = orig - eps
            lm, _ = net.loss_and_grads(x, y)
            flat[idx] = orig
            assert grads[name].ravel()[idx] == pytest.approx(
                (lp - lm) / (2 * eps), rel=1e-4, abs=1e-8
            )


def test_empty_update_rejected():
    clf = ContinualClassifier(2, NetConfig(hidden=8), seed=0)
    buf = ReplayBuffer(capacity=10)
    with pytest.raises(ClassIdError):
        update_classifier(clf, [], buf, seed=0)


def test_negative_class_id_rejected():
    clf = ContinualClassifier(2, NetConfig(hidden=8), seed=0)
    buf = ReplayBuffer(capacity=10)
    with pytest.raises(ClassIdError):
        update_classifier(clf, [(0, np.zeros(2, dtype=np.float32), -3)], buf, seed=0)


def test_head_extension_preserves_old_logits():
    x, y = blobs(20, [(0.0, 0.0), (6.0, 0.0)])
    clf = ContinualClassifier(2, NetConfig(hidden=16, max_epochs=30), seed=1)
    buf = ReplayBuffer(capacity=50)
    update_classifier(clf, labeled_list(x, y), buf, seed=2)
    probe = np.random.default_rng(3).normal(size=(7, 2))
    before = clf.logits(probe)
    clf._extend([2, 3])
    after = clf.logits(probe)
    # Old weight columns are untouched; only BLAS summation order differs.
    assert np.allclose(before, after[:, :2], rtol=1e-12, atol=1e-12)
    assert after.shape[1] == 4


def test_boundary_scores_symmetry_and_saturation():
    clf = ContinualClassifier(2, NetConfig(hidden=4), seed=0)
    clf.class_ids = [0, 1]
    clf.net = MLP(2, 2, 4, np.random.default_rng(0))
    # Bypass the net: check the math on controlled logits via softmax.
    probs = softmax(np.asarray([[0.0, 0.0]]))
    assert np.allclose(probs, 0.5)
    ent = -(probs * np.log(probs)).sum()
    assert ent == pytest.approx(math.log(2), abs=1e-12)

    scores = boundary_scores_batch(clf, np.zeros((1, 2)))
    assert scores["softmax_max"][0] <= 1.0

    big = softmax(np.asarray([[100.0, 0.0]]))
    assert big[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_boundary_scores_match_fsum_oracle():
    # Entropy against a high-precision summation oracle, 1e-10.
    rng = np.random.default_rng(11)
    clf = ContinualClassifier(6, NetConfig(hidden=8), seed=0)
    clf.class_ids = list(range(5))
    clf.net = MLP(6, 5, 8, rng)
    pool = rng.normal(size=(50, 6)) * 3
    batch = boundary_scores_batch(clf, pool)
    logits = clf.logits(pool)
    for i in range(len(pool)):
        probs = softmax(logits[i])
        expected = -math.fsum(float(p) * math.log(float(p)) for p in probs)
        assert batch["entropy"][i] == pytest.approx(expected, abs=1e-10)
        top = np.sort(probs)
        assert batch["margin"][i] == pytest.approx(float(top[-1] - top[-2]), abs=1e-12)
        assert batch["softmax_max"][i] == pytest.approx(float(top[-1]), abs=1e-12)


def test_boundary_scores_shift_invariance_and_normalization():
    rng = np.random.default_rng(13)
    logits = rng.normal(size=(20, 4)) * 5
    for row in logits:
        p1 = softmax(row)
        p2 = softmax(row + 123.456)
        assert p1.sum() == pytest.approx(1.0, abs=1e-6)
        assert np.allclose(p1, p2, atol=1e-6)


def test_single_class_margin_equals_softmax_max():
    clf = ContinualClassifier(2, NetConfig(hidden=4), seed=0)
    clf.class_ids = [0]
    clf.net = MLP(2, 1, 4, np.random.default_rng(0))
    out = boundary_scores(clf, np.zeros(2))
    assert out["margin"] == out["softmax_max"] == pytest.approx(1.0)


def test_continual_two_tasks_with_replay():
    # Task 0: classes 0/1. Task 1: class 2 plus replay keeps 0/1 accurate.
    x0, y0 = blobs(40, [(0.0, 0.0), (8.0, 0.0)])
    clf = ContinualClassifier(2, NetConfig(hidden=32, max_epochs=80), seed=4)
    buf = ReplayBuffer(capacity=60)
    update_classifier(clf, labeled_list(x0, y0), buf, seed=6)

    x1, y1 = blobs(40, [(4.0, 8.0)], seed=1)
    update_classifier(clf, labeled_list(x1, y1 + 2, start_id=1000), buf, seed=7)

    tx, ty = blobs(25, [(0.0, 0.0), (8.0, 0.0), (4.0, 8.0)], seed=2)
    assert (clf.predict(tx) == ty).mean() >= 0.97
    assert clf.known() == (0, 1, 2)
