"""Downstream continual classifier with experience replay.

The classifier is a one-hidden-layer network whose output head grows as
new classes appear (new units start from tiny seeded noise so existing
logits are untouched). Each task's freshly labeled samples are trained
jointly with a class-balanced replay buffer: batches are half new data,
half buffer exemplars. The buffer holds at most B samples with a
floor(B / classes-seen) quota per class; overfull classes are evicted
uniformly at random.

Also provides the classifier-boundary uncertainty scores (softmax max,
entropy in nats, top1-top2 margin) used by the replay baselines.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ClassIdError
from .mlp import MLP, NetConfig, softmax, train_mlp
from .rng import substream, substream_seed


@dataclass
class ReplayBuffer:
    capacity: int
    ids: list[int] = field(default_factory=list)
    vectors: list[np.ndarray] = field(default_factory=list)
    classes: list[int] = field(default_factory=list)
    classes_seen: set[int] = field(default_factory=set)

    def __len__(self) -> int:
        return len(self.ids)

    def per_class_counts(self) -> dict[int, int]:
        counts: dict[int, int] = {}
        for cls in self.classes:
            counts[cls] = counts.get(cls, 0) + 1
        return counts

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.stack(self.vectors) if self.vectors else np.zeros((0, 0)),
            np.asarray(self.classes, dtype=np.int64),
        )


def replay_insert(
    buffer: ReplayBuffer,
    samples: list[tuple[int, np.ndarray, int]],
    seed: int,
) -> ReplayBuffer:
    """Insert (id, vector, class) samples under the class-balanced policy.

    Quota per class is floor(capacity / classes seen); classes above quota
    are thinned by seeded uniform eviction.
    """
    for rid, vec, cls in samples:
        buffer.ids.append(rid)
        buffer.vectors.append(np.asarray(vec, dtype=np.float32))
        buffer.classes.append(cls)
        buffer.classes_seen.add(cls)
    if not buffer.classes_seen:
        return buffer

    quota = buffer.capacity // len(buffer.classes_seen)
    rng = substream(seed, "replay-evict")
    keep_mask = np.ones(len(buffer.ids), dtype=bool)
    counts = buffer.per_class_counts()
    for cls in sorted(counts):
        if counts[cls] <= quota:
            continue
        members = [i for i, c in enumerate(buffer.classes) if c == cls]
        keep = rng.choice(len(members), size=quota, replace=False)
        keep_set = {members[k] for k in keep}
        for i in members:
            if i not in keep_set:
                keep_mask[i] = False
    buffer.ids = [r for r, k in zip(buffer.ids, keep_mask) if k]
    buffer.vectors = [v for v, k in zip(buffer.vectors, keep_mask) if k]
    buffer.classes = [c for c, k in zip(buffer.classes, keep_mask) if k]
    return buffer


class ContinualClassifier:
    """One-hidden-layer perceptron over frozen features, head growing with
    the class set (units ordered by first appearance)."""

    def __init__(self, dim: int, config: NetConfig, seed: int):
        self.dim = dim
        self.config = config
        self.seed = seed
        self.class_ids: list[int] = []
        self.net: MLP | None = None
        self._updates = 0

    def known(self) -> tuple[int, ...]:
        return tuple(self.class_ids)

    def _extend(self, new_ids: list[int]) -> None:
        if not new_ids:
            return
        rng = substream(self.seed, "clf-extend", self._updates)
        if self.net is None:
            self.net = MLP(
                self.dim, len(new_ids), self.config.hidden,
                substream(self.seed, "clf-init"),
            )
        else:
            self.net.extend_output(len(new_ids), rng)
        self.class_ids.extend(new_ids)

    def logits(self, x: np.ndarray) -> np.ndarray:
        if self.net is None:
            raise ClassIdError("classifier has no classes yet")
        return self.net.logits(np.asarray(x, dtype=np.float64))

    def predict(self, x: np.ndarray) -> np.ndarray:
        ids = np.asarray(self.class_ids, dtype=np.int64)
        return ids[np.argmax(self.logits(x), axis=1)]


def train_on(
    clf: ContinualClassifier,
    new_labeled: list[tuple[int, np.ndarray, int]],
    buffer: ReplayBuffer,
    seed: int,
) -> ContinualClassifier:
    """Extend the head for unseen classes and train on the new samples with
    balanced replay, without touching the buffer contents."""
    if not new_labeled:
        raise ClassIdError("classifier update needs at least one labeled sample")
    for _, _, cls in new_labeled:
        if not isinstance(cls, (int, np.integer)) or cls < 0:
            raise ClassIdError(f"invalid class id {cls!r}")

    fresh: list[int] = []
    for _, _, cls in new_labeled:
        if cls not in clf.class_ids and cls not in fresh:
            fresh.append(int(cls))
    clf._extend(fresh)

    index = {cid: i for i, cid in enumerate(clf.class_ids)}
    x = np.stack([np.asarray(v, dtype=np.float64) for _, v, _ in new_labeled])
    y = np.asarray([index[int(c)] for _, _, c in new_labeled], dtype=np.int64)

    replay = None
    if len(buffer):
        bx, bc = buffer.arrays()
        replay = (bx.astype(np.float64), np.asarray([index[int(c)] for c in bc]))

    train_mlp(
        clf.net, x, y, clf.config,
        substream(seed, "clf-train", clf._updates),
        replay=replay,
    )
    clf._updates += 1
    return clf


def update_classifier(
    clf: ContinualClassifier,
    new_labeled: list[tuple[int, np.ndarray, int]],
    buffer: ReplayBuffer,
    seed: int,
) -> ContinualClassifier:
    """One task-level update: train with balanced replay, then insert the
    new samples into the buffer."""
    train_on(clf, new_labeled, buffer, seed)
    replay_insert(buffer, new_labeled, substream_seed(seed, "replay-wave", clf._updates))
    return clf


def boundary_scores(clf: ContinualClassifier, u: np.ndarray) -> dict[str, float]:
    """Softmax max, entropy (nats), and top1-top2 margin for one vector."""
    row = boundary_scores_batch(clf, np.asarray(u, dtype=np.float64)[None, :])
    return {k: float(v[0]) for k, v in row.items()}


def boundary_scores_batch(clf: ContinualClassifier, pool: np.ndarray) -> dict[str, np.ndarray]:
    logits = clf.logits(pool)
    probs = softmax(logits)
    softmax_max = probs.max(axis=1)
    ent = -(probs * np.log(np.maximum(probs, 1e-300))).sum(axis=1)
    if probs.shape[1] == 1:
        margin = softmax_max.copy()
    else:
        part = np.sort(probs, axis=1)
        margin = part[:, -1] - part[:, -2]
    return {"softmax_max": softmax_max, "entropy": ent, "margin": margin}
