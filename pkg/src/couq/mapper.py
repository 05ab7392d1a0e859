"""Novelty mappers: assign novel-class ids to feature vectors.

Three kinds share one ``Mapper`` container:

- ``kmeans``: Lloyd's algorithm with k-means++ seeding; k fixed or chosen
  in [1, k_max] by maximum silhouette score. Used by the unsupervised
  pipeline at the start of a task; later refits recompute each centroid
  from the currently labeled samples of its class, which keeps class ids
  stable across refits.
- ``shallow_net``: a small MLP trained on actively + pseudo-labeled
  samples (semi-supervised pipeline).
- ``constant``: maps everything to one class (single-novelty baseline).

Assignment always resolves ties toward the lowest class id.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, MapperFitError
from .mlp import MLP, NetConfig, train_mlp
from .rng import substream

_LLOYD_MAX_ROUNDS = 100
_LLOYD_TOL = 1e-6


@dataclass
class Mapper:
    kind: str                      # kmeans | shallow_net | constant
    class_ids: tuple[int, ...]     # ordered by first appearance
    centroids: np.ndarray | None = None   # (k, D) float32, kind=kmeans
    net: MLP | None = None                # kind=shallow_net
    train_accuracy: float | None = None
    k_reduced: bool = field(default=False, compare=False)

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)


def assign(m: Mapper, u: np.ndarray) -> int:
    """Class id for one vector."""
    return int(assign_batch(m, np.asarray(u, dtype=np.float64)[None, :])[0])


def assign_batch(m: Mapper, pool: np.ndarray) -> np.ndarray:
    """Class ids for an (N, D) pool."""
    pool = np.asarray(pool, dtype=np.float64)
    if m.kind == "constant":
        return np.full(pool.shape[0], m.class_ids[0], dtype=np.int64)
    ids = np.asarray(m.class_ids, dtype=np.int64)
    if m.kind == "kmeans":
        cents = m.centroids.astype(np.float64)
        if pool.shape[1] != cents.shape[1]:
            raise DimensionError(
                f"pool dim {pool.shape[1]} != centroid dim {cents.shape[1]}"
            )
        d = np.linalg.norm(pool[:, None, :] - cents[None, :, :], axis=2)
        best = d.min(axis=1, keepdims=True)
        score = np.where(d <= best, ids[None, :], np.iinfo(np.int64).max)
        return score.min(axis=1)
    if m.kind == "shallow_net":
        if pool.shape[1] != m.net.dim:
            raise DimensionError(f"pool dim {pool.shape[1]} != net dim {m.net.dim}")
        logits = m.net.logits(pool)
        best = logits.max(axis=1, keepdims=True)
        score = np.where(logits >= best, ids[None, :], np.iinfo(np.int64).max)
        return score.min(axis=1)
    raise MapperFitError(f"unknown mapper kind {m.kind!r}")


def fit_kmeans(
    vectors: np.ndarray,
    k,
    seed: int,
    k_max: int = 8,
    fresh_id_start: int = 0,
) -> Mapper:
    """Cluster confident-novel vectors; ``k`` is an int or ``"auto"``.

    Auto mode picks k in [1, k_max] by maximum silhouette (k=1 scores 0;
    ties go to the smaller k). k larger than the number of distinct
    vectors is reduced and flagged. Emitted class ids are
    ``fresh_id_start, fresh_id_start+1, ...``.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise MapperFitError("k-means needs a non-empty 2-D sample matrix")
    n_unique = len(np.unique(x, axis=0))

    if k == "auto":
        best_k, best_score = 1, 0.0
        best_fit = x.mean(axis=0, keepdims=True)
        for cand in range(2, min(k_max, n_unique) + 1):
            cents, labels = _lloyd(x, cand, substream(seed, "kmeans", cand))
            if len(cents) < 2:
                continue
            score = _silhouette(x, labels, len(cents))
            if score > best_score:
                best_k, best_score, best_fit = len(cents), score, cents
        centroids, reduced = best_fit, False
    else:
        k = int(k)
        if k < 1:
            raise MapperFitError("k must be >= 1")
        reduced = k > n_unique
        k_eff = min(k, n_unique)
        if k_eff == 1:
            centroids = x.mean(axis=0, keepdims=True)
        else:
            centroids, _ = _lloyd(x, k_eff, substream(seed, "kmeans", k_eff))
            reduced = reduced or len(centroids) < k

    ids = tuple(fresh_id_start + i for i in range(len(centroids)))
    return Mapper(
        kind="kmeans",
        class_ids=ids,
        centroids=centroids.astype(np.float32),
        k_reduced=reduced,
    )


def refit_centroids(
    labeled_vectors: dict[int, np.ndarray], fallback: Mapper
) -> Mapper:
    """Recompute centroids as per-class means of the given labeled samples.

    Classes absent from ``labeled_vectors`` keep their centroid from
    ``fallback``; class ids are preserved, so iteration hand-off never
    renames a class.
    """
    ids = fallback.class_ids
    old = {cid: fallback.centroids[i] for i, cid in enumerate(ids)}
    rows = []
    for cid in ids:
        vecs = labeled_vectors.get(cid)
        if vecs is not None and len(vecs):
            rows.append(np.asarray(vecs, dtype=np.float64).mean(axis=0))
        else:
            rows.append(old[cid].astype(np.float64))
    return Mapper(
        kind="kmeans",
        class_ids=ids,
        centroids=np.asarray(rows).astype(np.float32),
    )


def fit_shallow_net(
    labeled: list[tuple[np.ndarray, int]],
    config: NetConfig,
    seed: int,
) -> Mapper:
    """Train the semi-supervised mapper on (vector, class id) pairs.

    Output units follow the first-appearance order of class ids in the
    data; a single-class input yields a constant mapper.
    """
    if not labeled:
        raise MapperFitError("no labeled samples for the shallow-net mapper")
    class_ids: list[int] = []
    for _, cid in labeled:
        if cid not in class_ids:
            class_ids.append(cid)
    counts = {cid: 0 for cid in class_ids}
    for _, cid in labeled:
        counts[cid] += 1
    if any(c == 0 for c in counts.values()):
        raise MapperFitError("a mapper class has zero samples")

    x = np.stack([np.asarray(v, dtype=np.float64) for v, _ in labeled])
    index = {cid: i for i, cid in enumerate(class_ids)}
    y = np.asarray([index[cid] for _, cid in labeled], dtype=np.int64)

    net = MLP(x.shape[1], len(class_ids), config.hidden, substream(seed, "mapper-init"))
    if len(class_ids) > 1:
        train_mlp(net, x, y, config, substream(seed, "mapper-train"))
    pred = np.argmax(net.logits(x), axis=1)
    return Mapper(
        kind="shallow_net",
        class_ids=tuple(class_ids),
        net=net,
        train_accuracy=float((pred == y).mean()),
    )


def constant_mapper(class_id: int) -> Mapper:
    return Mapper(kind="constant", class_ids=(class_id,))


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i] = x[rng.integers(n)]
        else:
            centers[i] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((x - centers[i]) ** 2).sum(axis=1))
    return centers


def _lloyd(
    x: np.ndarray, k: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Returns (centroids, labels); duplicate centroids are merged, so the
    result may have fewer than k rows."""
    centers = _kmeans_pp(x, k, rng)
    labels = np.zeros(len(x), dtype=np.int64)
    for _ in range(_LLOYD_MAX_ROUNDS):
        d = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=2)
        labels = np.argmin(d, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = x[labels == j]
            if len(members):
                new_centers[j] = members.mean(axis=0)
            else:
                # Re-seat an empty centroid on the point farthest from its
                # current assignment.
                far = np.argmax(d[np.arange(len(x)), labels])
                new_centers[j] = x[far]
        movement = float(np.linalg.norm(new_centers - centers, axis=1).max())
        centers = new_centers
        if movement < _LLOYD_TOL:
            break
    centers, labels = _merge_duplicates(centers, x)
    return centers, labels


def _merge_duplicates(centers: np.ndarray, x: np.ndarray):
    uniq, inverse = np.unique(centers, axis=0, return_inverse=True)
    # np.unique sorts rows; restore first-seen order for determinism.
    first_seen = sorted(range(len(uniq)), key=lambda u: int(np.argmax(inverse == u)))
    centers = uniq[first_seen]
    d = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=2)
    return centers, np.argmin(d, axis=1)


def _silhouette(x: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Mean silhouette over all points; singletons contribute 0."""
    n = len(x)
    d = np.linalg.norm(x[:, None, :] - x[None, :, :], axis=2)
    scores = np.zeros(n)
    counts = np.bincount(labels, minlength=k)
    for i in range(n):
        own = labels[i]
        if counts[own] <= 1:
            continue
        a = d[i, labels == own].sum() / (counts[own] - 1)
        b = np.inf
        for j in range(k):
            if j == own or counts[j] == 0:
                continue
            b = min(b, d[i, labels == j].mean())
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0 else (b - a) / denom
    return float(scores.mean())
