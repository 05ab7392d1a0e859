"""Subspace novelty-detection baselines.

``dfm`` scores a pool once by minimum reconstruction error over the old
classes (no iterations, no per-class novelty modeling); for continuity
across tasks, the top share of the pool by score is merged into a single
fresh "class" whose subspace joins the old model. ``incdfm`` runs the
full iterative loop but replaces the mapper with a constant single-class
one, so every detected novelty shares one subspace per task.
"""

from __future__ import annotations

import math
from dataclasses import replace

import numpy as np

from .engine import CouqConfig, CouqState, IterationRecord, TaskResult, run_task
from .featstore import FeatureSet
from .scoring import ScoredSample, categorize
from .subspace import fit_subspace, min_fre_batch


def dfm_score(state: CouqState, u: np.ndarray) -> float:
    """One-shot min-FRE score of a single vector."""
    scores, _ = min_fre_batch(
        state.old_subspaces.values(), np.asarray(u, dtype=np.float64)[None, :]
    )
    return float(scores[0])


def dfm_task(
    state: CouqState,
    pool_ids: list[int],
    fs: FeatureSet,
    config: CouqConfig,
    task_index: int,
) -> TaskResult:
    """Score one task's pool with the one-shot detector and absorb the top
    ``alpha`` share of scores as a single merged novelty class."""
    pool_ids = [int(r) for r in pool_ids]
    pool = fs.vectors_of(pool_ids).astype(np.float64)
    old_at_start = state.old_class_ids()
    numer, numer_arg = min_fre_batch(state.old_subspaces.values(), pool)

    scored = [ScoredSample(rid, float(s)) for rid, s in zip(pool_ids, numer)]
    scored, taus = categorize(scored, config.rule())

    order = sorted(range(len(pool_ids)), key=lambda i: (-numer[i], pool_ids[i]))
    take = math.ceil(config.alpha * len(pool_ids))
    chosen = order[:take]

    novel_classes: tuple[int, ...] = ()
    if len(chosen) >= 2:
        cid = state.allocate_ids(1)[0]
        sub = fit_subspace(pool[chosen], config.variance_retained, class_id=cid)
        state.old_subspaces[cid] = sub
        novel_classes = (cid,)

    pseudo = [(pool_ids[i], novel_classes[0], float(numer[i])) for i in chosen] \
        if novel_classes else []
    detected = {rid for rid, _, _ in pseudo}
    predicted = {
        rid: (novel_classes[0] if rid in detected else None) for rid in pool_ids
    }
    record = IterationRecord(0, [
        (s.record_id, s.s_value, s.category, None) for s in scored
    ], taus, pseudo, [], 0)

    return TaskResult(
        task_index=task_index,
        mode="unsupervised",
        no_novelty=not novel_classes,
        old_classes_at_start=old_at_start,
        novel_classes=novel_classes,
        iterations=[record],
        iterations_executed=0,
        numerators={rid: float(v) for rid, v in zip(pool_ids, numer)},
        numerator_argmin={rid: int(c) for rid, c in zip(pool_ids, numer_arg)},
        final_scores={s.record_id: s.s_value for s in scored},
        final_categories={s.record_id: s.category for s in scored},
        final_predicted=predicted,
        pseudo_final={rid: (cls, s) for rid, cls, s in pseudo},
        active_final={},
        confident_old_final={
            s.record_id: int(numer_arg[i])
            for i, s in enumerate(scored) if s.category == "confident_old"
        },
        budget_total=0,
        budget_spent=0,
        budget_log=[],
        subspace_trace={},
    )


def incdfm_task(
    state: CouqState,
    pool_ids: list[int],
    fs: FeatureSet,
    config: CouqConfig,
    seed: int,
    task_index: int,
) -> TaskResult:
    """Iterative single-class-novelty detection: the shared loop with a
    constant mapper and no supervision."""
    cfg = replace(config, mode="unsupervised", single_class_novelty=True)
    return run_task(state, pool_ids, fs, cfg, None, seed, task_index)
