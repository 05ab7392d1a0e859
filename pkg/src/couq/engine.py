"""The per-task iterative uncertainty loop.

At a task's start every pool sample is scored by its minimum
reconstruction error against the frozen old-class subspaces. Confidently
novel samples seed a novelty mapper (k-means when unsupervised, a shallow
net on actively labeled samples otherwise) and initial novel-class
subspaces. Each subsequent iteration rescores the pool with the ratio

    score(u) = min-FRE over old classes / FRE of the predicted novel class

(denominator floored at a small epsilon), re-categorizes, re-selects
pseudo-labels (the top share per predicted class), optionally spends a
slice of the active budget on ambiguous samples, and refits the novel
subspaces and the mapper from the fresh label sets. Old-class numerators
are computed once per task and reused verbatim in every iteration.

The loop stops when the confident-novel set changes by less than a
configured fraction (symmetric difference over union) or at the iteration
cap; discovered classes are then frozen into the old-class model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import EmptyModelError, StateError
from .featstore import FeatureSet
from .mapper import (
    Mapper,
    assign_batch,
    constant_mapper,
    fit_kmeans,
    fit_shallow_net,
    refit_centroids,
)
from .mlp import NetConfig
from .rng import substream_seed
from .scoring import (
    CategorizationRule,
    ScoredSample,
    categorize,
    select_pseudolabels,
)
from .selection import BudgetLedger, LabelOracle, QueryBatch, select_active
from .subspace import ClassSubspace, fit_subspace, fre_batch, min_fre_batch


@dataclass(frozen=True)
class CouqConfig:
    variance_retained: float = 0.995
    delta: float = 0.25
    epsilon: float = 1e-8
    alpha: float = 0.2
    max_iterations: int = 5
    budget_fraction: float = 0.0125
    strategy: str = "amb"            # active strategy inside the loop
    mode: str = "semi_supervised"    # or "unsupervised"
    pseudo_labeling: bool = True
    novel_k: int | str = "auto"
    k_max: int = 8
    stop_rel_change: float = 0.02
    min_group: int = 4
    mapper_net: NetConfig = field(default_factory=lambda: NetConfig(hidden=256))
    single_class_novelty: bool = False   # merge all novelty into one class
    gt_supervision: bool = False         # label every confident-novel sample
    all_budget_upfront: bool = False     # one-shot ablation: spend all at init

    def rule(self, ratio_scores: bool = False) -> CategorizationRule:
        return CategorizationRule(
            delta=self.delta, min_group=self.min_group, ratio_scores=ratio_scores
        )


@dataclass
class CouqState:
    """Mutable cross-task state: frozen per-class subspaces plus the
    per-task working set (novel fits, mapper, label ledgers)."""

    dim: int
    old_subspaces: dict[int, ClassSubspace] = field(default_factory=dict)
    novel_subspaces: dict[int, ClassSubspace] = field(default_factory=dict)
    mapper: Mapper | None = None
    pseudo_labeled: dict[int, tuple[int, float]] = field(default_factory=dict)
    active_labeled: dict[int, int] = field(default_factory=dict)
    iteration: int = 0
    budget: BudgetLedger | None = None
    next_class_id: int = 0
    synthetic_ids: set[int] = field(default_factory=set)
    # Synthetic cluster id -> true class id, filled as actively labeled
    # members pin down a cluster's identity; applied when the task ends.
    alignment: dict[int, int] = field(default_factory=dict)

    def old_class_ids(self) -> tuple[int, ...]:
        return tuple(sorted(self.old_subspaces))

    def allocate_ids(self, count: int) -> list[int]:
        ids = list(range(self.next_class_id, self.next_class_id + count))
        self.next_class_id += count
        self.synthetic_ids.update(ids)
        return ids

    def observe_class_id(self, class_id: int) -> None:
        """Keep the fresh-id counter ahead of every id seen."""
        self.next_class_id = max(self.next_class_id, class_id + 1)


@dataclass
class IterationRecord:
    iteration: int
    samples: list[tuple[int, float, str, int | None]]  # (id, score, category, predicted)
    taus: dict[int | None, float]
    pseudo: list[tuple[int, int, float]]
    queried: list[tuple[int, int]]
    b: int


@dataclass
class TaskResult:
    task_index: int
    mode: str
    no_novelty: bool
    old_classes_at_start: tuple[int, ...]
    novel_classes: tuple[int, ...]
    iterations: list[IterationRecord]
    iterations_executed: int
    numerators: dict[int, float]
    numerator_argmin: dict[int, int]
    final_scores: dict[int, float]
    final_categories: dict[int, str]
    final_predicted: dict[int, int | None]
    pseudo_final: dict[int, tuple[int, float]]
    active_final: dict[int, int]
    confident_old_final: dict[int, int]
    budget_total: int
    budget_spent: int
    budget_log: list[tuple[int, int, str]]
    subspace_trace: dict[int, dict[int, ClassSubspace]]


def score_initial(state: CouqState, u: np.ndarray) -> ScoredSample:
    """Minimum reconstruction error against the old-class model."""
    if not state.old_subspaces:
        raise EmptyModelError("no old-class subspaces")
    scores, _ = min_fre_batch(
        state.old_subspaces.values(), np.asarray(u, dtype=np.float64)[None, :]
    )
    return ScoredSample(record_id=-1, s_value=float(scores[0]))


def score_iter(state: CouqState, u: np.ndarray, epsilon: float = 1e-8) -> ScoredSample:
    """Ratio score for one vector using the previous iteration's mapper and
    novel subspaces."""
    if state.mapper is None:
        raise StateError("no mapper from the previous iteration")
    u = np.asarray(u, dtype=np.float64)
    m = int(assign_batch(state.mapper, u[None, :])[0])
    if m not in state.novel_subspaces:
        raise StateError(f"mapper emitted class {m} with no fitted subspace")
    numer, _ = min_fre_batch(state.old_subspaces.values(), u[None, :])
    denom = fre_batch(state.novel_subspaces[m], u[None, :])
    s = float(numer[0]) / max(float(denom[0]), epsilon)
    return ScoredSample(record_id=-1, s_value=s, predicted_novel_class=m)


def run_task(
    state: CouqState,
    pool_ids: list[int],
    fs: FeatureSet,
    config: CouqConfig,
    oracle: LabelOracle | None,
    seed: int,
    task_index: int,
) -> TaskResult:
    """Execute the full inner loop over one task's unlabeled pool.

    Mutates ``state``: accumulates label sets during the task and, at the
    end, freezes the discovered classes' final subspaces into the
    old-class model. Scoring the task's test pool should use
    ``verdict_scores`` with ``TaskResult.old_classes_at_start``.
    """
    if not state.old_subspaces:
        raise EmptyModelError("run_task needs a fitted old-class model")
    if config.mode == "semi_supervised" and oracle is None:
        raise StateError("semi-supervised mode needs a labeling oracle")
    pool_ids = [int(r) for r in pool_ids]
    pool = fs.vectors_of(pool_ids).astype(np.float64)
    old_at_start = state.old_class_ids()

    state.novel_subspaces = {}
    state.mapper = None
    state.pseudo_labeled = {}
    state.active_labeled = {}
    state.alignment = {}
    state.iteration = 0

    total_budget = math.ceil(config.budget_fraction * len(pool_ids))
    if config.mode == "unsupervised":
        total_budget = 0
    if config.gt_supervision:
        total_budget = len(pool_ids)
    state.budget = BudgetLedger(total_budget=total_budget)

    numer, numer_arg = min_fre_batch(state.old_subspaces.values(), pool)
    numerators = {rid: float(v) for rid, v in zip(pool_ids, numer)}
    numer_argmin = {rid: int(c) for rid, c in zip(pool_ids, numer_arg)}
    vec_of = {rid: pool[i] for i, rid in enumerate(pool_ids)}

    # --- iteration 0: initial scoring and categorization -----------------
    scored = [ScoredSample(rid, numerators[rid]) for rid in pool_ids]
    scored, taus = categorize(scored, config.rule())
    iterations: list[IterationRecord] = []
    trace: dict[int, dict[int, ClassSubspace]] = {}

    pool_data = (pool_ids, pool, numer)
    queried0: list[tuple[int, int]] = []
    b0 = 0
    if config.mode == "semi_supervised" and total_budget > 0:
        if config.gt_supervision:
            batch = QueryBatch(
                tuple(s.record_id for s in scored if s.category == "confident_novel"),
                "gt", 0,
            )
        else:
            if config.all_budget_upfront:
                b0 = total_budget
            else:
                b0 = math.ceil(total_budget / (config.max_iterations + 1))
            batch = select_active(scored, "top", b0, substream_seed(seed, "al", task_index), state.budget, 0)
        queried0 = oracle.label(batch, state.budget)
        for rid, cls in queried0:
            state.active_labeled[rid] = cls

    confident0 = [s.record_id for s in scored if s.category == "confident_novel"]
    confident_prev = set(confident0)

    mapper = _init_mapper(state, config, confident0, vec_of, seed, task_index)
    if mapper is None:
        # No novelty detected; the task degenerates to initial scoring.
        iterations.append(IterationRecord(0, _snapshot(scored), taus, [], queried0, b0))
        return _finalize(
            state, config, task_index, old_at_start, iterations, pool_data,
            numerators, numer_argmin, trace, no_novelty=True,
        )

    state.mapper = mapper
    _align_actives(state, old_at_start, vec_of)
    to_engine = {true: synth for synth, true in state.alignment.items()}

    predicted0 = assign_batch(mapper, np.stack([vec_of[r] for r in confident0])) \
        if confident0 else np.zeros(0, dtype=np.int64)
    init_labels: dict[int, int] = {
        rid: int(m) for rid, m in zip(confident0, predicted0)
    }
    for rid, cls in state.active_labeled.items():
        if cls not in old_at_start:
            init_labels[rid] = to_engine.get(cls, cls)
        else:
            init_labels.pop(rid, None)

    class_ids0 = list(mapper.class_ids)
    for cls in init_labels.values():
        if cls not in class_ids0:
            class_ids0.append(cls)
            state.observe_class_id(cls)
    state.novel_subspaces = _fit_novel(
        init_labels, vec_of, {}, class_ids0, config,
    )
    scored0 = [
        replace(s, predicted_novel_class=init_labels.get(s.record_id))
        for s in scored
    ]

    pseudo0: list[tuple[int, int, float]] = []
    if config.all_budget_upfront and config.pseudo_labeling:
        # One-shot mode: pseudo-label straight from the initial scores and
        # refit once; no iterative refinement follows.
        candidates0 = [s for s in scored0 if s.category == "confident_novel"]
        if candidates0:
            pseudo0 = select_pseudolabels(
                candidates0, config.alpha, set(state.active_labeled)
            )
        for rid, cls, s in pseudo0:
            state.pseudo_labeled[rid] = (cls, s)
        oneshot_labels = {rid: cls for rid, cls, _ in pseudo0}
        for rid, cls in state.active_labeled.items():
            if cls not in old_at_start:
                oneshot_labels[rid] = to_engine.get(cls, cls)
        state.novel_subspaces = _fit_novel(
            oneshot_labels, vec_of, state.novel_subspaces, class_ids0, config,
        )
        state.mapper = _refit_mapper(
            state, config, oneshot_labels, vec_of, class_ids0, seed, task_index, 0
        )

    iterations.append(IterationRecord(0, _snapshot(scored0), taus, pseudo0, queried0, b0))
    trace[0] = dict(state.novel_subspaces)

    # --- iterations i >= 1 ------------------------------------------------
    loop_rounds = 0 if config.all_budget_upfront else config.max_iterations
    for i in range(1, loop_rounds + 1):
        state.iteration = i
        predicted = assign_batch(state.mapper, pool)
        denominators = _denominators(state, pool, predicted)
        s_values = numer / np.maximum(denominators, config.epsilon)

        scored_i = [
            ScoredSample(rid, float(s), int(m))
            for rid, s, m in zip(pool_ids, s_values, predicted)
        ]
        # Ratio scores are split on the log scale; the initial distance
        # scores stay linear.
        scored_i, taus = categorize(scored_i, config.rule(ratio_scores=True))
        scored_i = _override_actives(scored_i, state, old_at_start)

        pseudo: list[tuple[int, int, float]] = []
        if config.pseudo_labeling:
            # Only confidently novel samples are pseudo-label candidates;
            # an all-old predicted group must not feed a novel fit.
            candidates = [s for s in scored_i if s.category == "confident_novel"]
            if candidates:
                pseudo = select_pseudolabels(
                    candidates, config.alpha, set(state.active_labeled)
                )
            for rid, cls, s in pseudo:
                state.pseudo_labeled[rid] = (cls, s)
            _prune_and_refresh(state, scored_i)

        queried: list[tuple[int, int]] = []
        b_i = 0
        if config.mode == "semi_supervised" and not config.all_budget_upfront:
            if config.gt_supervision:
                batch = QueryBatch(
                    tuple(
                        s.record_id for s in scored_i
                        if s.category == "confident_novel"
                        and s.record_id not in state.active_labeled
                    ),
                    "gt", i,
                )
            else:
                remaining_iters = config.max_iterations - i + 1
                b_i = math.ceil(state.budget.remaining / remaining_iters) \
                    if state.budget.remaining > 0 else 0
                batch = select_active(
                    scored_i, config.strategy, b_i,
                    substream_seed(seed, "al", task_index), state.budget, i,
                )
            queried = oracle.label(batch, state.budget)
            for rid, cls in queried:
                state.active_labeled[rid] = cls
                state.pseudo_labeled.pop(rid, None)
            _align_actives(state, old_at_start, vec_of)

        to_engine = {true: synth for synth, true in state.alignment.items()}
        refit_labels = {rid: cls for rid, (cls, _) in state.pseudo_labeled.items()}
        for rid, cls in state.active_labeled.items():
            if cls in old_at_start:
                refit_labels.pop(rid, None)
            else:
                refit_labels[rid] = to_engine.get(cls, cls)

        class_ids = list(state.mapper.class_ids)
        for cls in refit_labels.values():
            if cls not in class_ids:
                class_ids.append(cls)
                state.observe_class_id(cls)
        state.novel_subspaces = _fit_novel(
            refit_labels, vec_of, state.novel_subspaces, class_ids, config,
        )
        state.mapper = _refit_mapper(
            state, config, refit_labels, vec_of, class_ids, seed, task_index, i
        )

        iterations.append(IterationRecord(i, _snapshot(scored_i), taus, pseudo, queried, b_i))
        trace[i] = dict(state.novel_subspaces)

        confident_now = {
            s.record_id for s in scored_i if s.category == "confident_novel"
        }
        union = confident_now | confident_prev
        sym = confident_now ^ confident_prev
        confident_prev = confident_now
        stable = not union or len(sym) / len(union) < config.stop_rel_change
        # While the budget still buys queries, iterating keeps adding
        # information even if the confident set looks settled.
        if stable and not queried:
            break

    return _finalize(
        state, config, task_index, old_at_start, iterations, pool_data,
        numerators, numer_argmin, trace, no_novelty=False,
    )


def verdict_scores(
    old_subspaces: dict[int, ClassSubspace],
    novel_subspaces: dict[int, ClassSubspace],
    mapper: Mapper | None,
    vectors: np.ndarray,
    epsilon: float,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Final-state novelty scores for arbitrary vectors (e.g. a test pool).

    With a fitted mapper the ratio score is used; otherwise the plain
    min-FRE score. Returns (scores, predicted novel classes or None).
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    numer, _ = min_fre_batch(old_subspaces.values(), vectors)
    if mapper is None or not novel_subspaces:
        return numer, None
    predicted = assign_batch(mapper, vectors)
    denom = np.empty(len(vectors))
    for cls in np.unique(predicted):
        mask = predicted == cls
        if int(cls) not in novel_subspaces:
            raise StateError(f"mapper emitted class {int(cls)} with no subspace")
        denom[mask] = fre_batch(novel_subspaces[int(cls)], vectors[mask])
    return numer / np.maximum(denom, epsilon), predicted


def _init_mapper(
    state: CouqState,
    config: CouqConfig,
    confident0: list[int],
    vec_of: dict[int, np.ndarray],
    seed: int,
    task_index: int,
) -> Mapper | None:
    """Initial novelty mapper: k-means over the confident-novel set.

    The semi-supervised pipeline starts from the same clustering (a net
    trained on a couple of active labels cannot see the class structure);
    clusters adopt true class ids as actively labeled members arrive, and
    the shallow net takes over at the first refit. Clusters that never
    receive an active label keep their synthetic id and are aligned to
    true classes at evaluation time.
    """
    active_novel = {
        rid: cls for rid, cls in state.active_labeled.items()
        if cls not in state.old_subspaces
    }
    if not confident0 and not active_novel:
        return None
    if config.single_class_novelty:
        cid = state.allocate_ids(1)[0]
        return constant_mapper(cid)
    if not confident0:
        for cls in sorted(set(active_novel.values())):
            state.observe_class_id(cls)
        labeled = [(vec_of[rid], cls) for rid, cls in sorted(active_novel.items())]
        return fit_shallow_net(
            labeled, config.mapper_net, substream_seed(seed, "mapper", task_index, 0)
        )
    vectors = np.stack([vec_of[r] for r in confident0])
    mapper = fit_kmeans(
        vectors, config.novel_k, substream_seed(seed, "kmeans", task_index),
        k_max=config.k_max, fresh_id_start=state.next_class_id,
    )
    state.allocate_ids(mapper.n_classes)
    return mapper


def _denominators(
    state: CouqState, pool: np.ndarray, predicted: np.ndarray
) -> np.ndarray:
    denom = np.empty(len(pool))
    for cls in np.unique(predicted):
        if int(cls) not in state.novel_subspaces:
            raise StateError(f"mapper emitted class {int(cls)} with no subspace")
        mask = predicted == cls
        denom[mask] = fre_batch(state.novel_subspaces[int(cls)], pool[mask])
    return denom


def _fit_novel(
    labels: dict[int, int],
    vec_of: dict[int, np.ndarray],
    previous: dict[int, ClassSubspace],
    class_ids,
    config: CouqConfig,
) -> dict[int, ClassSubspace]:
    """Refit per-class novel subspaces; a class with fewer than two
    supporting samples keeps its previous subspace (or degenerates to a
    point fit when it never had one)."""
    members: dict[int, list[np.ndarray]] = {int(c): [] for c in class_ids}
    for rid, cls in labels.items():
        members.setdefault(int(cls), []).append(vec_of[rid])
    fitted: dict[int, ClassSubspace] = {}
    for cls in sorted(members):
        vecs = members[cls]
        if len(vecs) >= 2:
            fitted[cls] = fit_subspace(
                np.stack(vecs), config.variance_retained, class_id=cls
            )
        elif cls in previous:
            fitted[cls] = previous[cls]
        elif len(vecs) == 1:
            fitted[cls] = fit_subspace(
                np.stack([vecs[0], vecs[0]]), config.variance_retained, class_id=cls
            )
        # A class with no samples and no history is dropped.
    return fitted


def _refit_mapper(
    state: CouqState,
    config: CouqConfig,
    refit_labels: dict[int, int],
    vec_of: dict[int, np.ndarray],
    class_ids: list[int],
    seed: int,
    task_index: int,
    iteration: int,
) -> Mapper:
    if config.single_class_novelty:
        return state.mapper
    if config.mode == "unsupervised":
        grouped: dict[int, list[np.ndarray]] = {}
        for rid, cls in refit_labels.items():
            grouped.setdefault(cls, []).append(vec_of[rid])
        stacked = {cls: np.stack(v) for cls, v in grouped.items()}
        return refit_centroids(stacked, state.mapper)
    # Oracle-verified labels anchor the refit: oversample them to parity
    # with the (noisier) pseudo-label mass so a lone active sample of a
    # freshly found class is not drowned out.
    active_items = [
        (rid, cls) for rid, cls in sorted(refit_labels.items())
        if rid in state.active_labeled
    ]
    pseudo_items = [
        (rid, cls) for rid, cls in sorted(refit_labels.items())
        if rid not in state.active_labeled
    ]
    labeled = [(vec_of[rid], cls) for rid, cls in pseudo_items]
    if active_items:
        repeats = max(1, len(pseudo_items) // len(active_items))
        labeled.extend(
            (vec_of[rid], cls) for rid, cls in active_items for _ in range(repeats)
        )
    if not labeled:
        return state.mapper
    return fit_shallow_net(
        labeled, config.mapper_net,
        substream_seed(seed, "mapper", task_index, iteration),
    )


def _align_actives(state: CouqState, old_at_start, vec_of) -> None:
    """Pin a synthetic cluster to a true class the first time one of its
    members is actively labeled with a class no cluster owns yet."""
    if state.mapper is None:
        return
    claimed = set(state.alignment.values())
    mapper_ids = set(state.mapper.class_ids)
    for rid in sorted(state.active_labeled):
        cls = state.active_labeled[rid]
        if cls in old_at_start or cls in claimed or cls in mapper_ids:
            continue
        m = int(assign_batch(state.mapper, vec_of[rid][None, :])[0])
        if m in state.synthetic_ids and m not in state.alignment:
            state.alignment[m] = cls
            claimed.add(cls)


def _apply_alignment(state: CouqState) -> None:
    """Rename aligned synthetic classes to their true ids in the final
    artifacts (subspaces, mapper, pseudo labels). Per-iteration records
    keep the in-task ids so recorded scores stay reproducible against the
    per-iteration subspace snapshots."""
    if not state.alignment:
        return
    ren = dict(state.alignment)
    state.novel_subspaces = {
        ren.get(cid, cid): replace(sub, class_id=ren.get(cid, cid))
        for cid, sub in state.novel_subspaces.items()
    }
    if state.mapper is not None:
        state.mapper = Mapper(
            kind=state.mapper.kind,
            class_ids=tuple(ren.get(c, c) for c in state.mapper.class_ids),
            centroids=state.mapper.centroids,
            net=state.mapper.net,
            train_accuracy=state.mapper.train_accuracy,
        )
    state.pseudo_labeled = {
        rid: (ren.get(cls, cls), s) for rid, (cls, s) in state.pseudo_labeled.items()
    }
    for cid in ren:
        state.synthetic_ids.discard(cid)


def _prune_and_refresh(state: CouqState, scored: list[ScoredSample]) -> None:
    """Pseudo-label membership accumulates across iterations; a record is
    expelled once the current scoring calls it confidently old, and its
    label always tracks the current mapper. Early selection errors are
    therefore revisited, never frozen, while members that merely drift
    into the ambiguous band keep contributing coverage to the fits."""
    by_id = {s.record_id: s for s in scored}
    for rid in list(state.pseudo_labeled):
        current = by_id.get(rid)
        if (
            current is None
            or current.category == "confident_old"
            or current.predicted_novel_class is None
            or rid in state.active_labeled
        ):
            del state.pseudo_labeled[rid]
        else:
            state.pseudo_labeled[rid] = (
                current.predicted_novel_class, current.s_value
            )


def _override_actives(
    scored: list[ScoredSample], state: CouqState, old_at_start: tuple[int, ...]
) -> list[ScoredSample]:
    """Actively labeled records are resolved by ground truth, not by the
    threshold rule."""
    to_engine = {true: synth for synth, true in state.alignment.items()}
    out = []
    for s in scored:
        cls = state.active_labeled.get(s.record_id)
        if cls is None:
            out.append(s)
        elif cls in old_at_start:
            out.append(replace(s, category="confident_old"))
        else:
            out.append(replace(
                s, category="confident_novel",
                predicted_novel_class=to_engine.get(cls, cls),
            ))
    return out


def _snapshot(scored: list[ScoredSample]) -> list[tuple[int, float, str, int | None]]:
    return [
        (s.record_id, s.s_value, s.category, s.predicted_novel_class) for s in scored
    ]


def _finalize(
    state: CouqState,
    config: CouqConfig,
    task_index: int,
    old_at_start: tuple[int, ...],
    iterations: list[IterationRecord],
    pool_data,
    numerators: dict[int, float],
    numer_argmin: dict[int, int],
    trace: dict[int, dict[int, ClassSubspace]],
    no_novelty: bool,
) -> TaskResult:
    """Score the pool once more against the final mapper and subspaces, as
    a read-only verdict pass, then freeze discovered classes. The learner
    hand-off is the label state left by the last iteration."""
    pool_ids, pool, numer = pool_data
    _apply_alignment(state)
    if no_novelty or state.mapper is None or not state.novel_subspaces:
        final_scored = [
            ScoredSample(rid, numerators[rid]) for rid in pool_ids
        ]
        final_scored, _ = categorize(final_scored, config.rule())
    else:
        predicted = assign_batch(state.mapper, pool)
        denom = _denominators(state, pool, predicted)
        s_values = numer / np.maximum(denom, config.epsilon)
        final_scored = [
            ScoredSample(rid, float(s), int(m))
            for rid, s, m in zip(pool_ids, s_values, predicted)
        ]
        final_scored, _ = categorize(final_scored, config.rule(ratio_scores=True))
        final_scored = _override_actives(final_scored, state, old_at_start)

    final_scores = {s.record_id: s.s_value for s in final_scored}
    final_categories = {s.record_id: s.category for s in final_scored}
    final_predicted = {s.record_id: s.predicted_novel_class for s in final_scored}
    confident_old = {
        s.record_id: numer_argmin[s.record_id]
        for s in final_scored
        if s.category == "confident_old"
    }
    pseudo_final = dict(state.pseudo_labeled)

    result = TaskResult(
        task_index=task_index,
        mode=config.mode,
        no_novelty=no_novelty,
        old_classes_at_start=old_at_start,
        novel_classes=tuple(sorted(state.novel_subspaces)),
        iterations=iterations,
        iterations_executed=len(iterations) - 1,
        numerators=numerators,
        numerator_argmin=numer_argmin,
        final_scores=final_scores,
        final_categories=final_categories,
        final_predicted=final_predicted,
        pseudo_final=pseudo_final,
        active_final=dict(state.active_labeled),
        confident_old_final=confident_old,
        budget_total=state.budget.total_budget,
        budget_spent=state.budget.spent,
        budget_log=list(state.budget.log),
        subspace_trace=trace,
    )
    # Freeze the discovered classes for the next task.
    state.old_subspaces.update(state.novel_subspaces)
    return result
