"""Per-(method, seed) experiment execution.

Builds the dataset and task stream, trains the base task supervised, then
walks the continual tasks with the selected method, evaluating AUROC and
test accuracy per task and writing task results, checkpoints, and the run
report. Subspace methods share one engine; replay baselines query their
own classifier-boundary uncertainty.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import replace

import numpy as np

from .baselines import dfm_task, incdfm_task
from .checkpoint import Checkpoint, save_checkpoint
from .config import ExperimentConfig
from .engine import CouqConfig, CouqState, TaskResult, run_task, verdict_scores
from .errors import ConfigError
from .evalkit import (
    RunReport,
    TaskMetrics,
    auroc,
    continual_accuracy,
    match_discovered_classes,
)
from .featstore import FeatureSet, TaskStream, build_task_stream, gen_synthetic, load_features
from .learner import (
    ContinualClassifier,
    ReplayBuffer,
    boundary_scores_batch,
    replay_insert,
    train_on,
    update_classifier,
)
from .mlp import NetConfig
from .rng import substream_seed
from .selection import BudgetLedger, LabelOracle, QueryBatch
from .subspace import fit_subspace, min_fre_batch

COUQ_FAMILY = {"couq", "couq_unsup", "couq_nop", "al_top", "al_rand", "no_iters", "gt_sup"}
ER_FAMILY = {
    "er_entropy", "er_margin", "er_softmax",
    "pseudoer_entropy", "pseudoer_margin", "pseudoer_softmax",
}
SUBSPACE_METHODS = COUQ_FAMILY | {"dfm", "incdfm"}


def engine_config(config: ExperimentConfig, method: str) -> CouqConfig:
    base = CouqConfig(
        variance_retained=config.variance_retained,
        delta=config.delta,
        epsilon=config.epsilon,
        alpha=config.alpha,
        max_iterations=config.max_iterations,
        budget_fraction=config.budget_fraction,
        novel_k=config.novel_k,
        k_max=config.k_max,
        stop_rel_change=config.stop_rel_change,
        mapper_net=NetConfig(
            hidden=config.mapper_net.hidden,
            lr=config.mapper_net.lr,
            batch_size=config.mapper_net.batch_size,
            max_epochs=config.mapper_net.max_epochs,
        ),
    )
    if method == "couq":
        return base
    if method == "couq_unsup":
        return replace(base, mode="unsupervised")
    if method == "couq_nop":
        return replace(base, pseudo_labeling=False)
    if method == "al_top":
        return replace(base, strategy="top")
    if method == "al_rand":
        return replace(base, strategy="rand")
    if method == "no_iters":
        return replace(base, all_budget_upfront=True, max_iterations=1)
    if method == "gt_sup":
        return replace(base, gt_supervision=True)
    if method in ("dfm", "incdfm"):
        return replace(base, mode="unsupervised")
    raise ConfigError(f"method {method!r} has no engine configuration")


def build_dataset(config: ExperimentConfig) -> FeatureSet:
    if config.synthetic is not None:
        return gen_synthetic(config.synthetic, config.synthetic_seed)
    return load_features(config.dataset_path,
                         "csv" if config.dataset_path.endswith(".csv") else "binary")


def standardize_features(fs: FeatureSet, reference_ids) -> FeatureSet:
    """Per-dimension standardization fitted on the reference records."""
    ref = fs.vectors_of(reference_ids).astype(np.float64)
    mean = ref.mean(axis=0)
    std = ref.std(axis=0)
    std[std == 0] = 1.0
    vectors = ((fs.vectors.astype(np.float64) - mean) / std).astype(np.float32)
    return FeatureSet(fs.dim, vectors, fs.ids, fs.labels)


def run_single(
    config: ExperimentConfig, method: str, seed: int, run_dir: str | None
) -> RunReport:
    """Execute one (method, seed) run; returns its report and, when
    ``run_dir`` is given, writes task results and checkpoints there."""
    fs = build_dataset(config)
    stream = build_task_stream(
        fs, config.schedule, config.mix_ratio,
        config.holdout_frac, config.test_frac, seed,
    )
    if config.standardize:
        fs = standardize_features(fs, stream.initial_labeled)
    if run_dir:
        os.makedirs(os.path.join(run_dir, "tasks"), exist_ok=True)
        os.makedirs(os.path.join(run_dir, "checkpoints"), exist_ok=True)

    ecfg = engine_config(config, method) if method in SUBSPACE_METHODS else None
    oracle = LabelOracle(fs)
    report = RunReport(method=method, seed=seed, budget_fraction=config.budget_fraction)

    state = CouqState(dim=fs.dim)
    state.next_class_id = max(fs.classes()) + 1 if fs.classes() else 0

    clf_cfg = NetConfig(
        hidden=config.classifier_net.hidden,
        lr=config.classifier_net.lr,
        batch_size=config.classifier_net.batch_size,
        max_epochs=config.classifier_net.max_epochs,
    )
    needs_classifier = method not in ("dfm", "incdfm")
    clf = ContinualClassifier(fs.dim, clf_cfg, seed=substream_seed(seed, "classifier"))
    buffer = ReplayBuffer(capacity=config.buffer_capacity)

    # Task 0: fully supervised base training.
    base = [(rid, fs.vector_of(rid), fs.class_of(rid)) for rid in stream.initial_labeled]
    if needs_classifier:
        update_classifier(clf, base, buffer, substream_seed(seed, "clf-task", 0))
    if method in SUBSPACE_METHODS:
        per_class: dict[int, list[np.ndarray]] = {}
        for rid, vec, cls in base:
            per_class.setdefault(cls, []).append(vec)
        for cls in sorted(per_class):
            state.old_subspaces[cls] = fit_subspace(
                np.stack(per_class[cls]), config.variance_retained, class_id=cls
            )

    acc0 = None
    if needs_classifier:
        truth0 = {rid: fs.class_of(rid) for rid in stream.initial_test}
        preds0 = _predict(clf, fs, list(truth0), state.synthetic_ids, truth0)
        acc0 = continual_accuracy(preds0, truth0)
    report.tasks.append(TaskMetrics(
        0, None, acc0, 0, 0,
        len(stream.initial_classes), len(stream.initial_classes),
    ))

    known_true = set(stream.initial_classes)
    for task in stream.tasks:
        t = task.task_index
        pool = list(task.unlabeled_pool)
        new_true = set(task.new_classes)

        if method in COUQ_FAMILY:
            result = run_task(state, pool, fs, ecfg, oracle, seed, t)
            test_scores = _couq_test_scores(state, result, fs, task.test_pool, ecfg)
            new_labeled = _couq_new_labels(result, fs)
            spend = result.budget_spent
            iters = result.iterations_executed
            detected = len(result.novel_classes)
        elif method == "dfm":
            result = dfm_task(state, pool, fs, ecfg, t)
            test_scores = _couq_test_scores(state, result, fs, task.test_pool, ecfg)
            new_labeled, spend, iters = [], 0, 0
            detected = len(result.novel_classes)
        elif method == "incdfm":
            result = incdfm_task(state, pool, fs, ecfg, seed, t)
            test_scores = _couq_test_scores(state, result, fs, task.test_pool, ecfg)
            new_labeled, spend, iters = [], 0, result.iterations_executed
            detected = len(result.novel_classes)
        elif method in ER_FAMILY:
            result = None
            metric = method.split("_", 1)[1]
            test_scores, new_labeled, spend, iters, found = _er_task(
                clf, buffer, pool, fs, config, oracle, metric,
                method.startswith("pseudoer"), seed, t, known_true,
                fs.vectors_of(task.test_pool).astype(np.float64),
            )
            detected = len(found)
        elif method == "oracle_upper":
            result = None
            new_labeled = [(rid, fs.vector_of(rid), fs.class_of(rid)) for rid in pool]
            test_scores, spend, iters = None, len(pool), 0
            detected = len(new_true)
        else:
            raise ConfigError(f"unknown method {method!r}")

        task_auroc = None
        if test_scores is not None:
            labels01 = [1 if fs.class_of(rid) in new_true else 0 for rid in task.test_pool]
            task_auroc = auroc(test_scores, labels01)

        accuracy = None
        if needs_classifier:
            if new_labeled:
                update_classifier(clf, new_labeled, buffer, substream_seed(seed, "clf-task", t))
            truth = {rid: fs.class_of(rid) for rid in task.test_pool}
            preds = _predict(clf, fs, list(task.test_pool), state.synthetic_ids, truth)
            accuracy = continual_accuracy(preds, truth)

        report.tasks.append(TaskMetrics(
            t, task_auroc, accuracy, spend, iters, detected, len(new_true),
        ))
        known_true |= new_true

        if run_dir and result is not None:
            _write_json(
                os.path.join(run_dir, "tasks", f"task{t}.json"),
                _task_result_doc(result),
            )
            ckpt = Checkpoint(
                old_subspaces={
                    c: state.old_subspaces[c] for c in result.old_classes_at_start
                },
                novel_snapshots=result.subspace_trace,
                mapper=state.mapper,
                classifier=clf if needs_classifier and clf.net is not None else None,
            )
            save_checkpoint(os.path.join(run_dir, "checkpoints", f"task{t}.ckpt"), ckpt)

    return report


def _couq_test_scores(state, result: TaskResult, fs, test_pool, ecfg: CouqConfig):
    old_store = {c: state.old_subspaces[c] for c in result.old_classes_at_start}
    vectors = fs.vectors_of(test_pool)
    mapper = state.mapper if not result.no_novelty else None
    novel = state.novel_subspaces if not result.no_novelty else {}
    scores, _ = verdict_scores(old_store, novel, mapper, vectors, ecfg.epsilon)
    return scores


def _couq_new_labels(result: TaskResult, fs) -> list[tuple[int, np.ndarray, int]]:
    labeled: dict[int, int] = {}
    for rid, (cls, _) in sorted(result.pseudo_final.items()):
        labeled[rid] = cls
    for rid, cls in sorted(result.active_final.items()):
        labeled[rid] = cls
    return [(rid, fs.vector_of(rid), cls) for rid, cls in sorted(labeled.items())]


def _predict(clf, fs, record_ids, synthetic_ids, truth):
    vectors = fs.vectors_of(record_ids)
    raw = clf.predict(vectors)
    mapping = {}
    if synthetic_ids:
        mapping = match_discovered_classes(
            raw, np.asarray([truth[r] for r in record_ids]), synthetic_ids
        )
    return {
        rid: int(mapping.get(int(p), int(p))) for rid, p in zip(record_ids, raw)
    }


def _task_result_doc(result: TaskResult) -> dict:
    """JSON document for one task: per-iteration score arrays, the label
    ledger, and the final per-sample verdicts (schema documented in the
    README)."""
    return {
        "task": result.task_index,
        "mode": result.mode,
        "no_novelty": result.no_novelty,
        "old_classes_at_start": list(result.old_classes_at_start),
        "novel_classes": list(result.novel_classes),
        "iterations_executed": result.iterations_executed,
        "budget": {
            "total": result.budget_total,
            "spent": result.budget_spent,
            "log": [[rid, it, strat] for rid, it, strat in result.budget_log],
        },
        "iterations": [
            {
                "iteration": rec.iteration,
                "b": rec.b,
                "taus": {
                    "global": rec.taus.get(None),
                    "classes": {
                        str(k): v for k, v in sorted(
                            (k, v) for k, v in rec.taus.items() if k is not None
                        )
                    },
                },
                "samples": [
                    [rid, s, cat, -1 if pred is None else pred]
                    for rid, s, cat, pred in rec.samples
                ],
                "pseudo": [[rid, cls, s] for rid, cls, s in rec.pseudo],
                "queried": [[rid, cls] for rid, cls in rec.queried],
            }
            for rec in result.iterations
        ],
        "final": {
            "scores": [[rid, result.final_scores[rid]] for rid in sorted(result.final_scores)],
            "categories": [
                [rid, result.final_categories[rid]] for rid in sorted(result.final_categories)
            ],
            "predicted": [
                [rid, -1 if result.final_predicted[rid] is None else result.final_predicted[rid]]
                for rid in sorted(result.final_predicted)
            ],
            "pseudo": [
                [rid, result.pseudo_final[rid][0], result.pseudo_final[rid][1]]
                for rid in sorted(result.pseudo_final)
            ],
            "active": [[rid, result.active_final[rid]] for rid in sorted(result.active_final)],
            "confident_old": [
                [rid, result.confident_old_final[rid]]
                for rid in sorted(result.confident_old_final)
            ],
            "numerators": [
                [rid, result.numerators[rid]] for rid in sorted(result.numerators)
            ],
        },
    }


def _write_json(path: str, doc: dict) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _uncertainty(clf, vectors, metric: str) -> np.ndarray:
    """Novelty-oriented score: higher = more uncertain = more likely new."""
    scores = boundary_scores_batch(clf, vectors)
    if metric == "entropy":
        return scores["entropy"]
    if metric == "margin":
        return 1.0 - scores["margin"]
    if metric == "softmax":
        return 1.0 - scores["softmax_max"]
    raise ConfigError(f"unknown uncertainty metric {metric!r}")


def _er_task(
    clf, buffer, pool_ids, fs, config: ExperimentConfig, oracle, metric: str,
    use_pseudo: bool, seed: int, task_index: int, known_true: set[int],
    test_vectors: np.ndarray,
):
    """Replay baseline task: spend the budget on the most uncertain
    samples (all at once, or spread over inner iterations when
    pseudo-labeling), retraining after every labeling wave. Returns the
    test-pool novelty scores of the final classifier; the buffer is left
    untouched (the caller inserts the returned labels once per task)."""
    pool_ids = [int(r) for r in pool_ids]
    vectors = fs.vectors_of(pool_ids).astype(np.float64)
    ledger = BudgetLedger(total_budget=math.ceil(config.budget_fraction * len(pool_ids)))
    active: dict[int, int] = {}
    found: set[int] = set()
    iterations = 0
    final_pseudo: list[tuple[int, int]] = []

    def query(b: int, iteration: int) -> None:
        if b <= 0 or ledger.remaining <= 0:
            return
        unc = _uncertainty(clf, vectors, metric)
        order = sorted(
            (i for i in range(len(pool_ids)) if pool_ids[i] not in ledger.labeled),
            key=lambda i: (-unc[i], pool_ids[i]),
        )
        batch = QueryBatch(
            tuple(pool_ids[i] for i in order[: min(b, ledger.remaining)]),
            "top", iteration,
        )
        for rid, cls in oracle.label(batch, ledger):
            active[rid] = cls
            if cls not in known_true:
                found.add(cls)

    def wave(extra: list[tuple[int, int]]) -> None:
        labeled = dict(active)
        for rid, cls in extra:
            labeled.setdefault(rid, cls)
        if not labeled:
            return
        batch = [(rid, fs.vector_of(rid), cls) for rid, cls in sorted(labeled.items())]
        train_on(clf, batch, buffer, substream_seed(seed, "clf-task", task_index))

    if not use_pseudo:
        query(ledger.total_budget, 0)
        wave([])
    else:
        query(math.ceil(ledger.total_budget / (config.max_iterations + 1)), 0)
        wave([])
        for i in range(1, config.max_iterations + 1):
            iterations = i
            confidence = -_uncertainty(clf, vectors, metric)
            predicted = clf.predict(vectors) if clf.net is not None else None
            per_class: dict[int, list[int]] = {}
            if predicted is not None:
                for idx, cls in enumerate(predicted):
                    if int(cls) in found and pool_ids[idx] not in active:
                        per_class.setdefault(int(cls), []).append(idx)
            final_pseudo = []
            for cls in sorted(per_class):
                members = sorted(
                    per_class[cls], key=lambda i: (-confidence[i], pool_ids[i])
                )
                take = math.ceil(config.alpha * len(members))
                final_pseudo.extend((pool_ids[i], cls) for i in members[:take])
            query(math.ceil(ledger.remaining / (config.max_iterations - i + 1)), i)
            wave(final_pseudo)

    labeled = dict(active)
    for rid, cls in final_pseudo:
        labeled.setdefault(rid, cls)
    inserted = [(rid, fs.vector_of(rid), cls) for rid, cls in sorted(labeled.items())]
    if inserted:
        replay_insert(buffer, inserted, substream_seed(seed, "replay-wave", task_index))
    test_scores = _uncertainty(clf, test_vectors, metric) if clf.net is not None else None
    return test_scores, [], ledger.spent, iterations, found
