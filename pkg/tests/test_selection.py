import numpy as np
import pytest

from couq.errors import OracleError, RequeryError
from couq.featstore import FeatureSet
from couq.scoring import ScoredSample
from couq.selection import BudgetLedger, LabelOracle, QueryBatch, select_active


def amb(rid, s, tau, cls=1):
    return ScoredSample(rid, s, predicted_novel_class=cls,
                        category="ambiguous", tau=tau)


def conf(rid, s, cls=1):
    return ScoredSample(rid, s, predicted_novel_class=cls,
                        category="confident_novel", tau=1.0)


def truth_fs():
    vectors = np.zeros((8, 2), dtype=np.float32)
    labels = np.asarray([0, 0, 1, 1, 2, 2, 3, 3], dtype=np.int32)
    return FeatureSet(2, vectors, np.arange(8, dtype=np.uint64), labels)


def test_amb_alternation_order():
    # Ambiguity distances .01...04 and confident scores 9..6: the 1:1 rule
    # starting with an ambiguous pick gives a(.01), c(9), a(.02), c(8).
    tau = 1.0
    scores = [
        amb(10, tau + 0.01, tau), amb(11, tau - 0.02, tau),
        amb(12, tau + 0.03, tau), amb(13, tau - 0.04, tau),
        conf(20, 9.0), conf(21, 8.0), conf(22, 7.0), conf(23, 6.0),
    ]
    ledger = BudgetLedger(total_budget=10)
    batch = select_active(scores, "amb", 4, seed=0, ledger=ledger)
    assert batch.record_ids == (10, 20, 11, 21)


def test_amb_spills_to_confident_when_ambiguous_exhausted():
    scores = [amb(1, 1.1, 1.0), conf(2, 9.0), conf(3, 8.0), conf(4, 7.0)]
    ledger = BudgetLedger(total_budget=10)
    batch = select_active(scores, "amb", 4, seed=0, ledger=ledger)
    assert batch.record_ids == (1, 2, 3, 4)


def test_b_zero_gives_empty_batch():
    ledger = BudgetLedger(total_budget=5)
    batch = select_active([conf(1, 2.0)], "amb", 0, seed=0, ledger=ledger)
    assert batch.record_ids == ()


def test_top_orders_by_score_within_class():
    scores = [conf(1, 5.0), conf(2, 9.0), amb(3, 7.0, 1.0)]
    ledger = BudgetLedger(total_budget=10)
    batch = select_active(scores, "top", 3, seed=0, ledger=ledger)
    assert batch.record_ids == (2, 3, 1)


def test_per_class_shares_differ_by_at_most_one():
    scores = [conf(i, 10.0 - i, cls=i % 3) for i in range(30)]
    ledger = BudgetLedger(total_budget=30)
    batch = select_active(scores, "top", 8, seed=0, ledger=ledger)
    counts = {0: 0, 1: 0, 2: 0}
    by_id = {s.record_id: s for s in scores}
    for rid in batch.record_ids:
        counts[by_id[rid].predicted_novel_class] += 1
    assert max(counts.values()) - min(counts.values()) <= 1
    assert sum(counts.values()) == 8


def test_clamps_to_remaining_budget():
    scores = [conf(i, float(i)) for i in range(10)]
    ledger = BudgetLedger(total_budget=3)
    ledger.spent = 1
    batch = select_active(scores, "top", 5, seed=0, ledger=ledger)
    assert len(batch.record_ids) == 2


def test_never_selects_already_labeled():
    scores = [conf(i, float(10 - i)) for i in range(5)]
    ledger = BudgetLedger(total_budget=10)
    ledger.labeled = {0, 1}
    batch = select_active(scores, "top", 5, seed=0, ledger=ledger)
    assert set(batch.record_ids) == {2, 3, 4}


def test_rand_deterministic_and_uniform():
    scores = [conf(i, float(i)) for i in range(50)]
    ledger = BudgetLedger(total_budget=1000)
    a = select_active(scores, "rand", 10, seed=5, ledger=ledger)
    b = select_active(scores, "rand", 10, seed=5, ledger=ledger)
    assert a.record_ids == b.record_ids

    # Across seeds, each record should be picked about b/N of the time.
    n, b_count, trials = 50, 10, 100
    hits = np.zeros(n)
    for seed in range(1, trials + 1):
        batch = select_active(scores, "rand", b_count, seed=seed, ledger=ledger)
        for rid in batch.record_ids:
            hits[rid] += 1
    p = b_count / n
    sigma = np.sqrt(trials * p * (1 - p))
    assert np.all(np.abs(hits - trials * p) <= 3 * sigma + 1e-9)


def test_oracle_labels_and_ledger():
    fs = truth_fs()
    oracle = LabelOracle(fs)
    ledger = BudgetLedger(total_budget=5)
    batch = QueryBatch((0, 2, 4), "top", 1)
    got = oracle.label(batch, ledger)
    assert got == [(0, 0), (2, 1), (4, 2)]
    assert ledger.spent == 3
    assert ledger.log == [(0, 1, "top"), (2, 1, "top"), (4, 1, "top")]


def test_oracle_requery_refused():
    fs = truth_fs()
    oracle = LabelOracle(fs)
    ledger = BudgetLedger(total_budget=5)
    oracle.label(QueryBatch((0,), "top", 0), ledger)
    with pytest.raises(RequeryError):
        oracle.label(QueryBatch((0,), "top", 1), ledger)


def test_oracle_unknown_id():
    fs = truth_fs()
    oracle = LabelOracle(fs)
    ledger = BudgetLedger(total_budget=5)
    with pytest.raises(OracleError):
        oracle.label(QueryBatch((999,), "top", 0), ledger)


def test_oracle_matches_truth_on_random_records():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 10, size=1000).astype(np.int32)
    fs = FeatureSet(3, np.zeros((1000, 3), dtype=np.float32),
                    np.arange(1000, dtype=np.uint64), labels)
    oracle = LabelOracle(fs)
    ledger = BudgetLedger(total_budget=1000)
    ids = rng.choice(1000, size=200, replace=False)
    got = oracle.label(QueryBatch(tuple(int(i) for i in ids), "rand", 0), ledger)
    for rid, cls in got:
        assert cls == labels[rid]


def test_budget_safety_fuzz():
    # No sequence of select/label calls can overdraw the budget.
    rng = np.random.default_rng(44)
    for trial in range(200):
        n = int(rng.integers(5, 40))
        labels = rng.integers(0, 4, size=n).astype(np.int32)
        fs = FeatureSet(2, np.zeros((n, 2), dtype=np.float32),
                        np.arange(n, dtype=np.uint64), labels)
        oracle = LabelOracle(fs)
        total = int(rng.integers(0, n))
        ledger = BudgetLedger(total_budget=total)
        scores = [
            ScoredSample(
                i, float(rng.uniform(0, 5)),
                predicted_novel_class=int(rng.integers(2)),
                category=str(rng.choice(["ambiguous", "confident_novel", "confident_old"])),
                tau=1.0,
            )
            for i in range(n)
        ]
        for step in range(int(rng.integers(1, 6))):
            strategy = str(rng.choice(["amb", "top", "rand"]))
            b = int(rng.integers(0, n + 5))
            batch = select_active(scores, strategy, b, seed=trial * 7 + step,
                                  ledger=ledger, iteration=step)
            oracle.label(batch, ledger)
            assert ledger.spent <= ledger.total_budget
        assert ledger.spent == len(ledger.log)
