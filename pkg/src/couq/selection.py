"""Active-labeling strategies, budget accounting, and the simulated oracle.

The default strategy ("amb") alternates, per detected novel class, between
the most ambiguous samples (smallest distance to the class's threshold)
and the most confident novel ones, starting with an ambiguous pick. "top"
takes descending scores per class; "rand" draws uniformly from the
unlabeled pool. Per-class shares of a batch differ by at most one, with
any remainder going to the lowest class ids; a class that runs out of
candidates spills its share to the others round-robin.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import OracleError, RequeryError
from .featstore import FeatureSet
from .rng import substream
from .scoring import ScoredSample

log = logging.getLogger("couq")

STRATEGIES = ("amb", "top", "rand")


@dataclass
class BudgetLedger:
    """Tracks active-label spend for one task."""

    total_budget: int
    spent: int = 0
    per_iteration_plan: list[int] = field(default_factory=list)
    log: list[tuple[int, int, str]] = field(default_factory=list)  # (id, iter, strategy)
    labeled: set[int] = field(default_factory=set)

    @property
    def remaining(self) -> int:
        return self.total_budget - self.spent


@dataclass(frozen=True)
class QueryBatch:
    record_ids: tuple[int, ...]
    strategy: str
    iteration: int


def select_active(
    scores: list[ScoredSample],
    strategy: str,
    b: int,
    seed: int,
    ledger: BudgetLedger,
    iteration: int = 0,
) -> QueryBatch:
    """Choose up to ``b`` unlabeled records for oracle queries.

    ``b`` beyond the remaining budget is clamped (and logged), never
    fatal. Already-labeled records are never selected.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if b < 0:
        raise ValueError("b must be non-negative")
    if b > ledger.remaining:
        log.warning(
            "query request of %d clamped to remaining budget %d", b, ledger.remaining
        )
        b = ledger.remaining
    candidates = [s for s in scores if s.record_id not in ledger.labeled]
    if b == 0 or not candidates:
        return QueryBatch((), strategy, iteration)

    if strategy == "rand":
        rng = substream(seed, "al-rand", iteration)
        take = min(b, len(candidates))
        ordered = sorted(candidates, key=lambda s: s.record_id)
        idx = rng.choice(len(ordered), size=take, replace=False)
        picks = [ordered[i].record_id for i in idx]
        return QueryBatch(tuple(picks), strategy, iteration)

    groups: dict[int | None, list[ScoredSample]] = {}
    for s in candidates:
        groups.setdefault(s.predicted_novel_class, []).append(s)
    keys = sorted(groups, key=lambda k: (k is None, k))

    sequences = {key: _class_sequence(groups[key], strategy) for key in keys}
    base, rem = divmod(b, len(keys))
    shares = {key: base + (1 if i < rem else 0) for i, key in enumerate(keys)}

    picks: list[int] = []
    leftovers = 0
    for key in keys:
        seq = sequences[key]
        take = min(shares[key], len(seq))
        picks.extend(s.record_id for s in seq[:take])
        sequences[key] = seq[take:]
        leftovers += shares[key] - take
    # Spill unfilled shares round-robin over classes that still have
    # candidates.
    while leftovers > 0:
        progressed = False
        for key in keys:
            if leftovers == 0:
                break
            if sequences[key]:
                picks.append(sequences[key][0].record_id)
                sequences[key] = sequences[key][1:]
                leftovers -= 1
                progressed = True
        if not progressed:
            break
    return QueryBatch(tuple(picks), strategy, iteration)


def _class_sequence(samples: list[ScoredSample], strategy: str) -> list[ScoredSample]:
    if strategy == "top":
        return sorted(samples, key=lambda s: (-s.s_value, s.record_id))
    # "amb": alternate ambiguous (nearest threshold first) and confident
    # novel (highest score first), starting ambiguous.
    amb = sorted(
        (s for s in samples if s.category == "ambiguous"),
        key=lambda s: (abs(s.s_value - (s.tau if s.tau is not None else 0.0)), s.record_id),
    )
    conf = sorted(
        (s for s in samples if s.category == "confident_novel"),
        key=lambda s: (-s.s_value, s.record_id),
    )
    seq: list[ScoredSample] = []
    i = j = 0
    for turn in range(len(amb) + len(conf)):
        take_amb = turn % 2 == 0
        if take_amb and i < len(amb):
            seq.append(amb[i])
            i += 1
        elif not take_amb and j < len(conf):
            seq.append(conf[j])
            j += 1
        elif i < len(amb):
            seq.append(amb[i])
            i += 1
        elif j < len(conf):
            seq.append(conf[j])
            j += 1
    return seq


class LabelOracle:
    """Simulated annotator backed by the hidden ground-truth labels."""

    def __init__(self, truth: FeatureSet):
        self._truth = truth

    def label(
        self, batch: QueryBatch, ledger: BudgetLedger
    ) -> list[tuple[int, int]]:
        """Return (record id, true class) pairs and charge the ledger.

        Re-querying a record raises; requests beyond the remaining budget
        are clamped with a warning.
        """
        out: list[tuple[int, int]] = []
        for rid in batch.record_ids:
            if rid in ledger.labeled:
                raise RequeryError(f"record {rid} was already labeled")
            if ledger.remaining <= 0:
                log.warning("budget exhausted; dropping %d queued queries",
                            len(batch.record_ids) - len(out))
                break
            try:
                cls = self._truth.class_of(rid)
            except KeyError as exc:
                raise OracleError(f"unknown record id {rid}") from exc
            ledger.spent += 1
            ledger.labeled.add(rid)
            ledger.log.append((rid, batch.iteration, batch.strategy))
            out.append((rid, cls))
        return out
