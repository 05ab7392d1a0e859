"""Score containers, the three-way categorization, and pseudo-label picks.

A pool of scored samples is split into confident-novel / confident-old /
ambiguous relative to a threshold estimated by a two-means split of the
score distribution: scores at least tau*(1+delta) are confident novel,
scores at most tau*(1-delta) are confident old, and the band in between
is ambiguous. At iteration 0 the split is global; afterwards each
predicted-class group gets its own threshold (tiny groups fall back to
the global one).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np


@dataclass(frozen=True)
class ScoredSample:
    record_id: int
    s_value: float
    predicted_novel_class: int | None = None
    category: str | None = None    # confident_novel | confident_old | ambiguous
    tau: float | None = None       # threshold of the group that categorized it


@dataclass(frozen=True)
class CategorizationRule:
    delta: float = 0.25
    min_group: int = 4
    # Ratio scores (iteration >= 1) are split on the log scale and anchored
    # at 1: a sample counts as confident novel only if the ratio also favors
    # the novel subspace (s > 1), and confident old only if it favors the
    # old model (s < 1). Without the anchor, a predicted group containing
    # only old samples would still have its top slice declared novel.
    ratio_scores: bool = False


def two_means_threshold(values: np.ndarray, log_domain: bool = False) -> float:
    """Midpoint between the two cluster means of a 1-D two-means split.

    Initialized at (min, max); for identical values the threshold equals
    the common value. Ratio scores are heavy-tailed (a denominator near
    the floor inflates them arbitrarily), so they are split on the log
    scale; the returned threshold is always in linear score units.
    """
    return _two_means(values, log_domain)[0]


def _two_means(values: np.ndarray, log_domain: bool) -> tuple[float, float, float]:
    """(threshold, low cluster mean, high cluster mean), linear units.

    Centers start at the 25th/75th percentiles, which keeps the split
    between the bulk modes even when a few capped ratio scores sit many
    orders of magnitude above everything else.
    """
    v = np.asarray(values, dtype=np.float64)
    if log_domain:
        v = np.log(np.maximum(v, 1e-12))
    if float(v.min()) == float(v.max()):
        out = float(np.exp(v[0])) if log_domain else float(v[0])
        return out, out, out
    c1, c2 = float(np.quantile(v, 0.25)), float(np.quantile(v, 0.75))
    if c1 == c2:
        c1, c2 = float(v.min()), float(v.max())
    for _ in range(100):
        cut = (c1 + c2) / 2.0
        low = v[v <= cut]
        high = v[v > cut]
        if len(low) == 0 or len(high) == 0:
            break
        n1, n2 = float(low.mean()), float(high.mean())
        if n1 == c1 and n2 == c2:
            break
        c1, c2 = n1, n2
    tau = (c1 + c2) / 2.0
    if log_domain:
        return float(np.exp(tau)), float(np.exp(c1)), float(np.exp(c2))
    return tau, c1, c2


def categorize(
    scores: list[ScoredSample], rule: CategorizationRule
) -> tuple[list[ScoredSample], dict[int | None, float]]:
    """Assign a category to every sample; returns the updated samples and
    the per-group thresholds (key ``None`` is the global group)."""
    if not scores:
        raise ValueError("cannot categorize an empty pool")
    values = np.asarray([s.s_value for s in scores])
    if not np.isfinite(values).all():
        raise ValueError("non-finite score in pool")
    tau_global = two_means_threshold(values, rule.ratio_scores)

    groups: dict[int | None, list[int]] = {}
    for i, s in enumerate(scores):
        groups.setdefault(s.predicted_novel_class, []).append(i)

    taus: dict[int | None, float] = {None: tau_global}
    for key, idx in groups.items():
        if key is None:
            continue
        if len(idx) >= rule.min_group:
            tau_g, c_low, c_high = _two_means(values[idx], rule.ratio_scores)
            if rule.ratio_scores and (c_low > 1.0) == (c_high > 1.0):
                # Both cluster means on one side of the ratio anchor: the
                # group holds no old/novel boundary to estimate.
                tau_g = tau_global
            taus[key] = tau_g
        else:
            taus[key] = tau_global

    out: list[ScoredSample] = []
    for s in scores:
        tau = taus[s.predicted_novel_class if s.predicted_novel_class in taus else None]
        novel = s.s_value >= tau * (1.0 + rule.delta)
        old = s.s_value <= tau * (1.0 - rule.delta)
        if rule.ratio_scores:
            novel = novel and s.s_value > 1.0
            old = old and s.s_value < 1.0
        cat = "confident_novel" if novel else ("confident_old" if old else "ambiguous")
        out.append(replace(s, category=cat, tau=tau))
    return out, taus


def select_pseudolabels(
    scores: list[ScoredSample],
    alpha: float,
    active_ids: set[int] | None = None,
) -> list[tuple[int, int, float]]:
    """Top-ceil(alpha * n_m) samples by score per predicted class m.

    Actively labeled records are not pseudo-label candidates. Returns
    (record id, class id, score) triples, highest score first per class.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    active_ids = active_ids or set()
    per_class: dict[int, list[ScoredSample]] = {}
    for s in scores:
        if s.predicted_novel_class is None or s.record_id in active_ids:
            continue
        per_class.setdefault(s.predicted_novel_class, []).append(s)

    picked: list[tuple[int, int, float]] = []
    for cls in sorted(per_class):
        group = sorted(per_class[cls], key=lambda s: (-s.s_value, s.record_id))
        take = math.ceil(alpha * len(group))
        picked.extend((s.record_id, cls, s.s_value) for s in group[:take])
    return picked
