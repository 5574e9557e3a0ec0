"""Ranking metrics with time-aware filtering, query-selection modes, collapse diagnostics.

Modes select which test queries count toward the metrics:
  vanilla   every query in the evaluation interval
  emerging  queries at an entity's first appearance, for entities first
            appearing inside the interval (zero prior history)
  unknown   the same unseen entities at their later, non-first occurrences

The emerging/unknown side policy decides whether the unseen entity must
be the query's subject (`query-side`) or may also be the answer
(`either-side`). Filtered ranks drop co-true answers sharing the query's
(subject, relation, timestamp) within the evaluation interval; score
ties rank the true answer pessimistically after its equals.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import Split, TemporalKG, add_inverse_relations, first_appearance
from .errors import ConfigError, ContractError
from .model import Model, run_snapshot, snapshot_queries

SETTINGS = ("vanilla", "emerging", "unknown")
POLICIES = ("query-side", "either-side")


@dataclass(frozen=True)
class EvalMode:
    setting: str = "vanilla"
    policy: str = "query-side"

    def __post_init__(self):
        if self.setting not in SETTINGS:
            raise ConfigError(f"unknown setting {self.setting!r}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")


@dataclass(frozen=True)
class RankResult:
    subject: int
    relation: int
    answer: int
    timestamp: int
    raw: int
    filtered: int


@dataclass
class DirectionMetrics:
    mrr: float
    hits3: float
    hits10: float
    n_queries: int


@dataclass
class MetricsReport:
    mode: EvalMode
    forward: DirectionMetrics
    inverse: DirectionMetrics
    averaged: DirectionMetrics
    empty: bool


def rank_from_scores(scores: np.ndarray, answer: int, co_true=()) -> tuple[int, int]:
    """(raw, filtered) pessimistic ranks of `answer` within a score vector."""
    s = scores[answer]
    greater = scores > s
    equal = scores == s
    raw = int(greater.sum() + equal.sum())
    if len(co_true):
        allowed = np.ones(len(scores), dtype=bool)
        allowed[np.asarray(list(co_true), dtype=np.intp)] = False
        allowed[answer] = True
        filtered = int((greater & allowed).sum() + (equal & allowed).sum())
    else:
        filtered = raw
    return raw, filtered


def _direction_metrics(ranks: list[int]) -> DirectionMetrics:
    if not ranks:
        return DirectionMetrics(mrr=0.0, hits3=0.0, hits10=0.0, n_queries=0)
    arr = np.asarray(ranks, dtype=np.float64)
    return DirectionMetrics(
        mrr=float((1.0 / arr).mean()),
        hits3=float((arr <= 3).mean()),
        hits10=float((arr <= 10).mean()),
        n_queries=len(ranks))


def _average(fwd: DirectionMetrics, inv: DirectionMetrics) -> DirectionMetrics:
    present = [m for m in (fwd, inv) if m.n_queries]
    if not present:
        return DirectionMetrics(0.0, 0.0, 0.0, 0)
    return DirectionMetrics(
        mrr=float(np.mean([m.mrr for m in present])),
        hits3=float(np.mean([m.hits3 for m in present])),
        hits10=float(np.mean([m.hits10 for m in present])),
        n_queries=fwd.n_queries + inv.n_queries)


def _query_selector(mode: EvalMode, first: dict[int, int], interval: tuple[int, int]):
    lo, hi = interval
    fresh = {e for e, t in first.items() if lo <= t < hi}

    def qualifies(entity: int, t: int) -> bool:
        if entity not in fresh:
            return False
        if mode.setting == "emerging":
            return first[entity] == t
        return t > first[entity]  # unknown: non-first occurrence

    def select(subject: int, answer: int, t: int) -> bool:
        if mode.setting == "vanilla":
            return True
        if qualifies(subject, t):
            return True
        return mode.policy == "either-side" and qualifies(answer, t)

    return select


def co_true_answers(g: TemporalKG, interval: tuple[int, int]) -> dict[tuple[int, int, int], list[int]]:
    """(subject, relation, t) -> answers seen in the interval (time-aware filter set)."""
    lo, hi = interval
    table: dict[tuple[int, int, int], list[int]] = {}
    for t in range(lo, min(hi, g.num_timestamps)):
        for q in g.snapshots[t]:
            table.setdefault((q.subject, q.relation, t), []).append(q.object)
    return table


def evaluate(model: Model, g: TemporalKG, split: Split, mode: EvalMode,
             *, interval: str = "test", ablate_transfer: bool = False,
             threads: int = 1) -> MetricsReport:
    """Metrics over the interval, walking its timestamps chronologically.

    Prototypes start at zero at the interval's first timestamp and carry
    across its snapshots exactly like one training epoch. Pure and
    read-only: repeated calls return identical reports.
    """
    if not g.has_inverses:
        g = add_inverse_relations(g)
    lo, hi = split.interval(interval)
    first = first_appearance(g)
    select = _query_selector(mode, first, (lo, hi))
    answers = co_true_answers(g, (lo, hi))
    n_base = model.num_base_relations

    carry = model.zero_prototypes()
    fwd_ranks: list[int] = []
    inv_ranks: list[int] = []
    results: list[RankResult] = []
    for t in range(lo, min(hi, g.num_timestamps)):
        queries = snapshot_queries(g, t)
        if not len(queries):
            continue
        out = run_snapshot(model, g, queries, carry, ablate_transfer=ablate_transfer)
        carry = out.proto_carry
        logits = out.logits.values
        picked = [i for i in range(len(queries))
                  if select(int(queries[i, 0]), int(queries[i, 2]), t)]

        def rank_one(i: int) -> RankResult:
            s, r, o, _ = (int(v) for v in queries[i])
            others = [c for c in answers.get((s, r, t), ()) if c != o]
            raw, filtered = rank_from_scores(logits[i], o, others)
            return RankResult(subject=s, relation=r, answer=o, timestamp=t,
                              raw=raw, filtered=filtered)

        if threads > 1 and len(picked) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                batch = list(pool.map(rank_one, picked))
        else:
            batch = [rank_one(i) for i in picked]
        for res in batch:
            results.append(res)
            (fwd_ranks if res.relation < n_base else inv_ranks).append(res.filtered)

    fwd = _direction_metrics(fwd_ranks)
    inv = _direction_metrics(inv_ranks)
    return MetricsReport(mode=mode, forward=fwd, inverse=inv,
                         averaged=_average(fwd, inv),
                         empty=not (fwd.n_queries or inv.n_queries))


def rank_query(model: Model, g: TemporalKG, query: tuple[int, int, int, int],
               mode: EvalMode, split: Split) -> RankResult:
    """Rank a single test query (subject, relation, answer, t) under the protocol.

    Convenience wrapper over the snapshot pipeline; prototypes are
    rebuilt from the start of the test interval for faithfulness.
    """
    if not g.has_inverses:
        g = add_inverse_relations(g)
    s, r, o, t_q = query
    lo, hi = split.test
    if not (lo <= t_q < hi):
        raise ContractError(f"query timestamp {t_q} outside test interval [{lo}, {hi})")
    carry = model.zero_prototypes()
    for t in range(lo, t_q):
        queries = snapshot_queries(g, t)
        if len(queries):
            carry = run_snapshot(model, g, queries, carry).proto_carry
    queries = snapshot_queries(g, t_q)
    out = run_snapshot(model, g, queries, carry)
    match = [i for i in range(len(queries))
             if (int(queries[i, 0]), int(queries[i, 1]), int(queries[i, 2])) == (s, r, o)]
    if not match:
        raise ContractError(f"query {query} not found in snapshot {t_q}")
    others = [c for c in co_true_answers(g, (lo, hi)).get((s, r, t_q), ()) if c != o]
    raw, filtered = rank_from_scores(out.logits.values[match[0]], o, others)
    return RankResult(subject=s, relation=r, answer=o, timestamp=t_q, raw=raw, filtered=filtered)


# ---------------------------------------------------------------------------
# Emergence statistics and collapse diagnostics


@dataclass
class EmergenceStats:
    cumulative_entities: list[int]   # per timestamp, entities seen so far
    emerging_count: int
    appearing_count: int

    @property
    def emerging_fraction(self) -> float:
        return self.emerging_count / self.appearing_count if self.appearing_count else 0.0


def emergence_stats(g: TemporalKG, split: Split) -> EmergenceStats:
    first = first_appearance(g)
    counts = []
    seen = 0
    per_t = np.zeros(g.num_timestamps, dtype=int)
    for t in first.values():
        per_t[t] += 1
    for t in range(g.num_timestamps):
        seen += int(per_t[t])
        counts.append(seen)
    lo, hi = split.test
    emerging = sum(1 for t in first.values() if lo <= t < hi)
    return EmergenceStats(cumulative_entities=counts, emerging_count=emerging,
                          appearing_count=len(first))


def generalized_spread(points: np.ndarray) -> float:
    """Geometric mean of principal-axis standard deviations: det(cov)^(1/2d).

    Eigenvalues are clamped below at 1e-8 so near-collinear sets stay
    finite; computed in log space.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError(f"generalized_spread needs >= 2 points, got shape {x.shape}")
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    eigs = np.clip(np.linalg.eigvalsh(cov), 1e-8, None)
    return float(np.exp(np.log(eigs).sum() / (2.0 * x.shape[1])))


def collapse_ratio(emerging_points: np.ndarray, reference_points: np.ndarray) -> float:
    """Spread of the emerging set relative to a reference set; < 1 means collapse."""
    return generalized_spread(emerging_points) / generalized_spread(reference_points)


def principal_projection(points: np.ndarray) -> np.ndarray:
    """Top-2 principal-component coordinates of the centered points."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError(f"projection needs >= 2 points, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:2]
    if axes.shape[0] < 2:
        axes = np.vstack([axes, np.zeros((2 - axes.shape[0], x.shape[1]))])
    return centered @ axes.T


def emit_projection(points: np.ndarray, labels, path: str, ids=None) -> None:
    """Write `entity_id label x y` rows of the 2-D principal projection."""
    coords = principal_projection(points)
    if ids is None:
        ids = range(len(coords))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("entity_id label x y\n")
        for ident, label, (x, y) in zip(ids, labels, coords):
            fh.write(f"{ident} {label} {x:.10g} {y:.10g}\n")


def expected_random_mrr(n_candidates: int) -> float:
    """Mean reciprocal rank of a uniform-random scorer over n candidates."""
    return float((1.0 / np.arange(1, n_candidates + 1)).sum() / n_candidates)
