"""Interaction chains: windowed history collection and relation-similarity filtering.

A chain for query (e_q, r_q, t_q) holds the facts touching e_q inside the
lookback window [t_q - T, t_q), filtered down to the k items whose
relations are most cosine-similar to r_q, kept in chronological order.
Emerging entities at their first appearance naturally yield empty chains.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .data import TemporalKG
from .errors import ConfigError, ContractError


@dataclass(frozen=True)
class ChainItem:
    subject: int
    relation: int
    object: int
    timestamp: int
    query_is_subject: bool
    time_gap: int                    # t_q - t_i, always >= 1

    def counterpart(self) -> int:
        return self.object if self.query_is_subject else self.subject


@dataclass
class InteractionChain:
    entity: int
    relation: int
    timestamp: int
    items: list[ChainItem]

    def __len__(self) -> int:
        return len(self.items)


class HistoryIndex:
    """Per-entity fact lists sorted by (timestamp, relation, counterpart)."""

    def __init__(self, g: TemporalKG):
        per_entity: dict[int, list[tuple[int, int, int, int, int]]] = {}
        for t, snap in enumerate(g.snapshots):
            for q in snap:
                per_entity.setdefault(q.subject, []).append((t, q.relation, q.object, q.subject, q.object))
                if q.object != q.subject:
                    per_entity.setdefault(q.object, []).append((t, q.relation, q.subject, q.subject, q.object))
        self._entries = {}
        self._times = {}
        for e, rows in per_entity.items():
            rows.sort(key=lambda r: (r[0], r[1], r[2]))
            self._entries[e] = rows
            self._times[e] = [r[0] for r in rows]

    def window(self, entity: int, t_q: int, horizon: int) -> list[ChainItem]:
        rows = self._entries.get(entity)
        if not rows:
            return []
        times = self._times[entity]
        lo = bisect.bisect_left(times, max(0, t_q - horizon))
        hi = bisect.bisect_left(times, t_q)
        return [ChainItem(subject=s, relation=r, object=o, timestamp=t,
                          query_is_subject=(s == entity), time_gap=t_q - t)
                for t, r, _, s, o in rows[lo:hi]]


def history_index(g: TemporalKG) -> HistoryIndex:
    """Index cached on the graph; graphs are immutable after construction."""
    if g._history_index is None:
        g._history_index = HistoryIndex(g)
    return g._history_index


def collect_window(g: TemporalKG, entity: int, t_q: int, horizon: int) -> list[ChainItem]:
    """All facts touching `entity` in [t_q - horizon, t_q), chronological order."""
    if horizon < 1:
        raise ConfigError(f"window size must be >= 1, got {horizon}")
    return history_index(g).window(entity, t_q, horizon)


def relation_cosines(relation_embeddings, query_relation: int, relation_ids: np.ndarray) -> np.ndarray:
    """Cosine similarity of each relation row against the query relation row.

    Zero-norm rows get similarity 0 by convention.
    """
    mat = relation_embeddings.values if isinstance(relation_embeddings, Tensor) else np.asarray(relation_embeddings)
    q = mat[query_relation]
    qn = np.linalg.norm(q)
    rows = mat[np.asarray(relation_ids, dtype=np.intp)]
    norms = np.linalg.norm(rows, axis=1)
    denom = norms * qn
    out = np.zeros(len(rows))
    ok = denom > 0
    out[ok] = (rows[ok] @ q) / denom[ok]
    return out


def topk_by_relation_sim(items: list[ChainItem], query: tuple[int, int, int],
                         relation_embeddings, k: int) -> InteractionChain:
    """Keep the k items most relation-similar to the query, re-sorted in time.

    Similarity ties prefer the more recent timestamp, then the lower
    relation id; remaining ties fall back to the original chronological
    position so selection is a total order.
    """
    if k <= 0:
        raise ConfigError(f"chain length k must be positive, got {k}")
    entity, relation, t_q = query
    if len(items) > k:
        sims = relation_cosines(relation_embeddings, relation, np.array([it.relation for it in items]))
        order = sorted(range(len(items)),
                       key=lambda i: (-sims[i], -items[i].timestamp, items[i].relation, i))
        keep = order[:k]
    else:
        keep = range(len(items))
    keep = sorted(keep, key=lambda i: (items[i].timestamp, items[i].relation,
                                       items[i].counterpart(), i))
    return InteractionChain(entity=entity, relation=relation, timestamp=t_q,
                            items=[items[i] for i in keep])


def build_chain(g: TemporalKG, query: tuple[int, int, int], horizon: int, k: int,
                relation_embeddings) -> InteractionChain:
    entity, _, t_q = query
    return topk_by_relation_sim(collect_window(g, entity, t_q, horizon), query, relation_embeddings, k)


def build_chains_for_snapshot(g: TemporalKG, queries: list[tuple[int, int, int]],
                              horizon: int, k: int, relation_embeddings) -> list[InteractionChain]:
    """One chain per query; all queries must share a timestamp."""
    if queries:
        t0 = queries[0][2]
        if any(q[2] != t0 for q in queries):
            raise ContractError("queries of one snapshot must share a timestamp")
    return [build_chain(g, q, horizon, k, relation_embeddings) for q in queries]
