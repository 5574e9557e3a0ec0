"""Cluster pooling of chain representations and gated pattern transfer.

Per timestamp, the chain vectors of that snapshot's queries are averaged
within each codebook cluster, giving one dynamic prototype per cluster.
Every entity then receives its cluster's prototype through a sigmoid
gate: transferred = frozen + gate * prototype (elementwise). Clusters
with no contributing query keep their previous prototype (zero at the
start of an epoch/evaluation) so sparse snapshots do not wipe cluster
state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ShapeError


@dataclass
class TransferParams:
    gate_w: Tensor                   # (2d, d)
    gate_b: Tensor                   # (d,)

    @classmethod
    def init(cls, dim: int, rng: np.random.Generator) -> "TransferParams":
        w = rng.normal(0.0, math.sqrt(2.0 / (3 * dim)), size=(2 * dim, dim))
        return cls(gate_w=ad.parameter(w), gate_b=ad.parameter(np.zeros(dim)))

    def named(self):
        yield "transfer.gate_w", self.gate_w
        yield "transfer.gate_b", self.gate_b


@dataclass
class DynamicPrototypes:
    values: Tensor                   # (K, d); rows mix fresh means and carried constants
    populated: np.ndarray            # (K,) bool: cluster had >= 1 non-empty chain


def cluster_pool(records: list[tuple[int, Tensor, bool]], assignments: np.ndarray,
                 k: int, carry: np.ndarray | None = None) -> DynamicPrototypes:
    """Mean chain vector per cluster from (entity, vector, empty_flag) records.

    Every record with empty_flag=False contributes once, so an entity
    queried several times in a snapshot contributes each of its chain
    vectors. Unpopulated clusters keep `carry` (zeros when absent).
    """
    live = [(e, v) for e, v, empty in records if not empty]
    if live:
        matrix = ad.concat_rows([v for _, v in live])
        entities = np.array([e for e, _ in live], dtype=np.intp)
        return pool_from_matrix(matrix, entities, assignments, k, carry)
    return pool_from_matrix(None, np.empty(0, dtype=np.intp), assignments, k, carry)


def pool_from_matrix(rep_matrix: Tensor | None, rep_entities: np.ndarray,
                     assignments: np.ndarray, k: int,
                     carry: np.ndarray | None = None) -> DynamicPrototypes:
    """Grouped mean over rows of `rep_matrix`, grouped by the entity's cluster."""
    if rep_matrix is not None:
        dim = rep_matrix.values.shape[1]
    elif carry is not None:
        dim = carry.shape[1]
    else:
        raise ShapeError("pool_from_matrix: cannot infer dimension without reps or carry")
    if carry is None:
        carry = np.zeros((k, dim))
    clusters = assignments[rep_entities] if rep_entities.size else np.empty(0, dtype=np.intp)
    rows = []
    populated = np.zeros(k, dtype=bool)
    for c in range(k):
        members = np.nonzero(clusters == c)[0]
        if members.size:
            rows.append(ad.mean_rows(ad.take_rows(rep_matrix, members)))
            populated[c] = True
        else:
            rows.append(ad.constant(carry[c:c + 1]))
    return DynamicPrototypes(values=ad.concat_rows(rows), populated=populated)


_GATE_MARGIN = 1e-12


def transfer_gate(frozen: Tensor, prototype_rows: Tensor, params: TransferParams) -> Tensor:
    """Elementwise gate: sigmoid(affine([frozen || prototype])).

    The sigmoid is squeezed into (margin, 1-margin) so the gate stays
    strictly inside the open unit interval even where float64 would
    round a saturated sigmoid to exactly 0 or 1.
    """
    if frozen.values.shape != prototype_rows.values.shape:
        raise ShapeError(f"transfer_gate: shapes {frozen.values.shape} and "
                         f"{prototype_rows.values.shape} differ")
    raw = ad.sigmoid(ad.linear(ad.concat_cols([frozen, prototype_rows]),
                               params.gate_w, params.gate_b))
    return ad.add(ad.scale(raw, 1.0 - 2.0 * _GATE_MARGIN),
                  ad.constant(np.full(raw.values.shape, _GATE_MARGIN)))


def apply_transfer(frozen: Tensor, gate: Tensor, prototype_rows: Tensor) -> Tensor:
    """transferred = frozen + gate * prototype (elementwise)."""
    return ad.add(frozen, ad.mul(gate, prototype_rows))


def transfer_all(entity_table: Tensor, prototypes: DynamicPrototypes,
                 assignments: np.ndarray, params: TransferParams,
                 skip_mask: np.ndarray | None = None) -> Tensor:
    """Transferred rows for every entity; `skip_mask` rows keep the frozen value.

    The mask implements the alternative mode that leaves the snapshot's
    query entities untouched.
    """
    selected = ad.take_rows(prototypes.values, assignments)
    drift = ad.mul(transfer_gate(entity_table, selected, params), selected)
    if skip_mask is not None:
        keep = ad.constant(np.where(skip_mask[:, None], 0.0, 1.0) *
                           np.ones((1, entity_table.values.shape[1])))
        drift = ad.mul(drift, keep)
    return ad.add(entity_table, drift)
