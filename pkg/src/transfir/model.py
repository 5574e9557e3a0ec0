"""Model assembly and the per-snapshot forward pass shared by training and eval.

One snapshot step runs the full pipeline for all queries at a timestamp:
nearest-codeword assignment, chain construction and encoding, cluster
pooling into dynamic prototypes, gated transfer onto every entity, and
convolutional scoring of all candidates. Under an active tape the same
code builds the differentiable graph; without one it is plain inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from . import codebook as cb
from .autodiff import Tensor
from .chains import build_chains_for_snapshot
from .data import TemporalKG, init_relation_embeddings
from .encoder import EncoderParams, encode_chains, fuse_tokens, pooled_attention
from .errors import ConfigError, ContractError
from .scorer import ScorerParams, score_batch
from .transfer import DynamicPrototypes, TransferParams, pool_from_matrix, transfer_all


@dataclass
class Hyperparams:
    codebook_size: int = 50
    chain_len: int = 30              # top-k retained interactions per chain
    window: int = 10                 # lookback horizon in snapshots
    dim: int = 768
    layers: int = 2
    heads: int = 4
    codebook_weight: float = 1.0     # pull codewords toward assigned embeddings
    commitment_weight: float = 0.25  # commitment term (value-only on frozen embeddings)
    cluster_loss_weight: float = 1.0 # weight of the clustering objective in the total loss
    lr: float = 1e-3
    epochs: int = 30
    seed: int = 0
    transfer_scope: str = "all"      # "all" | "non-query"
    conv_channels: int = 50
    kernel_width: int = 3
    cache_assignments: bool = False  # reuse cluster assignments within an epoch
    patience: int = 5
    grad_clip: float = 1.0

    def validate(self) -> None:
        if self.codebook_size < 1 or self.chain_len < 1 or self.window < 1:
            raise ConfigError("codebook_size, chain_len and window must be >= 1")
        if self.dim < 1 or self.layers < 1 or self.layers > 4:
            raise ConfigError(f"dim must be >= 1 and layers in 1..4, got dim={self.dim} layers={self.layers}")
        if self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide dim ({self.dim})")
        if min(self.codebook_weight, self.commitment_weight) <= 0:
            raise ConfigError("clustering loss weights must be positive")
        if self.cluster_loss_weight < 0 or self.lr <= 0 or self.epochs < 0:
            raise ConfigError("cluster_loss_weight >= 0, lr > 0 and epochs >= 0 required")
        if self.transfer_scope not in ("all", "non-query"):
            raise ConfigError(f"transfer_scope must be 'all' or 'non-query', got {self.transfer_scope!r}")
        if self.conv_channels < 1 or self.kernel_width % 2 == 0:
            raise ConfigError("conv_channels >= 1 and odd kernel_width required")

    def to_meta(self) -> dict[str, str]:
        return {f.name: str(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_meta(cls, meta: dict[str, str]) -> "Hyperparams":
        kwargs = {}
        for f in fields(cls):
            if f.name not in meta:
                continue
            raw = meta[f.name]
            if f.type == "bool":
                kwargs[f.name] = raw == "True"
            elif f.type == "int":
                kwargs[f.name] = int(raw)
            elif f.type == "float":
                kwargs[f.name] = float(raw)
            else:
                kwargs[f.name] = raw
        return cls(**kwargs)


class Model:
    """All trainable state plus the frozen entity table."""

    def __init__(self, entity_matrix: np.ndarray, num_relations: int, hp: Hyperparams):
        hp.validate()
        entity_matrix = np.asarray(entity_matrix, dtype=np.float64)
        if entity_matrix.ndim != 2 or entity_matrix.shape[1] != hp.dim:
            raise ConfigError(f"entity matrix {entity_matrix.shape} does not match dim {hp.dim}")
        if hp.codebook_size > entity_matrix.shape[0]:
            raise ConfigError(f"codebook_size {hp.codebook_size} exceeds {entity_matrix.shape[0]} entities")
        self.hp = hp
        self.num_base_relations = num_relations
        rng = np.random.default_rng(hp.seed)
        self.entities = ad.constant(entity_matrix)
        self.relations = init_relation_embeddings(num_relations, hp.dim, rng)
        self.encoder = EncoderParams.init(hp.dim, hp.layers, hp.heads, rng)
        self.transfer = TransferParams.init(hp.dim, rng)
        self.scorer = ScorerParams.init(hp.dim, hp.conv_channels, hp.kernel_width, rng)
        self.codebook = cb.init_codebook(entity_matrix, hp.codebook_size, rng,
                                         alpha=hp.codebook_weight, beta=hp.commitment_weight)

    @property
    def num_entities(self) -> int:
        return self.entities.values.shape[0]

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = [("relations", self.relations)]
        out.extend(self.encoder.named())
        out.extend(self.transfer.named())
        out.extend(self.scorer.named())
        out.append(("codebook.codewords", self.codebook.codewords))
        return out

    def assignments(self) -> np.ndarray:
        return cb.assign(self.codebook, self.entities)

    def zero_prototypes(self) -> np.ndarray:
        return np.zeros((self.hp.codebook_size, self.hp.dim))


@dataclass
class SnapshotOutput:
    logits: Tensor | None            # (B, |E|) or None when the snapshot has no queries
    transferred: Tensor              # (|E|, d)
    prototypes: DynamicPrototypes
    proto_carry: np.ndarray          # (K, d) values for the next timestamp
    assignments: np.ndarray
    empty_chains: int                # queries with zero history in the window


def run_snapshot(model: Model, g: TemporalKG, queries: np.ndarray,
                 proto_carry: np.ndarray, *, assignments: np.ndarray | None = None,
                 ablate_transfer: bool = False) -> SnapshotOutput:
    """Forward pass for all `queries` (rows (subject, relation, object, t)) at one timestamp.

    Chain selection and cluster assignment are computed from current
    parameter values and held fixed inside the differentiable graph;
    gradients flow through encodings, prototypes, gates and scores.
    """
    hp = model.hp
    queries = np.asarray(queries, dtype=np.intp).reshape(-1, 4)
    pi = assignments if assignments is not None else model.assignments()

    rep_matrix = None
    rep_entities = np.empty(0, dtype=np.intp)
    empty_chains = 0
    if len(queries):
        t = int(queries[0, 3])
        if (queries[:, 3] != t).any():
            raise ContractError("snapshot queries must share one timestamp")
        # identical (subject, relation) queries share one chain encoding;
        # per-instance rows are restored by gather afterwards
        uniq, inverse = np.unique(queries[:, :2], axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)  # numpy 2.0/2.1 return a column here
        chain_list = build_chains_for_snapshot(
            g, [(int(s), int(r), t) for s, r in uniq],
            hp.window, hp.chain_len, model.relations)
        live = [(i, c) for i, c in enumerate(chain_list) if len(c)]
        if live:
            items = [it for _, c in live for it in c.items]
            sizes = [len(c) for _, c in live]
            token_query_rel = np.repeat([c.relation for _, c in live], sizes)
            tokens = fuse_tokens(
                [it.subject for it in items], [it.relation for it in items],
                [it.object for it in items], [it.time_gap for it in items],
                model.entities, model.relations, model.encoder)
            states = encode_chains(tokens, sizes, model.encoder)
            rel_rows = ad.take_rows(model.relations, token_query_rel)
            unique_reps = pooled_attention(states, rel_rows, sizes, model.encoder)
            rep_row_of_unique = np.full(len(uniq), -1, dtype=np.intp)
            rep_row_of_unique[[i for i, _ in live]] = np.arange(len(live))
            instance_rows = rep_row_of_unique[inverse]
            live_instances = np.nonzero(instance_rows >= 0)[0]
            empty_chains = len(queries) - len(live_instances)
            rep_matrix = ad.take_rows(unique_reps, instance_rows[live_instances])
            rep_entities = queries[live_instances, 0]
        else:
            empty_chains = len(queries)

    if ablate_transfer:
        prototypes = DynamicPrototypes(values=ad.constant(model.zero_prototypes()),
                                       populated=np.zeros(hp.codebook_size, dtype=bool))
    else:
        prototypes = pool_from_matrix(rep_matrix, rep_entities, pi, hp.codebook_size, proto_carry)

    skip_mask = None
    if hp.transfer_scope == "non-query" and len(queries):
        skip_mask = np.zeros(model.num_entities, dtype=bool)
        skip_mask[queries[:, 0]] = True
    transferred = transfer_all(model.entities, prototypes, pi, model.transfer, skip_mask)

    logits = None
    if len(queries):
        subj_rows = ad.take_rows(transferred, uniq[:, 0])
        rel_rows = ad.take_rows(model.relations, uniq[:, 1])
        logits = ad.take_rows(score_batch(subj_rows, rel_rows, transferred, model.scorer), inverse)

    return SnapshotOutput(logits=logits, transferred=transferred, prototypes=prototypes,
                          proto_carry=prototypes.values.values.copy(), assignments=pi,
                          empty_chains=empty_chains)


def snapshot_queries(g: TemporalKG, t: int) -> np.ndarray:
    """Queries at timestamp t: one row (subject, relation, object, t) per fact."""
    snap = g.snapshots[t] if t < g.num_timestamps else []
    if not snap:
        return np.empty((0, 4), dtype=np.intp)
    return np.array([(q.subject, q.relation, q.object, t) for q in snap], dtype=np.intp)
