"""Chain encoding: component transforms, token fusion, transformer, guided pooling.

Each chain item (s, r, o, dt) becomes one token: the frozen entity rows,
the trainable relation row and a sinusoidal time-gap code pass through
per-component affine maps, get concatenated and fused through tanh. A
pre-norm transformer contextualizes the token sequence; a query-relation
guided attention pools it into a single vector per chain.

Temporal order enters only through the time-gap code inside each token,
so the transformer itself stays permutation-equivariant. Chains of
length zero (emerging entities at first appearance) pool to the zero
vector with an explicit empty flag.

Batched variants run every chain of a snapshot through one transformer
call using block-diagonal attention masks; they reproduce the per-chain
results exactly and exist purely for speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .chains import ChainItem
from .errors import ConfigError, ContractError

MASKED = -1e30  # pre-softmax score for cross-chain attention pairs


def embed_time_gap(gap: int, dim: int) -> np.ndarray:
    """Sinusoidal code: entry 2j = sin(gap / 10000^(2j/dim)), 2j+1 = cos(same)."""
    if gap <= 0:
        raise ContractError(f"time gap must be >= 1, got {gap}")
    return time_gap_matrix([gap], dim)[0]


def time_gap_matrix(gaps, dim: int) -> np.ndarray:
    gaps = np.asarray(gaps, dtype=np.float64)
    if gaps.size and gaps.min() <= 0:
        raise ContractError("time gaps must be >= 1")
    half = np.arange((dim + 1) // 2)
    angles = gaps[:, None] / np.power(10000.0, 2.0 * half / dim)[None, :]
    out = np.empty((len(gaps), dim))
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles[:, : dim // 2])
    return out


@dataclass
class TransformerLayerParams:
    ln1_gain: Tensor
    ln1_shift: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor                       # no key bias: softmax shift-invariance makes it inert
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ln2_gain: Tensor
    ln2_shift: Tensor
    ff1_w: Tensor
    ff1_b: Tensor
    ff2_w: Tensor
    ff2_b: Tensor


@dataclass
class EncoderParams:
    """All trainable pieces of the chain encoder."""

    phi_subj_w: Tensor
    phi_subj_b: Tensor
    phi_rel_w: Tensor
    phi_rel_b: Tensor
    phi_time_w: Tensor
    phi_time_b: Tensor
    fuse_w: Tensor                   # (4d, d)
    fuse_b: Tensor
    layers: list[TransformerLayerParams]
    heads: int
    attn_score_w: Tensor             # (d, 1)
    attn_state_w: Tensor             # (d, d)
    attn_query_w: Tensor             # (d, d)

    @property
    def dim(self) -> int:
        return self.fuse_w.values.shape[1]

    @classmethod
    def init(cls, dim: int, layers: int, heads: int, rng: np.random.Generator) -> "EncoderParams":
        if layers < 0 or layers > 4:
            raise ConfigError(f"transformer depth must be in 0..4, got {layers}")
        if heads < 1 or dim % heads != 0:
            raise ConfigError(f"heads ({heads}) must divide dim ({dim})")

        def mat(n_in, n_out):
            return ad.parameter(rng.normal(0.0, math.sqrt(2.0 / (n_in + n_out)), size=(n_in, n_out)))

        def vec(n):
            return ad.parameter(np.zeros(n))

        layer_params = []
        for _ in range(layers):
            layer_params.append(TransformerLayerParams(
                ln1_gain=ad.parameter(np.ones(dim)), ln1_shift=vec(dim),
                wq=mat(dim, dim), bq=vec(dim), wk=mat(dim, dim),
                wv=mat(dim, dim), bv=vec(dim), wo=mat(dim, dim), bo=vec(dim),
                ln2_gain=ad.parameter(np.ones(dim)), ln2_shift=vec(dim),
                ff1_w=mat(dim, 4 * dim), ff1_b=vec(4 * dim),
                ff2_w=mat(4 * dim, dim), ff2_b=vec(dim),
            ))
        return cls(
            phi_subj_w=mat(dim, dim), phi_subj_b=vec(dim),
            phi_rel_w=mat(dim, dim), phi_rel_b=vec(dim),
            phi_time_w=mat(dim, dim), phi_time_b=vec(dim),
            fuse_w=mat(4 * dim, dim), fuse_b=vec(dim),
            layers=layer_params, heads=heads,
            attn_score_w=mat(dim, 1), attn_state_w=mat(dim, dim), attn_query_w=mat(dim, dim),
        )

    def named(self):
        yield "encoder.phi_subj_w", self.phi_subj_w
        yield "encoder.phi_subj_b", self.phi_subj_b
        yield "encoder.phi_rel_w", self.phi_rel_w
        yield "encoder.phi_rel_b", self.phi_rel_b
        yield "encoder.phi_time_w", self.phi_time_w
        yield "encoder.phi_time_b", self.phi_time_b
        yield "encoder.fuse_w", self.fuse_w
        yield "encoder.fuse_b", self.fuse_b
        for i, layer in enumerate(self.layers):
            for name in ("ln1_gain", "ln1_shift", "wq", "bq", "wk", "wv", "bv",
                         "wo", "bo", "ln2_gain", "ln2_shift", "ff1_w", "ff1_b", "ff2_w", "ff2_b"):
                yield f"encoder.layer{i}.{name}", getattr(layer, name)
        yield "encoder.attn_score_w", self.attn_score_w
        yield "encoder.attn_state_w", self.attn_state_w
        yield "encoder.attn_query_w", self.attn_query_w


# ---------------------------------------------------------------------------
# Token fusion


def fuse_tokens(subjects, relations, objects, gaps, entity_table: Tensor,
                relation_table: Tensor, params: EncoderParams) -> Tensor:
    """Token matrix (n, d) for n chain items given by parallel id arrays.

    Entity rows come from the frozen table and contribute no gradient;
    relation rows and every transform are trainable.
    """
    s = ad.linear(ad.take_rows(entity_table, subjects), params.phi_subj_w, params.phi_subj_b)
    r = ad.linear(ad.take_rows(relation_table, relations), params.phi_rel_w, params.phi_rel_b)
    o = ad.linear(ad.take_rows(entity_table, objects), params.phi_subj_w, params.phi_subj_b)
    tau = ad.linear(ad.constant(time_gap_matrix(gaps, params.dim)), params.phi_time_w, params.phi_time_b)
    return ad.tanh(ad.linear(ad.concat_cols([s, r, o, tau]), params.fuse_w, params.fuse_b))


def fuse_token(item: ChainItem, entity_table: Tensor, relation_table: Tensor,
               params: EncoderParams) -> Tensor:
    return fuse_tokens([item.subject], [item.relation], [item.object], [item.time_gap],
                       entity_table, relation_table, params)


# ---------------------------------------------------------------------------
# Transformer stack


def _attention_block(x: Tensor, layer: TransformerLayerParams, heads: int,
                     mask: Tensor | None) -> Tensor:
    d = x.values.shape[1]
    dh = d // heads
    q = ad.linear(x, layer.wq, layer.bq)
    k = ad.matmul(x, layer.wk)
    v = ad.linear(x, layer.wv, layer.bv)
    outs = []
    for h in range(heads):
        lo, hi = h * dh, (h + 1) * dh
        scores = ad.scale(ad.matmul(ad.slice_cols(q, lo, hi), ad.transpose(ad.slice_cols(k, lo, hi))),
                          1.0 / math.sqrt(dh))
        if mask is not None:
            scores = ad.add(scores, mask)
        outs.append(ad.matmul(ad.softmax_rows(scores), ad.slice_cols(v, lo, hi)))
    return ad.linear(ad.concat_cols(outs), layer.wo, layer.bo)


def _transformer(x: Tensor, params: EncoderParams, mask: Tensor | None) -> Tensor:
    for layer in params.layers:
        h = ad.layer_norm(x, layer.ln1_gain, layer.ln1_shift)
        x = ad.add(x, _attention_block(h, layer, params.heads, mask))
        h2 = ad.layer_norm(x, layer.ln2_gain, layer.ln2_shift)
        ff = ad.linear(ad.relu(ad.linear(h2, layer.ff1_w, layer.ff1_b)), layer.ff2_w, layer.ff2_b)
        x = ad.add(x, ff)
    return x


def encode_chain(tokens: Tensor, params: EncoderParams) -> Tensor:
    """Contextual states (n, d) for one chain; n must be >= 1."""
    if tokens.values.ndim != 2 or tokens.values.shape[0] < 1:
        raise ContractError(f"encode_chain needs at least one token, got shape {tokens.values.shape}")
    return _transformer(tokens, params, mask=None)


def _block_owner(sizes: list[int]) -> np.ndarray:
    return np.repeat(np.arange(len(sizes)), sizes)


def encode_chains(tokens: Tensor, sizes: list[int], params: EncoderParams) -> Tensor:
    """All chains of a snapshot in one pass, isolated by a block-diagonal mask."""
    if sum(sizes) != tokens.values.shape[0] or any(n < 1 for n in sizes):
        raise ContractError(f"chain sizes {sizes} do not partition {tokens.values.shape[0]} tokens")
    owner = _block_owner(sizes)
    mask = ad.constant(np.where(owner[:, None] == owner[None, :], 0.0, MASKED))
    return _transformer(tokens, params, mask)


# ---------------------------------------------------------------------------
# Relation-guided pooling


def relation_guided_attention(states: Tensor, query_rel: Tensor,
                              params: EncoderParams) -> tuple[Tensor, bool]:
    """Pool chain states into one vector, guided by the query relation row.

    Returns (vector (1, d), empty_flag). A zero-length chain yields the
    zero vector and empty_flag=True so downstream pooling can skip it.
    """
    n = states.values.shape[0]
    if n == 0:
        return ad.constant(np.zeros((1, params.dim))), True
    u = ad.tanh(ad.add_rowvec(ad.matmul(states, params.attn_state_w),
                              ad.matmul(query_rel, params.attn_query_w)))
    weights = ad.softmax_rows(ad.transpose(ad.matmul(u, params.attn_score_w)))
    return ad.matmul(weights, states), False


def pooled_attention(states: Tensor, query_rel_rows: Tensor, sizes: list[int],
                     params: EncoderParams) -> Tensor:
    """Batched pooling: one row per chain, matching relation_guided_attention.

    `query_rel_rows` holds each token's own query-relation embedding, so
    chains with different query relations batch together.
    """
    if sum(sizes) != states.values.shape[0]:
        raise ContractError(f"chain sizes {sizes} do not partition {states.values.shape[0]} states")
    u = ad.tanh(ad.add(ad.matmul(states, params.attn_state_w),
                       ad.matmul(query_rel_rows, params.attn_query_w)))
    scores = ad.transpose(ad.matmul(u, params.attn_score_w))          # (1, N)
    owner = _block_owner(sizes)
    mask = ad.constant(np.where(owner[None, :] == np.arange(len(sizes))[:, None], 0.0, MASKED))
    weights = ad.softmax_rows(ad.add(ad.repeat_rows(scores, len(sizes)), mask))
    return ad.matmul(weights, states)
