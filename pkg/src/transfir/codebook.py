"""Vector-quantized clustering of entities over their frozen text embeddings.

Codewords are trainable prototypes; each entity maps to its nearest one.
The training objective pulls codewords toward their assigned embeddings
(stop-gradient on the embeddings) plus a commitment term pulling
embeddings toward codewords. With frozen entity embeddings the
commitment term carries value but no trainable gradient; it is still
computed and weighted for fidelity to the joint objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


@dataclass
class Codebook:
    codewords: Tensor                # (K, d), trainable
    alpha: float = 1.0               # weight on the codeword-pull term
    beta: float = 0.25               # weight on the commitment term

    def __post_init__(self):
        if self.codewords.values.ndim != 2 or self.codewords.values.shape[0] < 1:
            raise ConfigError(f"codewords must be a non-empty matrix, got {self.codewords.values.shape}")
        if self.alpha <= 0 or self.beta <= 0:
            raise ConfigError(f"loss weights must be positive, got alpha={self.alpha} beta={self.beta}")
        if not np.isfinite(self.codewords.values).all():
            raise ConfigError("codewords contain non-finite values")

    @property
    def size(self) -> int:
        return self.codewords.values.shape[0]

    @property
    def dim(self) -> int:
        return self.codewords.values.shape[1]


def _as_matrix(embeddings) -> np.ndarray:
    m = embeddings.values if isinstance(embeddings, Tensor) else np.asarray(embeddings, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"embeddings must be (n, d), got {m.shape}")
    return m


def assign(cb: Codebook, embeddings) -> np.ndarray:
    """Nearest codeword per row (squared Euclidean), ties to the lowest index."""
    emb = _as_matrix(embeddings)
    if emb.shape[1] != cb.dim:
        raise ShapeError(f"embedding dim {emb.shape[1]} != codeword dim {cb.dim}")
    cw = cb.codewords.values
    out = np.empty(emb.shape[0], dtype=np.intp)
    # chunked so |E| x K x d never gets large
    step = max(1, 2_000_000 // max(1, cb.size * cb.dim))
    for lo in range(0, emb.shape[0], step):
        block = emb[lo:lo + step]
        diff = block[:, None, :] - cw[None, :, :]
        out[lo:lo + block.shape[0]] = np.argmin((diff * diff).sum(axis=2), axis=1)
    return out


def codebook_loss(cb: Codebook, embeddings, pi: np.ndarray) -> Tensor:
    """Sum of squared distances; gradient flows into codewords only."""
    emb = _as_matrix(embeddings)
    selected = ad.take_rows(cb.codewords, pi)
    diff = ad.sub(selected, ad.constant(emb))
    return ad.sum_all(ad.mul(diff, diff))


def commitment_loss(cb: Codebook, embeddings, pi: np.ndarray) -> Tensor:
    """Same value as codebook_loss, with the gradient side reserved for embeddings.

    The selected codewords are detached, so nothing trainable receives a
    gradient here when the embeddings are frozen constants.
    """
    emb = embeddings if isinstance(embeddings, Tensor) else ad.constant(_as_matrix(embeddings))
    selected = ad.constant(cb.codewords.values[np.asarray(pi, dtype=np.intp)])
    diff = ad.sub(emb, selected)
    return ad.sum_all(ad.mul(diff, diff))


def codebook_objective(cb: Codebook, embeddings, pi: np.ndarray) -> Tensor:
    return ad.add(ad.scale(codebook_loss(cb, embeddings, pi), cb.alpha),
                  ad.scale(commitment_loss(cb, embeddings, pi), cb.beta))


def farthest_point_indices(emb: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy seeding: first uniform, each next maximizing min distance to chosen."""
    n = emb.shape[0]
    chosen = np.empty(k, dtype=np.intp)
    chosen[0] = rng.integers(n)
    d2 = ((emb - emb[chosen[0]]) ** 2).sum(axis=1)
    for i in range(1, k):
        d2[chosen[:i]] = -1.0  # never re-pick
        chosen[i] = np.argmax(d2)
        d2 = np.minimum(d2, ((emb - emb[chosen[i]]) ** 2).sum(axis=1))
    return chosen


def init_codebook(embeddings, k: int, seed: int | np.random.Generator,
                  alpha: float = 1.0, beta: float = 0.25) -> Codebook:
    """Codewords initialized to k distinct entity embeddings (farthest-point style)."""
    emb = _as_matrix(embeddings)
    if k < 1 or k > emb.shape[0]:
        raise ConfigError(f"codebook size {k} not in [1, {emb.shape[0]}]")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx = farthest_point_indices(emb, k, rng)
    return Codebook(codewords=ad.parameter(emb[idx].copy()), alpha=alpha, beta=beta)


def dead_code_count(pi: np.ndarray, k: int) -> int:
    """Codewords with no assigned entity (diagnostic; no resets are performed)."""
    return int(k - np.unique(np.asarray(pi)).size)
