"""Convolutional decoder scoring every candidate entity for a query.

The (transferred) subject row and the relation row stack into a 2 x d
image, pass through C width-w convolutions with ReLU, flatten, project
back to d with another ReLU, and the result is dotted against every
candidate row. Raw logits feed the cross-entropy softmax during
training; a sigmoid is applied only when a standalone probability is
asked for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError


@dataclass
class ScorerParams:
    kernels: Tensor                  # (C, 2, w), w odd
    proj_w: Tensor                   # (C*d, d)
    proj_b: Tensor                   # (d,)

    def __post_init__(self):
        c, two, w = self.kernels.values.shape
        if two != 2 or c < 1:
            raise ConfigError(f"kernels must be (C,2,w) with C >= 1, got {self.kernels.values.shape}")
        if w % 2 == 0:
            raise ConfigError(f"kernel width must be odd, got {w}")

    @property
    def channels(self) -> int:
        return self.kernels.values.shape[0]

    @property
    def width(self) -> int:
        return self.kernels.values.shape[2]

    @property
    def pad(self) -> int:
        return (self.width - 1) // 2

    @classmethod
    def init(cls, dim: int, channels: int, width: int, rng: np.random.Generator) -> "ScorerParams":
        kernels = rng.normal(0.0, math.sqrt(1.0 / (2 * width)), size=(channels, 2, width))
        proj = rng.normal(0.0, math.sqrt(2.0 / (channels * dim + dim)), size=(channels * dim, dim))
        return cls(kernels=ad.parameter(kernels), proj_w=ad.parameter(proj),
                   proj_b=ad.parameter(np.zeros(dim)))

    def named(self):
        yield "scorer.kernels", self.kernels
        yield "scorer.proj_w", self.proj_w
        yield "scorer.proj_b", self.proj_b


def score_batch(subject_rows: Tensor, relation_rows: Tensor, candidates: Tensor,
                params: ScorerParams) -> Tensor:
    """Logits (B, |E|) for B queries against a shared candidate matrix."""
    if subject_rows.values.shape != relation_rows.values.shape:
        raise ShapeError(f"score_batch: subject {subject_rows.values.shape} vs "
                         f"relation {relation_rows.values.shape}")
    b, d = subject_rows.values.shape
    if candidates.values.ndim != 2 or candidates.values.shape[1] != d:
        raise ShapeError(f"score_batch: candidates {candidates.values.shape} do not match dim {d}")
    stacked = ad.stack_pair(subject_rows, relation_rows)              # (B, 2, d)
    conv = ad.relu(ad.conv_rows(stacked, params.kernels, params.pad))  # (B, C, d)
    flat = ad.reshape(conv, (b, params.channels * d))
    projected = ad.relu(ad.linear(flat, params.proj_w, params.proj_b))
    return ad.matmul(projected, ad.transpose(candidates))


def score_all(subject_vec: Tensor, relation_vec: Tensor, candidates: Tensor,
              params: ScorerParams) -> Tensor:
    """Logits over all candidates for one query, as a flat |E|-vector."""
    logits = score_batch(subject_vec, relation_vec, candidates, params)
    return ad.reshape(logits, (candidates.values.shape[0],))


def score_probability(logit: float) -> float:
    """Standalone probability readout for a single logit."""
    return float(ad._sigmoid_values(np.asarray([logit], dtype=np.float64))[0])
