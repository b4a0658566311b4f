"""Scaled dot-product attention in the (d, n) column-position layout.

Logits form an (n_keys, n_queries) grid A = K^T Q / sqrt(d_k); weights are
normalized over the key axis so each query's weights are a probability
distribution, and the output Z = V @ weights makes every output column a
convex combination of value columns. The causal mask lets query t see keys
1..t only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .numerics import Param, ShapeError, Tensor


@dataclass(frozen=True)
class AttentionParams:
    """Query/key/value projections; wq and wk share the key dimension."""

    wq: Param
    wk: Param
    wv: Param

    def __post_init__(self):
        if self.wq.shape != self.wk.shape:
            raise ShapeError(f"wq {self.wq.shape} and wk {self.wk.shape} must match")
        if self.wv.shape[1] != self.wq.shape[1]:
            raise ShapeError("wv must accept the same input dimension as wq/wk")

    @property
    def d_in(self) -> int:
        return self.wq.shape[1]

    @property
    def d_k(self) -> int:
        return self.wq.shape[0]

    @property
    def d_v(self) -> int:
        return self.wv.shape[0]


@dataclass(frozen=True)
class MultiHeadParams:
    """Per-head projections plus the (d_v, d_v) output mix wo."""

    heads: tuple[AttentionParams, ...]
    wo: Param

    def __post_init__(self):
        if not self.heads:
            raise ShapeError("need at least one attention head")
        d_v_total = sum(h.d_v for h in self.heads)
        if self.wo.shape[1] != d_v_total:
            raise ShapeError(
                f"wo expects {self.wo.shape[1]} rows of head output, heads give {d_v_total}"
            )

    @property
    def d_in(self) -> int:
        return self.heads[0].d_in


def _causal_mask(n: int) -> np.ndarray:
    """(keys, queries) grid: 0 where key <= query, -inf above."""
    mask = np.zeros((n, n))
    mask[np.tril_indices(n, k=-1)] = -np.inf
    return mask


def _attend(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None) -> Tensor:
    d_k = k.shape[0]
    logits = nm.mul(nm.matmul(nm.transpose(k), q), 1.0 / np.sqrt(d_k))
    if mask is not None:
        logits = nm.add(logits, nm.constant(mask))
    weights = nm.softmax(logits, axis="cols")
    return nm.matmul(v, weights)


def self_attention(x, p: AttentionParams, masked: bool = False) -> Tensor:
    x = nm.lift(x)
    if x.shape[0] != p.d_in:
        raise ShapeError(f"input rows {x.shape[0]} != projection input {p.d_in}")
    q = nm.matmul(nm.lift(p.wq), x)
    k = nm.matmul(nm.lift(p.wk), x)
    v = nm.matmul(nm.lift(p.wv), x)
    mask = _causal_mask(x.shape[1]) if masked else None
    return _attend(q, k, v, mask)


def masked_self_attention(x, p: AttentionParams) -> Tensor:
    return self_attention(x, p, masked=True)


def cross_attention(x, y, p: AttentionParams) -> Tensor:
    """Queries from x, keys and values from the context y."""
    x, y = nm.lift(x), nm.lift(y)
    if x.shape[0] != y.shape[0]:
        raise ShapeError(f"query rows {x.shape[0]} != context rows {y.shape[0]}")
    if x.shape[0] != p.d_in:
        raise ShapeError(f"input rows {x.shape[0]} != projection input {p.d_in}")
    q = nm.matmul(nm.lift(p.wq), x)
    k = nm.matmul(nm.lift(p.wk), y)
    v = nm.matmul(nm.lift(p.wv), y)
    return _attend(q, k, v, None)


def multi_head(x, p: MultiHeadParams, masked: bool = False, context=None) -> Tensor:
    """Row-concat of per-head outputs, mixed by wo.

    With a context given, every head runs cross-attention against it
    (masking is then ignored, as cross-attention has no causal structure).
    """
    if context is not None:
        outs = [cross_attention(x, context, h) for h in p.heads]
    else:
        outs = [self_attention(x, h, masked=masked) for h in p.heads]
    return nm.matmul(nm.lift(p.wo), nm.concat_rows(outs))


def attention_weights(x, p: AttentionParams, masked: bool = False) -> np.ndarray:
    """The (keys, queries) weight grid, for inspection and tests."""
    x = nm.lift(x)
    q = (p.wq.value @ x.value) / np.sqrt(p.d_k)
    k = p.wk.value @ x.value
    logits = k.T @ q
    if masked:
        logits = logits + _causal_mask(x.shape[1])
    shifted = logits - logits.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)
