"""Relation embedding: multi-head scaled dot-product self-attention per image.

Queries, keys and values are projections of the same grid, so every location
is rewritten as an attention-weighted mixture over all locations of its own
image.  The output replaces the input (there is no residual path).  One set of
weights serves both the before and the after image.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import xavier
from .tensor import Tensor

QK_INIT_SCALE = 4.0


def init_params(rng: np.random.Generator, c_in: int, c: int) -> dict[str, np.ndarray]:
    """Input projection plus attention weights.

    Queries and keys start tied and scaled up so that each location first
    attends mostly to look-alike locations; the value and output maps start as
    the identity, so the initial embedding is a similarity-weighted average of
    the projected grid.
    """
    w_qk = QK_INIT_SCALE * xavier(rng, c, c)
    return {
        "proj.W_in": xavier(rng, c_in, c),
        "relation.W_q": w_qk,
        "relation.W_k": w_qk.copy(),
        "relation.W_v": np.eye(c),
        "relation.W_o": np.eye(c),
    }


def project_features(x: Tensor, params) -> Tensor:
    """Map raw ``N x C_in`` features to the model width ``N x C``."""
    return T.matmul(x, params["proj.W_in"])


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, c = x.shape
    x = x.reshape(*lead, n, heads, c // heads)
    order = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return T.transpose(x, order)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, d = x.shape
    order = list(range(len(lead))) + [len(lead) + 1, len(lead), len(lead) + 2]
    return T.transpose(x, order).reshape(*lead, n, h * d)


def embed_relations(x: Tensor, params, heads: int = 4, return_attention: bool = False):
    """Self-attention over the locations of ``x`` (shape ``[..., N, C]``).

    Each head ``h`` uses the column block ``h*d_k:(h+1)*d_k`` of the query,
    key and value projections, with ``d_k = C / heads``.  Head outputs are
    concatenated and mapped by ``W_o``.
    """
    c = x.shape[-1]
    if c % heads:
        raise ValueError(f"width {c} is not divisible by {heads} heads")
    d_k = c // heads
    q = _split_heads(T.matmul(x, params["relation.W_q"]), heads)
    k = _split_heads(T.matmul(x, params["relation.W_k"]), heads)
    v = _split_heads(T.matmul(x, params["relation.W_v"]), heads)
    scores = T.matmul(q, T.transpose(k)) * (1.0 / np.sqrt(d_k))
    attn = T.softmax_rows(scores)
    out = T.matmul(_merge_heads(T.matmul(attn, v)), params["relation.W_o"])
    if return_attention:
        return out, attn
    return out
