"""Syntactic skeleton predictor: multi-label concept prediction from pooled grids."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import xavier
from .tensor import DimensionError, Tensor

EPS = 1e-7


def init_params(rng: np.random.Generator, c: int, hidden: int, k: int) -> dict[str, np.ndarray]:
    return {
        "ssp.W_g": xavier(rng, 3 * c, hidden),
        "ssp.b_inner": np.zeros(hidden),
        "ssp.U_g": xavier(rng, hidden, k),
        "ssp.b_g": np.zeros(k),
    }


def global_repr(x_bef: Tensor, x_aft: Tensor, diff: Tensor) -> Tensor:
    """Mean over locations of ``[x_bef ; x_aft ; diff]``."""
    if not x_bef.shape == x_aft.shape == diff.shape:
        raise DimensionError(f"global_repr: shapes {x_bef.shape}, {x_aft.shape}, {diff.shape} differ")
    return T.concat([x_bef, x_aft, diff], axis=-1).mean(axis=-2)


def skeleton_logits(s: Tensor, params) -> Tensor:
    inner = T.relu(T.matmul(s, params["ssp.W_g"]) + params["ssp.b_inner"])
    return T.matmul(inner, params["ssp.U_g"]) + params["ssp.b_g"]


def predict_skeletons(s: Tensor, params) -> Tensor:
    return T.sigmoid(skeleton_logits(s, params))


def multilabel_loss(p: Tensor, y) -> Tensor:
    """Binary cross-entropy summed over skeletons and averaged over the batch.

    ``p`` has shape ``[B, K]`` (or ``[K]`` for a single pair); probabilities
    are clamped to ``[EPS, 1 - EPS]`` before taking logs.
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("skeleton labels must be 0 or 1")
    if y.shape != p.shape:
        raise DimensionError(f"multilabel_loss: probabilities {p.shape} vs labels {y.shape}")
    batch = p.shape[0] if p.ndim == 2 else 1
    q = T.clip(p, EPS, 1.0 - EPS)
    ll = T.log(q) * y + T.log(1.0 - q) * (1.0 - y)
    return ll.sum() * (-1.0 / batch)
