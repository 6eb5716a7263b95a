"""Dual change localizer.

Two 1x1 convolutions (a per-location two-layer MLP, shared by both images)
score each location of ``[features ; difference]``; the sigmoid scores pool
the changed features of each image, and the two pooled vectors are compared
in both directions.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .layers import xavier
from .tensor import DimensionError, Tensor


def init_params(rng: np.random.Generator, c: int, c_mid: int | None = None) -> dict[str, np.ndarray]:
    c_mid = c if c_mid is None else c_mid
    return {
        "loc.W_1": xavier(rng, 2 * c, c_mid),
        "loc.b_1": np.zeros(c_mid),
        "loc.W_2": xavier(rng, c_mid, 1),
        "loc.b_2": np.zeros(1),
        "loc.W_d": xavier(rng, 2 * c, c),
        "loc.b_d": np.zeros(c),
    }


def attention_map(x: Tensor, diff: Tensor, params) -> Tensor:
    """Per-location change score in (0, 1), shape ``[..., N, 1]``."""
    if x.shape != diff.shape:
        raise DimensionError(f"attention_map: features {x.shape} and difference {diff.shape} differ")
    hidden = T.relu(T.matmul(T.concat([x, diff], axis=-1), params["loc.W_1"]) + params["loc.b_1"])
    return T.sigmoid(T.matmul(hidden, params["loc.W_2"]) + params["loc.b_2"])


def pool_changed(x: Tensor, a: Tensor) -> Tensor:
    """Unnormalised attention pooling ``sum_n a[n] * x[n]``."""
    return (a * x).sum(axis=-2)


def fuse_local_diff(l_bef: Tensor, l_aft: Tensor, params) -> Tensor:
    if l_bef.shape != l_aft.shape:
        raise DimensionError(f"fuse_local_diff: {l_bef.shape} vs {l_aft.shape}")
    both = T.concat([l_bef - l_aft, l_aft - l_bef], axis=-1)
    return T.relu(T.matmul(both, params["loc.W_d"]) + params["loc.b_d"])
