"""Representation reconstruction: gated reconstruction of a source grid from its shadow.

Per location, response signals ``alpha = sigmoid(src @ W_p + shadow @ W_s + b_s)``
select the part of the shadow that explains the source.  The residual
``src - alpha * shadow`` is the change with respect to that source.  Running
the same module in both directions and fusing the two residuals gives the
bidirectional difference.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import tensor as T
from .layers import xavier
from .tensor import DimensionError, Tensor

# gates start nearly open: sigmoid(4) ~ 0.98 of the shadow is reconstructed
GATE_INIT_BIAS = 4.0


class Direction(NamedTuple):
    reconstruction: Tensor
    difference: Tensor
    alpha: Tensor


class Bidirectional(NamedTuple):
    diff_bef: Tensor
    diff_aft: Tensor
    diff_fused: Tensor
    alpha_bef: Tensor
    alpha_aft: Tensor


def init_params(rng: np.random.Generator, c: int) -> dict[str, np.ndarray]:
    return {
        "rrm.W_p": xavier(rng, c, c),
        "rrm.W_s": xavier(rng, c, c),
        "rrm.b_s": np.full(c, GATE_INIT_BIAS),
        "rrm.W_f": xavier(rng, 2 * c, c),
        "rrm.b_f": np.zeros(c),
    }


def rrm_direction(source: Tensor, shadow: Tensor, params) -> Direction:
    if source.shape != shadow.shape:
        raise DimensionError(f"rrm: source {source.shape} and shadow {shadow.shape} differ")
    alpha = T.sigmoid(T.matmul(source, params["rrm.W_p"]) + T.matmul(shadow, params["rrm.W_s"]) + params["rrm.b_s"])
    reconstruction = alpha * shadow
    return Direction(reconstruction, source - reconstruction, alpha)


def rrm_bidirectional(x_bef: Tensor, x_aft: Tensor, params) -> Bidirectional:
    """Before-as-source and after-as-source residuals, fused as ``ReLU([d_bef ; d_aft] W_f + b_f)``."""
    fwd = rrm_direction(x_bef, x_aft, params)
    bwd = rrm_direction(x_aft, x_bef, params)
    both = T.concat([fwd.difference, bwd.difference], axis=-1)
    fused = T.relu(T.matmul(both, params["rrm.W_f"]) + params["rrm.b_f"])
    return Bidirectional(fwd.difference, bwd.difference, fused, fwd.alpha, bwd.alpha)
