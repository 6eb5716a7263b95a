"""Parameter initialisers and the LSTM cell shared by the decoder."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


def xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def lstm_params(rng: np.random.Generator, n_in: int, n_hidden: int, prefix: str) -> dict[str, np.ndarray]:
    """Fused gate weights ``[x ; h] @ W + b`` with gate order (input, forget, cell, output)."""
    b = np.zeros(4 * n_hidden)
    b[n_hidden : 2 * n_hidden] = 1.0
    return {f"{prefix}.W": xavier(rng, n_in + n_hidden, 4 * n_hidden), f"{prefix}.b": b}


def lstm_cell(x: Tensor, h: Tensor, c: Tensor, W: Tensor, b: Tensor) -> tuple[Tensor, Tensor]:
    n = h.shape[-1]
    z = T.matmul(T.concat([x, h], axis=-1), W) + b
    i = T.sigmoid(z[..., :n])
    f = T.sigmoid(z[..., n : 2 * n])
    g = T.tanh(z[..., 2 * n : 3 * n])
    o = T.sigmoid(z[..., 3 * n :])
    c_next = f * c + i * g
    h_next = o * T.tanh(c_next)
    return h_next, c_next
