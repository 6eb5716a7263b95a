"""Skeleton-guided caption decoder.

An attention LSTM chooses, at every step, a convex mixture ``beta`` of the
three localized vectors (before, after, local difference); a caption LSTM
consumes the previous word, the skeleton feature and that mixture and emits
next-word logits.  ``beta`` is ordered (bef, aft, diff).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .layers import lstm_cell, lstm_params, xavier
from .tensor import Tensor


class Features(NamedTuple):
    l_bef: Tensor
    l_aft: Tensor
    l_diff: Tensor


@dataclass
class DecodeState:
    h_a: Tensor
    c_a: Tensor
    h_c: Tensor
    c_c: Tensor
    t: int = 0

    @classmethod
    def zeros(cls, batch: int | None, hidden_a: int, hidden_c: int) -> DecodeState:
        lead = () if batch is None else (batch,)
        return cls(
            Tensor(np.zeros(lead + (hidden_a,))),
            Tensor(np.zeros(lead + (hidden_a,))),
            Tensor(np.zeros(lead + (hidden_c,))),
            Tensor(np.zeros(lead + (hidden_c,))),
        )


def init_params(rng, c: int, k: int, skel_dim: int, vocab: int, word_dim: int, hidden: int) -> dict[str, np.ndarray]:
    p = {
        "dec.E_q": xavier(rng, k, skel_dim),
        "dec.W_q": xavier(rng, skel_dim, skel_dim),
        "dec.b_q": np.zeros(skel_dim),
        "dec.W_a1": xavier(rng, 3 * c, c),
        "dec.b_a1": np.zeros(c),
    }
    p.update(lstm_params(rng, c + skel_dim + hidden, hidden, "dec.lstm_a"))
    p["dec.W_a2"] = xavier(rng, hidden, 3)
    p["dec.b_a2"] = np.zeros(3)
    p["dec.E"] = rng.normal(0.0, 0.1, size=(vocab, word_dim))
    p.update(lstm_params(rng, word_dim + skel_dim + c, hidden, "dec.lstm_c"))
    p["dec.W_c"] = xavier(rng, hidden, vocab)
    p["dec.b_c"] = np.zeros(vocab)
    return p


def embed_skeletons(p: Tensor, params) -> Tensor:
    """Probability-weighted sum of skeleton embeddings, then ``ReLU(. W_q + b_q)``."""
    weighted = T.matmul(p, params["dec.E_q"])
    return T.relu(T.matmul(weighted, params["dec.W_q"]) + params["dec.b_q"])


def semantic_input(feats: Features, params) -> Tensor:
    """The step-invariant vector ``v = ReLU(W_a1 [l_bef ; l_diff ; l_aft] + b_a1)``."""
    cat = T.concat([feats.l_bef, feats.l_diff, feats.l_aft], axis=-1)
    return T.relu(T.matmul(cat, params["dec.W_a1"]) + params["dec.b_a1"])


def attend_step(feats: Features, skel: Tensor, state: DecodeState, params, v: Tensor | None = None):
    """One attention-LSTM step; returns ``(beta, l_dyn, state')``."""
    if v is None:
        v = semantic_input(feats, params)
    u = T.concat([v, skel, state.h_c], axis=-1)
    h_a, c_a = lstm_cell(u, state.h_a, state.c_a, params["dec.lstm_a.W"], params["dec.lstm_a.b"])
    beta = T.softmax(T.matmul(h_a, params["dec.W_a2"]) + params["dec.b_a2"], axis=-1)
    l_dyn = beta[..., 0:1] * feats.l_bef + beta[..., 1:2] * feats.l_aft + beta[..., 2:3] * feats.l_diff
    return beta, l_dyn, DecodeState(h_a, c_a, state.h_c, state.c_c, state.t)


def decode_step(prev_token, skel: Tensor, l_dyn: Tensor, state: DecodeState, params):
    """One caption-LSTM step; returns ``(logits, state')``."""
    word = T.take_rows(params["dec.E"], prev_token)
    c_in = T.concat([word, skel, l_dyn], axis=-1)
    h_c, c_c = lstm_cell(c_in, state.h_c, state.c_c, params["dec.lstm_c.W"], params["dec.lstm_c.b"])
    logits = T.matmul(h_c, params["dec.W_c"]) + params["dec.b_c"]
    return logits, DecodeState(state.h_a, state.c_a, h_c, c_c, state.t + 1)


def teacher_forced_logits(feats: Features, skel: Tensor, inputs: np.ndarray, params, hidden: int) -> Tensor:
    """Logits for every step given ground-truth previous tokens ``inputs`` (``B x T``)."""
    batch, steps = inputs.shape
    state = DecodeState.zeros(batch, hidden, hidden)
    v = semantic_input(feats, params)
    out = []
    for t in range(steps):
        _, l_dyn, state = attend_step(feats, skel, state, params, v=v)
        logits, state = decode_step(inputs[:, t], skel, l_dyn, state, params)
        out.append(logits)
    return T.stack(out, axis=1)


def caption_nll(logits: Tensor, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Per-sequence summed negative log-likelihood, averaged over the batch.

    ``logits`` is ``B x T x V``; positions with ``mask == 0`` (after EOS) do
    not contribute.
    """
    batch, steps, vocab = logits.shape
    if np.any((targets < 0) | (targets >= vocab)):
        raise IndexError("reference token outside the vocabulary")
    pick = np.zeros((batch, steps, vocab))
    pick[np.arange(batch)[:, None], np.arange(steps)[None, :], targets] = 1.0
    pick *= mask[..., None]
    return (T.log_softmax(logits, axis=-1) * pick).sum() * (-1.0 / batch)


def greedy_decode(feats: Features, skel: Tensor, params, hidden: int, bos: int, eos: int, max_len: int = 20):
    """Batched greedy decoding from BOS.

    Returns a list of token-id lists (EOS excluded) and the ``B x steps x 3``
    array of attention weights.  Ties in argmax go to the lowest token id.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    batch = feats.l_bef.shape[0]
    with T.no_grad():
        state = DecodeState.zeros(batch, hidden, hidden)
        v = semantic_input(feats, params)
        prev = np.full(batch, bos, dtype=np.int64)
        done = np.zeros(batch, dtype=bool)
        seqs: list[list[int]] = [[] for _ in range(batch)]
        betas = []
        for _ in range(max_len):
            beta, l_dyn, state = attend_step(feats, skel, state, params, v=v)
            logits, state = decode_step(prev, skel, l_dyn, state, params)
            betas.append(beta.data)
            tok = np.argmax(logits.data, axis=-1)
            for b in np.flatnonzero(~done):
                if tok[b] == eos:
                    done[b] = True
                else:
                    seqs[b].append(int(tok[b]))
            prev = tok
            if done.all():
                break
    return seqs, np.stack(betas, axis=1)
