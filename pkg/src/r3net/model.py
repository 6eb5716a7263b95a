"""End-to-end change captioner with the four ablation variants.

========== =========================== ============== ===========
variant    difference representation   relation emb.  skeletons
========== =========================== ============== ===========
baseline   ``X_bef - X_aft``           no             no
rrm        bidirectional RRM           no             no
r3net      bidirectional RRM           yes            no
r3net-ssp  bidirectional RRM           yes            yes
========== =========================== ============== ===========

Every variant owns the full parameter table (initialised identically for a
given seed); parameters of disabled modules never enter the graph.  Without
skeletons the decoder receives a constant zero skeleton feature.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import decoder, localizer, relation, rrm, ssp
from . import tensor as T
from .datagen import BOS, EOS, SKELETONS, VOCAB
from .tensor import Tensor

VARIANTS = ("baseline", "rrm", "r3net", "r3net-ssp")
_ALIASES = {"baseline": "baseline", "rrm": "rrm", "r3net": "r3net", "r3netssp": "r3net-ssp", "r3net-ssp": "r3net-ssp"}

BOS_ID = VOCAB.index(BOS)
EOS_ID = VOCAB.index(EOS)
PAD_ID = 0

SSP_PARAM_PREFIXES = ("ssp.", "dec.E_q", "dec.W_q", "dec.b_q")


def normalize_variant(name: str) -> str:
    key = name.lower().replace("_", "-").replace("+", "-")
    key = _ALIASES.get(key, _ALIASES.get(key.replace("-", ""), None))
    if key is None:
        raise ValueError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
    return key


@dataclass(frozen=True)
class ModelDims:
    c_in: int = 48
    c: int = 32
    hidden: int = 64
    skel_dim: int = 32
    word_dim: int = 32
    heads: int = 4
    k: int = len(SKELETONS)
    vocab: int = len(VOCAB)
    max_len: int = 20

    def to_json(self) -> dict:
        return asdict(self)


def init_params(dims: ModelDims, seed: int = 0) -> dict[str, Tensor]:
    rng = np.random.Generator(np.random.Philox(key=int(seed) | (11 << 64)))
    arrays: dict[str, np.ndarray] = {}
    arrays.update(relation.init_params(rng, dims.c_in, dims.c))
    arrays.update(rrm.init_params(rng, dims.c))
    arrays.update(localizer.init_params(rng, dims.c))
    arrays.update(ssp.init_params(rng, dims.c, dims.hidden, dims.k))
    arrays.update(decoder.init_params(rng, dims.c, dims.k, dims.skel_dim, dims.vocab, dims.word_dim, dims.hidden))
    return {name: T.parameter(a, name=name) for name, a in arrays.items()}


def is_ssp_param(name: str) -> bool:
    return name.startswith(SSP_PARAM_PREFIXES)


class Encoded(NamedTuple):
    x_bef: Tensor
    x_aft: Tensor
    diff: Tensor
    alpha_bef: Tensor | None
    alpha_aft: Tensor | None
    a_bef: Tensor
    a_aft: Tensor
    feats: decoder.Features
    skel_probs: Tensor | None
    skel_logits: Tensor | None
    skel: Tensor


def encode(x_bef, x_aft, params, variant: str, dims: ModelDims) -> Encoded:
    """Everything up to the decoder for a batch of grids ``B x N x C_in``."""
    variant = normalize_variant(variant)
    xb = relation.project_features(T.as_tensor(x_bef), params)
    xa = relation.project_features(T.as_tensor(x_aft), params)
    if variant in ("r3net", "r3net-ssp"):
        xb = relation.embed_relations(xb, params, heads=dims.heads)
        xa = relation.embed_relations(xa, params, heads=dims.heads)
    alpha_bef = alpha_aft = None
    if variant == "baseline":
        diff = xb - xa
    else:
        out = rrm.rrm_bidirectional(xb, xa, params)
        diff, alpha_bef, alpha_aft = out.diff_fused, out.alpha_bef, out.alpha_aft
    a_bef = localizer.attention_map(xb, diff, params)
    a_aft = localizer.attention_map(xa, diff, params)
    l_bef = localizer.pool_changed(xb, a_bef)
    l_aft = localizer.pool_changed(xa, a_aft)
    l_diff = localizer.fuse_local_diff(l_bef, l_aft, params)
    feats = decoder.Features(l_bef, l_aft, l_diff)
    probs = logits = None
    if variant == "r3net-ssp":
        logits = ssp.skeleton_logits(ssp.global_repr(xb, xa, diff), params)
        probs = T.sigmoid(logits)
        skel = decoder.embed_skeletons(probs, params)
    else:
        skel = Tensor(np.zeros(l_bef.shape[:-1] + (dims.skel_dim,)))
    return Encoded(xb, xa, diff, alpha_bef, alpha_aft, a_bef, a_aft, feats, probs, logits, skel)


def caption_arrays(captions, max_len: int | None = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Teacher-forcing ``(inputs, targets, mask)`` for token-string captions.

    Targets are the caption followed by EOS; inputs are BOS followed by the
    caption; padding positions have mask 0.
    """
    ids = [[VOCAB.index(w) for w in cap] for cap in captions]
    steps = max(len(s) for s in ids) + 1
    if max_len is not None:
        steps = min(steps, max_len)
    inputs = np.full((len(ids), steps), PAD_ID, dtype=np.int64)
    targets = np.full((len(ids), steps), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(ids), steps))
    for b, seq in enumerate(ids):
        tgt = (seq + [EOS_ID])[:steps]
        inp = ([BOS_ID] + seq)[: len(tgt)]
        inputs[b, : len(inp)] = inp
        targets[b, : len(tgt)] = tgt
        mask[b, : len(tgt)] = 1.0
    return inputs, targets, mask


class Losses(NamedTuple):
    total: Tensor
    caption: Tensor
    skeleton: Tensor | None


def joint_loss(x_bef, x_aft, captions, skeleton_labels, params, variant: str, dims: ModelDims, lam: float = 0.1) -> Losses:
    """``L = L_cap + lam * L_s``; variants without skeletons have no ``L_s`` term."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    enc = encode(x_bef, x_aft, params, variant, dims)
    inputs, targets, mask = caption_arrays(captions)
    logits = decoder.teacher_forced_logits(enc.feats, enc.skel, inputs, params, dims.hidden)
    l_cap = decoder.caption_nll(logits, targets, mask)
    if enc.skel_probs is None:
        return Losses(l_cap, l_cap, None)
    l_s = ssp.multilabel_loss(enc.skel_probs, skeleton_labels)
    return Losses(l_cap + l_s * lam, l_cap, l_s)


def generate(x_bef, x_aft, params, variant: str, dims: ModelDims, max_len: int | None = None):
    """Greedy captions (as word lists) plus the encoder outputs and attention weights."""
    with T.no_grad():
        enc = encode(x_bef, x_aft, params, variant, dims)
        seqs, betas = decoder.greedy_decode(
            enc.feats, enc.skel, params, dims.hidden, BOS_ID, EOS_ID, max_len or dims.max_len
        )
    return [[VOCAB[i] for i in s] for s in seqs], enc, betas
