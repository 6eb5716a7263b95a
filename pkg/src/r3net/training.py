"""Joint training, Adam, checkpoints and held-out evaluation."""
from __future__ import annotations

import dataclasses
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import metrics, tensorio
from . import tensor as T
from .datagen import Corpus
from .model import ModelDims, generate, init_params, joint_loss, normalize_variant
from .tensor import Tensor

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"R3CK"
CHECKPOINT_VERSION = 1


class NumericError(FloatingPointError):
    """A non-finite loss or gradient was produced."""


@dataclass
class TrainConfig:
    variant: str = "r3net-ssp"
    lam: float = 0.1
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 30
    seed: int = 0
    eval_every: int = 1
    dims: ModelDims = field(default_factory=ModelDims)

    def __post_init__(self):
        self.variant = normalize_variant(self.variant)
        if isinstance(self.dims, dict):
            self.dims = ModelDims(**self.dims)
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs nonnegative")

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["dims"] = self.dims.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> TrainConfig:
        return cls(**d)


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam update of every parameter holding a gradient, in place.

    Parameters whose ``grad`` is None (not part of this step's graph) keep
    their values and moments.
    """
    grads = {n: p.grad for n, p in params.items() if p.grad is not None}
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise T.DimensionError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}; step aborted")
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for name, g in grads.items():
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(g)
            v = np.zeros_like(g)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        params[name].data -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


@dataclass
class ModelState:
    config: TrainConfig
    params: dict[str, Tensor]
    adam: AdamState = field(default_factory=AdamState)
    epoch: int = 0

    @classmethod
    def fresh(cls, config: TrainConfig) -> ModelState:
        return cls(config, init_params(config.dims, config.seed))

    @property
    def variant(self) -> str:
        return self.config.variant

    @property
    def dims(self) -> ModelDims:
        return self.config.dims


def save_checkpoint(state: ModelState, path) -> None:
    """Versioned container: magic, version, JSON header, then tensor records."""
    header = json.dumps(
        {"format": CHECKPOINT_VERSION, "config": state.config.to_json(), "step": state.adam.step,
         "epoch": state.epoch, "params": list(state.params), "moments": sorted(state.adam.m)},
        sort_keys=True,
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        for name, p in state.params.items():
            tensorio.write_tensor(fh, f"param/{name}", p.data)
        for name in sorted(state.adam.m):
            tensorio.write_tensor(fh, f"adam_m/{name}", state.adam.m[name])
            tensorio.write_tensor(fh, f"adam_v/{name}", state.adam.v[name])


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise tensorio.FormatError(f"{path} is not a checkpoint")
        version, length = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise tensorio.FormatError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(length).decode("utf-8"))
        tensors = dict(tensorio.iter_tensors(fh))
    config = TrainConfig.from_json(header["config"])
    params = {name: T.parameter(tensors[f"param/{name}"], name=name) for name in header["params"]}
    adam = AdamState(
        m={n: tensors[f"adam_m/{n}"] for n in header["moments"]},
        v={n: tensors[f"adam_v/{n}"] for n in header["moments"]},
        step=header["step"],
    )
    return ModelState(config, params, adam, header["epoch"])


def check_compatible(state: ModelState, corpus: Corpus) -> None:
    if corpus.config.channels != state.dims.c_in:
        raise ValueError(
            f"corpus has {corpus.config.channels} input channels but the model expects {state.dims.c_in}"
        )


def _batches(count: int, batch_size: int, seed: int, epoch: int) -> Iterable[np.ndarray]:
    # one Philox stream per (seed, epoch), so resumed runs shuffle like uninterrupted ones
    rng = np.random.Generator(np.random.Philox(key=int(seed) | ((5 | (epoch << 8)) << 64)))
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start : start + batch_size]


def train_step(state: ModelState, corpus: Corpus, idx: np.ndarray):
    cfg = state.config
    T.zero_grad(state.params.values())
    losses = joint_loss(
        corpus.before[idx], corpus.after[idx], [corpus.pairs[i].caption for i in idx],
        np.stack([corpus.pairs[i].skeletons for i in idx]), state.params, cfg.variant, cfg.dims, cfg.lam,
    )
    if not np.isfinite(losses.total.item()):
        raise NumericError(f"non-finite loss at step {state.adam.step}")
    T.backward(losses.total)
    adam_step(state.params, state.adam, lr=cfg.lr)
    return losses


def train(corpus: Corpus, config: TrainConfig, held_out: Corpus | None = None,
          log_path=None, checkpoint_path=None, state: ModelState | None = None):
    """Train on ``corpus``; returns ``(ModelState, list of per-epoch records)``.

    Runs ``config.epochs`` further epochs, starting after ``state.epoch`` when
    resuming from a checkpoint.  Epoch records hold the mean total, caption and skeleton losses and, when a
    held-out corpus is given, its evaluation report every ``eval_every`` epochs.
    """
    state = state or ModelState.fresh(config)
    check_compatible(state, corpus)
    records = []
    log_fh = open(log_path, "w") if log_path else None
    try:
        first = state.epoch + 1
        for epoch in range(first, first + config.epochs):
            sums = np.zeros(3)
            seen = 0
            for idx in _batches(len(corpus), config.batch_size, config.seed, epoch):
                losses = train_step(state, corpus, idx)
                n = len(idx)
                seen += n
                sums += n * np.array([
                    losses.total.item(), losses.caption.item(),
                    losses.skeleton.item() if losses.skeleton is not None else 0.0,
                ])
            mean = sums / max(seen, 1)
            record = {"epoch": epoch, "loss": mean[0], "loss_cap": mean[1], "loss_s": mean[2], "step": state.adam.step}
            state.epoch = epoch
            if held_out is not None and (epoch % config.eval_every == 0 or epoch == first + config.epochs - 1):
                record["held_out"] = evaluate(state, held_out).to_json()
            log.info("epoch %d loss %.4f cap %.4f skel %.4f", epoch, *mean)
            records.append(record)
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    if checkpoint_path:
        save_checkpoint(state, checkpoint_path)
    return state, records


@dataclass
class Predictions:
    captions: list[list[str]]
    a_bef: np.ndarray
    a_aft: np.ndarray
    alpha_bef: np.ndarray | None
    alpha_aft: np.ndarray | None
    diff: np.ndarray
    skel_probs: np.ndarray | None
    betas: np.ndarray


def predict(state: ModelState, before: np.ndarray, after: np.ndarray, batch_size: int = 100) -> Predictions:
    """Greedy captions and attention outputs for stacked grids."""
    parts = []
    for start in range(0, len(before), batch_size):
        sl = slice(start, start + batch_size)
        caps, enc, betas = generate(before[sl], after[sl], state.params, state.variant, state.dims)
        parts.append((caps, enc, betas))

    def cat(get):
        vals = [get(e) for _, e, _ in parts]
        return None if vals[0] is None else np.concatenate([v.data for v in vals])

    steps = max(b.shape[1] for _, _, b in parts)
    betas = np.concatenate([np.pad(b, ((0, 0), (0, steps - b.shape[1]), (0, 0))) for _, _, b in parts])
    return Predictions(
        captions=[c for caps, _, _ in parts for c in caps],
        a_bef=cat(lambda e: e.a_bef)[..., 0],
        a_aft=cat(lambda e: e.a_aft)[..., 0],
        alpha_bef=cat(lambda e: e.alpha_bef),
        alpha_aft=cat(lambda e: e.alpha_aft),
        diff=cat(lambda e: e.diff),
        skel_probs=cat(lambda e: e.skel_probs),
        betas=betas,
    )


def evaluate(state: ModelState, corpus: Corpus) -> metrics.EvalReport:
    check_compatible(state, corpus)
    pred = predict(state, corpus.before, corpus.after)
    pairs = corpus.pairs
    return metrics.build_report(
        pred.captions,
        [list(p.caption) for p in pairs],
        [p.kind for p in pairs],
        pred.a_bef,
        pred.a_aft,
        [p.change.cells for p in pairs],
        [p.after_cells for p in pairs],
        corpus.config.width,
        probs=pred.skel_probs,
        labels=np.stack([p.skeletons for p in pairs]) if pred.skel_probs is not None else None,
    )
