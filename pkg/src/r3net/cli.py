"""Command-line interface: ``r3net {generate,train,eval,caption,dump-attention}``.

Option values resolve as command-line flag, then the ``--config`` JSON file,
then the built-in default.  Corpus directories default to ``$R3NET_DATA``
(or ``./data``).  Each command writes a run manifest; exit status is 0 on
success, 2 for usage errors, 3 for data errors and 4 for a numeric abort.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, datagen, tensorio
from .datagen import CorpusError, GenConfig
from .model import VARIANTS, ModelDims
from .training import NumericError, TrainConfig

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4

DATA_ENV = "R3NET_DATA"

DEFAULTS = {
    "generate": {
        "pairs": 2000, "seed": 0, "height": 8, "width": 8, "channels": 48,
        "min_objects": 5, "max_objects": 8, "distractor_prob": 1 / 6,
        "jitter_prob": GenConfig.jitter_prob, "noise_sigma": GenConfig.noise_sigma, "codebook_seed": 0,
    },
    "train": {
        "variant": "r3net-ssp", "lam": 0.1, "lr": 1e-3, "batch_size": TrainConfig.batch_size,
        "epochs": 30, "seed": 0, "eval_every": 5, "c": ModelDims.c, "hidden": ModelDims.hidden,
        "skel_dim": ModelDims.skel_dim, "word_dim": ModelDims.word_dim, "max_len": ModelDims.max_len,
    },
    "eval": {},
    "caption": {"top_k": 10},
    "dump-attention": {},
}

GEN_FIELDS = ("height", "width", "channels", "min_objects", "max_objects", "distractor_prob",
              "jitter_prob", "noise_sigma", "codebook_seed")


class UsageError(Exception):
    pass


def default_data_dir() -> str:
    return os.environ.get(DATA_ENV, "data")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="r3net", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"r3net {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON file of option values (overridden by flags)")
        sp.add_argument("--manifest", help="where to write the run manifest")

    g = sub.add_parser("generate", help="build a synthetic corpus")
    common(g)
    g.add_argument("--pairs", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", help="corpus directory (default: $R3NET_DATA or ./data)")
    for name, typ in (("height", int), ("width", int), ("channels", int), ("min-objects", int),
                      ("max-objects", int), ("distractor-prob", float), ("jitter-prob", float),
                      ("noise-sigma", float), ("codebook-seed", int)):
        g.add_argument(f"--{name}", type=typ)

    t = sub.add_parser("train", help="train a model and write a checkpoint")
    common(t)
    t.add_argument("--data", help="training corpus directory")
    t.add_argument("--held-out", help="corpus evaluated during training")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--log", help="metrics log (JSONL); default <out>.log.jsonl")
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--lambda", dest="lam", type=float, help="skeleton loss weight")
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--eval-every", type=int)
    for name in ("c", "hidden", "skel-dim", "word-dim", "max-len"):
        t.add_argument(f"--{name}", type=int)

    e = sub.add_parser("eval", help="score a checkpoint on a corpus")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data")
    e.add_argument("--out", help="report path (default: stdout)")

    for name, help_ in (("caption", "caption one pair"), ("dump-attention", "write attention maps as JSON")):
        c = sub.add_parser(name, help=help_)
        common(c)
        c.add_argument("--checkpoint", required=True)
        src = c.add_mutually_exclusive_group(required=True)
        src.add_argument("--pair", type=int, help="pair id within --data")
        src.add_argument("--seed", type=int, help="generate a fresh pair from this seed")
        c.add_argument("--data")
        if name == "caption":
            c.add_argument("--top-k", type=int)
            c.add_argument("--attention", help="also dump attention maps to this JSON file")
        else:
            c.add_argument("--out", help="output JSON (default: stdout)")
    return p


def resolve(args: argparse.Namespace) -> dict:
    """Merge defaults, the config file and explicit flags (highest precedence)."""
    opts = dict(DEFAULTS[args.command])
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                loaded = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise UsageError(f"config {args.config} must hold a JSON object")
        loaded = {k.replace("-", "_"): v for k, v in loaded.items()}
        if "lambda" in loaded:
            loaded["lam"] = loaded.pop("lambda")
        unknown = set(loaded) - set(opts) - set(vars(args))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        opts.update(loaded)
    opts.update({k: v for k, v in vars(args).items() if v is not None})
    return opts


def _versions() -> dict:
    import scipy

    return {"r3net": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _write_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True)
    if path is None:
        print(text)
    else:
        Path(path).write_text(text + "\n")


def _manifest(opts: dict, seed, corpus, checkpoint, started: float, default_path) -> None:
    manifest = {
        "command": opts["command"],
        "config": {k: v for k, v in sorted(opts.items()) if k not in ("manifest", "verbose")},
        "seed": seed,
        "corpus_hash": datagen.corpus_hash(corpus) if corpus else None,
        "checkpoint": str(checkpoint) if checkpoint else None,
        "wall_clock_s": round(time.perf_counter() - started, 3),
        "versions": _versions(),
    }
    path = opts.get("manifest") or default_path
    if path is None:
        print(json.dumps({"manifest": manifest}, sort_keys=True), file=sys.stderr)
    else:
        _write_json(manifest, path)


def cmd_generate(opts: dict, started: float) -> int:
    out = Path(opts.get("out") or default_data_dir())
    config = GenConfig(**{k: opts[k] for k in GEN_FIELDS})
    try:
        config.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if opts["pairs"] < 1:
        raise UsageError("--pairs must be positive")
    corpus = datagen.build_corpus(opts["pairs"], opts["seed"], config)
    try:
        datagen.save_corpus(corpus, out)
    except OSError as exc:
        raise CorpusError(f"cannot write corpus to {out}: {exc}") from exc
    stats = {"pairs": len(corpus), "kinds": corpus.kind_counts(), "vocab_size": len(datagen.VOCAB),
             "skeletons": len(datagen.SKELETONS), "out": str(out)}
    print(json.dumps(stats, sort_keys=True))
    _manifest(opts, opts["seed"], out, None, started, out / "manifest.json")
    return EXIT_OK


def cmd_train(opts: dict, started: float) -> int:
    from . import training

    data = opts.get("data") or default_data_dir()
    corpus = datagen.load_corpus(data)
    held_out = datagen.load_corpus(opts["held_out"]) if opts.get("held_out") else None
    dims = ModelDims(c_in=corpus.config.channels, c=opts["c"], hidden=opts["hidden"], skel_dim=opts["skel_dim"],
                     word_dim=opts["word_dim"], max_len=opts["max_len"])
    try:
        config = TrainConfig(variant=opts["variant"], lam=opts["lam"], lr=opts["lr"], batch_size=opts["batch_size"],
                             epochs=opts["epochs"], seed=opts["seed"], eval_every=opts["eval_every"], dims=dims)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(opts["out"])
    log_path = opts.get("log") or f"{out}.log.jsonl"
    _, records = training.train(corpus, config, held_out=held_out, log_path=log_path, checkpoint_path=out)
    last = records[-1] if records else {}
    print(json.dumps({"checkpoint": str(out), "log": str(log_path), "epochs": len(records),
                      "final_loss": last.get("loss")}, sort_keys=True))
    _manifest(opts, config.seed, data, out, started, f"{out}.manifest.json")
    return EXIT_OK


def _load_state(path):
    from . import training

    try:
        return training.load_checkpoint(path)
    except FileNotFoundError as exc:
        raise CorpusError(f"checkpoint not found: {path}") from exc


def cmd_eval(opts: dict, started: float) -> int:
    from . import training

    state = _load_state(opts["checkpoint"])
    data = opts.get("data") or default_data_dir()
    corpus = datagen.load_corpus(data)
    report = training.evaluate(state, corpus)
    out = opts.get("out")
    _write_json(report.to_json(), out)
    _manifest(opts, state.config.seed, data, opts["checkpoint"], started, f"{out}.manifest.json" if out else None)
    return EXIT_OK


def _single_pair(opts: dict, state):
    """Return ``(label, pair, before, after, config)`` for --pair or --seed."""
    if opts.get("pair") is not None:
        data = opts.get("data") or default_data_dir()
        corpus = datagen.load_corpus(data)
        if not 0 <= opts["pair"] < len(corpus):
            raise CorpusError(f"pair id {opts['pair']} outside 0..{len(corpus) - 1}")
        i = opts["pair"]
        return {"pair": i}, corpus.pairs[i], corpus.before[i : i + 1], corpus.after[i : i + 1], corpus.config
    config = GenConfig(channels=state.dims.c_in)
    pair = datagen.generate_pair(opts["seed"], config)
    before, after = datagen.encode_pair(pair, config)
    return {"seed": opts["seed"]}, pair, before[None], after[None], config


def _attention_dump(label, pair, pred, config) -> dict:
    shape = (config.height, config.width)

    def grid(a):
        return None if a is None else np.asarray(a[0]).reshape(shape).tolist()

    def channel_mean(a):
        return None if a is None else np.asarray(a[0]).mean(axis=-1).reshape(shape).tolist()

    steps = len(pred.captions[0]) + 1
    return {
        **label,
        "caption": " ".join(pred.captions[0]),
        "reference": " ".join(pair.caption),
        "height": config.height,
        "width": config.width,
        "alpha_bef": channel_mean(pred.alpha_bef),
        "alpha_aft": channel_mean(pred.alpha_aft),
        "a_bef": grid(pred.a_bef),
        "a_aft": grid(pred.a_aft),
        "beta": pred.betas[0, :steps].tolist(),
    }


def _predict_one(opts, state):
    from . import training

    label, pair, before, after, config = _single_pair(opts, state)
    if config.channels != state.dims.c_in:
        raise CorpusError(f"corpus has {config.channels} input channels but the model expects {state.dims.c_in}")
    return label, pair, training.predict(state, before, after), config


def cmd_caption(opts: dict, started: float) -> int:
    state = _load_state(opts["checkpoint"])
    label, pair, pred, config = _predict_one(opts, state)
    print(" ".join(pred.captions[0]))
    if pred.skel_probs is None:
        print(f"(variant {state.variant} has no skeleton predictor)")
    else:
        probs = pred.skel_probs[0]
        for k in np.argsort(-probs, kind="stable")[: opts["top_k"]]:
            print(f"  {datagen.SKELETONS[k]:<10s} {probs[k]:.4f}")
    if opts.get("attention"):
        _write_json(_attention_dump(label, pair, pred, config), opts["attention"])
    _manifest(opts, label.get("seed", state.config.seed), opts.get("data") if "pair" in label else None,
              opts["checkpoint"], started, None)
    return EXIT_OK


def cmd_dump_attention(opts: dict, started: float) -> int:
    state = _load_state(opts["checkpoint"])
    label, pair, pred, config = _predict_one(opts, state)
    out = opts.get("out")
    _write_json(_attention_dump(label, pair, pred, config), out)
    _manifest(opts, label.get("seed", state.config.seed), opts.get("data") if "pair" in label else None,
              opts["checkpoint"], started, f"{out}.manifest.json" if out else None)
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "eval": cmd_eval,
            "caption": cmd_caption, "dump-attention": cmd_dump_attention}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.perf_counter()
    try:
        opts = resolve(args)
        return COMMANDS[args.command](opts, started)
    except UsageError as exc:
        print(f"r3net: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, tensorio.FormatError, FileNotFoundError, ValueError, OSError) as exc:
        print(f"r3net: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"r3net: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
