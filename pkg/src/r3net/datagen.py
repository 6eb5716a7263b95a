"""Synthetic "ChangeGrid" corpus: paired scenes, feature grids and templated captions.

A scene is a handful of attributed objects on an ``H x W`` grid.  The
"before" scene is sampled, exactly one change (or a distractor) is applied to
produce the "after" scene, and both are encoded into ``N x C_in`` feature
grids through a fixed attribute codebook.  Only the after-image encoding sees
viewpoint jitter (a global one-cell translation) and illumination noise.

Randomness comes exclusively from numpy's counter-based ``Philox`` bit
generator keyed by a 64-bit seed, so every pair is a pure function of
``(seed, config)``.  Corpus seeds are split into per-pair seeds by drawing
from a ``Philox`` stream keyed by the corpus seed.

Corpus directories hold ``pairs.jsonl`` (one header line, then one line per
pair) and ``grids.bin`` (two tensors ``before`` and ``after`` of shape
``P x N x C_in`` in the :mod:`r3net.tensorio` wire format).  Adapters for real
datasets only need to write these two files.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensorio

SIZES = ("small", "large")
COLORS = ("red", "blue", "green", "yellow", "purple", "gray")
MATERIALS = ("rubber", "metal")
SHAPES = ("cube", "sphere", "cylinder", "cone")

KINDS = ("Color", "Texture", "Add", "Drop", "Move", "Distractor")
SCENE_KINDS = KINDS[:5]

PAD, BOS, EOS = "<pad>", "<bos>", "<eos>"
FUNCTION_WORDS = ("the", "a", "its", "to", "has", "been", "change", "was", "no")
VERBS = ("changed", "added", "removed", "moved", "made")
NOUNS = ("color", "material")

#: Content words; 1 in a skeleton vector marks presence in the caption.
SKELETONS: tuple[str, ...] = SIZES + COLORS + MATERIALS + SHAPES + NOUNS + VERBS
VOCAB: tuple[str, ...] = (PAD, BOS, EOS) + FUNCTION_WORDS + SKELETONS

NO_CHANGE = ("no", "change", "was", "made")


class CorpusError(ValueError):
    """Corpus files or contents are malformed."""


@dataclass(frozen=True)
class SceneObject:
    size: str
    color: str
    material: str
    shape: str
    cell: tuple[int, int]

    def describe(self) -> list[str]:
        return [self.size, self.color, self.material, self.shape]

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["cell"] = list(self.cell)
        return d

    @classmethod
    def from_json(cls, d: dict) -> SceneObject:
        return cls(d["size"], d["color"], d["material"], d["shape"], tuple(d["cell"]))


@dataclass(frozen=True)
class ChangeRecord:
    """What changed between the two scenes.

    ``cells`` are the grid cells whose content differs, in the un-jittered
    frame (the after image shows them shifted by the pair's jitter).
    """

    kind: str
    before: SceneObject | None = None
    after: SceneObject | None = None
    cells: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown change kind {self.kind!r}")
        if self.kind == "Distractor" and (self.before or self.after or self.cells):
            raise ValueError("a Distractor change has no target and no cells")
        if self.kind == "Move" and self.before.cell == self.after.cell:
            raise ValueError("Move must change the cell")

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "before": self.before.to_json() if self.before else None,
            "after": self.after.to_json() if self.after else None,
            "cells": [list(c) for c in self.cells],
        }

    @classmethod
    def from_json(cls, d: dict) -> ChangeRecord:
        return cls(
            d["kind"],
            SceneObject.from_json(d["before"]) if d["before"] else None,
            SceneObject.from_json(d["after"]) if d["after"] else None,
            tuple(tuple(c) for c in d["cells"]),
        )


@dataclass(frozen=True)
class GenConfig:
    height: int = 8
    width: int = 8
    channels: int = 48
    min_objects: int = 5
    max_objects: int = 8
    distractor_prob: float = 1 / 6
    jitter_prob: float = 0.1
    noise_sigma: float = 0.05
    codebook_seed: int = 0

    def validate(self) -> None:
        if self.height < 4 or self.width < 4:
            raise ValueError(f"grid must be at least 4x4, got {self.height}x{self.width}")
        if not 3 <= self.min_objects <= self.max_objects <= self.height * self.width // 2:
            raise ValueError(
                f"object count range [{self.min_objects}, {self.max_objects}] must lie in [3, {self.height * self.width // 2}]"
            )
        if not 0.0 <= self.distractor_prob <= 1.0 or not 0.0 <= self.jitter_prob <= 1.0:
            raise ValueError("probabilities must lie in [0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")

    @property
    def cells(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class ScenePair:
    seed: int
    before: tuple[SceneObject, ...]
    after: tuple[SceneObject, ...]
    change: ChangeRecord
    jitter: tuple[int, int]
    caption: tuple[str, ...]
    skeletons: np.ndarray = field(compare=False)

    @property
    def kind(self) -> str:
        return self.change.kind

    @property
    def after_cells(self) -> tuple[tuple[int, int], ...]:
        """Changed cells as seen in the (translated) after image."""
        dr, dc = self.jitter
        return tuple((r + dr, c + dc) for r, c in self.change.cells)

    def to_json(self) -> dict:
        return {
            "seed": self.seed,
            "before": [o.to_json() for o in self.before],
            "after": [o.to_json() for o in self.after],
            "change": self.change.to_json(),
            "jitter": list(self.jitter),
            "caption": " ".join(self.caption),
            "skeletons": [int(i) for i in np.flatnonzero(self.skeletons)],
        }

    @classmethod
    def from_json(cls, d: dict) -> ScenePair:
        caption = tuple(d["caption"].split())
        labels = np.zeros(len(SKELETONS))
        labels[d["skeletons"]] = 1.0
        return cls(
            d["seed"],
            tuple(SceneObject.from_json(o) for o in d["before"]),
            tuple(SceneObject.from_json(o) for o in d["after"]),
            ChangeRecord.from_json(d["change"]),
            tuple(d["jitter"]),
            caption,
            labels,
        )


def _rng(seed: int, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=(int(seed) & (2**64 - 1)) | (stream << 64)))


def _random_object(rng: np.random.Generator, cell: tuple[int, int]) -> SceneObject:
    return SceneObject(
        SIZES[rng.integers(len(SIZES))],
        COLORS[rng.integers(len(COLORS))],
        MATERIALS[rng.integers(len(MATERIALS))],
        SHAPES[rng.integers(len(SHAPES))],
        cell,
    )


def _empty_cells(objects, config: GenConfig) -> list[tuple[int, int]]:
    used = {o.cell for o in objects}
    return [(r, c) for r in range(config.height) for c in range(config.width) if (r, c) not in used]


def sample_scene(rng: np.random.Generator, config: GenConfig) -> tuple[SceneObject, ...]:
    count = int(rng.integers(config.min_objects, config.max_objects + 1))
    flat = rng.choice(config.cells, size=count, replace=False)
    return tuple(_random_object(rng, divmod(int(i), config.width)) for i in flat)


def apply_change(rng, scene, kind: str, config: GenConfig):
    """Return ``(after_scene, ChangeRecord)`` or None when ``kind`` is infeasible."""
    scene = list(scene)
    if kind == "Distractor":
        return tuple(scene), ChangeRecord("Distractor")
    empty = _empty_cells(scene, config)
    if kind == "Add":
        if not empty:
            return None
        new = _random_object(rng, empty[rng.integers(len(empty))])
        return tuple(scene + [new]), ChangeRecord("Add", None, new, (new.cell,))
    if not scene:
        return None
    i = int(rng.integers(len(scene)))
    old = scene[i]
    if kind == "Drop":
        return tuple(scene[:i] + scene[i + 1 :]), ChangeRecord("Drop", old, None, (old.cell,))
    if kind == "Color":
        choices = [c for c in COLORS if c != old.color]
        new = dataclasses.replace(old, color=choices[rng.integers(len(choices))])
        cells = (old.cell,)
    elif kind == "Texture":
        choices = [m for m in MATERIALS if m != old.material]
        new = dataclasses.replace(old, material=choices[rng.integers(len(choices))])
        cells = (old.cell,)
    elif kind == "Move":
        if not empty:
            return None
        new = dataclasses.replace(old, cell=empty[rng.integers(len(empty))])
        cells = (old.cell, new.cell)
    else:
        raise ValueError(f"unknown change kind {kind!r}")
    scene[i] = new
    return tuple(scene), ChangeRecord(kind, old, new, cells)


def sample_jitter(rng, objects, config: GenConfig) -> tuple[int, int]:
    """Global translation of the after view, clipped per axis so no object leaves the grid.

    ``objects`` should include the before scene too, so that a dropped
    object's former cell stays addressable in the after frame.
    """
    if rng.random() >= config.jitter_prob:
        return (0, 0)
    offsets = [(dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1) if (dr, dc) != (0, 0)]
    dr, dc = offsets[rng.integers(len(offsets))]
    rows = [o.cell[0] for o in objects]
    cols = [o.cell[1] for o in objects]
    if rows and not (0 <= min(rows) + dr and max(rows) + dr < config.height):
        dr = 0
    if cols and not (0 <= min(cols) + dc and max(cols) + dc < config.width):
        dc = 0
    return (dr, dc)


def generate_pair(seed: int, config: GenConfig = GenConfig()) -> ScenePair:
    """Sample one scene pair; identical ``(seed, config)`` gives an identical pair."""
    config.validate()
    rng = _rng(seed)
    weights = np.full(len(KINDS), (1.0 - config.distractor_prob) / len(SCENE_KINDS))
    weights[KINDS.index("Distractor")] = config.distractor_prob
    while True:
        before = sample_scene(rng, config)
        kind = KINDS[rng.choice(len(KINDS), p=weights)]
        result = apply_change(rng, before, kind, config)
        if result is not None:
            break
    after, change = result
    jitter = sample_jitter(rng, before + after, config)
    caption = tuple(caption_from_change(change))
    return ScenePair(int(seed), before, after, change, jitter, caption, skeleton_labels(caption))


# feature encoding ---------------------------------------------------------------

class Codebook:
    """Fixed random embedding per attribute value plus a background code."""

    def __init__(self, channels: int, seed: int = 0):
        rng = _rng(seed, stream=7)
        scale = 1.0 / np.sqrt(channels)
        self.channels = channels
        self.codes = {}
        for group in (SIZES, COLORS, MATERIALS, SHAPES):
            for value in group:
                self.codes[value] = rng.normal(0.0, scale, channels)
        self.background = rng.normal(0.0, 0.5 * scale, channels)

    def object_code(self, obj: SceneObject) -> np.ndarray:
        return self.codes[obj.size] + self.codes[obj.color] + self.codes[obj.material] + self.codes[obj.shape]


_CODEBOOKS: dict[tuple[int, int], Codebook] = {}


def get_codebook(config: GenConfig) -> Codebook:
    key = (config.channels, config.codebook_seed)
    if key not in _CODEBOOKS:
        _CODEBOOKS[key] = Codebook(*key)
    return _CODEBOOKS[key]


def encode_scene(scene, seed: int, jitter=(0, 0), noise_sigma: float = 0.0, config: GenConfig = GenConfig()) -> np.ndarray:
    """Encode objects into an ``(H*W) x C_in`` grid, row index ``r * W + c``."""
    book = get_codebook(config)
    grid = np.tile(book.background, (config.cells, 1))
    dr, dc = jitter
    for obj in scene:
        r, c = obj.cell[0] + dr, obj.cell[1] + dc
        grid[r * config.width + c] = book.object_code(obj)
    if noise_sigma > 0:
        grid = grid + _rng(seed, stream=1).normal(0.0, noise_sigma, grid.shape)
    return grid


def encode_pair(pair: ScenePair, config: GenConfig = GenConfig()) -> tuple[np.ndarray, np.ndarray]:
    before = encode_scene(pair.before, pair.seed, (0, 0), 0.0, config)
    after = encode_scene(pair.after, pair.seed, pair.jitter, config.noise_sigma, config)
    return before, after


# captions and skeletons -----------------------------------------------------------

def caption_from_change(change: ChangeRecord) -> list[str]:
    kind = change.kind
    if kind == "Distractor":
        return list(NO_CHANGE)
    if kind == "Add":
        return ["a", *change.after.describe(), "has", "been", "added"]
    obj = change.before.describe()
    if kind == "Color":
        return ["the", *obj, "changed", "its", "color", "to", change.after.color]
    if kind == "Texture":
        return ["the", *obj, "changed", "its", "material", "to", change.after.material]
    if kind == "Drop":
        return ["the", *obj, "has", "been", "removed"]
    return ["the", *obj, "has", "been", "moved"]


def _is_object_phrase(words) -> bool:
    return (
        len(words) == 4
        and words[0] in SIZES
        and words[1] in COLORS
        and words[2] in MATERIALS
        and words[3] in SHAPES
    )


def parse_caption(tokens) -> tuple[str, tuple[str, ...] | None] | None:
    """Invert the template grammar: ``(kind, object words)`` or None if unparseable."""
    t = list(tokens)
    if t == list(NO_CHANGE):
        return "Distractor", None
    if len(t) == 8 and t[0] == "a" and t[5:] == ["has", "been", "added"] and _is_object_phrase(t[1:5]):
        return "Add", tuple(t[1:5])
    if len(t) < 5 or t[0] != "the" or not _is_object_phrase(t[1:5]):
        return None
    obj, rest = tuple(t[1:5]), t[5:]
    if rest == ["has", "been", "removed"]:
        return "Drop", obj
    if rest == ["has", "been", "moved"]:
        return "Move", obj
    if len(rest) == 5 and rest[:2] == ["changed", "its"] and rest[3] == "to":
        if rest[2] == "color" and rest[4] in COLORS and rest[4] != obj[1]:
            return "Color", obj
        if rest[2] == "material" and rest[4] in MATERIALS and rest[4] != obj[2]:
            return "Texture", obj
    return None


def skeleton_labels(caption, skeletons=SKELETONS) -> np.ndarray:
    """0/1 vector marking which skeleton words occur in ``caption``."""
    vocab = set(VOCAB)
    unknown = [w for w in caption if w not in vocab]
    if unknown:
        raise CorpusError(f"caption tokens outside the grammar: {unknown}")
    present = set(caption)
    return np.array([1.0 if s in present else 0.0 for s in skeletons])


# corpus files ---------------------------------------------------------------------

def pair_seeds(corpus_seed: int, count: int) -> list[int]:
    draws = _rng(corpus_seed, stream=3).integers(0, 2**63, size=count, dtype=np.int64)
    return [int(s) for s in draws]


def generate_corpus(count: int, seed: int, config: GenConfig = GenConfig()) -> list[ScenePair]:
    return [generate_pair(s, config) for s in pair_seeds(seed, count)]


@dataclass
class Corpus:
    config: GenConfig
    pairs: list[ScenePair]
    before: np.ndarray
    after: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.pairs)

    def kind_counts(self) -> dict[str, int]:
        counts = {k: 0 for k in KINDS}
        for p in self.pairs:
            counts[p.kind] += 1
        return counts

    def subset(self, indices) -> Corpus:
        idx = list(indices)
        return Corpus(self.config, [self.pairs[i] for i in idx], self.before[idx], self.after[idx], self.seed)


def build_corpus(count: int, seed: int, config: GenConfig = GenConfig()) -> Corpus:
    pairs = generate_corpus(count, seed, config)
    shape = (count, config.cells, config.channels)
    before, after = np.empty(shape), np.empty(shape)
    for i, p in enumerate(pairs):
        before[i], after[i] = encode_pair(p, config)
    return Corpus(config, pairs, before, after, seed)


def save_corpus(corpus: Corpus, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = {
        "type": "header",
        "format": 1,
        "seed": corpus.seed,
        "config": dataclasses.asdict(corpus.config),
        "vocab": list(VOCAB),
        "skeletons": list(SKELETONS),
        "pairs": len(corpus),
    }
    with open(out / "pairs.jsonl", "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for i, p in enumerate(corpus.pairs):
            fh.write(json.dumps({"type": "pair", "id": i, **p.to_json()}, sort_keys=True) + "\n")
    tensorio.save_tensors(out / "grids.bin", {"before": corpus.before, "after": corpus.after})


def load_corpus(path) -> Corpus:
    path = Path(path)
    meta, grids = path / "pairs.jsonl", path / "grids.bin"
    if not meta.exists() or not grids.exists():
        raise CorpusError(f"{path} is not a corpus directory (needs pairs.jsonl and grids.bin)")
    with open(meta) as fh:
        try:
            records = [json.loads(line) for line in fh if line.strip()]
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{meta}: {exc}") from exc
    if not records or records[0].get("type") != "header":
        raise CorpusError(f"{meta}: missing header line")
    header = records[0]
    if tuple(header["vocab"]) != VOCAB or tuple(header["skeletons"]) != SKELETONS:
        raise CorpusError(f"{meta}: vocabulary does not match this grammar")
    config = GenConfig(**header["config"])
    pairs = [ScenePair.from_json(r) for r in records[1:]]
    try:
        tensors = tensorio.load_tensors(grids)
    except tensorio.FormatError as exc:
        raise CorpusError(f"{grids}: {exc}") from exc
    before, after = tensors.get("before"), tensors.get("after")
    expected = (len(pairs), config.cells, config.channels)
    if before is None or after is None or before.shape != expected or after.shape != expected:
        raise CorpusError(f"{grids}: grid tensors do not have shape {expected}")
    return Corpus(config, pairs, before, after, header.get("seed"))


def corpus_hash(path) -> str:
    digest = hashlib.sha256()
    for name in ("pairs.jsonl", "grids.bin"):
        with open(os.path.join(path, name), "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()
