"""Caption metrics (BLEU-4, ROUGE-L, CIDEr-D) and task metrics.

Captions are token lists.  Every corpus-level function takes parallel lists
of hypotheses and references, one reference per hypothesis.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .datagen import SCENE_KINDS, parse_caption

Tokens = Sequence[str]


def _ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _check(hyps, refs) -> None:
    if not hyps or not refs:
        raise ValueError("metrics need a nonempty corpus")
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses but {len(refs)} references")


def bleu4(hyps: Sequence[Tokens], refs: Sequence[Tokens]) -> float:
    """Corpus BLEU-4 with brevity penalty.

    A zero n-gram match count for n >= 2 is smoothed to ``(0 + 1) / (total + 1)``;
    a zero unigram precision gives a score of 0.
    """
    _check(hyps, refs)
    matches = [0] * 4
    totals = [0] * 4
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, 5):
            hc, rc = _ngrams(h, n), _ngrams(r, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(h) - n + 1, 0)
    if matches[0] == 0 or hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n in range(4):
        m, t = matches[n], totals[n]
        if m == 0:
            m, t = 1, t + 1
        log_p += math.log(m / t) / 4
    bp = 1.0 if hyp_len >= ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(log_p)


def lcs_length(a: Tokens, b: Tokens) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l_pair(hyp: Tokens, ref: Tokens, beta: float = 1.2) -> float:
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    prec, rec = lcs / len(hyp), lcs / len(ref)
    return (1 + beta**2) * prec * rec / (rec + beta**2 * prec)


def rouge_l(hyps: Sequence[Tokens], refs: Sequence[Tokens], beta: float = 1.2) -> float:
    """Mean sentence-level ROUGE-L F-measure (``beta`` weights recall)."""
    _check(hyps, refs)
    return float(np.mean([rouge_l_pair(h, r, beta) for h, r in zip(hyps, refs)]))


def cider(hyps: Sequence[Tokens], refs: Sequence[Tokens], n: int = 4, sigma: float = 6.0) -> float:
    """CIDEr-D: clipped TF-IDF n-gram cosine with a Gaussian length penalty, x10.

    Document frequencies come from the reference corpus.  The length used by
    the penalty is the token count.
    """
    return float(np.mean(cider_per_pair(hyps, refs, n, sigma)))


def cider_per_pair(hyps: Sequence[Tokens], refs: Sequence[Tokens], n: int = 4, sigma: float = 6.0) -> list[float]:
    _check(hyps, refs)
    df: Counter = Counter()
    for r in refs:
        for k in range(1, n + 1):
            df.update(_ngrams(r, k).keys())
    log_count = math.log(float(len(refs)))

    def vectorize(tokens):
        vecs, norms = [], []
        for k in range(1, n + 1):
            vec = {g: tf * (log_count - math.log(max(1.0, df[g]))) for g, tf in _ngrams(tokens, k).items()}
            vecs.append(vec)
            norms.append(math.sqrt(sum(v * v for v in vec.values())))
        return vecs, norms

    scores = []
    for h, r in zip(hyps, refs):
        vh, nh = vectorize(h)
        vr, nr = vectorize(r)
        delta = len(h) - len(r)
        penalty = math.exp(-(delta**2) / (2 * sigma**2))
        total = 0.0
        for k in range(n):
            dot = sum(min(val, vr[k].get(g, 0.0)) * vr[k].get(g, 0.0) for g, val in vh[k].items())
            if nh[k] != 0 and nr[k] != 0:
                total += penalty * dot / (nh[k] * nr[k])
        scores.append(10.0 * total / n)
    return scores


def change_type_accuracy(hyps: Sequence[Tokens], kinds: Sequence[str]) -> float:
    """Fraction of captions whose grammar-recovered change kind is correct."""
    if len(hyps) != len(kinds):
        raise ValueError("hypotheses and ground truth differ in length")
    if not hyps:
        return 0.0
    hits = 0
    for h, k in zip(hyps, kinds):
        parsed = parse_caption(h)
        hits += parsed is not None and parsed[0] == k
    return hits / len(hyps)


def _argmax_cell(attn: np.ndarray, width: int) -> tuple[int, int]:
    return divmod(int(np.argmax(np.asarray(attn).reshape(-1))), width)


def pointing_accuracy(a_bef, a_aft, cells_bef, cells_aft, width: int) -> float:
    """Fraction of pairs whose before and after argmax cells both hit ground truth.

    Pairs with no ground-truth cells (distractors) are excluded.
    """
    hits = total = 0
    for ab, aa, cb, ca in zip(a_bef, a_aft, cells_bef, cells_aft):
        if not cb:
            continue
        total += 1
        hits += _argmax_cell(ab, width) in set(map(tuple, cb)) and _argmax_cell(aa, width) in set(map(tuple, ca))
    return hits / total if total else 0.0


def exact_match(hyps: Sequence[Tokens], refs: Sequence[Tokens]) -> float:
    _check(hyps, refs)
    return float(np.mean([list(h) == list(r) for h, r in zip(hyps, refs)]))


def skeleton_recall(probs: np.ndarray, labels: np.ndarray, threshold: float = 0.5) -> float:
    """Share of ground-truth skeletons whose probability reaches ``threshold``."""
    labels = np.asarray(labels) > 0.5
    return float((np.asarray(probs)[labels] >= threshold).sum() / max(labels.sum(), 1))


@dataclass
class EvalReport:
    bleu4: float
    rouge_l: float
    cider: float
    change_type_accuracy: float
    pointing_accuracy: float
    exact_match: float
    skeleton_recall: float | None
    count: int
    breakdown: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def caption_scores(hyps, refs) -> dict[str, float]:
    return {"bleu4": bleu4(hyps, refs), "rouge_l": rouge_l(hyps, refs), "cider": cider(hyps, refs)}


def build_report(hyps, refs, kinds, a_bef, a_aft, cells_bef, cells_aft, width, probs=None, labels=None) -> EvalReport:
    scores = {"bleu4": bleu4(hyps, refs), "rouge_l": rouge_l(hyps, refs)}
    per_pair_cider = cider_per_pair(hyps, refs)
    breakdown = {}
    for kind in SCENE_KINDS + ("Distractor",):
        idx = [i for i, k in enumerate(kinds) if k == kind]
        if not idx:
            continue
        sub_h, sub_r = [hyps[i] for i in idx], [refs[i] for i in idx]
        breakdown[kind] = {
            "count": len(idx),
            "bleu4": bleu4(sub_h, sub_r),
            "rouge_l": rouge_l(sub_h, sub_r),
            "cider": float(np.mean([per_pair_cider[i] for i in idx])),
            "change_type_accuracy": change_type_accuracy(sub_h, [kinds[i] for i in idx]),
            "exact_match": exact_match(sub_h, sub_r),
        }
    return EvalReport(
        bleu4=scores["bleu4"],
        rouge_l=scores["rouge_l"],
        cider=float(np.mean(per_pair_cider)),
        change_type_accuracy=change_type_accuracy(hyps, kinds),
        pointing_accuracy=pointing_accuracy(a_bef, a_aft, cells_bef, cells_aft, width),
        exact_match=exact_match(hyps, refs),
        skeleton_recall=None if probs is None else skeleton_recall(probs, labels),
        count=len(hyps),
        breakdown=breakdown,
    )
