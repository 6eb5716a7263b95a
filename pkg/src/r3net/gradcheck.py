"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tensor, backward, no_grad


class NondeterministicLoss(RuntimeError):
    """The loss constructor returned different values for identical parameters."""


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked_entries: dict[str, int] = field(default_factory=dict)
    below_floor: int = 0
    max_abs_below_floor: float = 0.0
    floor: float = 0.0

    @property
    def passed(self) -> bool:
        rel_ok = all(err < self.tolerance for err in self.max_rel_error.values())
        return rel_ok and (self.below_floor == 0 or self.max_abs_below_floor < self.tolerance * self.floor)

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.max_rel_error, key=self.max_rel_error.get)
        return name, self.max_rel_error[name]

    def __str__(self) -> str:
        lines = [f"grad check (tol {self.tolerance:g}): {'PASS' if self.passed else 'FAIL'}"]
        for name, err in sorted(self.max_rel_error.items()):
            lines.append(f"  {name:<24s} {err:.3e} over {self.checked_entries[name]} entries")
        if self.below_floor:
            lines.append(f"  {self.below_floor} entries below |g| floor {self.floor:g}, max abs error {self.max_abs_below_floor:.3e}")
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / (np.abs(analytic) + np.abs(numeric) + 1e-12)


def grad_check(
    build: Callable[[Mapping[str, Tensor]], Tensor],
    params: Mapping[str, Tensor],
    tolerance: float = 1e-5,
    h: float = 1e-6,
    max_entries: int | None = 100,
    seed: int = 0,
    floor: float = 0.0,
) -> GradCheckReport:
    """Compare autodiff gradients of ``build(params)`` with central differences.

    ``build`` must construct a fresh scalar loss from the parameter table each
    time it is called.  When ``max_entries`` is set, that many entries are
    sampled uniformly (without replacement) over all parameters jointly;
    otherwise every entry is perturbed.

    Entries with ``|analytic| + |numeric| < floor`` sit below what a step of
    ``h`` can resolve in relative terms.  They are counted separately and must
    instead meet the absolute bound ``tolerance * floor``, the error an entry
    of magnitude ``floor`` would be allowed.
    """
    for p in params.values():
        p.grad = None
    loss = build(params)
    base = loss.item()
    backward(loss)
    with no_grad():
        again = build(params).item()
    if again != base:
        raise NondeterministicLoss(f"loss changed between identical evaluations: {base!r} vs {again!r}")

    analytic = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for n, p in params.items()}

    names = list(params)
    sizes = np.array([params[n].size for n in names])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])
    if max_entries is None or max_entries >= total:
        flat_ids = np.arange(total)
    else:
        flat_ids = np.sort(np.random.default_rng(seed).choice(total, size=max_entries, replace=False))

    report = GradCheckReport(tolerance=tolerance, floor=floor)
    for n in names:
        report.max_rel_error[n] = 0.0
        report.checked_entries[n] = 0
    with no_grad():
        for fid in flat_ids:
            k = int(np.searchsorted(offsets, fid, side="right") - 1)
            name = names[k]
            flat = params[name].data.reshape(-1)
            j = int(fid - offsets[k])
            orig = flat[j]
            flat[j] = orig + h
            up = build(params).item()
            flat[j] = orig - h
            down = build(params).item()
            flat[j] = orig
            numeric = (up - down) / (2 * h)
            a = float(analytic[name].reshape(-1)[j])
            if abs(a) + abs(numeric) < floor:
                report.below_floor += 1
                report.max_abs_below_floor = max(report.max_abs_below_floor, abs(a - numeric))
                continue
            err = float(relative_error(np.array(a), np.array(numeric)))
            report.max_rel_error[name] = max(report.max_rel_error[name], err)
            report.checked_entries[name] += 1
    for n in names:
        if report.checked_entries[n] == 0:
            del report.max_rel_error[n], report.checked_entries[n]
    for p in params.values():
        p.grad = None
    return report
