"""Finite-difference verification of tape gradients.

Central differences with step h on every (or a sampled subset of) coordinate
of the checked tensors, compared against one reverse-mode sweep. The relative
error uses a unit floor in the denominator so near-zero gradients are judged
on absolute error:

    rel_err = |a - n| / max(|a|, |n|, 1.0)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tape, Tensor, backward

__all__ = ["FDReport", "finite_difference_check", "rel_error"]


def rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1.0)


@dataclass
class FDReport:
    """Outcome of one finite-difference comparison."""

    name: str
    n_coords: int
    max_rel_err: float
    tol: float
    worst: Optional[tuple] = None  # (param name, flat index, analytic, numeric)
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        line = (f"[{status}] {self.name}: {self.n_coords} coords, "
                f"max rel err {self.max_rel_err:.3e} (tol {self.tol:.1e})")
        if self.worst is not None:
            pname, idx, a, n = self.worst
            line += f"; worst at {pname}[{idx}] analytic={a:.6e} numeric={n:.6e}"
        return line


def finite_difference_check(f: Callable[[], Tensor], params: Sequence[Tensor],
                            name: str = "check", h: float = 1e-5,
                            tol: float = 1e-4, max_coords: Optional[int] = None,
                            rng: Optional[np.random.Generator] = None) -> FDReport:
    """Compare reverse-mode gradients of scalar `f()` against central differences.

    `f` must be a pure function of the `params` values (it is re-evaluated many
    times with coordinates nudged in place). When a tensor holds more than
    `max_coords` entries, a random subset of coordinates is checked.
    """
    for p in params:
        if not p.requires_grad:
            raise ValueError(f"param {p.name or '<unnamed>'} does not require grad")
        p.zero_grad()

    with Tape():
        loss = f()
        backward(loss)

    analytic = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        analytic.append(np.asarray(g, dtype=np.float64))

    if rng is None:
        rng = np.random.default_rng(0)

    max_err = 0.0
    worst = None
    failures = []
    n_checked = 0
    for p, g in zip(params, analytic):
        flat = p.data.reshape(-1)
        size = flat.size
        if max_coords is not None and size > max_coords:
            coords = rng.choice(size, size=max_coords, replace=False)
        else:
            coords = range(size)
        for idx in coords:
            orig = flat[idx]
            flat[idx] = orig + h
            f_plus = float(f().data)
            flat[idx] = orig - h
            f_minus = float(f().data)
            flat[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(g.reshape(-1)[idx])
            err = rel_error(a, numeric)
            n_checked += 1
            if err > max_err:
                max_err = err
                worst = (p.name or "param", int(idx), a, numeric)
            if err >= tol and len(failures) < 10:
                failures.append((p.name or "param", int(idx), a, numeric, err))

    for p in params:
        p.zero_grad()
    return FDReport(name=name, n_coords=n_checked, max_rel_err=max_err,
                    tol=tol, worst=worst, failures=failures)
