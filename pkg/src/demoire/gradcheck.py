"""Finite-difference verification of analytic gradients.

The check re-runs the function under float64 (both the analytic backward
pass and the central differences) so the comparison is not limited by
float32 rounding; parameters are temporarily promoted in place and restored
afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import backward, no_grad

__all__ = ["GradCheckReport", "GradCheckEntry", "grad_check"]

_REL_FLOOR = 1e-4  # denominators below this are treated as this


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    n_probed: int


@dataclass
class GradCheckReport:
    entries: list
    tol: float
    passed: bool

    @property
    def max_rel_err(self):
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def __str__(self):
        lines = [f"grad_check tol={self.tol:g} "
                 f"{'PASS' if self.passed else 'FAIL'}"]
        for e in self.entries:
            lines.append(f"  {e.name}: max_rel_err={e.max_rel_err:.3e} "
                         f"({e.n_probed} probed)")
        return "\n".join(lines)


def grad_check(f, params, tol=1e-3, h=1e-3, max_probes=10000, seed=0):
    """Compare analytic gradients of a scalar function against central FD.

    Parameters
    ----------
    f : callable
        Zero-argument deterministic function returning a scalar Tensor;
        closes over ``params``.
    params : sequence of Parameter
        Leaves to differentiate with respect to.
    tol : float
        Maximum allowed relative error ``|a - fd| / max(|a|, |fd|, 1e-4)``.
    h : float
        Central difference step, applied in float64.
    max_probes : int
        Total probed coordinates across all parameters; larger parameters
        are subsampled deterministically from ``seed``.

    Raises
    ------
    RuntimeError
        If two forward evaluations disagree bitwise (non-determinism).
    """
    params = list(params)
    originals = [p.data for p in params]
    for p in params:
        p.data = p.data.astype(np.float64)
    saved_grads = [p.grad for p in params]
    try:
        with no_grad():
            y1 = f().data.copy()
            y2 = f().data.copy()
        if y1.shape != y2.shape or not np.array_equal(y1, y2):
            raise RuntimeError("grad_check: function is not deterministic")

        for p in params:
            p.grad = None
        loss = f()
        backward(loss)
        analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                    for p in params]

        total = sum(p.data.size for p in params)
        rng = np.random.default_rng(seed)
        entries = []
        for idx, p in enumerate(params):
            size = p.data.size
            if total <= max_probes:
                probe_idx = np.arange(size)
            else:
                n = max(1, int(round(max_probes * size / total)))
                n = min(n, size)
                probe_idx = rng.choice(size, size=n, replace=False)
            flat = p.data.reshape(-1)
            an_flat = analytic[idx].reshape(-1)
            worst = 0.0
            for j in probe_idx:
                orig = flat[j]
                flat[j] = orig + h
                with no_grad():
                    fp = float(f().data)
                flat[j] = orig - h
                with no_grad():
                    fm = float(f().data)
                flat[j] = orig
                fd = (fp - fm) / (2.0 * h)
                a = float(an_flat[j])
                denom = max(abs(a), abs(fd), _REL_FLOOR)
                rel = abs(a - fd) / denom
                if rel > worst:
                    worst = rel
            name = getattr(p, "name", "") or f"param_{idx}"
            entries.append(GradCheckEntry(name=name, max_rel_err=worst,
                                          n_probed=len(probe_idx)))
        passed = all(e.max_rel_err <= tol for e in entries)
        return GradCheckReport(entries=entries, tol=tol, passed=passed)
    finally:
        for p, data, g in zip(params, originals, saved_grads):
            p.data = data
            p.grad = g
