"""Finite-difference verification of analytic gradients.

The one oracle every loss and layer in this project is held to: central
differences in float64.  Coordinates whose evaluation put a kinked op (relu,
clamp, L1, ...) within 10*step of its kink are skipped, since the two-sided
difference is meaningless across a kink.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tape, Tensor, backward


class NonDeterministicFunction(RuntimeError):
    """f(x) returned different values on two identical evaluations."""


def _eval(f, values: np.ndarray) -> tuple[float, float]:
    """Evaluate f at fixed values; return (scalar loss, min kink gap seen)."""
    with Tape() as tape:
        loss = f(Tensor(values))
    return loss.item(), tape.min_kink_gap()


def finite_diff_check(f, x: Tensor, step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor and must be deterministic.  The
    error at coordinate i is |analytic - numeric| / max(1, |analytic|); the
    max runs over coordinates not adjacent to a kink (boundary rule above).
    Returns 0.0 when every coordinate is skipped.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    base = np.array(x.values, dtype=np.float64, copy=True)

    v1, nominal_gap = _eval(f, base)
    v2, _ = _eval(f, base)
    if v1 != v2:
        raise NonDeterministicFunction(f"f(x) gave {v1!r} then {v2!r}")

    leaf = Tensor(base, requires_grad=True)
    with Tape() as tape:
        loss = f(leaf)
    if loss.shape != ():
        raise ValueError(f"f must return a scalar, got shape {loss.shape}")
    backward(tape, loss)
    analytic = leaf.grad if leaf.grad is not None else np.zeros_like(base)

    margin = 10.0 * step
    worst = 0.0
    flat = base.reshape(-1)
    a_flat = analytic.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        f_plus, gap_plus = _eval(f, base)
        flat[i] = orig - step
        f_minus, gap_minus = _eval(f, base)
        flat[i] = orig
        if min(nominal_gap, gap_plus, gap_minus) < margin:
            continue
        numeric = (f_plus - f_minus) / (2.0 * step)
        err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]))
        worst = max(worst, err)
    return worst
