"""Proximal maps used by the block updates."""

from __future__ import annotations

import numpy as np


def soft_threshold(x, mu):
    """Componentwise ``sign(x) * max(0, |x| - mu)``; ``mu`` may be an array."""
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(0.0, np.abs(x) - mu)


def project_unit_ball(v):
    """``v`` if ``||v|| <= 1`` else ``v / ||v||``, with the norm bound exact in floating point."""
    v = np.asarray(v, dtype=np.float64)
    nrm = float(np.linalg.norm(v))
    if nrm <= 1.0:
        return v
    u = v / nrm
    # rounding can leave the quotient a few ulps outside the ball, and the
    # vector, column and summation forms of the norm round differently
    while _norm_upper(u) > 1.0:
        u = u * (1.0 - 2.0 ** -52)
    return u


def _norm_upper(u: np.ndarray) -> float:
    col = np.linalg.norm(np.stack([u, u], axis=1), axis=0)[0]
    return max(float(np.linalg.norm(u)), float(np.sqrt(np.sum(u * u))), float(col))


def prox_block(hat, grad, L: float, lam=0.0, signed: bool = False, bound: float | None = None):
    """One prox-linear step ``argmin <grad, x - hat> + L/2 ||x - hat||^2 + lam |x|_1``.

    Nonnegative blocks get ``max(0, hat - grad/L - lam/L)`` clipped at
    ``bound`` when given; signed blocks get the soft-threshold of the gradient
    step. ``lam`` may be a weight array of the block's shape.
    """
    if signed:
        return soft_threshold(hat - grad / L, np.divide(lam, L))
    out = np.maximum(0.0, hat - grad / L - np.divide(lam, L))
    if bound is not None:
        out = np.minimum(out, bound)
    return out


def update_core_signed(hat, grad, L: float, lam_or_weights, signed: bool):
    """Core update for the four (signed, weighted) combinations.

    A scalar ``lam_or_weights`` is a plain l1 weight, an array is a per-entry
    weight tensor.
    """
    return prox_block(hat, grad, L, lam_or_weights, signed=signed)
