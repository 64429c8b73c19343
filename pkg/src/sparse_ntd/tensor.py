"""Dense N-way tensor algebra.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Whenever a
tensor is flattened (``vec``, matricization column order, the TNS1 file
format) the first index varies fastest, so the linear position of entry
``(i_1, ..., i_N)`` is ``sum_n i_n * prod_{m<n} I_m`` (zero based).

Mode indices are zero based throughout the Python API.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

MAX_ORDER = 8


def as_tensor(x) -> np.ndarray:
    """Validate and convert to a float64 array of order 1..8."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim < 1 or arr.ndim > MAX_ORDER:
        raise ValueError(f"tensor order must be in 1..{MAX_ORDER}, got {arr.ndim}")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"every dimension must be >= 1, got {arr.shape}")
    return arr


def _check_mode(ndim: int, n: int) -> None:
    if not 0 <= n < ndim:
        raise ValueError(f"mode {n} out of range for an order-{ndim} tensor")


def vec(x: np.ndarray) -> np.ndarray:
    """Stack the entries of ``x`` with the first index fastest."""
    return np.reshape(x, -1, order="F")


def unvec(v: np.ndarray, shape: Sequence[int]) -> np.ndarray:
    return np.reshape(v, tuple(shape), order="F")


def matricize(x: np.ndarray, n: int) -> np.ndarray:
    """Mode-n unfolding: an ``I_n x prod_{k != n} I_k`` matrix of mode-n fibers.

    Column ``j`` collects the fiber with remaining indices ordered so that the
    lowest remaining mode varies fastest.
    """
    _check_mode(x.ndim, n)
    return np.reshape(np.moveaxis(x, n, 0), (x.shape[n], -1), order="F")


def fold(m: np.ndarray, n: int, shape: Sequence[int]) -> np.ndarray:
    """Inverse of :func:`matricize` for a target ``shape``."""
    shape = tuple(int(s) for s in shape)
    _check_mode(len(shape), n)
    m = np.asarray(m, dtype=np.float64)
    rest = shape[:n] + shape[n + 1:]
    if m.ndim != 2 or m.shape[0] != shape[n] or m.shape[1] != int(np.prod(rest, dtype=np.int64)):
        raise ValueError(
            f"cannot fold a {m.shape} matrix along mode {n} into shape {shape}"
        )
    return np.moveaxis(np.reshape(m, (shape[n],) + rest, order="F"), 0, n)


def ttm(x: np.ndarray, a: np.ndarray, n: int, transpose: bool = False) -> np.ndarray:
    """Mode-n product ``x ×_n a`` (or ``x ×_n a.T`` when ``transpose``)."""
    _check_mode(x.ndim, n)
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError("ttm expects a 2-d matrix")
    inner = a.shape[0] if transpose else a.shape[1]
    if inner != x.shape[n]:
        raise ValueError(
            f"inner dimension mismatch: matrix {a.shape}{'^T' if transpose else ''}"
            f" against mode {n} of size {x.shape[n]}"
        )
    y = np.tensordot(a, x, axes=(0 if transpose else 1, n))
    return np.moveaxis(y, 0, n)


def ttm_chain(
    x: np.ndarray,
    mats: Sequence[np.ndarray],
    modes: Iterable[int] | None = None,
    skip: int | None = None,
    transpose: bool = False,
    order: Sequence[int] | None = None,
) -> np.ndarray:
    """Apply a sequence of mode products without forming any Kronecker product.

    ``mats[i]`` multiplies mode ``modes[i]`` (default: mode ``i``). The products
    are applied in ascending mode order unless ``order`` lists the modes
    explicitly; ``skip`` leaves one mode untouched.
    """
    if modes is None:
        modes = range(len(mats))
    modes = list(modes)
    if len(set(modes)) != len(modes):
        raise ValueError("modes must be distinct")
    by_mode = dict(zip(modes, mats))
    seq = sorted(by_mode) if order is None else [m for m in order if m in by_mode]
    y = x
    for m in seq:
        if m == skip:
            continue
        y = ttm(y, by_mode[m], m, transpose=transpose)
    return y


def inner(a: np.ndarray, b: np.ndarray) -> float:
    if np.shape(a) != np.shape(b):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")
    return float(np.vdot(a, b))


def frob_norm(a: np.ndarray) -> float:
    return float(np.sqrt(np.vdot(a, a)))


def max_abs(a: np.ndarray) -> float:
    return float(np.max(np.abs(a))) if np.size(a) else 0.0


def spectral_norm_psd(g: np.ndarray, tol: float = 1e-12, max_iter: int = 500) -> float:
    """Largest eigenvalue of a symmetric positive semidefinite matrix.

    Power iteration from the normalized all-ones vector, stopped when the
    Rayleigh quotient changes by less than ``tol`` (relative) or after
    ``max_iter`` steps.
    """
    g = np.asarray(g, dtype=np.float64)
    k = g.shape[0]
    if k == 0 or not np.any(g):
        return 0.0
    if k == 1:
        return float(abs(g[0, 0]))
    x = np.full(k, 1.0 / np.sqrt(k))
    y = g @ x
    if not np.any(y):
        # all-ones lies in the null space; restart on the heaviest coordinate
        x = np.zeros(k)
        x[int(np.argmax(np.diag(g)))] = 1.0
        y = g @ x
    rq = float(x @ y)
    for _ in range(max_iter):
        x = y / np.linalg.norm(y)
        y = g @ x
        new = float(x @ y)
        if abs(new - rq) <= tol * abs(new):
            rq = new
            break
        rq = new
    return rq


def kron_chain(mats: Sequence[np.ndarray]) -> np.ndarray:
    """``mats[-1] ⊗ ... ⊗ mats[0]``, materialized. Only for small checks."""
    out = np.ones((1, 1))
    for a in mats:
        out = np.kron(a, out)
    return out
