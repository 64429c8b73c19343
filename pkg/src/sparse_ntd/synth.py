"""Synthetic Tucker problems and their metrics.

Randomness comes from numpy's PCG64 seeded through ``SeedSequence(seed)``,
split into one child stream per block in a fixed order: core, factor 1, ...,
factor N, noise, mask. Changing e.g. the noise level therefore never changes
the drawn core or factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .masked import MaskedProblem
from .model import Problem, Regularization, TuckerModel

LAWS = ("uniform01", "clipped_gaussian", "abs_gaussian", "gaussian")
SUPPORTS = ("random", "disjoint")


def _draw(rng: np.random.Generator, law: str, shape) -> np.ndarray:
    if law == "uniform01":
        return rng.random(shape)
    if law == "clipped_gaussian":
        return np.maximum(0.0, rng.standard_normal(shape))
    if law == "abs_gaussian":
        return np.abs(rng.standard_normal(shape))
    if law == "gaussian":
        return rng.standard_normal(shape)
    raise ValueError(f"unknown law {law!r}; expected one of {LAWS}")


def _per_factor(value, order: int, name: str) -> list:
    if isinstance(value, (str, int, float)) or value is None:
        return [value] * order
    value = list(value)
    if len(value) == 1:
        return value * order
    if len(value) != order:
        raise ValueError(f"{name}: {len(value)} entries for order {order}")
    return value


@dataclass
class SynthRecipe:
    """How to build ``M = C x_1 A_1 ... x_N A_N (+ noise)`` and optional mask.

    ``identity_core`` replaces the random core by the super-diagonal identity.
    ``factor_unit_max`` scales every factor to unit maximum magnitude before
    sparsification; ``normalize_columns`` scales every factor column to unit
    length after it. ``factor_support="disjoint"`` puts the nonzeros of
    distinct columns on distinct rows, making the columns orthogonal.
    """

    dims: Sequence[int]
    core_dims: Sequence[int]
    core_law: str = "uniform01"
    factor_law: str | Sequence[str] = "clipped_gaussian"
    identity_core: bool = False
    sparsify_core: float = 0.0
    sparsify_factors: float | Sequence[float] = 0.0
    factor_support: str = "random"
    factor_unit_max: bool = False
    normalize_columns: bool = False
    rescale_unit_max: bool = True
    noise_snr: float | None = None
    mask_sr: float | None = None
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.core_dims = tuple(int(r) for r in self.core_dims)
        if len(self.dims) != len(self.core_dims):
            raise ValueError("dims and core_dims must have the same length")
        if any(d < 1 for d in self.dims + self.core_dims):
            raise ValueError("all dimensions must be positive")
        if self.identity_core and len(set(self.core_dims)) != 1:
            raise ValueError("identity_core needs equal core dims")
        for f in [self.sparsify_core] + _per_factor(self.sparsify_factors, len(self.dims), "sparsify_factors"):
            if not 0.0 <= f <= 1.0:
                raise ValueError(f"sparsify fraction {f} outside [0, 1]")
        if self.mask_sr is not None and not 0.0 < self.mask_sr <= 1.0:
            raise ValueError("mask_sr must lie in (0, 1]")
        if self.factor_support not in SUPPORTS:
            raise ValueError(f"factor_support must be one of {SUPPORTS}")
        for law in [self.core_law] + _per_factor(self.factor_law, len(self.dims), "factor_law"):
            if law not in LAWS:
                raise ValueError(f"unknown law {law!r}; expected one of {LAWS}")

    @property
    def order(self) -> int:
        return len(self.dims)


def _sparsify(rng: np.random.Generator, a: np.ndarray, fraction: float) -> np.ndarray:
    k = int(math.floor(fraction * a.size))
    if k == 0:
        return a
    idx = rng.choice(a.size, size=k, replace=False)
    flat = np.reshape(a, -1, order="F").copy()
    flat[idx] = 0.0
    return np.reshape(flat, a.shape, order="F")


def _disjoint_support(rng: np.random.Generator, shape, fraction: float) -> np.ndarray:
    rows, cols = shape
    nnz = rows * cols - int(math.floor(fraction * rows * cols))
    if nnz > rows:
        raise ValueError(f"disjoint support allows at most {rows} nonzeros, fraction {fraction} needs {nnz}")
    order = rng.permutation(rows)[:nnz]
    support = np.zeros(shape, dtype=bool)
    for slot, r in enumerate(order):
        support[r, slot % cols] = True
    return support


def generate(recipe: SynthRecipe, reg: Regularization | None = None):
    """Draw a problem and its ground-truth model; deterministic given the seed.

    Returns ``(problem, truth)``. ``problem`` is a :class:`MaskedProblem` when
    ``mask_sr`` is set, else a :class:`Problem` (sign-checked only for
    nonnegative laws). ``truth`` reconstructs the noise-free data exactly up
    to rounding.
    """
    N = recipe.order
    streams = [np.random.Generator(np.random.PCG64(s))
               for s in np.random.SeedSequence(recipe.seed).spawn(N + 3)]
    core_rng, factor_rngs, noise_rng, mask_rng = streams[0], streams[1:N + 1], streams[N + 1], streams[N + 2]

    if recipe.identity_core:
        core = np.zeros(recipe.core_dims)
        for i in range(recipe.core_dims[0]):
            core[(i,) * N] = 1.0
    else:
        core = _draw(core_rng, recipe.core_law, recipe.core_dims)
        core = _sparsify(core_rng, core, recipe.sparsify_core)

    laws = _per_factor(recipe.factor_law, N, "factor_law")
    fracs = _per_factor(recipe.sparsify_factors, N, "sparsify_factors")
    factors = []
    for n in range(N):
        rng = factor_rngs[n]
        shape = (recipe.dims[n], recipe.core_dims[n])
        a = _draw(rng, laws[n], shape)
        if recipe.factor_unit_max:
            top = np.max(np.abs(a))
            if top > 0:
                a = a / top
        if recipe.factor_support == "disjoint":
            a = np.where(_disjoint_support(rng, shape, fracs[n]), a, 0.0)
        else:
            a = _sparsify(rng, a, fracs[n])
        if recipe.normalize_columns:
            nrm = np.linalg.norm(a, axis=0)
            nrm[nrm == 0] = 1.0
            a = a / nrm
        factors.append(a)

    truth = TuckerModel(core, tuple(factors))
    signal = truth.reconstruct()
    if recipe.rescale_unit_max:
        top = float(np.max(np.abs(signal)))
        if top > 0:
            truth = TuckerModel(core / top, tuple(factors))
            signal = signal / top
    data = signal
    if recipe.noise_snr is not None:
        g = noise_rng.standard_normal(signal.shape)
        scale = np.linalg.norm(signal) / (np.linalg.norm(g) * 10.0 ** (recipe.noise_snr / 20.0))
        data = signal + scale * g

    nonneg = bool(np.all(data >= 0))
    if recipe.mask_sr is not None:
        mask = (mask_rng.random(data.shape) < recipe.mask_sr).astype(np.float64)
        return MaskedProblem(data, mask, recipe.core_dims, reg), truth
    return Problem(data, recipe.core_dims, reg, check_nonneg=nonneg), truth


def snr_of(signal: np.ndarray, noise: np.ndarray) -> float:
    """``10 log10(||signal||^2 / ||noise||^2)`` in dB; ``inf`` for zero noise."""
    if np.shape(signal) != np.shape(noise):
        raise ValueError("signal and noise must have the same shape")
    pn = float(np.vdot(noise, noise))
    if pn == 0:
        return math.inf
    return 10.0 * math.log10(float(np.vdot(signal, signal)) / pn)


def match_columns(truth: np.ndarray, estimate: np.ndarray) -> list[int]:
    """Greedy maximum-|cosine| matching: ``out[j]`` is the estimate column paired with truth column ``j``."""
    def unit(a):
        nrm = np.linalg.norm(a, axis=0)
        nrm[nrm == 0] = 1.0
        return a / nrm

    sim = np.abs(unit(truth).T @ unit(estimate))
    out = [-1] * truth.shape[1]
    free_t, free_e = set(range(truth.shape[1])), set(range(estimate.shape[1]))
    while free_t and free_e:
        j, i = max(((j, i) for j in free_t for i in free_e), key=lambda ji: sim[ji])
        out[j] = i
        free_t.discard(j)
        free_e.discard(i)
    return out


def zero_recovery(truth: TuckerModel, estimate: TuckerModel) -> float:
    """Fraction of exact zeros in the true factors that are exact zeros in ``estimate``.

    Estimate columns are first matched to true columns per factor.
    """
    hit = total = 0
    for a, b in zip(truth.factors, estimate.factors):
        perm = match_columns(a, b)
        bp = b[:, perm]
        zeros = a == 0
        total += int(np.count_nonzero(zeros))
        hit += int(np.count_nonzero(zeros & (bp == 0)))
    return hit / total if total else 1.0
