"""Sparse nonnegative Tucker objective, partial gradients and cheap evaluation.

The data-fit term is ``l(C, A) = 0.5 * ||C x_1 A_1 ... x_N A_N - M||_F^2`` and
the full objective adds ``lambda_c ||C||_1 + sum_n lambda_n ||A_n||_1`` (or a
weighted core term ``||W_c * C||_1``).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import as_tensor, frob_norm, inner, matricize, max_abs, ttm_chain

_stamps = itertools.count(1)


def _fresh(k: int) -> tuple[int, ...]:
    return tuple(next(_stamps) for _ in range(k))


@dataclass(frozen=True, eq=False)
class TuckerModel:
    """Core tensor plus one factor matrix per mode (factor n is ``I_n x R_n``).

    Every block carries a version stamp; replacing a block through
    :meth:`with_core` / :meth:`with_factor` issues a new stamp for it, which is
    how stale gradient byproducts are detected.
    """

    core: np.ndarray
    factors: tuple[np.ndarray, ...]
    stamps: tuple[int, ...] = field(default=())

    def __post_init__(self):
        core = as_tensor(self.core)
        factors = tuple(np.asarray(a, dtype=np.float64) for a in self.factors)
        if len(factors) != core.ndim:
            raise ValueError(f"{len(factors)} factors for an order-{core.ndim} core")
        for n, a in enumerate(factors):
            if a.ndim != 2 or a.shape[1] != core.shape[n]:
                raise ValueError(f"factor {n} has shape {a.shape}, core mode size {core.shape[n]}")
        object.__setattr__(self, "core", core)
        object.__setattr__(self, "factors", factors)
        if len(self.stamps) != core.ndim + 1:
            object.__setattr__(self, "stamps", _fresh(core.ndim + 1))

    @property
    def order(self) -> int:
        return self.core.ndim

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(a.shape[0] for a in self.factors)

    @property
    def core_dims(self) -> tuple[int, ...]:
        return self.core.shape

    def with_core(self, core: np.ndarray) -> "TuckerModel":
        return TuckerModel(core, self.factors, _fresh(1) + self.stamps[1:])

    def with_factor(self, n: int, a: np.ndarray) -> "TuckerModel":
        factors = self.factors[:n] + (a,) + self.factors[n + 1:]
        stamps = self.stamps[: n + 1] + _fresh(1) + self.stamps[n + 2:]
        return TuckerModel(self.core, factors, stamps)

    def reconstruct(self) -> np.ndarray:
        return reconstruct(self.core, self.factors)

    def copy(self) -> "TuckerModel":
        return TuckerModel(self.core.copy(), tuple(a.copy() for a in self.factors))

    @classmethod
    def zeros(cls, dims: Sequence[int], core_dims: Sequence[int]) -> "TuckerModel":
        return cls(np.zeros(tuple(core_dims)), tuple(np.zeros((i, r)) for i, r in zip(dims, core_dims)))


@dataclass(frozen=True)
class Regularization:
    """Sparsity weights, sign flag and the bound multiplier tau.

    ``core_weights`` (same shape as the core) replaces ``lambda_core`` when
    given. ``lambda_factors=None`` means no factor penalty.
    """

    lambda_core: float = 0.0
    lambda_factors: tuple[float, ...] | None = None
    core_weights: np.ndarray | None = None
    core_signed: bool = False
    bound_tau: float = 1.0

    def __post_init__(self):
        if self.lambda_core < 0:
            raise ValueError("lambda_core must be nonnegative")
        if self.lambda_factors is not None:
            lf = tuple(float(v) for v in self.lambda_factors)
            if any(v < 0 for v in lf):
                raise ValueError("factor lambdas must be nonnegative")
            object.__setattr__(self, "lambda_factors", lf)
        if self.core_weights is not None:
            w = np.asarray(self.core_weights, dtype=np.float64)
            if np.any(w < 0):
                raise ValueError("core weights must be nonnegative")
            object.__setattr__(self, "core_weights", w)
        if self.bound_tau < 1:
            raise ValueError("bound_tau must be >= 1")

    def factor_lambdas(self, order: int) -> tuple[float, ...]:
        if self.lambda_factors is None:
            return (0.0,) * order
        if len(self.lambda_factors) == 1:
            return self.lambda_factors * order
        if len(self.lambda_factors) != order:
            raise ValueError(f"{len(self.lambda_factors)} factor lambdas for order {order}")
        return self.lambda_factors

    @property
    def core_penalized(self) -> bool:
        if self.core_weights is not None:
            return bool(np.any(self.core_weights > 0))
        return self.lambda_core > 0


class DataView:
    """A data tensor with its squared norm and cached unfoldings."""

    def __init__(self, tensor: np.ndarray):
        self.tensor = tensor
        self.norm2 = float(np.vdot(tensor, tensor))
        self._unfold: dict[int, np.ndarray] = {}

    def unfold(self, n: int) -> np.ndarray:
        m = self._unfold.get(n)
        if m is None:
            m = self._unfold[n] = np.ascontiguousarray(matricize(self.tensor, n))
        return m


class Problem:
    """Data tensor ``M >= 0``, core dimensions and regularization."""

    def __init__(self, data, core_dims: Sequence[int], reg: Regularization | None = None,
                 check_nonneg: bool = True):
        self.data = as_tensor(data)
        self.core_dims = tuple(int(r) for r in core_dims)
        if len(self.core_dims) != self.data.ndim or any(r < 1 for r in self.core_dims):
            raise ValueError(f"core dims {self.core_dims} do not fit data of shape {self.data.shape}")
        if check_nonneg and np.any(self.data < 0):
            raise ValueError("data tensor must be nonnegative")
        self.reg = reg or Regularization()
        if self.reg.core_weights is not None and self.reg.core_weights.shape != self.core_dims:
            raise ValueError("core_weights shape must equal core dims")
        self.lambda_factors = self.reg.factor_lambdas(self.order)
        self.view = DataView(self.data)
        self.max_abs = max_abs(self.data)
        self.bound = self.reg.bound_tau * max(1.0, self.max_abs)

    @property
    def order(self) -> int:
        return self.data.ndim

    @property
    def dims(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def norm2(self) -> float:
        return self.view.norm2

    def core_bound(self) -> float | None:
        """Upper bound applied to the core, active only when it is unpenalized."""
        if self.reg.core_signed or self.reg.core_penalized:
            return None
        return self.bound

    def factor_bound(self, n: int) -> float | None:
        return self.bound if self.lambda_factors[n] == 0 else None


@dataclass(frozen=True, eq=False)
class FactorByproducts:
    """``B_n B_n^T`` and ``M_(n) B_n^T`` from one factor-gradient evaluation."""

    mode: int
    bbt: np.ndarray
    mbt: np.ndarray
    stamps: tuple[int, ...] = ()


class StaleByproductsError(ValueError):
    pass


# -- array level helpers, shared with the solvers -----------------------------

def reconstruct(core: np.ndarray, factors: Sequence[np.ndarray]) -> np.ndarray:
    return ttm_chain(core, factors)


def grams(factors: Sequence[np.ndarray]) -> list[np.ndarray]:
    return [a.T @ a for a in factors]


def project_data(data: np.ndarray, factors: Sequence[np.ndarray]) -> np.ndarray:
    """``M x_1 A_1^T ... x_N A_N^T``."""
    return ttm_chain(data, factors, transpose=True)


def core_gradient(core_hat: np.ndarray, gram_list: Sequence[np.ndarray], projected: np.ndarray) -> np.ndarray:
    return ttm_chain(core_hat, gram_list) - projected


def b_matrix(core: np.ndarray, factors: Sequence[np.ndarray], n: int) -> np.ndarray:
    """Mode-n unfolding of ``C x_{i != n} A_i``; cheapest-expansion modes go first."""
    others = sorted((i for i in range(core.ndim) if i != n),
                    key=lambda i: factors[i].shape[0] / factors[i].shape[1])
    return matricize(ttm_chain(core, factors, skip=n, order=others), n)


def factor_stats(core: np.ndarray, factors: Sequence[np.ndarray], n: int, view: DataView):
    b = b_matrix(core, factors, n)
    return b @ b.T, view.unfold(n) @ b.T


def fit_from_stats(a: np.ndarray, bbt: np.ndarray, mbt: np.ndarray, norm2: float) -> float:
    return 0.5 * (inner(a.T @ a, bbt) - 2.0 * inner(a, mbt) + norm2)


def penalty(core: np.ndarray, factors: Sequence[np.ndarray], reg: Regularization,
            lambda_factors: Sequence[float]) -> float:
    if reg.core_weights is not None:
        total = float(np.sum(np.abs(reg.core_weights * core)))
    else:
        total = reg.lambda_core * float(np.sum(np.abs(core))) if reg.lambda_core else 0.0
    for lam, a in zip(lambda_factors, factors):
        if lam:
            total += lam * float(np.sum(np.abs(a)))
    return total


# -- public operations --------------------------------------------------------

def _check_conformal(w: TuckerModel, p: Problem) -> None:
    if w.dims != p.dims or w.core_dims != p.core_dims:
        raise ValueError(
            f"model {w.dims}/{w.core_dims} does not match problem {p.dims}/{p.core_dims}")


def grad_core(w: TuckerModel, at_core: np.ndarray, p: Problem):
    """Partial gradient in the core, evaluated at ``at_core``.

    Returns ``(gradient, gram_list, projected_data)``; the last two only depend
    on the factors and can be reused for later evaluations.
    """
    _check_conformal(w, p)
    if np.shape(at_core) != p.core_dims:
        raise ValueError(f"core point has shape {np.shape(at_core)}, expected {p.core_dims}")
    g = grams(w.factors)
    projected = project_data(p.data, w.factors)
    return core_gradient(at_core, g, projected), g, projected


def grad_factor(w: TuckerModel, n: int, at_factor: np.ndarray, p: Problem):
    """Partial gradient in factor ``n`` at ``at_factor``, plus reusable byproducts."""
    _check_conformal(w, p)
    expected = (p.dims[n], p.core_dims[n])
    if np.shape(at_factor) != expected:
        raise ValueError(f"factor point has shape {np.shape(at_factor)}, expected {expected}")
    bbt, mbt = factor_stats(w.core, w.factors, n, p.view)
    stamps = tuple(s for i, s in enumerate(w.stamps) if i != n + 1)
    return at_factor @ bbt - mbt, FactorByproducts(n, bbt, mbt, stamps)


def data_fit(w: TuckerModel, p: Problem, byproducts: FactorByproducts) -> float:
    """Data-fit value from factor-gradient byproducts, without reconstruction.

    The byproducts must come from a :func:`grad_factor` call on a model whose
    core and other factors are the ones in ``w``; factor ``byproducts.mode`` may
    have changed since.
    """
    n = byproducts.mode
    stamps = tuple(s for i, s in enumerate(w.stamps) if i != n + 1)
    if byproducts.stamps != stamps:
        raise StaleByproductsError("byproducts were computed for a different core or factors")
    return fit_from_stats(w.factors[n], byproducts.bbt, byproducts.mbt, p.norm2)


def objective(w: TuckerModel, p: Problem, fit: float) -> float:
    return fit + penalty(w.core, w.factors, p.reg, p.lambda_factors)


def direct_fit(w: TuckerModel, p: Problem) -> float:
    r = w.reconstruct() - p.data
    return 0.5 * float(np.vdot(r, r))


def relative_error(w: TuckerModel, p: Problem) -> float:
    """``||reconstruction - M|| / ||M||``; the absolute error when ``M = 0``."""
    err = frob_norm(w.reconstruct() - p.data)
    nm = np.sqrt(p.norm2)
    return err / nm if nm > 0 else err
