"""Sparse NTD from partially observed entries.

The solver works on a completed tensor ``X`` that agrees with the observed
data on the mask and holds the current reconstruction elsewhere. Every
reference to the data in the gradient and objective steps reads ``X``; after
each sweep (or outer iteration for ``apg2``) ``X`` is refreshed with
:func:`update_completion`.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .model import DataView, Problem, Regularization, TuckerModel, reconstruct
from .solver import SolverOptions, _run, init_hosvd
from .tensor import as_tensor


def project_mask(a: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Keep entries where ``mask`` is one, zero the rest."""
    if np.shape(a) != np.shape(mask):
        raise ValueError(f"shape mismatch: {np.shape(a)} vs {np.shape(mask)}")
    return np.where(np.asarray(mask) != 0, a, 0.0)


class MaskedProblem:
    """Observed tensor, its 0/1 mask, core dims, regularization, completion."""

    def __init__(self, observed, mask, core_dims: Sequence[int],
                 reg: Regularization | None = None):
        observed = as_tensor(observed)
        mask = as_tensor(mask)
        if observed.shape != mask.shape:
            raise ValueError(f"mask shape {mask.shape} differs from data shape {observed.shape}")
        if not np.all((mask == 0) | (mask == 1)):
            raise ValueError("mask entries must be 0 or 1")
        self.mask = mask.astype(bool)
        self.observed = observed
        self.observed_masked = project_mask(observed, self.mask)
        # the bare problem on P_Omega(M) carries dims, bounds and lambdas
        self.base = Problem(self.observed_masked, core_dims, reg)
        self.completion = self.observed_masked.copy()
        self.norm_observed = float(np.linalg.norm(self.observed_masked))

    core_dims = property(lambda self: self.base.core_dims)
    reg = property(lambda self: self.base.reg)
    dims = property(lambda self: self.base.dims)

    @property
    def sampling_ratio(self) -> float:
        return float(np.count_nonzero(self.mask)) / self.mask.size

    def masked_relative_error(self, w: TuckerModel) -> float:
        r = project_mask(w.reconstruct() - self.observed, self.mask)
        nrm = float(np.linalg.norm(r))
        return nrm / self.norm_observed if self.norm_observed > 0 else nrm


def _complete(observed: np.ndarray, mask: np.ndarray, rec: np.ndarray) -> np.ndarray:
    return np.where(mask, observed, rec)


def update_completion(w: TuckerModel, mp: MaskedProblem) -> None:
    """Set ``completion`` to the observed entries on the mask, reconstruction off it."""
    mp.completion = _complete(mp.observed, mp.mask, w.reconstruct())


class MaskedTarget:
    """Solver data source that refreshes the completed tensor after each sweep."""

    masked = True

    def __init__(self, mp: MaskedProblem, per_pair: bool = False):
        self.mp = mp
        self.view = DataView(mp.completion)
        self.per_pair = per_pair
        self.denominator = mp.norm_observed

    def after_sweep(self, core, factors) -> float:
        rec = reconstruct(core, factors)
        mp = self.mp
        mp.completion = _complete(mp.observed, mp.mask, rec)
        self.view = DataView(mp.completion)
        r = np.where(mp.mask, rec - mp.observed, 0.0)
        return 0.5 * float(np.vdot(r, r))

    def relerr(self, fit: float) -> float:
        err = math.sqrt(max(0.0, 2.0 * fit))
        return err / self.denominator if self.denominator > 0 else err


def solve_masked(mp: MaskedProblem, init: TuckerModel | None = None,
                 opts: SolverOptions | None = None, per_pair: bool = False):
    """APG-I / APG-II on the masked objective; the variant comes from ``opts``.

    ``per_pair`` (APG-II only) refreshes the completion after every pair
    instead of once per outer iteration.
    """
    opts = opts or SolverOptions()
    if init is None:
        init = init_hosvd(mp.base, opts.rng_seed)
    mp.completion = mp.observed_masked.copy()
    return _run(mp.base, init, opts, target=MaskedTarget(mp, per_pair=per_pair))
