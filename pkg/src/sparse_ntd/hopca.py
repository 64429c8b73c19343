"""Relaxed sparse higher-order PCA.

Minimizes::

    0.5 ||C x_1 A_1 ... x_N A_N - M||^2 + lambda_c |C|_1 + sum_n lambda_n |A_n|_1
        + mu/2 * sum_n sum_{i<j} (a_{n,i}^T a_{n,j})^2      s.t. ||a_{n,j}|| <= 1

with a signed core. Blocks are visited as ``C, A_1, C, A_2, ..., C, A_N``;
each factor is updated one column at a time by a closed-form prox step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import Problem, Regularization, TuckerModel, factor_stats, fit_from_stats, project_data
from .prox import project_unit_ball, soft_threshold, update_core_signed  # noqa: F401
from .solver import (
    IterRecord,
    SolverOptions,
    _Engine,
    _run,
    capped_weight,
    init_hosvd,
)
from .tensor import spectral_norm_psd


@dataclass
class HopcaProblem:
    data: np.ndarray
    core_dims: Sequence[int]
    lambda_core: float = 0.0
    lambda_factors: Sequence[float] | float = 0.0
    mu: float = 0.0

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        lf = self.lambda_factors
        lf = (float(lf),) if np.isscalar(lf) else tuple(float(v) for v in lf)
        reg = Regularization(lambda_core=self.lambda_core, lambda_factors=lf, core_signed=True)
        self.problem = Problem(self.data, self.core_dims, reg, check_nonneg=False)
        self.lambda_factors = self.problem.lambda_factors


def orthogonality_penalty(factors: Sequence[np.ndarray], mu: float) -> float:
    """``mu/2 * sum over unordered column pairs of squared inner products``."""
    if not mu:
        return 0.0
    total = 0.0
    for a in factors:
        g = a.T @ a
        total += 0.5 * (float(np.sum(g * g)) - float(np.sum(np.diag(g) ** 2)))
    return 0.5 * mu * total


def orthogonality_residual(a: np.ndarray) -> float:
    """``||U^T U - D||_F / ||I||_F`` with ``U`` the column-normalized factor.

    ``D`` is the identity restricted to nonzero columns: a zero column cannot
    be normalized and is orthogonal to everything, so it contributes nothing.
    """
    nrm = np.linalg.norm(a, axis=0)
    live = nrm > 0
    u = a[:, live] / nrm[live]
    r = a.shape[1]
    return float(np.linalg.norm(u.T @ u - np.eye(u.shape[1])) / math.sqrt(r))


def hopca_objective(w: TuckerModel, hp: HopcaProblem) -> float:
    """Objective by direct reconstruction."""
    r = w.reconstruct() - hp.problem.data
    val = 0.5 * float(np.vdot(r, r)) + hp.lambda_core * float(np.sum(np.abs(w.core)))
    val += sum(lam * float(np.sum(np.abs(a))) for lam, a in zip(hp.lambda_factors, w.factors))
    return val + orthogonality_penalty(w.factors, hp.mu)


def update_factor_column(a_cur: np.ndarray, j: int, a_hat_col: np.ndarray, bbt: np.ndarray,
                         mbt: np.ndarray, lam: float, mu: float, L: float | None = None,
                         l_min: float = 1.0):
    """Closed-form update of column ``j`` of a factor.

    ``a_cur`` holds the already-updated columns before ``j`` and the previous
    ones after it; ``bbt``/``mbt`` are ``B_n B_n^T`` and ``M_(n) B_n^T``.
    Returns ``(new_column, L)`` where ``L`` is the spectral norm of the Gram of
    the other columns (``l_min`` when there are none) unless given.
    """
    r = a_cur.shape[1]
    others = [i for i in range(r) if i != j]
    rest = a_cur[:, others]
    b = float(bbt[j, j])
    resid = rest @ bbt[others, j] - mbt[:, j]
    if L is None:
        L = spectral_norm_psd(rest.T @ rest) if others else l_min
    pen_grad = rest @ (rest.T @ a_hat_col) if others else np.zeros_like(a_hat_col)
    denom = b + mu * L
    if denom <= 0:
        # neither data nor penalty touches this column
        return np.zeros_like(a_hat_col), L
    z = (mu * L * a_hat_col - resid - mu * pen_grad) / denom
    return project_unit_ball(soft_threshold(z, lam / denom)), L


def _column_weight(omega_hat: float, l_prev: float | None, l_cur: float, delta_omega: float) -> float:
    if l_prev is None:
        l_prev = l_cur
    if l_cur == 0:
        return omega_hat
    return capped_weight(omega_hat, l_prev, l_cur, delta_omega)


class _HopcaEngine(_Engine):
    def __init__(self, hp: HopcaProblem, init: TuckerModel, opts: SolverOptions):
        super().__init__(hp.problem, init, opts)
        self.mu = hp.mu
        self.factors = [np.column_stack([project_unit_ball(c) for c in a.T]) for a in self.factors]
        self.factors_prev = list(self.factors)
        self._grams = [a.T @ a for a in self.factors]
        self._gram_norms = [spectral_norm_psd(g) for g in self._grams]

    def _penalty(self, core, factors):
        return super()._penalty(core, factors) + orthogonality_penalty(factors, self.mu)


def _hopca_iteration(eng: _HopcaEngine, k: int, f_prev: float, l_prev: dict) -> IterRecord:
    opts = eng.opts
    cols = l_prev.setdefault("columns", [[None] * a.shape[1] for a in eng.factors])
    omega_hat_f = eng.state.advance("shared") if eng.fista else 0.0
    lcs, lfs, wcs, wfs, pair_f, redo_pairs = [], [], [], [], [], []
    f_before, fit = f_prev, math.nan
    for n in range(eng.N):
        L_c = eng._lipschitz_core()
        projected = project_data(eng.target.view.tensor, eng.factors)
        omega_hat_c = eng.state.advance("core") if eng.fista else 0.0
        gram_list = list(eng._grams)

        def pair(zero: bool):
            if zero:
                w_c = 0.0
            else:
                lp = l_prev["core"] if l_prev["core"] is not None else L_c
                w_c = eng._hook(k, "core", n, capped_weight(omega_hat_c, lp, L_c, opts.delta_omega))
            c_hat = eng.core + w_c * (eng.core - eng.core_prev) if w_c else eng.core
            core = eng._core_step(c_hat, gram_list, projected, L_c)
            bbt, mbt = factor_stats(core, eng.factors, n, eng.target.view)
            old, older = eng.factors[n], eng.factors_prev[n]
            a = old.copy()
            ls, ws = [], []
            for j in range(a.shape[1]):
                rest = np.delete(a, j, axis=1)
                L = spectral_norm_psd(rest.T @ rest) if rest.shape[1] else opts.l_min
                if zero:
                    w = 0.0
                else:
                    w = eng._hook(k, "factor", n, _column_weight(omega_hat_f, cols[n][j], L, opts.delta_omega))
                a_hat = old[:, j] + w * (old[:, j] - older[:, j]) if w else old[:, j]
                a[:, j], _ = update_factor_column(a, j, a_hat, bbt, mbt, eng.lam_f[n], eng.mu, L=L)
                ls.append(L)
                ws.append(w)
            pfit = fit_from_stats(a, bbt, mbt, eng.target.view.norm2)
            factors = eng.factors[:n] + [a] + eng.factors[n + 1:]
            return core, a, pfit, pfit + eng._penalty(core, factors), ls, w_c, ws

        core, new, pfit, f, ls, w_c, ws = pair(zero=False)
        redone = False
        if f > f_before:
            redone = True
            core, new, pfit, f, ls, w_c, ws = pair(zero=True)
        eng.core_prev, eng.core = eng.core, core
        l_prev["core"] = L_c
        eng._set_factor(n, new)
        cols[n] = ls
        f_before, fit = f, pfit
        lcs.append(L_c)
        lfs.append(tuple(ls))
        wcs.append(w_c)
        wfs.append(tuple(ws))
        pair_f.append(f)
        redo_pairs.append(redone)
    rec = IterRecord(
        iter=k, seconds=0.0, objective=f_before, datafit=fit, relerr=math.nan,
        redo=sum(redo_pairs), core_density=0.0, factor_density=0.0,
        lipschitz_core=tuple(lcs), lipschitz_factors=tuple(lfs),
        weights_core=tuple(wcs), weights_factors=tuple(wfs),
        pair_objectives=tuple(pair_f), redo_pairs=tuple(redo_pairs))
    rec.extra["orthogonality"] = tuple(orthogonality_residual(a) for a in eng.factors)
    rec.extra["max_column_norm"] = max(float(np.max(np.linalg.norm(a, axis=0))) for a in eng.factors)
    return rec


def solve_hopca(hp: HopcaProblem, init: TuckerModel | None = None, opts: SolverOptions | None = None):
    """Column-wise APG for the relaxed sparse HOPCA model.

    Without ``init`` a signed HOSVD start is used. Columns of the start are
    projected into the unit ball.
    """
    opts = opts or SolverOptions()
    if init is None:
        init = init_hosvd(hp.problem, opts.rng_seed, nonneg=False)
    eng = _HopcaEngine(hp, init, opts)
    return _run(hp.problem, init, opts, engine=eng, step=_hopca_iteration)
