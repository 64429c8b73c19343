"""Alternating proximal gradient solvers for sparse nonnegative Tucker.

Two block orders are provided:

* ``apg1``: core, then factors ``A_1 .. A_N``, with a sweep-level re-update
  (all extrapolation weights zero) whenever the objective went up;
* ``apg2``: the pairs ``(core, A_1), (core, A_2), ..., (core, A_N)``, with the
  re-update applied to a single pair.

Lipschitz constants are ``max(l_min, prod ||A_i^T A_i||)`` for the core and
``max(l_min, ||B_n B_n^T||)`` for factor ``n``. Extrapolation weights follow
the FISTA recurrence, capped by ``delta_omega * sqrt(L_prev / L_cur)``.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .model import (
    DataView,
    Problem,
    TuckerModel,
    core_gradient,
    factor_stats,
    fit_from_stats,
    grams,
    penalty,
    project_data,
    reconstruct,
)
from .prox import prox_block
from .tensor import matricize, spectral_norm_psd, ttm_chain

log = logging.getLogger(__name__)

VARIANTS = ("apg1", "apg2")
EXTRAPOLATIONS = ("fista", "none")

#: ``hook(iteration, block, n) -> weight or None``; test-only override of an
#: extrapolation weight. ``block`` is ``"core"`` or ``"factor"``; ``n`` is the
#: factor / pair index (``None`` for the APG-I core).
WeightHook = Callable[[int, str, Optional[int]], Optional[float]]


class NumericalError(RuntimeError):
    """The objective became non-finite."""


@dataclass
class SolverOptions:
    variant: str = "apg2"
    l_min: float = 1.0
    delta_omega: float = 0.9999
    tol: float = 1e-4
    max_iters: int = 500
    max_seconds: float = math.inf
    objective_decrease_window: int = 3
    rng_seed: int = 0
    extrapolation: str = "fista"
    fixed_core: bool = False
    weight_hook: WeightHook | None = None
    clock: Callable[[], float] = time.perf_counter

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.extrapolation not in EXTRAPOLATIONS:
            raise ValueError(f"extrapolation must be one of {EXTRAPOLATIONS}")
        if not 0 < self.delta_omega < 1:
            raise ValueError("delta_omega must lie in (0, 1)")
        if self.l_min <= 0:
            raise ValueError("l_min must be positive")
        if self.max_iters < 0:
            raise ValueError("max_iters must be nonnegative")


@dataclass
class IterRecord:
    iter: int
    seconds: float
    objective: float
    datafit: float
    relerr: float
    redo: int
    core_density: float
    factor_density: float
    lipschitz_core: tuple[float, ...]
    lipschitz_factors: tuple[float, ...]
    weights_core: tuple[float, ...]
    weights_factors: tuple[float, ...]
    pair_objectives: tuple[float, ...] = ()
    redo_pairs: tuple[bool, ...] = ()
    extra: dict = field(default_factory=dict)


@dataclass
class IterateTrace:
    initial_objective: float = math.nan
    records: list[IterRecord] = field(default_factory=list)
    stop_reason: str = ""

    def __len__(self):
        return len(self.records)

    @property
    def redo_count(self) -> int:
        return sum(r.redo for r in self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def iterations_to(self, relerr: float) -> int | None:
        """First iteration whose relative error is at most ``relerr``."""
        for r in self.records:
            if r.relerr <= relerr:
                return r.iter
        return None


# -- extrapolation ------------------------------------------------------------

def next_t(t: float) -> float:
    return 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))


@dataclass
class ExtrapolationState:
    """FISTA ``t`` sequences: one owned by the core (APG-II) and one shared."""

    t_core: float = 1.0
    t_shared: float = 1.0

    def advance(self, block: str) -> float:
        """Advance the named sequence and return the raw weight ``(t_prev - 1) / t``."""
        attr = "t_core" if block == "core" else "t_shared"
        t_prev = getattr(self, attr)
        t = next_t(t_prev)
        setattr(self, attr, t)
        return (t_prev - 1.0) / t


def capped_weight(omega_hat: float, l_prev: float, l_cur: float, delta_omega: float,
                  cap_at_one: bool = False) -> float:
    w = min(omega_hat, delta_omega * math.sqrt(l_prev / l_cur))
    return min(1.0, w) if cap_at_one else w


def fista_weight(state: ExtrapolationState, block: str, l_prev: float, l_cur: float,
                 delta_omega: float = 0.9999, cap_at_one: bool = False) -> float:
    """Advance ``block``'s sequence and return its capped extrapolation weight."""
    return capped_weight(state.advance(block), l_prev, l_cur, delta_omega, cap_at_one)


# -- Lipschitz constants ------------------------------------------------------

def lipschitz_core(factors_or_grams: Sequence[np.ndarray], l_min: float = 1.0,
                   are_grams: bool = False) -> float:
    gs = factors_or_grams if are_grams else grams(factors_or_grams)
    return max(l_min, math.prod(spectral_norm_psd(g) for g in gs))


def lipschitz_factor(b_n_gram: np.ndarray, l_min: float = 1.0) -> float:
    return max(l_min, spectral_norm_psd(b_n_gram))


# -- utilities on models --------------------------------------------------------

def density(w: TuckerModel) -> tuple[float, float]:
    """Fraction of exactly nonzero entries in the core and, pooled, the factors."""
    core_den = np.count_nonzero(w.core) / w.core.size
    nnz = sum(np.count_nonzero(a) for a in w.factors)
    total = sum(a.size for a in w.factors)
    return core_den, nnz / total


def _density_arrays(core, factors):
    nnz = sum(np.count_nonzero(a) for a in factors)
    return np.count_nonzero(core) / core.size, nnz / sum(a.size for a in factors)


def rescale_to_bounds(w: TuckerModel, p: Problem | None = None) -> TuckerModel:
    """Equivalent model whose factor columns have unit maximum absolute value.

    The core absorbs the inverse column scales, so the reconstruction and the
    zero pattern of every block are unchanged. Zero columns keep scale one.
    """
    core = w.core
    factors = []
    for n, a in enumerate(w.factors):
        scale = np.max(np.abs(a), axis=0)
        scale[scale == 0] = 1.0
        factors.append(a / scale)
        shape = [1] * core.ndim
        shape[n] = -1
        core = core * scale.reshape(shape)
    return TuckerModel(core, tuple(factors))


def init_hosvd(p: Problem, rng: np.random.Generator | int | None = None, nonneg: bool = True,
               data: np.ndarray | None = None) -> TuckerModel:
    """HOSVD-processed random start.

    Factors are drawn uniformly on [0, 1]; then, for n = 1..N in turn, factor n
    becomes the leading ``R_n`` left singular vectors of the unfolding of
    ``M x_{i != n} A_i^T`` (clamped at zero when ``nonneg``). Singular vectors
    are signed so that their entries sum to a nonnegative value. The core is
    ``M x_1 A_1^T ... x_N A_N^T``, clamped at zero when ``nonneg``. If an
    unfolding is identically zero the random draw is kept for that factor.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    m = p.data if data is None else data
    factors = [rng.random((i, r)) for i, r in zip(p.dims, p.core_dims)]
    for n in range(p.order):
        b = ttm_chain(m, factors, skip=n, transpose=True)
        bn = matricize(b, n)
        if not np.any(bn):
            continue
        u, _, _ = np.linalg.svd(bn, full_matrices=False)
        r = p.core_dims[n]
        k = min(r, u.shape[1])
        u = u[:, :k]
        signs = np.where(u.sum(axis=0) < 0, -1.0, 1.0)
        u = u * signs
        if nonneg:
            u = np.maximum(0.0, u)
        if k < r:
            warnings.warn(f"core dim {r} exceeds the rank available in mode {n}; padding with random columns")
            u = np.hstack([u, factors[n][:, k:]])
        factors[n] = u
    core = project_data(m, factors)
    if nonneg:
        core = np.maximum(0.0, core)
    return TuckerModel(core, tuple(factors))


# -- the engine ---------------------------------------------------------------

class FullTarget:
    """Fully observed data: the fit is read off the byproduct expansion."""

    masked = False
    per_pair = False

    def __init__(self, p: Problem):
        self.view = p.view
        self.denominator = math.sqrt(p.norm2)

    def after_sweep(self, core, factors):
        return None

    def relerr(self, fit: float) -> float:
        err = math.sqrt(max(0.0, 2.0 * fit))
        return err / self.denominator if self.denominator > 0 else err


class _Engine:
    def __init__(self, p: Problem, init: TuckerModel, opts: SolverOptions, target=None):
        if init.dims != p.dims or init.core_dims != p.core_dims:
            raise ValueError(
                f"init {init.dims}/{init.core_dims} does not match problem {p.dims}/{p.core_dims}")
        for n, (i, r) in enumerate(zip(p.dims, p.core_dims)):
            if r > i:
                warnings.warn(f"core dim {r} exceeds data dim {i} in mode {n} (overcomplete factor)")
        self.p = p
        self.opts = opts
        self.target = target or FullTarget(p)
        self.N = p.order
        self.lam_f = p.lambda_factors
        reg = p.reg
        self.signed = reg.core_signed
        self.lam_c = reg.core_weights if reg.core_weights is not None else reg.lambda_core
        self.core_bound = p.core_bound()
        self.factor_bounds = [p.factor_bound(n) for n in range(self.N)]
        self.core = init.core.copy()
        self.core_prev = self.core
        self.factors = [a.copy() for a in init.factors]
        self.factors_prev = list(self.factors)
        self.state = ExtrapolationState()
        self.fista = opts.extrapolation == "fista"
        self._grams = grams(self.factors)
        self._gram_norms = [spectral_norm_psd(g) for g in self._grams]

    # bookkeeping ---------------------------------------------------------
    def _set_factor(self, n, a):
        self.factors_prev[n] = self.factors[n]
        self.factors[n] = a
        self._grams[n] = a.T @ a
        self._gram_norms[n] = spectral_norm_psd(self._grams[n])

    def _lipschitz_core(self):
        return max(self.opts.l_min, math.prod(self._gram_norms))

    def _penalty(self, core, factors):
        return penalty(core, factors, self.p.reg, self.lam_f)

    def _hook(self, k, block, n, w):
        if self.opts.weight_hook is not None:
            v = self.opts.weight_hook(k, block, n)
            if v is not None:
                return float(v)
        return w

    def initial_objective(self):
        view = self.target.view
        r = reconstruct(self.core, self.factors) - view.tensor
        fit = 0.5 * float(np.vdot(r, r))
        return fit, fit + self._penalty(self.core, self.factors)

    def _core_step(self, core_hat, gram_list, projected, L):
        g = core_gradient(core_hat, gram_list, projected)
        return prox_block(core_hat, g, L, self.lam_c, signed=self.signed, bound=self.core_bound)

    def _factor_step(self, n, core, factors, w, omega_hat, l_prev, k, hooked=True):
        """Return (new factor, L_n, weight, bbt, mbt) for factor ``n``."""
        bbt, mbt = factor_stats(core, factors, n, self.target.view)
        L = max(self.opts.l_min, spectral_norm_psd(bbt))
        if w is None:
            w = capped_weight(omega_hat, l_prev if l_prev is not None else L, L, self.opts.delta_omega)
            if hooked:
                w = self._hook(k, "factor", n, w)
        a = self.factors[n]
        a_hat = a + w * (a - self.factors_prev[n]) if w else a
        new = prox_block(a_hat, a_hat @ bbt - mbt, L, self.lam_f[n], bound=self.factor_bounds[n])
        return new, L, w, bbt, mbt


def _check_finite(value: float, k: int, where: str) -> None:
    if not math.isfinite(value):
        raise NumericalError(f"non-finite objective ({value}) at iteration {k} after {where}")


def _run(p: Problem, init: TuckerModel, opts: SolverOptions, target=None, engine=None, step=None):
    eng = engine or _Engine(p, init, opts, target)
    trace = IterateTrace()
    _, f_prev = eng.initial_objective()
    _check_finite(f_prev, 0, "initialization")
    trace.initial_objective = f_prev
    if step is None:
        step = _apg1_iteration if opts.variant == "apg1" else _apg2_iteration
    t0 = opts.clock()
    stall = 0
    l_prev = {"core": None, "factors": [None] * eng.N}
    for k in range(1, opts.max_iters + 1):
        rec = step(eng, k, f_prev, l_prev)
        masked_fit = eng.target.after_sweep(eng.core, eng.factors)
        if masked_fit is not None:
            rec.datafit = masked_fit
            rec.objective = masked_fit + eng._penalty(eng.core, eng.factors)
        _check_finite(rec.objective, k, "the sweep")
        rec.relerr = eng.target.relerr(rec.datafit)
        rec.seconds = opts.clock() - t0
        rec.core_density, rec.factor_density = _density_arrays(eng.core, eng.factors)
        trace.records.append(rec)
        change = abs(f_prev - rec.objective) / (1.0 + f_prev)
        f_prev = rec.objective
        if rec.redo:
            stall = 0
        else:
            stall = stall + 1 if change <= opts.tol else 0
        if rec.relerr <= opts.tol:
            trace.stop_reason = "relerr"
            break
        if stall >= opts.objective_decrease_window:
            trace.stop_reason = "stalled"
            break
        if rec.seconds >= opts.max_seconds:
            trace.stop_reason = "max_seconds"
            break
    else:
        trace.stop_reason = "max_iters"
    log.debug("stopped after %d iterations (%s)", len(trace), trace.stop_reason)
    model = TuckerModel(eng.core, tuple(eng.factors))
    return model, trace


def _apg1_iteration(eng: _Engine, k: int, f_prev: float, l_prev: dict) -> IterRecord:
    opts = eng.opts
    omega_hat = eng.state.advance("shared") if eng.fista else 0.0
    gram_list = list(eng._grams)
    if opts.fixed_core:
        L_c, projected = math.nan, None
    else:
        L_c = eng._lipschitz_core()
        projected = project_data(eng.target.view.tensor, eng.factors)

    def sweep(zero: bool):
        if opts.fixed_core:
            core, w_c = eng.core, 0.0
        else:
            if zero:
                w_c = 0.0
            else:
                lp = l_prev["core"] if l_prev["core"] is not None else L_c
                w_c = eng._hook(k, "core", None,
                                capped_weight(omega_hat, lp, L_c, opts.delta_omega, cap_at_one=True))
            c_hat = eng.core + w_c * (eng.core - eng.core_prev) if w_c else eng.core
            core = eng._core_step(c_hat, gram_list, projected, L_c)
        factors = list(eng.factors)
        ls, ws = [], []
        for n in range(eng.N):
            new, L, w, bbt, mbt = eng._factor_step(
                n, core, factors, 0.0 if zero else None, omega_hat, l_prev["factors"][n], k)
            factors[n] = new
            ls.append(L)
            ws.append(w)
        fit = fit_from_stats(factors[-1], bbt, mbt, eng.target.view.norm2)
        return core, factors, fit, fit + eng._penalty(core, factors), ls, w_c, ws

    core, factors, fit, f, ls, w_c, ws = sweep(zero=False)
    redo = 0
    if f > f_prev:
        redo = 1
        core, factors, fit, f, ls, w_c, ws = sweep(zero=True)
    if not opts.fixed_core:
        eng.core_prev, eng.core = eng.core, core
        l_prev["core"] = L_c
    for n in range(eng.N):
        eng._set_factor(n, factors[n])
    l_prev["factors"] = ls
    return IterRecord(
        iter=k, seconds=0.0, objective=f, datafit=fit, relerr=math.nan, redo=redo,
        core_density=0.0, factor_density=0.0,
        lipschitz_core=(L_c,), lipschitz_factors=tuple(ls),
        weights_core=(w_c,), weights_factors=tuple(ws))


def _apg2_iteration(eng: _Engine, k: int, f_prev: float, l_prev: dict) -> IterRecord:
    opts = eng.opts
    omega_hat_f = eng.state.advance("shared") if eng.fista else 0.0
    lcs, lfs, wcs, wfs, pair_f, redo_pairs = [], [], [], [], [], []
    f_before = f_prev
    fit = math.nan
    for n in range(eng.N):
        if opts.fixed_core:
            L_c, projected, omega_hat_c = math.nan, None, 0.0
        else:
            L_c = eng._lipschitz_core()
            projected = project_data(eng.target.view.tensor, eng.factors)
            omega_hat_c = eng.state.advance("core") if eng.fista else 0.0
        gram_list = list(eng._grams)

        def pair(zero: bool):
            if opts.fixed_core:
                core, w_c = eng.core, 0.0
            else:
                if zero:
                    w_c = 0.0
                else:
                    lp = l_prev["core"] if l_prev["core"] is not None else L_c
                    w_c = eng._hook(k, "core", n, capped_weight(omega_hat_c, lp, L_c, opts.delta_omega))
                c_hat = eng.core + w_c * (eng.core - eng.core_prev) if w_c else eng.core
                core = eng._core_step(c_hat, gram_list, projected, L_c)
            new, L, w, bbt, mbt = eng._factor_step(
                n, core, eng.factors, 0.0 if zero else None, omega_hat_f, l_prev["factors"][n], k)
            pair_fit = fit_from_stats(new, bbt, mbt, eng.target.view.norm2)
            factors = eng.factors[:n] + [new] + eng.factors[n + 1:]
            return core, new, pair_fit, pair_fit + eng._penalty(core, factors), L, w_c, w

        core, new, pfit, f, L, w_c, w = pair(zero=False)
        redone = False
        if f > f_before:
            redone = True
            core, new, pfit, f, L, w_c, w = pair(zero=True)
        if not opts.fixed_core:
            eng.core_prev, eng.core = eng.core, core
            l_prev["core"] = L_c
        eng._set_factor(n, new)
        l_prev["factors"][n] = L
        f_before, fit = f, pfit
        if eng.target.per_pair and n < eng.N - 1:
            fit = eng.target.after_sweep(eng.core, eng.factors)
            f_before = fit + eng._penalty(eng.core, eng.factors)
        lcs.append(L_c)
        lfs.append(L)
        wcs.append(w_c)
        wfs.append(w)
        pair_f.append(f)
        redo_pairs.append(redone)
    return IterRecord(
        iter=k, seconds=0.0, objective=f_before, datafit=fit, relerr=math.nan,
        redo=sum(redo_pairs), core_density=0.0, factor_density=0.0,
        lipschitz_core=tuple(lcs), lipschitz_factors=tuple(lfs),
        weights_core=tuple(wcs), weights_factors=tuple(wfs),
        pair_objectives=tuple(pair_f), redo_pairs=tuple(redo_pairs))


def solve_apg1(p: Problem, init: TuckerModel, opts: SolverOptions | None = None):
    """Core-then-factors block order with sweep-level re-update."""
    opts = SolverOptions(variant="apg1") if opts is None else _with_variant(opts, "apg1")
    return _run(p, init, opts)


def solve_apg2(p: Problem, init: TuckerModel, opts: SolverOptions | None = None):
    """Interleaved ``(core, A_n)`` pairs with pair-level re-update."""
    opts = SolverOptions(variant="apg2") if opts is None else _with_variant(opts, "apg2")
    return _run(p, init, opts)


def solve(p: Problem, init: TuckerModel | None = None, opts: SolverOptions | None = None):
    """Run the variant named in ``opts``; HOSVD init from ``opts.rng_seed`` if none given."""
    opts = opts or SolverOptions()
    if init is None:
        init = init_hosvd(p, opts.rng_seed)
    return _run(p, init, opts)


def _with_variant(opts: SolverOptions, variant: str) -> SolverOptions:
    return opts if opts.variant == variant else replace(opts, variant=variant)
