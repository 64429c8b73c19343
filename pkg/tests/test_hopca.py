import numpy as np
import pytest

from sparse_ntd.hopca import (
    HopcaProblem,
    hopca_objective,
    orthogonality_penalty,
    orthogonality_residual,
    solve_hopca,
    update_factor_column,
)
from sparse_ntd.model import b_matrix
from sparse_ntd.prox import prox_block, project_unit_ball, soft_threshold, update_core_signed
from sparse_ntd.solver import SolverOptions
from sparse_ntd.synth import SynthRecipe, generate, zero_recovery
from sparse_ntd.tensor import matricize


def test_soft_threshold_examples():
    x = np.array([1.2, -1.2, 0.3])
    assert np.allclose(soft_threshold(x, 0.5), [0.7, -0.7, 0.0])
    assert soft_threshold(x, 0.5)[2] == 0.0
    assert np.array_equal(soft_threshold(x, 0.0), x)
    assert np.array_equal(soft_threshold(x, 2 * np.ones(3)), soft_threshold(x, 2.0))
    rng = np.random.default_rng(0)
    y = rng.standard_normal(1000)
    out = soft_threshold(y, 0.4)
    small = np.abs(y) <= 0.4
    assert np.all(out[small] == 0)
    assert np.allclose(np.abs(y[~small]) - np.abs(out[~small]), 0.4, atol=1e-15)


def test_project_unit_ball():
    v = np.array([0.3, 0.4])
    assert project_unit_ball(v) is v or np.array_equal(project_unit_ball(v), v)
    assert np.array_equal(project_unit_ball(np.array([2.0, 0.0])), [1.0, 0.0])
    rng = np.random.default_rng(1)
    for _ in range(1000):
        u = rng.standard_normal(rng.integers(1, 20)) * rng.exponential(3)
        assert np.linalg.norm(project_unit_ball(u)) <= 1.0


def test_update_core_signed_dispatch():
    rng = np.random.default_rng(2)
    hat, grad = rng.standard_normal((3, 3)), rng.standard_normal((3, 3))
    assert np.allclose(update_core_signed(hat, grad, 2.0, 0.0, signed=True), hat - grad / 2.0)
    weights = np.full((3, 3), 0.3)
    assert np.array_equal(update_core_signed(hat, grad, 2.0, weights, signed=False),
                          prox_block(hat, grad, 2.0, 0.3))
    grid = np.linspace(-5, 5, 2_000_001)
    for _ in range(20):
        h, g, L, lam = rng.standard_normal(), rng.standard_normal(), rng.uniform(0.5, 3), rng.uniform(0, 1)
        obj = g * (grid - h) + 0.5 * L * (grid - h) ** 2 + lam * np.abs(grid)
        best = grid[np.argmin(obj)]
        assert update_core_signed(np.array(h), g, L, lam, signed=True) == pytest.approx(best, abs=1e-5)


def column_subproblem(a, a_cur, j, a_hat, core, factors, n, m, lam, mu, L):
    """Direct evaluation of the column subproblem at candidate column ``a``."""
    b = b_matrix(core, factors, n)
    others = [i for i in range(a_cur.shape[1]) if i != j]
    rest = a_cur[:, others]
    r = np.outer(a, b[j]) + rest @ b[others] - matricize(m, n)
    pen_grad = rest @ (rest.T @ a_hat)
    return 0.5 * np.sum(r * r) + lam * np.sum(np.abs(a)) + mu * (pen_grad @ (a - a_hat) + 0.5 * L * np.sum((a - a_hat) ** 2))


def test_update_factor_column_grid_single_coordinate():
    rng = np.random.default_rng(3)
    grid = np.linspace(-1, 1, 20001)
    for _ in range(5):
        core = rng.standard_normal((2, 2))
        factors = [rng.standard_normal((1, 2)), rng.standard_normal((3, 2))]
        m = rng.standard_normal((1, 3))
        a_cur = factors[0]
        a_hat = rng.uniform(-1, 1, size=1)
        lam, mu = 0.1, 0.5
        b = b_matrix(core, factors, 0)
        col, L = update_factor_column(a_cur, 0, a_hat, b @ b.T, matricize(m, 0) @ b.T, lam, mu)
        vals = [column_subproblem(np.array([g]), a_cur, 0, a_hat, core, factors, 0, m, lam, mu, L) for g in grid]
        assert col[0] == pytest.approx(grid[int(np.argmin(vals))], abs=2e-4)


def test_update_factor_column_single_column_reduces_to_ls_step():
    rng = np.random.default_rng(4)
    core = rng.standard_normal((1, 2))
    factors = [rng.standard_normal((4, 1)), rng.standard_normal((3, 2))]
    m = rng.standard_normal((4, 3))
    b = b_matrix(core, factors, 0)
    bbt, mbt = b @ b.T, matricize(m, 0) @ b.T
    a_hat = rng.standard_normal(4) * 0.1
    col, L = update_factor_column(factors[0], 0, a_hat, bbt, mbt, 0.05, 1.0, l_min=1.0)
    assert L == 1.0
    bb = bbt[0, 0]
    direct = project_unit_ball(soft_threshold((L * a_hat + mbt[:, 0]) / (bb + L), 0.05 / (bb + L)))
    np.testing.assert_allclose(col, direct, atol=1e-14)


def test_update_factor_column_fixed_point():
    rng = np.random.default_rng(5)
    core = rng.standard_normal((2, 2, 2))
    factors = [project_unit_ball(c) for c in rng.standard_normal((2, 5))]
    a = np.column_stack(factors)
    fs = [a, rng.standard_normal((4, 2)), rng.standard_normal((3, 2))]
    m = core
    for n, f in enumerate(fs):
        from sparse_ntd.tensor import ttm
        m = ttm(m, f, n)
    b = b_matrix(core, fs, 0)
    bbt, mbt = b @ b.T, matricize(m, 0) @ b.T
    for j in range(2):
        col, _ = update_factor_column(a, j, a[:, j], bbt, mbt, 0.0, 0.0)
        assert np.linalg.norm(col - a[:, j]) <= 1e-10


def test_orthogonality_helpers():
    q = np.linalg.qr(np.random.default_rng(6).standard_normal((5, 3)))[0]
    assert orthogonality_residual(q) <= 1e-14
    assert orthogonality_residual(q * [1, 2, 3]) <= 1e-14
    z = q.copy()
    z[:, 1] = 0
    assert orthogonality_residual(z) <= 1e-14
    a = np.array([[1.0, 1.0], [0.0, 1.0]])
    assert orthogonality_penalty([a], 2.0) == pytest.approx(1.0 * 1.0)


def test_hopca_penalty_free_monotone():
    rng = np.random.default_rng(7)
    data = rng.standard_normal((6, 5, 4))
    hp = HopcaProblem(data, (2, 2, 2), 0.0, 0.0, 0.0)
    _, tr = solve_hopca(hp, opts=SolverOptions(tol=1e-12, max_iters=100))
    f = [tr.initial_objective] + list(tr.column("objective"))
    assert all(b <= a + 1e-12 * (1 + abs(a)) for a, b in zip(f, f[1:]))


def hopca_recipe(seed):
    return SynthRecipe((20, 20, 20), (3, 3, 3), core_law="gaussian", factor_law="gaussian",
                       sparsify_core=0.6, sparsify_factors=0.7, factor_support="disjoint",
                       normalize_columns=True, rescale_unit_max=False, noise_snr=60, seed=seed)


def test_hopca_objective_trace_and_invariants():
    p, truth = generate(hopca_recipe(1))
    hp = HopcaProblem(p.data, (3, 3, 3), 0.02, 0.02, 0.1)
    w, tr = solve_hopca(hp, opts=SolverOptions(tol=1e-8, max_iters=400))
    f = [tr.initial_objective] + list(tr.column("objective"))
    assert all(b <= a + 1e-12 * (1 + abs(a)) for a, b in zip(f, f[1:]))
    assert tr.records[-1].objective == pytest.approx(hopca_objective(w, hp), rel=1e-9)
    for a in w.factors:
        assert np.all(np.linalg.norm(a, axis=0) <= 1.0)
    for r in tr.records:
        assert r.extra["max_column_norm"] <= 1.0
    assert tr.records[-1].extra["orthogonality"] == tuple(orthogonality_residual(a) for a in w.factors)
    assert max(tr.records[-1].extra["orthogonality"]) <= 1e-2
    assert zero_recovery(truth, w) >= 0.9


def test_hopca_problem_validation():
    with pytest.raises(ValueError):
        HopcaProblem(np.ones((2, 2)), (1, 1), mu=-1.0)
    hp = HopcaProblem(-np.ones((2, 2)), (1, 1), lambda_factors=0.1)
    assert hp.lambda_factors == (0.1, 0.1)
