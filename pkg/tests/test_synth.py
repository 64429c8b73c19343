import math

import numpy as np
import pytest

from sparse_ntd.masked import MaskedProblem
from sparse_ntd.model import relative_error
from sparse_ntd.synth import SynthRecipe, generate, match_columns, snr_of, zero_recovery


def test_exact_reconstruction_without_noise():
    p, truth = generate(SynthRecipe((6, 5, 4), (2, 2, 2), rescale_unit_max=False, seed=0))
    assert relative_error(truth, p) == 0.0


def test_rescale_unit_max():
    p, truth = generate(SynthRecipe((6, 5, 4), (2, 2, 2), seed=1))
    assert abs(np.max(np.abs(p.data)) - 1.0) <= 1e-15
    assert relative_error(truth, p) <= 1e-15


def test_seed_determinism_and_stream_independence():
    r = dict(dims=(6, 5, 4), core_dims=(2, 2, 2), sparsify_factors=0.5, seed=7, rescale_unit_max=False)
    (p1, t1), (p2, t2) = generate(SynthRecipe(**r)), generate(SynthRecipe(**r))
    assert np.array_equal(p1.data, p2.data)
    # noise has its own stream: the drawn model does not move when noise is added
    _, t3 = generate(SynthRecipe(**r, noise_snr=30))
    assert np.array_equal(t1.core, t3.core)
    assert all(np.array_equal(a, b) for a, b in zip(t1.factors, t3.factors))


def test_declared_sparsity_is_exact():
    for frac in (0.0, 0.25, 0.5, 0.9, 1.0):
        _, t = generate(SynthRecipe((10, 7, 9), (3, 4, 2), core_law="uniform01", factor_law="uniform01",
                                    sparsify_core=frac, sparsify_factors=frac, seed=3, rescale_unit_max=False))
        assert np.count_nonzero(t.core == 0) == math.floor(frac * t.core.size)
        for a in t.factors:
            assert np.count_nonzero(a == 0) == math.floor(frac * a.size)


def test_disjoint_supports_are_orthogonal():
    _, t = generate(SynthRecipe((20, 20, 20), (3, 3, 3), factor_law="gaussian", core_law="gaussian",
                                sparsify_factors=0.7, factor_support="disjoint", normalize_columns=True,
                                rescale_unit_max=False, seed=4))
    for a in t.factors:
        np.testing.assert_allclose(a.T @ a, np.eye(3), atol=1e-14)
        assert np.count_nonzero(a) == 60 - math.floor(0.7 * 60)
    with pytest.raises(ValueError):
        generate(SynthRecipe((4, 4), (3, 3), factor_support="disjoint", sparsify_factors=0.1))


def test_mask_count_within_binomial_band():
    p, _ = generate(SynthRecipe((10, 10, 10), (2, 2, 2), mask_sr=0.3, seed=5))
    assert isinstance(p, MaskedProblem)
    n = p.mask.size
    assert abs(np.count_nonzero(p.mask) - 0.3 * n) <= 4 * math.sqrt(n * 0.3 * 0.7)


def test_snr():
    rng = np.random.default_rng(0)
    s = rng.standard_normal((4, 4))
    assert snr_of(s, s) == pytest.approx(0.0)
    assert snr_of(s, s / 10) == pytest.approx(20.0)
    assert snr_of(s, np.zeros_like(s)) == math.inf
    r = SynthRecipe((8, 8, 8), (2, 2, 2), seed=6)
    p, truth = generate(SynthRecipe(**{**r.__dict__, "noise_snr": 60.0}))
    clean = truth.reconstruct()
    assert abs(snr_of(clean, p.data - clean) - 60.0) <= 0.5


def test_recipe_validation():
    with pytest.raises(ValueError):
        SynthRecipe((3, 3), (2,))
    with pytest.raises(ValueError):
        SynthRecipe((3, 3), (2, 2), sparsify_core=1.5)
    with pytest.raises(ValueError):
        SynthRecipe((3, 3), (2, 2), mask_sr=0.0)
    with pytest.raises(ValueError):
        SynthRecipe((3, 3), (2, 2), core_law="cauchy")
    with pytest.raises(ValueError):
        SynthRecipe((3, 3), (2, 3), identity_core=True)


def test_identity_core_and_unit_max_factors():
    _, t = generate(SynthRecipe((6, 6, 6), (3, 3, 3), identity_core=True,
                                factor_law=("abs_gaussian", "abs_gaussian", "uniform01"),
                                factor_unit_max=True, rescale_unit_max=False, seed=8))
    assert np.count_nonzero(t.core) == 3 and t.core[1, 1, 1] == 1.0
    for a in t.factors:
        assert np.max(np.abs(a)) == 1.0


def test_column_matching_and_recovery():
    rng = np.random.default_rng(9)
    a = np.abs(rng.standard_normal((6, 3)))
    perm = [2, 0, 1]
    assert match_columns(a, a[:, perm]) == [perm.index(j) for j in range(3)]
    _, t = generate(SynthRecipe((6, 6), (2, 2), sparsify_factors=0.5, factor_law="uniform01", seed=10))
    assert zero_recovery(t, t) == 1.0
