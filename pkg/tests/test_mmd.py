import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hazevae.autodiff import Tensor
from hazevae.mmd import (KernelSpec, gaussian_kernel, median_heuristic, mmd2_biased, mmd2_empirical,
                         mmd_to_prior)

ONE = KernelSpec((1.0,))  # 2 sigma^2 = 1


def k_ref(x, y, two_sigma_sq):
    d2 = sum((a - b) ** 2 for a, b in zip(x, y))
    return sum(math.exp(-d2 / s) for s in two_sigma_sq) / len(two_sigma_sq)


def mmd_ref(X, Y, two_sigma_sq):
    """Pure-Python loops over lists; shares no code with the package."""
    X = [list(np.atleast_1d(p)) for p in X]
    Y = [list(np.atleast_1d(p)) for p in Y]
    m, n = len(X), len(Y)
    xx = yy = xy = 0.0
    for i in range(m):
        for j in range(m):
            if i != j:
                xx += k_ref(X[i], X[j], two_sigma_sq)
    for i in range(n):
        for j in range(n):
            if i != j:
                yy += k_ref(Y[i], Y[j], two_sigma_sq)
    for i in range(m):
        for j in range(n):
            xy += k_ref(X[i], Y[j], two_sigma_sq)
    return xx / (m * (m - 1)) + yy / (n * (n - 1)) - 2 * xy / (m * n)


def test_kernel_examples():
    x = np.array([0.3, -2.0])
    assert gaussian_kernel(x, x, KernelSpec.single(0.7)) == 1.0
    assert gaussian_kernel([0.0], [1.0], ONE) == math.exp(-1.0)
    assert math.isclose(gaussian_kernel([0.0], [1.0], KernelSpec.single(1 / math.sqrt(2))), 0.36787944117144233,
                        rel_tol=1e-15)


def test_kernel_dimension_mismatch():
    with pytest.raises(ValueError):
        gaussian_kernel([0.0, 1.0], [1.0], ONE)


def test_bandwidth_validation():
    with pytest.raises(ValueError):
        KernelSpec.single(0.0)
    with pytest.raises(ValueError):
        KernelSpec.mixture([1.0, -2.0])
    spec = KernelSpec.for_training(4)
    np.testing.assert_allclose(spec.bandwidths, [1.0, 2.0, 4.0])


def test_hand_cases_exact():
    assert mmd2_empirical([[1.5, -2.0], [1.5, -2.0]], [[1.5, -2.0], [1.5, -2.0]], ONE) == 0.0
    assert mmd2_empirical([0.0, 1.0], [0.0, 1.0], ONE) == math.exp(-1) - 1
    assert math.isclose(mmd2_biased([0.0], [1.0], ONE), 2 - 2 * math.exp(-1), rel_tol=1e-15)


def test_may_be_negative():
    assert mmd2_empirical([0.0, 1.0], [0.0, 1.0], ONE) < 0


def test_small_sets_rejected():
    with pytest.raises(ValueError):
        mmd2_empirical([[0.0]], [[0.0], [1.0]], ONE)
    with pytest.raises(ValueError):
        mmd_to_prior(np.zeros((1, 3)), np.random.default_rng(0), ONE)


def test_m6_matches_reference():
    rng = np.random.default_rng(8)
    X, Y = rng.normal(size=(6, 3)), rng.normal(1.0, size=(6, 3))
    spec = KernelSpec.mixture([0.5, 1.5])
    assert abs(mmd2_empirical(X, Y, spec) - mmd_ref(X, Y, spec.two_sigma_sq)) <= 1e-12


sets = st.tuples(st.integers(2, 8), st.integers(2, 8), st.integers(1, 4), st.integers(0, 2**32 - 1))


@settings(max_examples=100, deadline=None)
@given(sets, st.lists(st.floats(0.2, 4.0), min_size=1, max_size=3))
def test_matches_reference_and_symmetries(shape, sigmas, ):
    m, n, dim, seed = shape
    rng = np.random.default_rng(seed)
    X, Y = rng.normal(size=(m, dim)), rng.normal(0.5, 1.5, size=(n, dim))
    spec = KernelSpec.mixture(sigmas)
    v = mmd2_empirical(X, Y, spec)
    assert abs(v - mmd_ref(X, Y, spec.two_sigma_sq)) <= 1e-12
    assert abs(v - mmd2_empirical(Y, X, spec)) <= 1e-12
    assert abs(v - mmd2_empirical(X[rng.permutation(m)], Y[rng.permutation(n)], spec)) <= 1e-12
    b = mmd2_biased(X, Y, spec)
    assert b >= 0
    assert b == mmd2_biased(X[rng.permutation(m)], Y, spec)
    assert abs(b - mmd2_biased(Y, X, spec)) <= 1e-12
    assert mmd2_biased(X, X[rng.permutation(m)], spec) == 0.0


def test_tensor_input_differentiable():
    rng = np.random.default_rng(0)
    X = Tensor(rng.normal(size=(4, 2)), requires_grad=True)
    out = mmd2_empirical(X, rng.normal(size=(5, 2)), ONE)
    assert isinstance(out, Tensor)
    out.backward()
    assert X.grad.shape == (4, 2)


def test_median_heuristic():
    assert median_heuristic([0.0, 1.0]).two_sigma_sq == (1.0,)
    assert math.isclose(median_heuristic([0.0, 1.0]).bandwidths[0], 1 / math.sqrt(2))
    assert median_heuristic(np.ones((5, 2))).bandwidths == (1.0,)
    pts = np.random.default_rng(1).normal(size=(9, 3))
    s1 = median_heuristic(pts).bandwidths[0]
    s3 = median_heuristic(3.0 * pts).bandwidths[0]
    assert math.isclose(s3, 3.0 * s1, rel_tol=1e-12)


def test_prior_null_and_alternative():
    spec = KernelSpec.for_training(8)
    rng = np.random.default_rng(123)
    null = [mmd_to_prior(rng.standard_normal((256, 8)), rng, spec) for _ in range(100)]
    assert abs(np.mean(null)) < 0.05
    shifted = mmd_to_prior(rng.standard_normal((256, 8)) + 5.0, rng, spec)
    assert shifted > np.mean(null)


def test_prior_deterministic_given_stream():
    lat = np.random.default_rng(0).normal(size=(10, 3))
    a = mmd_to_prior(lat, np.random.default_rng(4), ONE)
    b = mmd_to_prior(lat, np.random.default_rng(4), ONE)
    assert a == b
