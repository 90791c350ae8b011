import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quatnet import algebra as A
from quatnet.errors import ZeroNormError

# products of components below ~1e-80 underflow when squared inside the norm
finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False).filter(lambda v: v == 0 or abs(v) > 1e-60)
quats = st.tuples(finite, finite, finite, finite)

I, J, K = (0, 1, 0, 0), (0, 0, 1, 0), (0, 0, 0, 1)


def test_unit_basis_rules():
    assert A.hamilton(I, J) == K
    assert A.hamilton(J, I) == (0, 0, 0, -1)
    for u in (I, J, K):
        assert A.hamilton(u, u) == (-1, 0, 0, 0)


def test_identity_element():
    q = (1.5, -2.0, 0.25, 7.0)
    assert A.hamilton((1, 0, 0, 0), q) == q
    assert A.hamilton(q, (1, 0, 0, 0)) == q


def test_worked_product_matches_matrix_form():
    expected = A.to_matrix((1, 2, 3, 4)) @ np.array([5, 6, 7, 8])
    np.testing.assert_array_equal(expected, [-60, 12, 30, 24])
    assert A.hamilton((1, 2, 3, 4), (5, 6, 7, 8)) == (-60, 12, 30, 24)


def test_conjugate():
    assert A.conjugate((1, 2, 3, 4)) == (1, -2, -3, -4)
    q = (0.3, -1.2, 4.0, 2.2)
    assert A.conjugate(A.conjugate(q)) == q
    r, x, y, z = A.hamilton(q, A.conjugate(q))
    assert r == pytest.approx(sum(c * c for c in q), abs=1e-12)
    assert (x, y, z) == pytest.approx((0, 0, 0), abs=1e-12)


def test_normalize():
    assert A.normalize((2, 0, 0, 0)) == (1, 0, 0, 0)
    assert A.normalize((1, 1, 1, 1)) == (0.5, 0.5, 0.5, 0.5)
    with pytest.raises(ZeroNormError):
        A.normalize((0, 0, 0, 0))
    with pytest.raises(ZeroNormError):
        A.normalize((1e-160, 0, 0, 0))


def test_norm():
    assert A.norm((0, 3, 4, 0)) == 5
    assert A.norm((1, 0, 0, 0)) == 1


def test_to_matrix_shape_and_pattern():
    np.testing.assert_array_equal(A.to_matrix((1, 0, 0, 0)), np.eye(4))
    m = A.to_matrix(I)
    np.testing.assert_array_equal(m[:, 0], [0, 1, 0, 0])
    np.testing.assert_array_equal(m[0], [0, -1, 0, 0])


def test_add_scale():
    assert A.add((1, 2, 3, 4), (4, 3, 2, 1)) == (5, 5, 5, 5)
    assert A.scale((1, 2, 3, 4), 0) == (0, 0, 0, 0)
    q = (1.25, -3.5, 2.0, 0.75)
    assert A.scale(A.add(q, q), 0.5) == q


def test_homomorphism_1000_pairs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        q1, q2 = rng.uniform(-10, 10, 4), rng.uniform(-10, 10, 4)
        np.testing.assert_allclose(A.to_matrix(q1) @ q2, A.hamilton(q1, q2), rtol=0, atol=1e-12)


@given(quats)
def test_matrix_rows_orthogonal(q):
    m = A.to_matrix(q)
    np.testing.assert_allclose(m @ m.T, sum(c * c for c in q) * np.eye(4), atol=1e-12 * max(1.0, sum(c * c for c in q)))


@settings(max_examples=300)
@given(quats, quats, quats)
def test_associativity(a, b, c):
    left = A.hamilton(A.hamilton(a, b), c)
    right = A.hamilton(a, A.hamilton(b, c))
    scale = A.norm(a) * A.norm(b) * A.norm(c)
    assert np.allclose(left, right, rtol=0, atol=1e-10 * max(scale, 1e-300) + 1e-300)


@settings(max_examples=300)
@given(quats, quats)
def test_norm_multiplicative(a, b):
    assert math.isclose(A.norm(A.hamilton(a, b)), A.norm(a) * A.norm(b), rel_tol=1e-10, abs_tol=1e-300)


@given(quats, quats)
def test_conjugate_reverses_products(a, b):
    lhs = A.conjugate(A.hamilton(a, b))
    rhs = A.hamilton(A.conjugate(b), A.conjugate(a))
    np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, A.norm(a) * A.norm(b)))


@given(quats.filter(lambda q: sum(c * c for c in q) > 1e-200))
def test_normalized_has_unit_norm(q):
    u = A.normalize(q)
    assert abs(sum(c * c for c in u) - 1.0) < 1e-12
    assert all(math.isfinite(c) for c in u)
