import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shapeerase import diffcore as dc
from shapeerase.subspace import Projector, cross_penalty, decompose, mean_abs_cosine, ortho_penalty


def expected_abs_cosine(n):
    """E|cos| between two independent isotropic Gaussian vectors in R^n."""
    return math.exp(math.lgamma(n / 2) - math.lgamma((n + 1) / 2)) / math.sqrt(math.pi)


def test_axis_aligned_projector():
    z_sr, z_se = decompose(np.array([[2.0, 3.0, 4.0]]), np.array([[1.0], [0.0], [0.0]]))
    np.testing.assert_array_equal(z_sr.value, [[2.0]])
    np.testing.assert_array_equal(z_se.value, [[0.0, 3.0, 4.0]])


def test_diagonal_orthonormal_projector():
    s = 1 / np.sqrt(2)
    P = np.array([[s, 0], [s, 0], [0, s], [0, -s]])
    z_sr, z_se = decompose(np.ones((1, 4)), P)
    np.testing.assert_allclose(z_sr.value, [[np.sqrt(2), 0.0]], atol=1e-15)
    np.testing.assert_allclose(z_se.value, [[0, 0, 1, 1]], atol=1e-15)


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12), b=st.integers(1, 5), data=st.data())
def test_reconstruction_identity(seed, n, b, data):
    m = data.draw(st.integers(1, n - 1))
    rng = np.random.default_rng(seed)
    P, z = rng.standard_normal((n, m)), rng.standard_normal((b, n))
    z_sr, z_se = decompose(z, P)
    assert np.max(np.abs(z_sr.value @ P.T + z_se.value - z)) < 1e-12


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12), data=st.data())
def test_components_orthogonal_for_orthonormal_projector(seed, n, data):
    m = data.draw(st.integers(1, n - 1))
    rng = np.random.default_rng(seed)
    P, _ = np.linalg.qr(rng.standard_normal((n, m)))
    z = rng.standard_normal((4, n))
    z_sr, z_se = decompose(z, P)
    inner = np.sum((z_sr.value @ P.T) * z_se.value, axis=1)
    assert np.max(np.abs(inner)) < 1e-10
    assert float(ortho_penalty(P).value) < 1e-12


def test_penalty_zero_for_basis_and_hand_value():
    assert float(ortho_penalty(np.eye(5)[:, :3]).value) == 0.0
    P = np.zeros((3, 2))
    P[0] = 1.0
    assert float(ortho_penalty(P).value) == 1.0


@given(seed=st.integers(0, 2**32 - 1))
def test_penalty_positive_off_the_stiefel_manifold(seed):
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((6, 3))
    assert float(ortho_penalty(P).value) > 1e-12


def test_penalty_gradient_away_from_kinks(rng):
    P = rng.standard_normal((7, 3)) / np.sqrt(7)
    assert max(dc.grad_check(lambda p: ortho_penalty(p["P"]), {"P": P}, eps=1e-5).values()) < 1e-6


def test_cross_penalty_value_and_orthogonal_subspaces(rng):
    A, B = rng.standard_normal((5, 2)), rng.standard_normal((5, 3))
    assert float(cross_penalty(A, B).value) == pytest.approx(np.abs(A.T @ B).sum() / 2, rel=1e-14)
    Q, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    assert float(cross_penalty(Q[:, :2], Q[:, 2:]).value) < 1e-14


def test_decompose_shape_error_names_n():
    with pytest.raises(dc.ShapeError, match="expected z with 4 columns"):
        decompose(np.ones((2, 3)), np.ones((4, 2)))


def test_projector_validation(rng):
    with pytest.raises(ValueError, match="m < n"):
        Projector(np.ones((3, 3)))
    with pytest.raises(ValueError, match="non-finite"):
        Projector(np.array([[np.inf], [0.0]]))
    p = Projector.random(10, 4, rng)
    assert (p.n, p.m) == (10, 4)


def test_initial_column_cosine_near_reported_level():
    """Random columns in R^2048: mean |cos| sits at the Gaussian expectation, about 0.015-0.018."""
    P = Projector.random(2048, 512, np.random.default_rng(0)).P
    measured = mean_abs_cosine(P)
    theory = expected_abs_cosine(2048)
    assert theory == pytest.approx(math.sqrt(2 / (math.pi * 2048)), rel=1e-3)
    assert measured == pytest.approx(theory, rel=0.02)
    assert 0.01 < measured < 0.02
