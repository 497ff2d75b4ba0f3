import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from penorth import make_oblique
from penorth.errors import NotTangent
from penorth.manifold import (make_tangent, project_oblique_plus,
                              project_orthogonal_group, project_tangent_T,
                              riemannian_grad, riemannian_hess_apply)

import oracles


finite_mats = arrays(np.float64, (5, 3),
                     elements=st.floats(-10, 10, allow_nan=False))


@given(finite_mats)
@settings(max_examples=60, deadline=None)
def test_project_oblique_plus_lands_on_set(C):
    M = project_oblique_plus(C)
    assert np.all(M.data >= 0)
    assert np.allclose(np.linalg.norm(M.data, axis=0), 1.0, atol=1e-12)


@given(finite_mats)
@settings(max_examples=60, deadline=None)
def test_project_oblique_plus_fixes_feasible_points(C):
    M = project_oblique_plus(C)
    again = project_oblique_plus(M.data)
    assert np.allclose(again.data, M.data, atol=1e-15)


def test_project_oblique_plus_dead_column_reset():
    # an all-nonpositive column clips to zero; the projection must still
    # return a unit column, placed at the largest entry (smallest index tie)
    C = np.array([[-1.0, 2.0], [-3.0, 1.0], [-1.0, 0.0]])
    M = project_oblique_plus(C)
    assert np.linalg.norm(M.data[:, 0]) == 1.0
    assert M.data[0, 0] == 1.0  # argmax of (-1,-3,-1) is index 0


def test_project_oblique_plus_tie_breaks_smallest_index():
    C = np.array([[-2.0], [-2.0], [-5.0]])
    M = project_oblique_plus(C)
    assert M.data[0, 0] == 1.0 and M.data[1, 0] == 0.0


def test_riemannian_grad_is_tangent():
    rng = oracles.rng_for(0)
    X = oracles.random_unit_columns(rng, 6, 3)
    G = rng.standard_normal((6, 3))
    rg = riemannian_grad(X, G)
    assert np.allclose(np.einsum("ij,ij->j", X, rg), 0.0, atol=1e-12)


def test_riemannian_grad_matches_fd():
    rng = oracles.rng_for(1)
    X = oracles.random_unit_columns(rng, 6, 3)
    A = rng.standard_normal((6, 3))
    value = lambda Y: float(np.sum(A * Y) + 0.5 * np.sum(Y * Y * Y))
    grad = lambda Y: A + 1.5 * Y * Y
    D = oracles.random_tangent(rng, X)
    lhs = float(np.tensordot(riemannian_grad(X, grad(X)), D))
    rhs = oracles.fd_directional(value, X, D)
    assert lhs == pytest.approx(rhs, rel=1e-6)


def test_riemannian_hess_matches_fd_quadratic_form():
    rng = oracles.rng_for(2)
    X = oracles.random_unit_columns(rng, 5, 2)
    A = rng.standard_normal((5, 2))
    value = lambda Y: float(np.sum(A * Y) + 0.5 * np.sum(Y * Y * Y))
    grad = lambda Y: A + 1.5 * Y * Y
    hess = lambda Y, W: 3.0 * Y * W
    D = oracles.random_tangent(rng, X)
    H = riemannian_hess_apply(X, grad(X), hess(X, D), D)
    lhs = float(np.tensordot(D, H))
    rhs = oracles.fd_second(value, X, D)
    assert lhs == pytest.approx(rhs, rel=1e-5, abs=1e-8)


def test_riemannian_hess_rejects_off_tangent():
    rng = oracles.rng_for(3)
    X = oracles.random_unit_columns(rng, 5, 2)
    D = rng.standard_normal((5, 2))  # generic, not tangent
    with pytest.raises(NotTangent):
        riemannian_hess_apply(X, np.zeros_like(X), np.zeros_like(X), D)


def test_make_tangent_validates():
    rng = oracles.rng_for(4)
    X = make_oblique(oracles.random_unit_columns(rng, 5, 2))
    D = oracles.random_tangent(rng, X.data)
    t = make_tangent(X, D)
    assert np.array_equal(t.data, D)
    with pytest.raises(NotTangent):
        make_tangent(X, D + 0.1)


def test_project_tangent_T_matches_oracle():
    # projection onto the support-constrained tangent cone, column by column
    rng = oracles.rng_for(5)
    X = make_oblique(oracles.random_feasible(rng, 4, 2))
    D = rng.standard_normal((4, 2))
    got = project_tangent_T(X, D).data
    want = np.column_stack([
        oracles.slice_projection_oracle(X.data[:, j], X.data[:, j] + D[:, j])
        - X.data[:, j]
        for j in range(2)
    ])
    assert np.allclose(got, want, atol=1e-10)


def test_polar_projection_is_orthogonal():
    rng = oracles.rng_for(6)
    M = rng.standard_normal((4, 4))
    Q = project_orthogonal_group(M)
    assert np.allclose(Q.T @ Q, np.eye(4), atol=1e-12)


def test_polar_projection_recovers_orthogonal_input():
    rng = oracles.rng_for(7)
    Q0, _ = np.linalg.qr(rng.standard_normal((5, 5)))
    assert np.allclose(project_orthogonal_group(Q0), Q0, atol=1e-12)


def test_polar_projection_deterministic_on_rank_deficient():
    # repeated calls agree entry for entry, and the zero matrix maps to I
    M = np.zeros((3, 3))
    A = project_orthogonal_group(M)
    B = project_orthogonal_group(M)
    assert np.array_equal(A, B)
    assert np.array_equal(A, np.eye(3))
    M2 = np.diag([1.0, 0.0, 0.0])
    C1 = project_orthogonal_group(M2)
    assert np.allclose(C1.T @ C1, np.eye(3), atol=1e-12)
    assert np.array_equal(C1, project_orthogonal_group(M2))


def test_polar_projection_nearest_orthogonal():
    # the polar factor minimizes ||Q - M||_F over orthogonal Q;
    # spot-check against random orthogonal competitors
    rng = oracles.rng_for(8)
    M = rng.standard_normal((3, 3))
    Q = project_orthogonal_group(M)
    d0 = np.linalg.norm(Q - M)
    for _ in range(200):
        R, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        assert d0 <= np.linalg.norm(R - M) + 1e-12
