import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fhnrom.fom import fom_solve, random_initial_condition
from fhnrom.numerics import cholesky
from fhnrom.pod import (
    RankError,
    compute_pod_basis,
    numerical_rank,
    reduce_operators,
    select_modes,
    weighted_svd,
)

from conftest import ops_at
from oracles import gram_pod, projection_residual


def m_norm(M, w):
    return float(np.sqrt(w @ (M @ w)))


def test_single_snapshot(rng):
    M = ops_at(1).M
    w = rng.standard_normal(M.shape[0])
    b = compute_pod_basis(w[:, None], cholesky(M), modes=1)
    np.testing.assert_allclose(b.modes[:, 0] * np.sign(b.modes[0, 0] / w[0]), w / m_norm(M, w), atol=1e-12)
    assert b.singular_values[0] == pytest.approx(m_norm(M, w), rel=1e-12)


def test_duplicated_snapshots_rank_one(rng):
    M = ops_at(1).M
    w = rng.standard_normal(M.shape[0])
    b = compute_pod_basis(np.column_stack([w, w, w]), cholesky(M), modes=1)
    assert b.singular_values[1] <= 1e-12 * b.singular_values[0]
    with pytest.raises(RankError):
        compute_pod_basis(np.column_stack([w, w, w]), cholesky(M), modes=2)


def test_full_rank_reproduces_snapshots(rng):
    M = ops_at(0).M  # 6 DoFs; take 30 rows by stacking a block-diagonal copy
    import scipy.sparse as sp

    M30 = sp.block_diag([M] * 5, format="bsr")
    W = rng.standard_normal((30, 10))
    b = compute_pod_basis(W, cholesky(M30), modes=10)
    assert projection_residual(W, b.modes, M30) <= 1e-10 * np.sum(b.singular_values**2)


@pytest.fixture(scope="module")
def small_snapshots():
    ops = ops_at(2)
    u0 = random_initial_condition(ops.space, 0)
    v0 = random_initial_condition(ops.space, 1)
    tr = fom_solve(ops.with_mu(0.02), u0, v0, 0.5, 20.0)
    return ops, tr.U


@pytest.mark.parametrize("k", [1, 5, 10])
def test_optimality_against_gram_oracle(small_snapshots, k):
    ops, U = small_snapshots
    b = compute_pod_basis(U, cholesky(ops.M), modes=k)
    lam, _ = gram_pod(U, ops.M.toarray())
    tail = lam[k:].sum()
    res = projection_residual(U, b.modes, ops.M)
    assert abs(res - tail) <= 1e-6 * tail
    np.testing.assert_allclose(b.singular_values[:k] ** 2, lam[:k], rtol=1e-8)


def test_basis_m_orthonormal(small_snapshots):
    ops, U = small_snapshots
    b = compute_pod_basis(U, cholesky(ops.M), energy=0.9999)
    assert np.abs(b.modes.T @ (ops.M @ b.modes) - np.eye(b.k)).max() <= 1e-8
    s = b.singular_values
    assert np.all(s >= 0) and np.all(np.diff(s) <= 0)


def test_gram_and_direct_routes_agree(small_snapshots):
    ops, U = small_snapshots
    chol = cholesky(ops.M)
    _, s_direct, _ = weighted_svd(U, chol, "direct")
    _, s_gram, _ = weighted_svd(U, chol, "gram")
    k = 10
    np.testing.assert_allclose(s_gram[:k], s_direct[:k], rtol=1e-8)


def test_adding_snapshot_in_span(small_snapshots, rng):
    ops, U = small_snapshots
    chol = cholesky(ops.M)
    r = 8
    low = U[:, :r]
    _, s1, _ = weighted_svd(low, chol)
    _, s2, _ = weighted_svd(np.column_stack([low, np.zeros(ops.N)]), chol)
    np.testing.assert_allclose(s2[:r], s1, rtol=1e-10)


def test_energy_one_gives_numerical_rank(rng):
    M = ops_at(1).M
    W = rng.standard_normal((M.shape[0], 4)) @ rng.standard_normal((4, 9))
    _, s, rank = weighted_svd(W, cholesky(M))
    assert rank == 4
    assert select_modes(s[:rank], 1.0) == rank
    assert numerical_rank(s, W.shape) == 4


def test_select_modes():
    s = np.sqrt(np.array([90.0, 9.0, 0.9, 0.1]))
    assert select_modes(s, 0.9) == 1
    assert select_modes(s, 0.99) == 2
    assert select_modes(s, 0.999) == 3
    assert select_modes(s, 1.0) == 4
    with pytest.raises(ValueError):
        select_modes(s, 0.0)


def test_mode_arguments_exclusive(rng):
    chol = cholesky(np.eye(4))
    with pytest.raises(ValueError):
        compute_pod_basis(rng.standard_normal((4, 2)), chol)
    with pytest.raises(ValueError):
        compute_pod_basis(rng.standard_normal((4, 2)), chol, modes=1, energy=0.9)


# reduced operators

def random_m_orthonormal(M, k, rng):
    chol = cholesky(M)
    Q, _ = np.linalg.qr(rng.standard_normal((M.shape[0], k)))
    return chol.solve(Q)


def test_reduce_operators_triple_product(rng):
    ops = ops_at(1)
    pu, pv = random_m_orthonormal(ops.M, 3, rng), random_m_orthonormal(ops.M, 3, rng)
    red = reduce_operators(pu, pv, ops.M, ops.S_u, ops.S_v, 0.3, 1.0)
    M, Su, Sv = ops.M.toarray(), ops.S_u.toarray(), ops.S_v.toarray()

    def triple(A, B, C):
        out = np.zeros((3, 3))
        for i in range(3):
            for j in range(3):
                out[i, j] = sum(A[a, i] * B[a, b] * C[b, j] for a in range(len(B)) for b in range(len(B)))
        return out

    np.testing.assert_allclose(red.S_u, triple(pu, Su, pu), atol=1e-10)
    np.testing.assert_allclose(red.S_v, triple(pv, Sv, pv), atol=1e-10)
    np.testing.assert_allclose(red.M_u, triple(pu, M, pv), atol=1e-10)
    np.testing.assert_allclose(red.M_v, red.M_u.T, atol=1e-12)


def test_reduce_operators_same_basis_and_constant(rng):
    ops = ops_at(1)
    psi = random_m_orthonormal(ops.M, 4, rng)
    red = reduce_operators(psi, psi, ops.M, ops.S_u, ops.S_v, 0.3, 1.0)
    np.testing.assert_allclose(red.M_u, np.eye(4), atol=1e-8)
    np.testing.assert_allclose(red.M_v, np.eye(4), atol=1e-8)
    const = ops.space.constant(1.0)
    const = const / np.sqrt(const @ (ops.M @ const))
    red = reduce_operators(const[:, None], const[:, None], ops.M, ops.S_u, ops.S_v, 0.3, 1.0)
    assert abs(red.S_u[0, 0]) <= 1e-12 and abs(red.S_v[0, 0]) <= 1e-12


def test_reduce_operators_rejects_non_orthonormal(rng):
    ops = ops_at(1)
    psi = rng.standard_normal((ops.N, 2))
    with pytest.raises(ValueError, match="M-orthonormal"):
        reduce_operators(psi, psi, ops.M, ops.S_u, ops.S_v, 0.3, 1.0)


@given(seed=st.integers(0, 10**6), k=st.integers(1, 6))
@settings(max_examples=20, deadline=None)
def test_reduced_stiffness_psd(seed, k):
    ops = ops_at(1)
    rng = np.random.default_rng(seed)
    psi = random_m_orthonormal(ops.M, k, rng)
    red = reduce_operators(psi, psi, ops.M, ops.S_u, ops.S_v, 0.3, 1.0)
    x = rng.standard_normal(k)
    assert x @ red.S_u @ x >= -1e-10 and x @ red.S_v @ x >= -1e-10
