"""Eigensolvers and the Eigenerror metric."""
import numpy as np
import pytest
import scipy.sparse as sp

from graphcoarsen.coarsening import CoarseningConfig, coarsen
from graphcoarsen.graph import Partition
from graphcoarsen.operators import laplacian
from graphcoarsen.spectral import EigenSolverError, eigen_smallest_k, eigenerror, lanczos_smallest

from helpers import complete_graph, cycle_graph, path_graph, random_connected_graph, result_of


def test_triangle():
    s = eigen_smallest_k(laplacian(complete_graph(3)), 3)
    np.testing.assert_allclose(s.eigenvalues, [0, 3, 3], atol=1e-12)


def test_path3():
    s = eigen_smallest_k(laplacian(path_graph(3)), 3)
    np.testing.assert_allclose(s.eigenvalues, [0, 1, 3], atol=1e-12)


@pytest.mark.parametrize("method", ["dense", "lanczos"])
def test_kernel_and_invariants(method):
    rng = np.random.default_rng(5)
    g = random_connected_graph(rng, 120, p=0.05)
    L = laplacian(g)
    s = eigen_smallest_k(L, 10, method=method)
    assert s.k == 10
    assert abs(s.eigenvalues[0]) < 1e-10 and s.eigenvalues[1] > 1e-6
    assert np.all(np.diff(s.eigenvalues) >= -1e-12)
    v0 = s.eigenvectors[:, 0]
    np.testing.assert_allclose(np.abs(v0), 1 / np.sqrt(g.n), atol=1e-8)
    V = s.eigenvectors
    np.testing.assert_allclose(V.T @ V, np.eye(10), atol=1e-8)
    res = np.linalg.norm(L @ V - V * s.eigenvalues, axis=0)
    assert res.max() <= 1e-8 * abs(sp.linalg.norm(L, 1))


def test_lanczos_handles_multiplicity():
    # K_n has eigenvalue n with multiplicity n - 1
    L = laplacian(complete_graph(30))
    s = lanczos_smallest(L, 8)
    np.testing.assert_allclose(s.eigenvalues, [0] + [30] * 7, atol=1e-9)


def test_lanczos_matches_dense_on_cycle():
    L = laplacian(cycle_graph(200))
    a = eigen_smallest_k(L, 40, method="lanczos").eigenvalues
    b = eigen_smallest_k(L, 40, method="dense").eigenvalues
    np.testing.assert_allclose(a, b, atol=1e-8)


def test_lanczos_iteration_cap_reports_residual():
    rng = np.random.default_rng(0)
    L = laplacian(random_connected_graph(rng, 300, p=0.02))
    with pytest.raises(EigenSolverError) as err:
        lanczos_smallest(L, 30, max_restarts=0, tol=1e-15)
    assert np.isfinite(err.value.best_residual)


def test_bad_k():
    with pytest.raises(ValueError):
        eigen_smallest_k(laplacian(path_graph(3)), 4)


def test_eigenerror_identity_is_zero():
    rng = np.random.default_rng(2)
    g = random_connected_graph(rng, 30)
    assert eigenerror(g, result_of(g, Partition.identity(g.n)), 10) == 0.0


def test_eigenerror_cycle_heavy_edge_vs_dense():
    g = cycle_graph(6)
    res = coarsen(g, CoarseningConfig("heavy_edge", 0.5))
    assert res.coarse.n == 3
    # dense oracle: L of C6 and Gamma^{-1/2} L_hat Gamma^{-1/2} of the coarse triangle
    W = np.zeros((6, 6))
    for i in range(6):
        W[i, (i + 1) % 6] = W[(i + 1) % 6, i] = 1
    lam = np.linalg.eigvalsh(np.diag(W.sum(1)) - W)[1:3]
    Wc = np.zeros((3, 3))
    for a, b, w in res.coarse.edges:
        Wc[a, b] = Wc[b, a] = w
    g_half = np.diag(1 / np.sqrt(res.partition.cluster_sizes))
    lam_hat = np.linalg.eigvalsh(g_half @ (np.diag(Wc.sum(1)) - Wc) @ g_half)[1:3]
    expect = np.mean(np.abs(lam_hat - lam) / lam)
    assert eigenerror(g, res, 2) == pytest.approx(expect, rel=1e-12)
    # C6 has lambda_2 = lambda_3 = 1, the halved triangle 3/2: error 1/2
    assert expect == pytest.approx(0.5)


def test_eigenerror_k_too_large():
    g = cycle_graph(6)
    res = coarsen(g, CoarseningConfig("heavy_edge", 0.5))
    with pytest.raises(ValueError):
        eigenerror(g, res, 3)
