"""Smallest eigenpairs of symmetric matrices and the Eigenerror metric."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .graph import CoarseningResult, WeightedGraph
from .operators import OperatorKind, laplacian

log = logging.getLogger(__name__)

DENSE_LIMIT = 2048
MAX_K = 256


class EigenSolverError(RuntimeError):
    def __init__(self, msg: str, best_residual: float = float("nan")):
        self.best_residual = best_residual
        super().__init__(f"{msg} (best residual {best_residual:.3e})")


@dataclass
class Spectrum:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def k(self) -> int:
        return int(self.eigenvalues.size)


def _norm_estimate(A) -> float:
    if sp.issparse(A):
        return float(abs(A).sum(axis=1).max()) if A.shape[0] else 0.0
    return float(np.abs(A).sum(axis=1).max()) if A.shape[0] else 0.0


def eigh_dense(A, k: int | None = None) -> Spectrum:
    M = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=np.float64)
    vals, vecs = np.linalg.eigh(M)
    k = vals.size if k is None else k
    return Spectrum(vals[:k].copy(), vecs[:, :k].copy())


def lanczos_smallest(A, k: int, *, tol: float = 1e-10, max_restarts: int = 200, seed: int = 0) -> Spectrum:
    """``k`` smallest eigenpairs by shift-invert Lanczos.

    The operator ``(A - sigma I)^-1`` (sparse LU) is iterated with full
    reorthogonalization and thick restart; converged pairs are locked.  Since a
    single Krylov sequence sees only one direction per eigenspace, after the
    wanted count is locked a fresh random start orthogonal to the locked
    vectors is run until it finds nothing below the k-th eigenvalue; this
    recovers the missing copies of repeated eigenvalues.
    """
    n = A.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    A = sp.csc_matrix(A, dtype=np.float64)
    norm = max(_norm_estimate(A), np.finfo(float).tiny)
    diag = A.diagonal()
    offsum = np.asarray(abs(A).sum(axis=1)).ravel() - np.abs(diag)
    lower = float(np.min(diag - offsum))
    sigma = lower - 1e-3 * norm
    lu = spla.splu((A - sigma * sp.identity(n, format="csc")).tocsc())
    rng = np.random.default_rng(seed)
    m = min(n, max(2 * k + 10, 40))
    resid_tol = tol * norm

    locked_vecs = np.zeros((n, 0))
    locked_vals = np.zeros(0)
    best_resid = np.inf

    def orth(x, basis):
        for _ in range(2):
            if locked_vecs.shape[1]:
                x = x - locked_vecs @ (locked_vecs.T @ x)
            if basis.shape[1]:
                x = x - basis @ (basis.T @ x)
        return x

    def run(start, want):
        """One thick-restart Lanczos cycle set; returns converged (vals, vecs)."""
        nonlocal best_resid
        free = n - locked_vecs.shape[1]
        size = min(m, free)
        if size <= 0:
            return np.zeros(0), np.zeros((n, 0))
        V = np.zeros((n, 0))
        T_keep = None
        q = orth(start, V)
        q /= np.linalg.norm(q)
        for _restart in range(max_restarts + 1):
            # extend the basis to `size` vectors
            cols = [V[:, j] for j in range(V.shape[1])]
            T = np.zeros((size, size))
            nk = len(cols)
            if T_keep is not None:
                T[:nk, :nk] = T_keep[0]
                T[:nk, nk] = T_keep[1]
                T[nk, :nk] = T_keep[1]
            cols.append(q)
            j = nk
            breakdown = False
            while True:
                Vcur = np.column_stack(cols)
                w = lu.solve(cols[j])
                alpha = float(cols[j] @ w)
                T[j, j] = alpha
                w = orth(w, Vcur)
                if j + 1 == size:
                    beta_last = np.linalg.norm(w)
                    f = w
                    break
                beta = np.linalg.norm(w)
                if beta < 1e-14 * max(1.0, abs(alpha)):
                    breakdown = True
                    beta_last = 0.0
                    f = np.zeros(n)
                    T = T[: j + 1, : j + 1]
                    break
                T[j, j + 1] = T[j + 1, j] = beta
                cols.append(w / beta)
                j += 1
            Vcur = np.column_stack(cols)
            theta, S = np.linalg.eigh(T)
            order = np.argsort(theta)[::-1]
            theta, S = theta[order], S[:, order]
            Y = Vcur @ S
            AY = A @ Y
            rq = np.einsum("ij,ij->j", Y, AY)
            res = np.linalg.norm(AY - Y * rq, axis=0)
            best_resid = min(best_resid, float(res[:want].max()) if want else np.inf)
            ok = res <= resid_tol
            # converged prefix, largest theta first
            nconv = 0
            while nconv < min(want, theta.size) and ok[nconv]:
                nconv += 1
            if nconv >= min(want, theta.size) or breakdown:
                keep = np.flatnonzero(ok[: max(want, nconv)])
                return rq[keep], Y[:, keep]
            # thick restart: keep leading Ritz vectors plus the residual direction
            nkeep = min(theta.size - 1, max(want + (size - want) // 2, 1))
            V = Y[:, :nkeep]
            coupling = beta_last * S[-1, :nkeep]
            T_keep = (np.diag(theta[:nkeep]), coupling)
            q = orth(f / max(beta_last, 1e-300), V)
            nq = np.linalg.norm(q)
            if nq < 1e-12:
                q = orth(rng.standard_normal(n), V)
                nq = np.linalg.norm(q)
                T_keep = (np.diag(theta[:nkeep]), np.zeros(nkeep))
            q /= nq
        raise EigenSolverError("Lanczos did not converge", best_resid)

    while locked_vals.size < k:
        vals, vecs = run(rng.standard_normal(n), k - locked_vals.size)
        if vals.size == 0:
            raise EigenSolverError("Lanczos made no progress", best_resid)
        locked_vecs = np.column_stack([locked_vecs, vecs])
        locked_vals = np.concatenate([locked_vals, vals])
    # verification sweeps for missed multiplicities
    for _ in range(n):
        if locked_vecs.shape[1] >= n:
            break
        kth = np.sort(locked_vals)[k - 1]
        vals, vecs = run(rng.standard_normal(n), 1)
        if vals.size == 0 or vals.min() >= kth - resid_tol:
            break
        sel = vals < kth - resid_tol
        locked_vecs = np.column_stack([locked_vecs, vecs[:, sel]])
        locked_vals = np.concatenate([locked_vals, vals[sel]])
    order = np.argsort(locked_vals, kind="stable")[:k]
    vecs = locked_vecs[:, order]
    # final Rayleigh-Ritz on the locked subspace tidies orthogonality
    Q, _ = np.linalg.qr(vecs)
    H = Q.T @ (A @ Q)
    H = 0.5 * (H + H.T)
    vals, S = np.linalg.eigh(H)
    return Spectrum(vals, Q @ S)


def eigen_smallest_k(A, k: int, *, method: str = "auto", seed: int = 0) -> Spectrum:
    """The ``k`` smallest eigenpairs of symmetric ``A``, ascending.

    ``method`` is ``"dense"``, ``"lanczos"`` or ``"auto"`` (dense up to
    ``DENSE_LIMIT`` rows).
    """
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    if k > MAX_K and method != "dense":
        raise ValueError(f"at most {MAX_K} eigenpairs are supported by the iterative solver")
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "lanczos"
    if method == "dense":
        return eigh_dense(A, k)
    if method == "lanczos":
        return lanczos_smallest(A, k, seed=seed)
    raise ValueError(f"unknown method {method!r}")


def coarse_eigenvalues(coarse: WeightedGraph, k: int, kind=OperatorKind.DOUBLY_WEIGHTED) -> np.ndarray:
    return eigen_smallest_k(laplacian(coarse, kind), k).eigenvalues


def eigenerror(g: WeightedGraph, result: CoarseningResult, k: int, coarse: WeightedGraph | None = None) -> float:
    """Mean relative deviation of eigenvalues 2..k+1 of ``L`` and of the coarse operator.

    The coarse operator is the doubly-weighted Laplacian of ``coarse``
    (defaults to ``result.coarse``).  The shared zero eigenvalue is skipped.
    """
    coarse = result.coarse if coarse is None else coarse
    nc = coarse.n
    if k < 1 or k + 1 > nc:
        raise ValueError(f"k={k} needs at least {k + 1} coarse vertices, have {nc}")
    lam = eigen_smallest_k(laplacian(g), k + 1).eigenvalues[1:]
    cg = coarse
    if cg.vertex_weights is None:
        cg = WeightedGraph(cg.n, (cg.u, cg.v, cg.w), result.partition.cluster_sizes)
    lam_hat = eigen_smallest_k(laplacian(cg, OperatorKind.DOUBLY_WEIGHTED), k + 1).eigenvalues[1:]
    if np.any(lam <= 0):
        raise ValueError("original graph must be connected for the Eigenerror")
    below = int(np.sum(lam_hat < lam - 1e-12))
    if below:
        log.debug("eigenerror: %d of %d coarse eigenvalues fall below the original", below, k)
    return float(np.mean(np.abs(lam_hat - lam) / lam))
