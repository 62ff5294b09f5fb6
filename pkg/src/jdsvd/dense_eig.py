"""Small dense symmetric eigensolvers built on Jacobi rotations.

The extraction step only ever needs problems of order ``2 * max_dim`` (40 by
default), and the diagnostics oracle needs SVDs of desk-scale matrices. Both
are handled here with cyclic Jacobi methods, whose accuracy on small problems
is hard to beat.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
import scipy.linalg

__all__ = [
    "EigResult",
    "PencilResult",
    "ConvergenceError",
    "DegeneratePencilError",
    "sym_eig",
    "sym_definite_gen_eig",
    "dense_svd",
    "DENSE_SVD_CAP",
]

EPS = np.finfo(np.float64).eps
MAX_SWEEPS_EIG = 30
MAX_SWEEPS_SVD = 60
TRUNCATION = 1e-14
DENSE_SVD_CAP = 600


class ConvergenceError(RuntimeError):
    """A Jacobi sweep limit was reached."""


class DegeneratePencilError(np.linalg.LinAlgError):
    """The right-hand matrix of a pencil has no usable range."""


@dataclass
class EigResult:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


@dataclass
class PencilResult:
    """Finite eigenpairs ``F f = mu G f`` ordered by ``|mu|`` descending."""

    mu: np.ndarray
    vectors: np.ndarray
    reduced: bool = False

    @property
    def nu(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / self.mu

    def __len__(self):
        return self.mu.size


@numba.njit(cache=True)
def _jacobi_eig_kernel(a, v, max_sweeps, floor):
    n = a.shape[0]
    for sweep in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                if abs(apq) <= floor:
                    continue
                if abs(apq) <= EPS * np.sqrt(abs(a[p, p]) * abs(a[q, q])):
                    continue
                rotated = True
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    t = 0.5 / theta
                else:
                    t = 1.0 / (abs(theta) + np.sqrt(1.0 + theta * theta))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        if not rotated:
            return sweep + 1
    return -1


@numba.njit(cache=True)
def _one_sided_jacobi_kernel(wt, vt, max_sweeps):
    # rows of wt are the columns of the working matrix; rows of vt accumulate V^T
    n = wt.shape[0]
    m = wt.shape[1]
    for sweep in range(max_sweeps):
        rotated = False
        for i in range(n - 1):
            for j in range(i + 1, n):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for k in range(m):
                    x = wt[i, k]
                    y = wt[j, k]
                    alpha += x * x
                    beta += y * y
                    gamma += x * y
                if gamma == 0.0:
                    continue
                if abs(gamma) <= EPS * np.sqrt(alpha * beta):
                    continue
                rotated = True
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                else:
                    t = 1.0 / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                    if zeta < 0.0:
                        t = -t
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(m):
                    x = wt[i, k]
                    y = wt[j, k]
                    wt[i, k] = c * x - s * y
                    wt[j, k] = s * x + c * y
                for k in range(n):
                    x = vt[i, k]
                    y = vt[j, k]
                    vt[i, k] = c * x - s * y
                    vt[j, k] = s * x + c * y
        if not rotated:
            return sweep + 1
    return -1


def sym_eig(S) -> EigResult:
    """Full eigendecomposition of a symmetric matrix by cyclic Jacobi.

    The input is symmetrized on entry. Eigenvalues are returned in ascending
    order with matching orthonormal eigenvector columns.
    """
    S = np.asarray(S, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {S.shape}")
    n = S.shape[0]
    if n == 0:
        return EigResult(np.empty(0), np.empty((0, 0)))
    if not np.all(np.isfinite(S)):
        raise ValueError("matrix has non-finite entries")
    a = np.ascontiguousarray(0.5 * (S + S.T))
    v = np.eye(n)
    floor = 1e-18 * np.linalg.norm(a)
    sweeps = _jacobi_eig_kernel(a, v, MAX_SWEEPS_EIG, floor)
    if sweeps < 0:
        raise ConvergenceError(f"symmetric Jacobi did not converge in {MAX_SWEEPS_EIG} sweeps")
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return EigResult(w[order], v[:, order])


def _order_pencil(mu, tau):
    order = list(np.argsort(-np.abs(mu), kind="stable"))
    if tau is None:
        return np.array(order, dtype=int)
    # equal |mu|: prefer the pair whose nu + tau is positive
    for i in range(len(order) - 1):
        a, b = order[i], order[i + 1]
        if abs(abs(mu[a]) - abs(mu[b])) <= 1e-13 * abs(mu[a]):
            pa = mu[a] != 0 and 1.0 / mu[a] + tau > 0
            pb = mu[b] != 0 and 1.0 / mu[b] + tau > 0
            if pb and not pa:
                order[i], order[i + 1] = b, a
    return np.array(order, dtype=int)


def sym_definite_gen_eig(F, G, tau: float | None = None) -> PencilResult:
    """Finite eigenpairs of the symmetric pencil ``F f = mu G f``.

    ``G`` must be symmetric positive semidefinite. A Cholesky reduction is
    tried first; if ``G`` is numerically singular the problem is instead
    solved on the range of ``G`` spanned by eigenvalues above
    ``1e-14 * lambda_max(G)``. Pairs are ordered by ``|mu|`` descending; when
    ``tau`` is given, ties go to the pair with ``1/mu + tau > 0``.
    """
    F = np.asarray(F, dtype=np.float64)
    G = np.asarray(G, dtype=np.float64)
    F = 0.5 * (F + F.T)
    G = 0.5 * (G + G.T)
    n = F.shape[0]
    gmax = np.max(np.abs(np.diag(G))) if n else 0.0
    if n == 0 or gmax == 0.0:
        raise DegeneratePencilError("right-hand matrix is zero")

    reduced = False
    L = None
    try:
        L = np.linalg.cholesky(G)
        if np.min(np.diag(L)) ** 2 <= TRUNCATION * gmax:
            L = None
    except np.linalg.LinAlgError:
        L = None

    if L is not None:
        X = scipy.linalg.solve_triangular(L, F, lower=True)
        S = scipy.linalg.solve_triangular(L, X.T, lower=True)
        res = sym_eig(S)
        vecs = scipy.linalg.solve_triangular(L.T, res.eigenvectors, lower=False)
        mu = res.eigenvalues
    else:
        reduced = True
        ge = sym_eig(G)
        lam = ge.eigenvalues
        keep = lam > TRUNCATION * lam[-1]
        if lam[-1] <= 0.0 or not np.any(keep):
            raise DegeneratePencilError("right-hand matrix has no eigenvalue above truncation")
        Y = ge.eigenvectors[:, keep] / np.sqrt(lam[keep])
        res = sym_eig(Y.T @ F @ Y)
        vecs = Y @ res.eigenvectors
        mu = res.eigenvalues

    vecs = vecs / np.linalg.norm(vecs, axis=0)
    order = _order_pencil(mu, tau)
    return PencilResult(mu[order], vecs[:, order], reduced)


def dense_svd(A):
    """Singular value decomposition of a small dense matrix.

    One-sided (Hestenes) Jacobi applied to the triangular factor of a QR
    decomposition. Returns ``(s, U, V)`` with ``s`` descending and
    ``A = U @ diag(s) @ V.T``; ``U`` is M x K and ``V`` is N x K with
    ``K = min(M, N)``.
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("expected a 2-D array")
    M, N = A.shape
    if max(M, N) > DENSE_SVD_CAP:
        raise ValueError(f"dense_svd is limited to {DENSE_SVD_CAP} rows/columns, got {A.shape}")
    if M < N:
        s, U, V = dense_svd(A.T)
        return s, V, U
    Q, R = np.linalg.qr(A)
    wt = np.ascontiguousarray(R.T)
    vt = np.eye(N)
    sweeps = _one_sided_jacobi_kernel(wt, vt, MAX_SWEEPS_SVD)
    if sweeps < 0:
        raise ConvergenceError(f"one-sided Jacobi did not converge in {MAX_SWEEPS_SVD} sweeps")
    s = np.linalg.norm(wt, axis=1)
    order = np.argsort(-s, kind="stable")
    s = s[order]
    W = wt[order].T
    V = vt[order].T
    Ur = np.zeros((N, N))
    tiny = EPS * (s[0] if s.size else 0.0)
    good = s > tiny
    Ur[:, good] = W[:, good] / s[good]
    s = np.where(good, s, 0.0)
    if not np.all(good):
        # complete the left factor for (numerically) zero singular values
        basis = Ur[:, good]
        for j in np.flatnonzero(~good):
            for e in np.eye(N):
                x = e - basis @ (basis.T @ e)
                x -= basis @ (basis.T @ x)
                nx = np.linalg.norm(x)
                if nx > 0.5:
                    break
            Ur[:, j] = x / nx
            basis = np.column_stack([basis, Ur[:, j]])
    return s, Q @ Ur, V
