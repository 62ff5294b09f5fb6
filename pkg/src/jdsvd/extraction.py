"""Projected matrices and harmonic / refined harmonic extraction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dense_eig import DegeneratePencilError, sym_definite_gen_eig, sym_eig
from .sparse import SparseMatrix

__all__ = [
    "SearchState",
    "ExtractionResult",
    "ExtractionError",
    "expand_state",
    "assemble_FG",
    "assemble_gprime",
    "harmonic_extract",
    "harmonic_candidates",
    "refined_harmonic_extract",
    "refined_vector",
    "residual",
    "SPLIT_TOL",
]

SPLIT_TOL = 1e-12
ORTH_TOL = 1e-12


class ExtractionError(RuntimeError):
    """No usable approximate singular triplet could be extracted."""


class SearchState:
    """Orthonormal search bases ``U``, ``V`` with their projected matrices.

    Keeps ``AV = A @ V`` and ``AtU = A.T @ U`` so that ``H = U.T A V``,
    ``G1 = U.T A A.T U`` and ``G2 = V.T A.T A V`` can be updated after an
    expansion with two sparse products, and rebuilt after a restart or purge
    without touching ``A`` at all.
    """

    def __init__(self, M: int, N: int):
        self.M = M
        self.N = N
        self.U = np.empty((M, 0))
        self.V = np.empty((N, 0))
        self.AV = np.empty((M, 0))
        self.AtU = np.empty((N, 0))
        self.H = np.empty((0, 0))
        self.G1 = np.empty((0, 0))
        self.G2 = np.empty((0, 0))

    @property
    def m(self) -> int:
        return self.U.shape[1]

    def copy(self) -> "SearchState":
        other = SearchState(self.M, self.N)
        for name in ("U", "V", "AV", "AtU", "H", "G1", "G2"):
            setattr(other, name, getattr(self, name).copy())
        return other

    def transform(self, C: np.ndarray, D: np.ndarray) -> None:
        """Replace ``U, V`` by ``U @ C, V @ D`` (``C``, ``D`` orthonormal columns)."""
        self.U = self.U @ C
        self.V = self.V @ D
        self.AV = self.AV @ D
        self.AtU = self.AtU @ C
        self.H = C.T @ self.H @ D
        self.G1 = self.AtU.T @ self.AtU
        self.G2 = self.AV.T @ self.AV

    def check(self, A: SparseMatrix) -> dict:
        """Deviations of the cached quantities from a from-scratch recomputation."""
        AV = A.apply(self.V)
        AtU = A.apply_transpose(self.U)
        return {
            "H": float(np.max(np.abs(self.H - self.U.T @ AV), initial=0.0)),
            "G1": float(np.max(np.abs(self.G1 - AtU.T @ AtU), initial=0.0)),
            "G2": float(np.max(np.abs(self.G2 - AV.T @ AV), initial=0.0)),
            "U_orth": float(np.max(np.abs(self.U.T @ self.U - np.eye(self.m)), initial=0.0)),
            "V_orth": float(np.max(np.abs(self.V.T @ self.V - np.eye(self.m)), initial=0.0)),
        }


@dataclass
class ExtractionResult:
    theta: float
    c: np.ndarray
    d: np.ndarray
    nu: np.ndarray
    selected: int
    rho: float
    vartheta: float
    refined: bool = False
    gprime_min: float = float("nan")
    fallbacks: int = 0
    pencil_vectors: np.ndarray = field(default=None, repr=False)


def expand_state(state: SearchState, A: SparseMatrix, u_new: np.ndarray, v_new: np.ndarray) -> SearchState:
    """Append unit vectors ``u_new``, ``v_new`` to the bases of ``state``.

    Uses exactly one product with ``A`` and one with ``A.T``.
    """
    u_new = np.asarray(u_new, dtype=np.float64)
    v_new = np.asarray(v_new, dtype=np.float64)
    if state.m:
        if np.max(np.abs(state.U.T @ u_new)) > ORTH_TOL or np.max(np.abs(state.V.T @ v_new)) > ORTH_TOL:
            raise ValueError("expansion vectors are not orthogonal to the current bases")
    if abs(np.linalg.norm(u_new) - 1.0) > ORTH_TOL or abs(np.linalg.norm(v_new) - 1.0) > ORTH_TOL:
        raise ValueError("expansion vectors must have unit norm")
    Av = A.apply(v_new)
    Atu = A.apply_transpose(u_new)
    m = state.m
    H = np.empty((m + 1, m + 1))
    H[:m, :m] = state.H
    H[:m, m] = state.U.T @ Av
    H[m, :m] = Atu @ state.V
    H[m, m] = u_new @ Av
    G1 = np.empty((m + 1, m + 1))
    G1[:m, :m] = state.G1
    G1[:m, m] = G1[m, :m] = state.AtU.T @ Atu
    G1[m, m] = Atu @ Atu
    G2 = np.empty((m + 1, m + 1))
    G2[:m, :m] = state.G2
    G2[:m, m] = G2[m, :m] = state.AV.T @ Av
    G2[m, m] = Av @ Av
    state.U = np.column_stack([state.U, u_new])
    state.V = np.column_stack([state.V, v_new])
    state.AV = np.column_stack([state.AV, Av])
    state.AtU = np.column_stack([state.AtU, Atu])
    state.H, state.G1, state.G2 = H, G1, G2
    return state


def assemble_FG(state: SearchState, tau: float):
    """Projected shifted augmented matrix ``F`` and its projected square ``G``."""
    m = state.m
    if m < 1:
        raise ValueError("empty search space")
    I = np.eye(m)
    F = np.block([[-tau * I, state.H], [state.H.T, -tau * I]])
    G = np.block(
        [
            [state.G1 + tau**2 * I, -2.0 * tau * state.H],
            [-2.0 * tau * state.H.T, state.G2 + tau**2 * I],
        ]
    )
    return F, G


def assemble_gprime(state: SearchState, rho: float) -> np.ndarray:
    m = state.m
    I = np.eye(m)
    return np.block(
        [
            [state.G1 + rho**2 * I, -2.0 * rho * state.H],
            [-2.0 * rho * state.H.T, state.G2 + rho**2 * I],
        ]
    )


def _split(f, H):
    m = H.shape[0]
    c, d = f[:m], f[m:]
    nc, nd = np.linalg.norm(c), np.linalg.norm(d)
    if nc < SPLIT_TOL or nd < SPLIT_TOL:
        return None
    c = c / nc
    d = d / nd
    q = c @ H @ d
    if q < 0:
        d = -d
        q = -q
    return c, d, float(q)


def harmonic_candidates(state: SearchState, tau: float):
    """All usable harmonic pairs ``(c, d, rho, index)`` ordered by ``|1/nu|``."""
    F, G = assemble_FG(state, tau)
    pencil = sym_definite_gen_eig(F, G, tau=tau)
    out = []
    for j in range(len(pencil)):
        sp = _split(pencil.vectors[:, j], state.H)
        if sp is not None:
            out.append((sp[0], sp[1], sp[2], j))
    return pencil, out


def harmonic_extract(state: SearchState, tau: float) -> ExtractionResult:
    """Harmonic extraction with the Rayleigh quotient as singular value estimate.

    Selects the pencil pair with the largest ``|1/nu|`` whose coefficient
    vector splits into two nonzero halves, normalizes each half and flips the
    right half when needed so that ``rho = c.T H d >= 0``.
    """
    try:
        pencil, cands = harmonic_candidates(state, tau)
    except DegeneratePencilError as exc:
        raise ExtractionError(str(exc)) from exc
    if not cands:
        raise ExtractionError("every pencil eigenvector has a degenerate split")
    c, d, rho, j = cands[0]
    nu = pencil.nu
    return ExtractionResult(
        theta=rho,
        c=c,
        d=d,
        nu=nu,
        selected=j,
        rho=rho,
        vartheta=float(nu[j] + tau),
        fallbacks=j,
        pencil_vectors=pencil.vectors,
    )


def refined_vector(state: SearchState, rho: float):
    """Minimizer of ``||(C - rho I) w||`` over the search space, split and sign fixed.

    Returns ``(c, d, rho_prime, lambda_min)`` where ``lambda_min`` is the
    smallest eigenvalue of the cross-product matrix ``G'``.
    """
    res = sym_eig(assemble_gprime(state, rho))
    for j in range(res.eigenvalues.size):
        sp = _split(res.eigenvectors[:, j], state.H)
        if sp is not None:
            return sp[0], sp[1], sp[2], float(res.eigenvalues[0])
    raise ExtractionError("every eigenvector of G' has a degenerate split")


def refined_harmonic_extract(state: SearchState, rho: float, harmonic: ExtractionResult | None = None) -> ExtractionResult:
    """Refined harmonic extraction for the shift ``rho``.

    ``harmonic`` (when given) supplies the pencil eigenvalues that the inner
    stopping rule needs; they are carried through unchanged.
    """
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    c, d, rho_p, lam = refined_vector(state, rho)
    if harmonic is None:
        nu = np.array([])
        selected = -1
        vartheta = float("nan")
    else:
        nu, selected, vartheta = harmonic.nu, harmonic.selected, harmonic.vartheta
    return ExtractionResult(
        theta=rho_p,
        c=c,
        d=d,
        nu=nu,
        selected=selected,
        rho=rho,
        vartheta=vartheta,
        refined=True,
        gprime_min=lam,
    )


def residual(A: SparseMatrix, theta: float, u: np.ndarray, v: np.ndarray):
    """Stacked residual ``[A v - theta u; A.T u - theta v]`` and its norm."""
    r = np.concatenate([A.apply(v) - theta * u, A.apply_transpose(u) - theta * v])
    return r, float(np.linalg.norm(r))
