"""Inner iteration: projected correction operator, MINRES and its stopping rule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .sparse import SparseMatrix

__all__ = [
    "ProjectedOperator",
    "InnerSolveReport",
    "NumericFailure",
    "inner_tolerance",
    "minres_solve",
    "ETA_CAP",
    "TRUE_RESIDUAL_EVERY",
]

ETA_CAP = 0.01
TRUE_RESIDUAL_EVERY = 20
_EPS = np.finfo(np.float64).eps


class NumericFailure(ArithmeticError):
    """NaN or Inf appeared during an inner solve."""


class ProjectedOperator:
    """``x -> P K P x`` with ``K = [[-tau I, A], [A.T, -tau I]]``.

    ``P = blockdiag(I - Q Q.T, I - Z Z.T)`` where ``Q = [U_c, u]`` and
    ``Z = [V_c, v]`` have orthonormal columns. The operator is symmetric and
    annihilates ``range(Q) (+) range(Z)``.
    """

    def __init__(self, A: SparseMatrix, tau: float, Q: np.ndarray, Z: np.ndarray):
        self.A = A
        self.tau = float(tau)
        self.Q = np.atleast_2d(np.asarray(Q, dtype=np.float64).T).T
        self.Z = np.atleast_2d(np.asarray(Z, dtype=np.float64).T).T
        self.M, self.N = A.shape
        if self.Q.shape[0] != self.M or self.Z.shape[0] != self.N:
            raise ValueError("projector blocks do not match the matrix shape")
        # blockdiag(Q, Z): one dense block keeps projections to two BLAS calls
        W = np.zeros((self.M + self.N, self.Q.shape[1] + self.Z.shape[1]))
        W[: self.M, : self.Q.shape[1]] = self.Q
        W[self.M :, self.Q.shape[1] :] = self.Z
        self._W = W
        self._K = A.shifted_augmented(self.tau)
        self.products = 0

    @property
    def size(self) -> int:
        return self.M + self.N

    def project(self, x: np.ndarray) -> np.ndarray:
        return x - self._W @ (self._W.T @ x)

    def apply_unprojected(self, x: np.ndarray) -> np.ndarray:
        """``K x``; counts as one application (one product each with ``A`` and ``A.T``)."""
        self.products += 1
        return self._K @ x

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.size,):
            raise ValueError(f"expected a vector of length {self.size}")
        return self.project(self.apply_unprojected(self.project(x)))

    __call__ = apply


@dataclass
class InnerSolveReport:
    s: np.ndarray
    t: np.ndarray
    r_in: float
    iterations: int
    eta: float
    hit_cap: bool = False
    stagnated: bool = False
    products: int = 0
    history: Optional[np.ndarray] = None


def inner_tolerance(nu, selected: int, tau: float, theta: float, m: int, eps_tilde: float):
    """Relative residual target ``eta = min(c * eps_tilde, 0.01)`` for MINRES.

    ``c = 2 sqrt(2) max |nu_i| / |nu_i + tau - theta|`` over the non-selected
    pencil eigenvalues with ``nu_i + tau > 0``; ``c = 1`` when ``m == 1``, when
    no such eigenvalue exists or a denominator falls below ``1e-14``.
    Returns ``(eta, c)``.
    """
    if eps_tilde <= 0:
        raise ValueError("eps_tilde must be positive")
    c = 1.0
    if m > 1:
        nu = np.asarray(nu, dtype=np.float64)
        idx = np.arange(nu.size)
        ok = (idx != selected) & np.isfinite(nu) & (nu + tau > 0)
        if np.any(ok):
            den = np.abs(nu[ok] + tau - theta)
            if np.all(den >= 1e-14):
                c = 2.0 * math.sqrt(2.0) * float(np.max(np.abs(nu[ok]) / den))
    return min(c * eps_tilde, ETA_CAP), c


def minres_solve(
    op: ProjectedOperator,
    rhs: np.ndarray,
    eta: float,
    max_inner: int | None = None,
    preconditioner: Callable[[np.ndarray], np.ndarray] | None = None,
    keep_history: bool = False,
) -> InnerSolveReport:
    """Solve ``op x = rhs`` by MINRES from the zero vector.

    Stops once the relative residual ``||rhs - op x|| / ||rhs||`` is at most
    ``eta``. The Lanczos recurrence estimate triggers a check; the residual
    is recomputed explicitly every ``TRUE_RESIDUAL_EVERY`` steps and at
    termination. If the explicit residual stops halving over two checks
    while the estimate has passed ``eta`` or sits more than ten times below
    it, the solve ends with ``stagnated`` set. The iterate with the smallest
    explicit residual is returned.

    ``preconditioner``, if given, must apply a symmetric positive definite
    operator that preserves the double orthogonal complement.
    """
    M = op.M
    n = op.size
    if max_inner is None:
        max_inner = 2 * n
    products0 = op.products
    rhs = np.asarray(rhs, dtype=np.float64)
    if not np.all(np.isfinite(rhs)):
        raise NumericFailure("right-hand side is not finite")
    b = op.project(rhs)
    bnorm = float(np.linalg.norm(b))
    x = np.zeros(n)
    if bnorm == 0.0:
        return InnerSolveReport(x[:M], x[M:], 0.0, 0, eta, products=0)

    psolve = preconditioner if preconditioner is not None else (lambda z: z)

    r1 = b.copy()
    y = psolve(r1)
    beta1 = float(r1 @ y)
    if beta1 <= 0:
        raise ValueError("preconditioner is not positive definite")
    beta1 = math.sqrt(beta1)
    oldb = 0.0
    beta = beta1
    dbar = 0.0
    epsln = 0.0
    phibar = beta1
    cs = -1.0
    sn = 0.0
    w = np.zeros(n)
    w2 = np.zeros(n)
    r2 = r1.copy()

    hist = [1.0] if keep_history else None
    true_rel = 1.0
    last_check = 0
    best_true = math.inf
    x_best = None
    stalls = 0
    hit_cap = False
    stagnated = False
    itn = 0

    def true_residual(xv):
        return float(np.linalg.norm(b - op.apply(xv))) / bnorm

    while True:
        if itn >= max_inner:
            hit_cap = True
            break
        itn += 1
        s = 1.0 / beta
        v = s * y
        y = op.apply(v)
        if itn >= 2:
            y = y - (beta / oldb) * r1
        alfa = float(v @ y)
        y = y - (alfa / beta) * r2
        r1 = r2
        r2 = y
        y = psolve(r2)
        oldb = beta
        beta2 = float(r2 @ y)
        if beta2 < 0:
            raise NumericFailure("preconditioner lost positive definiteness")
        beta = math.sqrt(beta2)

        oldeps = epsln
        delta = cs * dbar + sn * alfa
        gbar = sn * dbar - cs * alfa
        epsln = sn * beta
        dbar = -cs * beta
        gamma = max(math.hypot(gbar, beta), _EPS)
        cs = gbar / gamma
        sn = beta / gamma
        phi = cs * phibar
        phibar = sn * phibar

        w1 = w2
        w2 = w
        w = (v - oldeps * w1 - delta * w2) / gamma
        x = x + phi * w
        if not np.isfinite(phibar) or not np.isfinite(x[0]):
            raise NumericFailure(f"non-finite value in MINRES at step {itn}")

        est = phibar / beta1
        if keep_history:
            hist.append(est)
        breakdown = beta <= _EPS * beta1
        periodic = itn - last_check >= TRUE_RESIDUAL_EVERY
        if est <= eta or breakdown or periodic:
            true_rel = true_residual(x)
            last_check = itn
            if not np.isfinite(true_rel):
                raise NumericFailure("non-finite residual in MINRES")
            if true_rel <= eta or breakdown:
                break
            if true_rel < 0.5 * best_true:
                stalls = 0
            elif est <= eta or true_rel > 10.0 * est:
                # recurrence has decoupled from the explicit residual
                stalls += 1
                if stalls >= 2:
                    stagnated = True
                    break
            if true_rel < best_true:
                best_true = true_rel
                x_best = x.copy()

    x = op.project(x)
    r_in = true_residual(x)
    if x_best is not None and best_true < r_in:
        xb = op.project(x_best)
        rb = true_residual(xb)
        if rb < r_in:
            x, r_in = xb, rb
    return InnerSolveReport(
        s=x[:M].copy(),
        t=x[M:].copy(),
        r_in=r_in,
        iterations=itn,
        eta=eta,
        hit_cap=hit_cap,
        stagnated=stagnated,
        products=op.products - products0,
        history=np.asarray(hist) if keep_history else None,
    )
