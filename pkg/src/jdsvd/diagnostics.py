"""Desk-scale verification of the inner/outer accuracy theory.

Everything here is computed from dense factorizations of the full problem, so
it is only meant for matrices with at most ``DESK_CAP`` rows and columns. A
verification run attaches an observer to :func:`jdsvd.driver.solve`, compares
each inexact correction with the exact one, and emits one row per checked
inequality.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .dense_eig import dense_svd
from .driver import InnerContext, SolverConfig, projected_residual, solve
from .sparse import SparseMatrix

__all__ = [
    "DESK_CAP",
    "DeskScaleError",
    "UndefinedMetrics",
    "SingularProjectedSystem",
    "Oracle",
    "ExactSolution",
    "ErrorMetrics",
    "IdentityReport",
    "CheckRow",
    "DiagnosticsRecord",
    "VerifyReport",
    "make_oracle",
    "target_triplet",
    "exact_correction_solution",
    "expansion_error_metrics",
    "subspace_expansion_identities",
    "sep_from_spectrum",
    "sep_explicit",
    "kappa_B_prime",
    "theory_bounds",
    "alpha_slope",
    "verify_run",
    "write_verification_csv",
]

log = logging.getLogger(__name__)

DESK_CAP = 600
IDENTITY_TOL = 1e-10
EPS_HAT_SLACK = 1e-12
# sandwich and bound checks compare quantities computed by different dense routes
REL_SLACK = 1e-8
ABS_SLACK = 1e-13
DEGENERATE = 1e-10
RATIO_FLOOR = 1e-5


class DeskScaleError(ValueError):
    """Matrix exceeds the dense verification size cap."""


class UndefinedMetrics(ValueError):
    """Relative errors are undefined because the exact correction is zero."""


class SingularProjectedSystem(np.linalg.LinAlgError):
    """The correction equation restricted to the complement is singular."""


def _dense(A):
    if isinstance(A, SparseMatrix):
        A = A.todense()
    A = np.asarray(A, dtype=np.float64)
    if max(A.shape) > DESK_CAP:
        raise DeskScaleError(f"matrix {A.shape} exceeds the desk-scale cap of {DESK_CAP}")
    return A


def _unit(x):
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


def _sin_vec(x, y):
    """Sine of the acute angle between two nonzero vectors."""
    x = _unit(x)
    y = _unit(y)
    # residual form keeps accuracy for tiny angles
    return min(1.0, float(np.linalg.norm(x - (x @ y) * y)))


def _sin_space(Bq, x):
    """Sine of the angle between ``x`` and ``range(Bq)`` (``Bq`` orthonormal)."""
    x = _unit(x)
    if Bq.shape[1] == 0:
        return 1.0
    res = x - Bq @ (Bq.T @ x)
    return min(1.0, float(np.linalg.norm(res)))


def _proj_out(Bq, x):
    if Bq.shape[1] == 0:
        return x.copy()
    y = x - Bq @ (Bq.T @ x)
    return y - Bq @ (Bq.T @ y)


def _complement(Q):
    """Orthonormal basis of ``range(Q)``'s orthogonal complement."""
    n, q = Q.shape
    if q == 0:
        return np.eye(n)
    full, _ = np.linalg.qr(Q, mode="complete")
    return full[:, q:]


@dataclass
class Oracle:
    """Dense SVD ground truth of a desk-scale matrix."""

    A: np.ndarray
    sigmas: np.ndarray
    U: np.ndarray
    V: np.ndarray

    @property
    def norm2(self) -> float:
        return float(self.sigmas[0])

    def order(self, tau):
        return np.argsort(np.abs(self.sigmas - tau), kind="stable")


def make_oracle(A) -> Oracle:
    Ad = _dense(A)
    s, U, V = dense_svd(Ad)
    return Oracle(Ad, s, U, V)


def target_triplet(oracle: Oracle, tau: float, k: int = 0):
    """The (k+1)-th singular triplet closest to ``tau``."""
    j = oracle.order(tau)[k]
    return float(oracle.sigmas[j]), oracle.U[:, j], oracle.V[:, j]


def _shifted(A, tau):
    M, N = A.shape
    return np.block([[-tau * np.eye(M), A], [A.T, -tau * np.eye(N)]])


@dataclass
class ExactSolution:
    s: np.ndarray
    t: np.ndarray
    alpha: float
    beta: float
    kappa: float
    residual: float
    fixed_point: float = float("nan")


def exact_correction_solution(A_dense, tau, theta, u, v, Uc=None, Vc=None, B=None, rhs=None) -> ExactSolution:
    """Exact solution of the doubly projected correction equation.

    The system is restricted to an orthonormal basis ``Y`` of the double
    orthogonal complement of ``(Q, Z) = ([Uc, u], [Vc, v])`` and solved
    densely; ``kappa`` is the spectral condition number of ``Y.T K Y``.
    ``alpha`` and ``beta`` are recovered from the solution. When ``B`` (the
    dense inverse of the shifted augmented matrix) is given, ``fixed_point``
    is the distance between ``[s; t]`` and ``-[u; v] + B [alpha u; beta v]``
    relative to the size of the two cancelling terms.

    ``rhs`` overrides the right-hand side ``-r_p``; pass the one an iterative
    solver actually used so both solutions refer to the same system.
    """
    A = _dense(A_dense)
    M, N = A.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    Uc = np.empty((M, 0)) if Uc is None else np.asarray(Uc, dtype=np.float64).reshape(M, -1)
    Vc = np.empty((N, 0)) if Vc is None else np.asarray(Vc, dtype=np.float64).reshape(N, -1)
    Q = np.column_stack([Uc, u])
    Z = np.column_stack([Vc, v])
    Yu = _complement(Q)
    Yv = _complement(Z)
    K = _shifted(A, tau)
    if rhs is None:
        r = np.concatenate([A @ v - theta * u, A.T @ u - theta * v])
        rhs = -projected_residual(r, Uc, Vc)
    rhs = np.concatenate([_proj_out(Q, rhs[:M]), _proj_out(Z, rhs[M:])])
    ru = Yu.T @ rhs[:M]
    rv = Yv.T @ rhs[M:]
    # Y.T K Y assembled blockwise
    Kp = np.block([[-tau * np.eye(Yu.shape[1]), Yu.T @ A @ Yv], [Yv.T @ A.T @ Yu, -tau * np.eye(Yv.shape[1])]])
    lam, W = np.linalg.eigh(Kp)
    amin = float(np.min(np.abs(lam))) if lam.size else 1.0
    amax = float(np.max(np.abs(lam))) if lam.size else 1.0
    if amin <= 1e-13 * max(amax, 1.0):
        raise SingularProjectedSystem("projected shifted matrix is singular at this target")
    y = W @ ((W.T @ np.concatenate([ru, rv])) / lam)
    s = Yu @ y[: Yu.shape[1]]
    t = Yv @ y[Yu.shape[1] :]
    x = np.concatenate([s, t])
    Px = K @ x
    Px = np.concatenate([_proj_out(Q, Px[:M]), _proj_out(Z, Px[M:])])
    rn = float(np.linalg.norm(rhs))
    resid = float(np.linalg.norm(Px - rhs)) / rn if rn > 0 else 0.0
    alpha = float(theta - tau + u @ (A @ t))
    beta = float(theta - tau + v @ (A.T @ s))
    fp = float("nan")
    if B is not None:
        uv = np.concatenate([u, v])
        Bab = B @ np.concatenate([alpha * u, beta * v])
        fp = float(np.linalg.norm(Bab - uv - x)) / (float(np.linalg.norm(uv)) + float(np.linalg.norm(Bab)))
    return ExactSolution(s, t, alpha, beta, amax / amin, resid, fp)


@dataclass
class ErrorMetrics:
    eps: float
    eps_s: float
    eps_t: float
    eps_tilde: float
    eps_hat: float
    g: np.ndarray
    h: np.ndarray
    g_perp: np.ndarray
    h_perp: np.ndarray

    @property
    def gh_perp(self) -> float:
        return math.sqrt(float(self.g_perp @ self.g_perp + self.h_perp @ self.h_perp))


def _rel(num, den):
    if den > 0:
        return num / den
    return 0.0 if num == 0 else math.inf


def expansion_error_metrics(s, t, s_tilde, t_tilde, U, V) -> ErrorMetrics:
    """Relative errors of an inexact correction and of its expansion vectors."""
    s, t = np.asarray(s, float), np.asarray(t, float)
    s_tilde, t_tilde = np.asarray(s_tilde, float), np.asarray(t_tilde, float)
    xn = math.hypot(np.linalg.norm(s), np.linalg.norm(t))
    if xn == 0.0:
        raise UndefinedMetrics("exact correction is zero")
    es = s_tilde - s
    et = t_tilde - t
    en = math.hypot(np.linalg.norm(es), np.linalg.norm(et))
    eps = en / xn
    if en > 0:
        g, h = es / en, et / en
    else:
        g, h = np.zeros_like(s), np.zeros_like(t)
    ps, pt = _proj_out(U, s), _proj_out(V, t)
    pes, pet = _proj_out(U, es), _proj_out(V, et)
    ns, nt = float(np.linalg.norm(ps)), float(np.linalg.norm(pt))
    eps_s = _rel(float(np.linalg.norm(pes)), ns)
    eps_t = _rel(float(np.linalg.norm(pet)), nt)
    eps_hat = _rel(math.hypot(np.linalg.norm(pes), np.linalg.norm(pet)), math.hypot(ns, nt))
    return ErrorMetrics(
        eps=eps,
        eps_s=eps_s,
        eps_t=eps_t,
        eps_tilde=max(eps_s, eps_t),
        eps_hat=eps_hat,
        g=g,
        h=h,
        g_perp=_proj_out(U, g),
        h_perp=_proj_out(V, h),
    )


@dataclass
class IdentityReport:
    """Both sides of the one-step subspace expansion identities, per side."""

    sin_U: dict
    sin_Uplus: dict
    sin_Uplus_tilde: dict
    sin_plus_perp: dict
    sin_plus_tilde_perp: dict
    identity_residual: dict
    ratio_residual: dict
    ratio: dict
    bound_tau: dict
    degenerate: dict
    ratio_defined: dict


def _side(Ub, x_plus, x_plus_tilde, x_star, eps_side):
    xs_perp = _proj_out(Ub, x_star)
    nperp = float(np.linalg.norm(xs_perp))
    sin_U = _sin_space(Ub, x_star)
    Up = np.column_stack([Ub, x_plus])
    Upt = np.column_stack([Ub, x_plus_tilde])
    sin_Up = _sin_space(Up, x_star)
    sin_Upt = _sin_space(Upt, x_star)
    if nperp <= DEGENERATE:
        return dict(sin_U=sin_U, sin_Up=sin_Up, sin_Upt=sin_Upt, sp=math.nan, spt=math.nan, idres=math.nan,
                    rres=math.nan, ratio=math.nan, tau=math.nan, degenerate=True, ratio_defined=False)
    sp = _sin_vec(x_plus, xs_perp)
    spt = _sin_vec(x_plus_tilde, xs_perp)
    idres = abs(sin_Up - sin_U * sp)
    deg = sp <= DEGENERATE
    ratio_defined = (not deg) and sin_Up > RATIO_FLOOR
    ratio = sin_Upt / sin_Up if sin_Up > 0 else math.nan
    rres = abs(ratio - spt / sp) if ratio_defined else math.nan
    tau_b = 2.0 * eps_side / sp if (eps_side is not None and not deg) else math.nan
    return dict(sin_U=sin_U, sin_Up=sin_Up, sin_Upt=sin_Upt, sp=sp, spt=spt, idres=idres, rres=rres,
                ratio=ratio, tau=tau_b, degenerate=deg, ratio_defined=ratio_defined)


def subspace_expansion_identities(U, V, u_plus, v_plus, u_plus_tilde, v_plus_tilde, u_star, v_star,
                                  eps_s=None, eps_t=None) -> IdentityReport:
    """Evaluate both sides of the expansion identities for the left and right spaces.

    ``u_plus``/``v_plus`` are the exact expansion directions and the tilde
    versions the inexact ones; all must be orthogonal to ``U``/``V``. The
    ratio identity is marked undefined when the exact expanded sine is below
    ``RATIO_FLOOR`` (the ratio itself then carries rounding noise).
    """
    L = _side(U, u_plus, u_plus_tilde, u_star, eps_s)
    R = _side(V, v_plus, v_plus_tilde, v_star, eps_t)

    def pick(key):
        return {"u": L[key], "v": R[key]}

    return IdentityReport(
        sin_U=pick("sin_U"),
        sin_Uplus=pick("sin_Up"),
        sin_Uplus_tilde=pick("sin_Upt"),
        sin_plus_perp=pick("sp"),
        sin_plus_tilde_perp=pick("spt"),
        identity_residual=pick("idres"),
        ratio_residual=pick("rres"),
        ratio=pick("ratio"),
        bound_tau=pick("tau"),
        degenerate=pick("degenerate"),
        ratio_defined=pick("ratio_defined"),
    )


def _spectrum_B(oracle: Oracle, tau, exclude):
    """Eigenvalues of the inverse shifted augmented matrix minus the excluded triplets."""
    M, N = oracle.A.shape
    keep = np.ones(oracle.sigmas.size, dtype=bool)
    keep[list(exclude)] = False
    s = oracle.sigmas[keep]
    lam = [1.0 / (s - tau), 1.0 / (-s - tau)]
    extra = abs(M - N)
    if extra:
        lam.append(np.full(extra, -1.0 / tau))
    return np.concatenate(lam)


def sep_from_spectrum(oracle: Oracle, tau, gamma, k=0):
    """``min |lambda_i(L) - gamma|`` with ``L`` the compression of ``B`` that
    drops the target pair and the ``k`` deflated pairs.

    The eigenvalues of ``B`` are ``1/(+-sigma_i - tau)`` and ``-1/tau`` for
    the ``|M - N|`` extra null directions; the target removes one copy of
    ``1/(sigma - tau)``, each deflated triplet removes both of its signs.
    """
    order = oracle.order(tau)
    lam = _spectrum_B(oracle, tau, order[:k])
    sig = oracle.sigmas[order[k]]
    target = 1.0 / (sig - tau)
    j = int(np.argmin(np.abs(lam - target)))
    lam = np.delete(lam, j)
    return float(np.min(np.abs(lam - gamma))) if lam.size else math.inf


def sep_explicit(oracle: Oracle, tau, gamma, k=0, B=None):
    """Same quantity from an explicit ``L = W_perp.T B W_perp`` (slow; for cross-checks)."""
    A = oracle.A
    M, N = A.shape
    order = oracle.order(tau)
    if B is None:
        B = np.linalg.inv(_shifted(A, tau))
    j = order[k]
    w = np.concatenate([oracle.U[:, j], oracle.V[:, j]]) / math.sqrt(2.0)
    cols = [w[:, None]]
    for i in order[:k]:
        cols.append(np.concatenate([oracle.U[:, i], np.zeros(N)])[:, None])
        cols.append(np.concatenate([np.zeros(M), oracle.V[:, i]])[:, None])
    Wp = _complement(np.hstack(cols))
    L = Wp.T @ B @ Wp
    lam = np.linalg.eigvalsh(0.5 * (L + L.T))
    return float(np.min(np.abs(lam - gamma)))


def kappa_B_prime(sigmas, tau, k=0) -> float:
    """Asymptotic condition number ``(sigma_max + tau) / |sigma_{k+2} - tau|``.

    ``sigmas`` are ranked by distance to ``tau``; ``sigma_{k+2}`` is the
    first one past the target and ``sigma_max`` the largest from there on.
    """
    s = np.asarray(sigmas, dtype=np.float64)
    if k < 0 or k + 2 > s.size:
        raise ValueError("need k + 2 <= number of singular values")
    ranked = s[np.argsort(np.abs(s - tau), kind="stable")]
    rest = ranked[k + 1 :]
    den = abs(rest[0] - tau)
    if den == 0.0:
        return math.inf
    return float((np.max(rest) + tau) / den)


@dataclass
class CheckRow:
    iteration: int
    name: str
    lhs: float
    rhs: float
    passed: bool
    hypothesis_met: bool


@dataclass
class DiagnosticsRecord:
    outer: int
    k: int
    tau: float
    theta: float
    sigma: float
    s: np.ndarray
    t: np.ndarray
    alpha: float
    beta: float
    gamma: float
    eps: float
    eps_s: float
    eps_t: float
    eps_tilde: float
    eps_hat: float
    delta: float
    sep: float
    sep_estimate: float
    sin_phi: float
    sin_psi: float
    g: np.ndarray = field(repr=False)
    h: np.ndarray = field(repr=False)
    g_perp: np.ndarray = field(repr=False)
    h_perp: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    identities: IdentityReport = field(repr=False)
    kappa: float = float("nan")
    kappa_formula: float = float("nan")
    r_in: float = float("nan")
    fixed_point: float = float("nan")
    norm_x_B: float = float("nan")

    @property
    def sin_max(self) -> float:
        return max(self.sin_phi, self.sin_psi)

    @property
    def gh_perp(self) -> float:
        return math.sqrt(float(self.g_perp @ self.g_perp + self.h_perp @ self.h_perp))


def _le(lhs, rhs):
    return lhs <= rhs * (1.0 + REL_SLACK) + ABS_SLACK


def theory_bounds(rec: DiagnosticsRecord, norm_A: float) -> list:
    """Check the accuracy relations for one instrumented iteration.

    Each inequality is evaluated only when its hypotheses hold numerically;
    otherwise its row is kept with ``hypothesis_met`` false and counts as
    passed.
    """
    it = rec.outer
    rows = []

    def add(name, lhs, rhs, ok, hyp):
        rows.append(CheckRow(it, name, float(lhs), float(rhs), bool(ok) if hyp else True, bool(hyp)))

    defined = np.isfinite(rec.eps_tilde) and rec.eps > 0
    add("eps_hat_bound", rec.eps_hat, rec.eps_tilde, rec.eps_hat <= rec.eps_tilde + EPS_HAT_SLACK, np.isfinite(rec.eps_tilde))

    ids = rec.identities
    for side, eps_side in (("u", rec.eps_s), ("v", rec.eps_t)):
        deg = ids.degenerate[side]
        add(f"expansion_identity_{side}", ids.identity_residual[side], IDENTITY_TOL,
            ids.identity_residual[side] <= IDENTITY_TOL, not deg)
        add(f"expansion_ratio_{side}", ids.ratio_residual[side], IDENTITY_TOL,
            ids.ratio_residual[side] <= IDENTITY_TOL, ids.ratio_defined[side])
        tb = ids.bound_tau[side]
        hyp = ids.ratio_defined[side] and np.isfinite(tb) and tb < 1
        ratio = ids.ratio[side]
        add(f"ratio_lower_{side}", 1.0 - tb, ratio, ratio - (1.0 - tb) >= -IDENTITY_TOL, hyp)
        add(f"ratio_upper_{side}", ratio, 1.0 + tb, (1.0 + tb) - ratio >= -IDENTITY_TOL, hyp)

    gap = abs(rec.sigma - rec.tau)
    ab = math.hypot(rec.alpha, rec.beta)
    hyp_ab = defined and rec.gh_perp > DEGENERATE and rec.norm_x_B > 0
    rhs_ab = (2.0 * ab * rec.sin_max / (gap * rec.norm_x_B * rec.gh_perp) * rec.eps_tilde) if hyp_ab else math.nan
    add("error_bound_ab", rec.eps, rhs_ab, hyp_ab and _le(rec.eps, rhs_ab), hyp_ab)

    sig = rec.sigma
    tn = float(np.linalg.norm(rec.t))
    sn = float(np.linalg.norm(rec.s))
    slack = 1e-12 * norm_A * max(1.0, abs(rec.theta - rec.tau))
    lhs_a = abs(rec.alpha - (rec.theta - rec.tau))
    rhs_a = (norm_A + sig) * tn * rec.sin_max
    add("alpha_bound", lhs_a, rhs_a, lhs_a <= rhs_a + slack, True)
    lhs_b = abs(rec.beta - (rec.theta - rec.tau))
    rhs_b = (norm_A + sig) * sn * rec.sin_max
    add("beta_bound", lhs_b, rhs_b, lhs_b <= rhs_b + slack, True)

    hyp_sep = hyp_ab and rec.sep > 0 and np.isfinite(rec.delta)
    rhs_sep = (2.0 * math.sqrt(2.0) * rec.delta / (rec.sep * gap * rec.gh_perp) * rec.eps_tilde) if hyp_sep else math.nan
    add("error_bound_sep", rec.eps, rhs_sep, hyp_sep and _le(rec.eps, rhs_sep), hyp_sep)

    x = 2.0 * abs(rec.gamma) * norm_A * (sn + tn) / (gap * rec.sep) if rec.sep > 0 else math.inf
    hyp_delta = x < 1 and np.sign(rec.theta - rec.tau) * (rec.alpha + rec.beta) > 0 and np.isfinite(rec.delta)
    lo = 1.0 / (1.0 + x)
    hi = 1.0 / (1.0 - x) if x < 1 else math.inf
    add("delta_lower", lo, rec.delta, rec.delta >= lo * (1.0 - REL_SLACK), hyp_delta)
    add("delta_upper", rec.delta, hi, rec.delta <= hi * (1.0 + REL_SLACK), hyp_delta)
    add("delta_near_one", abs(rec.delta - 1.0), 0.3, abs(rec.delta - 1.0) <= 0.3,
        rec.sin_max < 0.05 and np.isfinite(rec.delta))

    hyp_sw = defined and np.isfinite(rec.kappa) and np.isfinite(rec.r_in)
    add("sandwich_lower", rec.eps / rec.kappa if hyp_sw else math.nan, rec.r_in,
        hyp_sw and _le(rec.eps / rec.kappa, rec.r_in), hyp_sw)
    add("sandwich_upper", rec.r_in, rec.kappa * rec.eps if hyp_sw else math.nan,
        hyp_sw and _le(rec.r_in, rec.kappa * rec.eps), hyp_sw)
    add("exact_fixed_point", rec.fixed_point, 1e-8, rec.fixed_point <= 1e-8, rec.k == 0 and np.isfinite(rec.fixed_point))
    return rows


def alpha_slope(records, floor=None):
    """Least-squares slope of ``log|alpha - (theta - tau)|`` against ``log sin_max``.

    Points at or below ``floor`` (default ``1e-13 * max|theta - tau|``) are
    dropped since they only measure rounding. Returns ``(slope, npoints)``.
    """
    pts = []
    scale = max((abs(r.theta - r.tau) for r in records), default=1.0)
    floor = 1e-13 * scale if floor is None else floor
    for r in records:
        d = abs(r.alpha - (r.theta - r.tau))
        if d > floor and r.sin_max > 0:
            pts.append((math.log(r.sin_max), math.log(d)))
    if len(pts) < 3:
        return math.nan, len(pts)
    xs, ys = np.array(pts).T
    slope = float(np.polyfit(xs, ys, 1)[0])
    return slope, len(pts)


@dataclass
class VerifyReport:
    records: list
    rows: list
    result: object
    oracle: Oracle
    skipped: int = 0

    @property
    def failures(self):
        return [r for r in self.rows if r.hypothesis_met and not r.passed]

    @property
    def ok(self) -> bool:
        return not self.failures

    def first_failure(self):
        f = self.failures
        return f[0] if f else None


class _Instrument:
    def __init__(self, oracle: Oracle, tau: float):
        self.oracle = oracle
        self.tau = tau
        self.A = oracle.A
        self.B = np.linalg.inv(_shifted(self.A, tau))
        self.records = []
        self.rows = []
        self.skipped = 0

    def __call__(self, ctx: InnerContext):
        A, B, tau = self.A, self.B, self.tau
        k = ctx.k
        sigma, ustar, vstar = target_triplet(self.oracle, tau, k)
        try:
            ex = exact_correction_solution(A, tau, ctx.theta, ctx.u, ctx.v, ctx.Uc, ctx.Vc, B=B, rhs=ctx.rhs)
            Ub = np.column_stack([ctx.Uc, ctx.U])
            Vb = np.column_stack([ctx.Vc, ctx.V])
            met = expansion_error_metrics(ex.s, ex.t, ctx.report.s, ctx.report.t, Ub, Vb)
        except (UndefinedMetrics, SingularProjectedSystem) as exc:
            log.info("iteration %d skipped: %s", ctx.outer, exc)
            self.skipped += 1
            return
        u, v = ctx.u, ctx.v
        uv = np.concatenate([u, v])
        Buv = B @ uv
        ab = math.hypot(ex.alpha, ex.beta)
        gamma = math.copysign(math.sqrt(2.0) / ab, ctx.theta - tau) if ab > 0 else math.inf
        xB = B @ np.concatenate([ex.alpha * u, ex.beta * v]) - uv
        den = B @ np.concatenate([ex.alpha * gamma * u, ex.beta * gamma * v]) - gamma * uv
        dn = float(np.linalg.norm(den))
        delta = float(np.linalg.norm(Buv - gamma * uv)) / dn if dn > 0 else math.nan
        sep = sep_from_spectrum(self.oracle, tau, gamma, k)
        ext = ctx.extraction
        nu = np.asarray(ext.nu, dtype=float)
        sep_est = math.nan
        if nu.size > 1 and ctx.theta != tau:
            others = np.delete(nu, ext.selected)
            others = others[np.isfinite(others) & (others != 0)]
            if others.size:
                sep_est = float(np.min(np.abs(others + tau - ctx.theta) / (np.abs(others) * abs(ctx.theta - tau))))
        up = _unit(_proj_out(Ub, ex.s))
        vp = _unit(_proj_out(Vb, ex.t))
        upt = _unit(_proj_out(Ub, ctx.report.s))
        vpt = _unit(_proj_out(Vb, ctx.report.t))
        ids = subspace_expansion_identities(Ub, Vb, up, vp, upt, vpt, ustar, vstar, met.eps_s, met.eps_t)
        try:
            kf = kappa_B_prime(self.oracle.sigmas, tau, k)
        except ValueError:
            kf = math.nan
        rec = DiagnosticsRecord(
            outer=ctx.outer,
            k=k,
            tau=tau,
            theta=ctx.theta,
            sigma=sigma,
            s=ex.s,
            t=ex.t,
            alpha=ex.alpha,
            beta=ex.beta,
            gamma=gamma,
            eps=met.eps,
            eps_s=met.eps_s,
            eps_t=met.eps_t,
            eps_tilde=met.eps_tilde,
            eps_hat=met.eps_hat,
            delta=delta,
            sep=sep,
            sep_estimate=sep_est,
            sin_phi=_sin_vec(u, ustar),
            sin_psi=_sin_vec(v, vstar),
            g=met.g,
            h=met.h,
            g_perp=met.g_perp,
            h_perp=met.h_perp,
            w=np.concatenate([ustar, vstar]) / math.sqrt(2.0),
            z=uv / math.sqrt(2.0),
            identities=ids,
            kappa=ex.kappa,
            kappa_formula=kf,
            r_in=ctx.report.r_in,
            fixed_point=ex.fixed_point,
            norm_x_B=float(np.linalg.norm(xB)),
        )
        self.records.append(rec)
        self.rows.extend(theory_bounds(rec, self.oracle.norm2))


def verify_run(A, config: SolverConfig) -> VerifyReport:
    """Instrumented solve: one :class:`DiagnosticsRecord` per inner solve."""
    oracle = make_oracle(A)
    Asp = A if isinstance(A, SparseMatrix) else SparseMatrix.from_dense(oracle.A)
    inst = _Instrument(oracle, config.tau)
    result = solve(Asp, config, observer=inst)
    return VerifyReport(inst.records, inst.rows, result, oracle, inst.skipped)


def write_verification_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "name", "lhs", "rhs", "pass", "hypothesis_met"])
        for r in rows:
            w.writerow([r.iteration, r.name, format(r.lhs, ".17g"), format(r.rhs, ".17g"), int(r.passed), int(r.hypothesis_met)])
