"""Outer Jacobi-Davidson SVD loop with thick restart and deflation."""

from __future__ import annotations

import csv
import logging
import math
import struct
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

from .correction import InnerSolveReport, ProjectedOperator, inner_tolerance, minres_solve
from .extraction import (
    ExtractionError,
    ExtractionResult,
    SearchState,
    expand_state,
    harmonic_candidates,
    harmonic_extract,
    refined_harmonic_extract,
    refined_vector,
)
from .sparse import SparseMatrix, one_norm, orthonormalize_against

__all__ = [
    "SolverConfig",
    "ApproxTriplet",
    "DeflationSet",
    "HistoryRecord",
    "ConvergenceHistory",
    "InnerContext",
    "SolveResult",
    "solve",
    "thick_restart",
    "purge_converged",
    "projected_residual",
    "write_results_csv",
    "write_vectors",
    "read_vectors",
    "ITER_EXACT_ETA",
]

log = logging.getLogger(__name__)

ITER_EXACT_ETA = 1e-14
DEFAULT_SEED = 20190601
HARMONIC = "h"
REFINED = "rh"
INEXACT = "inexact"
ITER_EXACT = "iter-exact"


@dataclass
class SolverConfig:
    """Parameters of one partial SVD run."""

    tau: float
    num: int = 1
    variant: str = REFINED
    eps_tilde: float = 1e-3
    tol: float = 1e-10
    max_dim: int = 20
    restart_keep: int = 3
    inner_mode: str = INEXACT
    max_inner: Optional[int] = None
    max_outer: int = 3000
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be a positive finite number")
        if self.num < 1:
            raise ValueError("num must be at least 1")
        if self.variant not in (HARMONIC, REFINED):
            raise ValueError(f"variant must be '{HARMONIC}' or '{REFINED}'")
        if not 0 < self.eps_tilde < 1:
            raise ValueError("eps_tilde must lie in (0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if not 1 <= self.restart_keep < self.max_dim:
            raise ValueError("need 1 <= restart_keep < max_dim")
        if self.inner_mode not in (INEXACT, ITER_EXACT):
            raise ValueError(f"inner_mode must be '{INEXACT}' or '{ITER_EXACT}'")
        if self.max_inner is not None and self.max_inner < 1:
            raise ValueError("max_inner must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be positive")


@dataclass
class ApproxTriplet:
    theta: float
    u: np.ndarray
    v: np.ndarray
    r: np.ndarray
    resnorm: float


@dataclass
class DeflationSet:
    thetas: list = field(default_factory=list)
    U: np.ndarray = None
    V: np.ndarray = None

    @classmethod
    def empty(cls, M, N):
        return cls([], np.empty((M, 0)), np.empty((N, 0)))

    @property
    def k(self) -> int:
        return len(self.thetas)

    def add(self, theta, u, v):
        self.thetas.append(float(theta))
        self.U = np.column_stack([self.U, u])
        self.V = np.column_stack([self.V, v])


@dataclass
class HistoryRecord:
    outer: int
    triplet: int
    m: int
    theta: float
    resnorm: float
    inner_iters: int
    eta: float
    r_in: float
    hit_cap: bool
    secs: float


HISTORY_HEADER = [f.name for f in fields(HistoryRecord)]


def _fmt(x):
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


class ConvergenceHistory(list):
    """List of :class:`HistoryRecord` with CSV round-tripping."""

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(HISTORY_HEADER)
            for rec in self:
                w.writerow([_fmt(getattr(rec, name)) for name in HISTORY_HEADER])

    @classmethod
    def from_csv(cls, path):
        out = cls()
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if header != HISTORY_HEADER:
                raise ValueError(f"unexpected history header {header}")
            for row in rd:
                out.append(
                    HistoryRecord(
                        outer=int(row[0]),
                        triplet=int(row[1]),
                        m=int(row[2]),
                        theta=float(row[3]),
                        resnorm=float(row[4]),
                        inner_iters=int(row[5]),
                        eta=float(row[6]),
                        r_in=float(row[7]),
                        hit_cap=row[8] == "1",
                        secs=float(row[9]),
                    )
                )
        return out


@dataclass
class InnerContext:
    """Snapshot handed to an observer after each inner solve."""

    outer: int
    k: int
    tau: float
    theta: float
    u: np.ndarray
    v: np.ndarray
    U: np.ndarray
    V: np.ndarray
    Uc: np.ndarray
    Vc: np.ndarray
    rhs: np.ndarray
    report: InnerSolveReport
    extraction: ExtractionResult


@dataclass
class SolveResult:
    triplets: list
    history: ConvergenceHistory
    converged: bool
    outer_iterations: int
    inner_iterations: int
    seconds: float
    deflation: DeflationSet
    events: dict
    message: str = ""


def projected_residual(r: np.ndarray, Uc: np.ndarray, Vc: np.ndarray) -> np.ndarray:
    """``blockdiag(I - Uc Uc.T, I - Vc Vc.T) r``."""
    M = Uc.shape[0]
    rs = r[:M]
    rt = r[M:]
    if Uc.shape[1]:
        rs = rs - Uc @ (Uc.T @ rs)
    if Vc.shape[1]:
        rt = rt - Vc @ (Vc.T @ rt)
    return np.concatenate([rs, rt])


def _orth_coeffs(pairs, m):
    """Orthonormalize coefficient pairs in order, dropping a pair if either side is dependent."""
    C = np.empty((m, 0))
    D = np.empty((m, 0))
    for c, d in pairs:
        cn, _ = orthonormalize_against(c, C)
        dn, _ = orthonormalize_against(d, D)
        if cn is None or dn is None:
            continue
        C = np.column_stack([C, cn])
        D = np.column_stack([D, dn])
    return C, D


def thick_restart(state: SearchState, A: SparseMatrix, keep: int, tau: float, variant: str = REFINED) -> SearchState:
    """Shrink the search spaces to the ``keep`` best approximate vector pairs.

    Harmonic: the pencil pairs with the largest ``|1/nu|``. Refined harmonic:
    for each of those harmonic Rayleigh quotients ``rho_i`` the minimizer of
    ``||(C - rho_i I) w||``. Only small coefficient transforms are applied;
    ``A`` is not touched.
    """
    _, cands = harmonic_candidates(state, tau)
    cands = cands[:keep]
    if variant == REFINED:
        pairs = []
        for _, _, rho, _ in cands:
            c, d, _, _ = refined_vector(state, rho)
            pairs.append((c, d))
    else:
        pairs = [(c, d) for c, d, _, _ in cands]
    C, D = _orth_coeffs(pairs, state.m)
    if C.shape[1] == 0:
        raise ExtractionError("thick restart retained no directions")
    state.transform(C, D)
    return state


def purge_converged(state: SearchState, c: np.ndarray, d: np.ndarray) -> SearchState:
    """Remove the converged directions ``U c`` and ``V d`` from the search spaces.

    ``[c, C]`` and ``[d, D]`` come from full QR factorizations of ``c`` and
    ``d``; the bases become ``U C`` and ``V D`` and the projected matrices are
    updated by the same small transforms. With ``m == 1`` the state is left
    empty.
    """
    m = state.m
    if m <= 1:
        new = SearchState(state.M, state.N)
        state.__dict__.update(new.__dict__)
        return state
    Qc, _ = np.linalg.qr(np.asarray(c, dtype=np.float64).reshape(m, 1), mode="complete")
    Qd, _ = np.linalg.qr(np.asarray(d, dtype=np.float64).reshape(m, 1), mode="complete")
    state.transform(Qc[:, 1:], Qd[:, 1:])
    return state


def _extract(state, tau, variant):
    ext = harmonic_extract(state, tau)
    if variant == REFINED:
        ext = refined_harmonic_extract(state, ext.rho, ext)
    return ext


def _unit_random(rng, n, B):
    for _ in range(10):
        w, _ = orthonormalize_against(rng.standard_normal(n), B)
        if w is not None:
            return w
    raise ExtractionError("could not draw a random vector outside the current subspace")


def solve(
    A: SparseMatrix,
    config: SolverConfig,
    observer: Callable[[InnerContext], None] | None = None,
    preconditioner=None,
) -> SolveResult:
    """Compute the ``config.num`` singular triplets of ``A`` closest to ``config.tau``.

    Every outer iteration extracts an approximate triplet (harmonic, then
    refined when ``variant == 'rh'``), tests ``||r|| <= ||A||_1 * tol``,
    solves the correction equation with MINRES to the adaptive tolerance and
    expands both search spaces by one vector. Converged triplets are locked
    into the deflation set and purged from the search spaces.
    """
    M, N = A.shape
    tau = config.tau
    start = time.monotonic()
    rng = np.random.default_rng(config.seed)
    thresh = one_norm(A) * config.tol
    max_inner = config.max_inner if config.max_inner is not None else 2 * (M + N)

    state = SearchState(M, N)
    defl = DeflationSet.empty(M, N)
    history = ConvergenceHistory()
    events = {"reject": 0, "restart": 0, "extraction_retry": 0, "hit_cap": 0, "stagnated": 0, "reinit": 0}

    u_plus = np.full(M, 1.0 / math.sqrt(M))
    v_plus = np.full(N, 1.0 / math.sqrt(N))
    need_expand = True
    outer = 0
    inner_total = 0
    retries = 0
    message = ""
    converged = False

    while True:
        if need_expand:
            expand_state(state, A, u_plus, v_plus)
        if outer >= config.max_outer:
            message = f"maximum number of outer iterations ({config.max_outer}) reached"
            break
        outer += 1
        try:
            ext = _extract(state, tau, config.variant)
        except ExtractionError as exc:
            retries += 1
            events["extraction_retry"] += 1
            if retries > 3:
                message = f"extraction failed repeatedly: {exc}"
                break
            log.warning("extraction failed (%s); restarting from a perturbed vector pair", exc)
            Ub = np.column_stack([defl.U, state.U])
            Vb = np.column_stack([defl.V, state.V])
            state = SearchState(M, N)
            u_plus = _unit_random(rng, M, defl.U if Ub.shape[1] >= M else Ub[:, : defl.k])
            v_plus = _unit_random(rng, N, defl.V if Vb.shape[1] >= N else Vb[:, : defl.k])
            need_expand = True
            continue
        retries = 0

        theta = ext.theta
        u = state.U @ ext.c
        v = state.V @ ext.d
        r = np.concatenate([state.AV @ ext.d - theta * u, state.AtU @ ext.c - theta * v])
        resnorm = float(np.linalg.norm(r))
        m_now = state.m

        if resnorm <= thresh:
            history.append(
                HistoryRecord(outer, defl.k + 1, m_now, theta, resnorm, 0, math.nan, math.nan, False, time.monotonic() - start)
            )
            defl.add(theta, u, v)
            log.info("triplet %d converged: theta=%.15g after %d outer iterations", defl.k, theta, outer)
            if defl.k >= config.num:
                converged = True
                break
            purge_converged(state, ext.c, ext.d)
            if state.m == 0:
                events["reinit"] += 1
                u_plus, _ = orthonormalize_against(np.full(M, 1.0), defl.U)
                v_plus, _ = orthonormalize_against(np.full(N, 1.0), defl.V)
                if u_plus is None:
                    u_plus = _unit_random(rng, M, defl.U)
                if v_plus is None:
                    v_plus = _unit_random(rng, N, defl.V)
                need_expand = True
            else:
                need_expand = False
            continue

        Q = np.column_stack([defl.U, u])
        Z = np.column_stack([defl.V, v])
        op = ProjectedOperator(A, tau, Q, Z)
        rhs = -op.project(projected_residual(r, defl.U, defl.V))
        if config.inner_mode == ITER_EXACT:
            eta = ITER_EXACT_ETA
        else:
            eta, _ = inner_tolerance(ext.nu, ext.selected, tau, theta, m_now, config.eps_tilde)
        rep = minres_solve(op, rhs, eta, max_inner, preconditioner=preconditioner)
        inner_total += rep.iterations
        events["hit_cap"] += rep.hit_cap
        events["stagnated"] += rep.stagnated
        history.append(
            HistoryRecord(
                outer, defl.k + 1, m_now, theta, resnorm, rep.iterations, eta, rep.r_in, rep.hit_cap, time.monotonic() - start
            )
        )

        if state.m >= config.max_dim:
            thick_restart(state, A, config.restart_keep, tau, config.variant)
            events["restart"] += 1

        if observer is not None:
            observer(
                InnerContext(
                    outer=outer,
                    k=defl.k,
                    tau=tau,
                    theta=theta,
                    u=u,
                    v=v,
                    U=state.U.copy(),
                    V=state.V.copy(),
                    Uc=defl.U.copy(),
                    Vc=defl.V.copy(),
                    rhs=rhs,
                    report=rep,
                    extraction=ext,
                )
            )

        Ub = np.column_stack([defl.U, state.U])
        Vb = np.column_stack([defl.V, state.V])
        u_plus, _ = orthonormalize_against(rep.s, Ub)
        v_plus, _ = orthonormalize_against(rep.t, Vb)
        if u_plus is None:
            events["reject"] += 1
            u_plus = _unit_random(rng, M, Ub)
        if v_plus is None:
            events["reject"] += 1
            v_plus = _unit_random(rng, N, Vb)
        need_expand = True

    triplets = []
    for theta, u, v in zip(defl.thetas, defl.U.T, defl.V.T):
        r = np.concatenate([A.apply(v) - theta * u, A.apply_transpose(u) - theta * v])
        triplets.append(ApproxTriplet(theta, u.copy(), v.copy(), r, float(np.linalg.norm(r))))
    triplets.sort(key=lambda t: abs(t.theta - tau))
    return SolveResult(
        triplets=triplets,
        history=history,
        converged=converged,
        outer_iterations=outer,
        inner_iterations=inner_total,
        seconds=time.monotonic() - start,
        deflation=defl,
        events=events,
        message=message,
    )


def write_results_csv(path, triplets):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "theta", "resnorm"])
        for i, t in enumerate(triplets, 1):
            w.writerow([i, _fmt(t.theta), _fmt(t.resnorm)])


def write_vectors(path, triplets):
    """Dump ``u`` then ``v`` of every triplet as length-prefixed little-endian float64 blocks.

    Each block is a signed 64-bit little-endian length followed by that
    many ``<f8`` values.
    """
    with open(path, "wb") as fh:
        for t in triplets:
            for vec in (t.u, t.v):
                vec = np.ascontiguousarray(vec, dtype="<f8")
                fh.write(struct.pack("<q", vec.size))
                fh.write(vec.tobytes())


def read_vectors(path):
    """Inverse of :func:`write_vectors`; returns a list of ``(u, v)`` pairs."""
    blocks = []
    with open(path, "rb") as fh:
        while True:
            head = fh.read(8)
            if not head:
                break
            if len(head) != 8:
                raise ValueError("truncated length prefix")
            (n,) = struct.unpack("<q", head)
            data = fh.read(8 * n)
            if len(data) != 8 * n:
                raise ValueError("truncated vector block")
            blocks.append(np.frombuffer(data, dtype="<f8").copy())
    if len(blocks) % 2:
        raise ValueError("odd number of vector blocks")
    return list(zip(blocks[0::2], blocks[1::2]))
