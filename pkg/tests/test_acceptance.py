"""Acceptance criteria, each at its stated tolerance.

Every test writes one PASS/FAIL line (collected in the terminal summary)
before asserting, so a failing criterion still reports its measurements.
"""

import functools
import math
import time

import mpmath
import numpy as np
import pytest

from jdsvd import SolverConfig, SparseMatrix, one_norm, solve
from jdsvd.correction import ProjectedOperator, minres_solve
from jdsvd.dense_eig import dense_svd, sym_definite_gen_eig
from jdsvd.diagnostics import alpha_slope, subspace_expansion_identities, verify_run
from jdsvd.driver import HARMONIC, INEXACT, ITER_EXACT, REFINED
from synthetic import SUITE_SHAPES, closest, synthetic

VARIANTS = (HARMONIC, REFINED)
MODES = {"1e-3": (INEXACT, 1e-3), "1e-4": (INEXACT, 1e-4), "exact": (ITER_EXACT, 1e-3)}
NUMS = (1, 5)
TOL = 1e-10


@functools.lru_cache(maxsize=None)
def suite_matrix(i):
    M, N = SUITE_SHAPES[i]
    A, sigmas, tau = synthetic(M, N, seed=i)
    s_oracle, _, _ = dense_svd(A.todense())
    return A, sigmas, s_oracle, tau


@functools.lru_cache(maxsize=None)
def suite_run(i, variant, mode, num):
    A, _, _, tau = suite_matrix(i)
    inner_mode, eps = MODES[mode]
    return solve(A, SolverConfig(tau=tau, num=num, variant=variant, inner_mode=inner_mode, eps_tilde=eps))


def _suite_size():
    return len(SUITE_SHAPES)


# ---------------------------------------------------------------- criterion 1


def test_c01_correctness_vs_oracle(criterion_log):
    for i in range(_suite_size()):
        suite_matrix(i)
    worst_rel = 0.0
    worst_res = 0.0
    problems = []
    t0 = time.perf_counter()
    for i in range(_suite_size()):
        A, sigmas, s_oracle, tau = suite_matrix(i)
        thresh = one_norm(A) * TOL
        for variant in VARIANTS:
            for num in NUMS:
                res = suite_run(i, variant, "1e-3", num)
                want = closest(s_oracle, tau, num)
                got = np.array([t.theta for t in res.triplets])
                if not res.converged or got.size != num:
                    problems.append(f"{SUITE_SHAPES[i]} {variant} l={num}: not converged ({res.message})")
                    continue
                rel = float(np.max(np.abs(got - want) / want))
                worst_rel = max(worst_rel, rel)
                worst_res = max(worst_res, max(t.resnorm / thresh for t in res.triplets))
                if rel > 1e-8:
                    problems.append(f"{SUITE_SHAPES[i]} {variant} l={num}: rel err {rel:.2e}")
                if any(t.resnorm > thresh for t in res.triplets):
                    problems.append(f"{SUITE_SHAPES[i]} {variant} l={num}: residual above threshold")
                # the oracle itself agrees with the prescribed spectrum
                assert np.max(np.abs(s_oracle - sigmas)) <= 1e-10 * sigmas[0]
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 30.0
    criterion_log(
        "1 correctness vs oracle",
        ok,
        f"max rel err {worst_rel:.2e} (<= 1e-8), max ||r||/(||A||_1 tol) {worst_res:.3f} (<= 1), "
        f"solve time {elapsed:.1f} s (< 30 s)",
    )
    assert not problems, problems
    assert elapsed < 30.0


# ------------------------------------------------------------ criteria 2 and 3


def _mimic_counts(num, mode):
    counts = {}
    table = []
    for variant in VARIANTS:
        good = 0
        for i in range(_suite_size()):
            a = suite_run(i, variant, mode, num).outer_iterations
            e = suite_run(i, variant, "exact", num).outer_iterations
            good += abs(a - e) <= max(3, 0.15 * e)
            table.append((SUITE_SHAPES[i], variant, a, e))
        counts[variant] = good
    return counts, table


def test_c02_mimicking(criterion_log):
    parts = []
    ok = True
    for num in NUMS:
        for mode in ("1e-3", "1e-4"):
            counts, table = _mimic_counts(num, mode)
            ok &= all(c >= 9 for c in counts.values())
            parts.append(f"l={num} eps={mode}: h {counts[HARMONIC]}/10, rh {counts[REFINED]}/10")
            for shape, variant, a, e in table:
                print(f"  l={num} {mode:>5} {variant:>2} {shape}: I_out {a} vs exact {e}")
    criterion_log("2 mimicking (>= 9/10 each)", ok, "; ".join(parts))
    assert ok


def test_c03_inner_work_reduction(criterion_log):
    parts = []
    ok = True
    for num in NUMS:
        for variant in VARIANTS:
            ratios = [
                suite_run(i, variant, "1e-3", num).inner_iterations / suite_run(i, variant, "exact", num).inner_iterations
                for i in range(_suite_size())
            ]
            good = sum(r <= 0.6 for r in ratios)
            ok &= good >= 8
            parts.append(f"l={num} {variant}: {good}/10 (ratios {min(ratios):.2f}..{max(ratios):.2f})")
    criterion_log("3 inner-work reduction (>= 8/10 at ratio <= 0.6)", ok, "; ".join(parts))
    assert ok


# -------------------------------------------------------- criteria 4, 6, 7, 8

VERIFY_SUITE = range(5)


@functools.lru_cache(maxsize=None)
def verify_reports():
    reps = []
    for i in VERIFY_SUITE:
        A, _, _, tau = suite_matrix(i)
        for variant in VARIANTS:
            for mode in ("1e-3", "exact"):
                inner_mode, eps = MODES[mode]
                cfg = SolverConfig(tau=tau, num=3, variant=variant, inner_mode=inner_mode, eps_tilde=eps)
                reps.append(((SUITE_SHAPES[i], variant, mode), verify_run(A, cfg)))
    return reps


def _rows(names):
    out = []
    for _, rep in verify_reports():
        out.extend(r for r in rep.rows if r.name in names)
    return out


def test_c04_eps_hat_bound(criterion_log):
    rows = _rows({"eps_hat_bound"})
    bad = [r for r in rows if r.hypothesis_met and not r.passed]
    checked = sum(r.hypothesis_met for r in rows)
    runs_ok = all(rep.result.converged for _, rep in verify_reports())
    worst = max(r.lhs - r.rhs for r in rows if r.hypothesis_met)
    ok = not bad and checked > 0 and runs_ok
    criterion_log("4 eps_hat <= eps_tilde + 1e-12", ok,
                  f"{len(bad)} violations in {checked} iterations over {len(verify_reports())} runs; "
                  f"max eps_hat - eps_tilde {worst:.2e}")
    assert ok


def test_c05_expansion_identities(criterion_log):
    rng = np.random.default_rng(31)
    worst_id = 0.0
    worst_ratio = 0.0
    n_ratio = 0
    for _ in range(500):
        M = int(rng.integers(6, 60))
        N = int(rng.integers(6, 60))
        m = int(rng.integers(1, min(M, N) - 2))
        U, _ = np.linalg.qr(rng.standard_normal((M, m)))
        V, _ = np.linalg.qr(rng.standard_normal((N, m)))

        def perp(B, x):
            x = x - B @ (B.T @ x)
            x = x - B @ (B.T @ x)
            return x / np.linalg.norm(x)

        up = perp(U, rng.standard_normal(M))
        vp = perp(V, rng.standard_normal(N))
        e = 10.0 ** rng.uniform(-6, -0.5)
        upt = perp(U, up + e * rng.standard_normal(M))
        vpt = perp(V, vp + e * rng.standard_normal(N))
        # the target leans toward the expansion so the sines span many scales
        w = 10.0 ** rng.uniform(-3, 0)
        us = rng.standard_normal(M) * w + up
        vs = rng.standard_normal(N) * w + vp
        rep = subspace_expansion_identities(U, V, up, vp, upt, vpt, us / np.linalg.norm(us), vs / np.linalg.norm(vs))
        for side in ("u", "v"):
            if not rep.degenerate[side]:
                worst_id = max(worst_id, rep.identity_residual[side])
            if rep.ratio_defined[side]:
                n_ratio += 1
                worst_ratio = max(worst_ratio, rep.ratio_residual[side])
    ok = worst_id <= 1e-10 and worst_ratio <= 1e-10 and n_ratio > 0
    criterion_log("5 expansion identities", ok,
                  f"max identity residual {worst_id:.2e}, max ratio residual {worst_ratio:.2e} "
                  f"({n_ratio} defined ratios of 1000 sides), tol 1e-10")
    assert ok


def test_c06_error_bounds(criterion_log):
    names = ("error_bound_ab", "error_bound_sep", "delta_lower", "delta_upper", "delta_near_one")
    parts = []
    ok = True
    for name in names:
        rows = _rows({name})
        checked = [r for r in rows if r.hypothesis_met]
        bad = sum(not r.passed for r in checked)
        ok &= bad == 0 and len(checked) > 0
        parts.append(f"{name} {len(checked) - bad}/{len(checked)}")
    dn = [r.lhs for r in _rows({"delta_near_one"}) if r.hypothesis_met]
    criterion_log("6 error bounds", ok, ", ".join(parts) + f"; max |delta-1| with sin_max<0.05: {max(dn):.2e}")
    assert ok


def test_c07_alpha_beta_quadratic(criterion_log):
    slopes = []
    for key, rep in verify_reports():
        s, n = alpha_slope(rep.records)
        slopes.append((key, s, n))
    bad = [x for x in slopes if not (x[1] >= 1.7)]
    ok = not bad
    lo = min(s for _, s, _ in slopes)
    hi = max(s for _, s, _ in slopes)
    criterion_log("7 alpha estimate slope >= 1.7", ok, f"slopes {lo:.2f}..{hi:.2f} over {len(slopes)} converging runs")
    assert ok, bad


def test_c08_sandwich(criterion_log):
    rows = _rows({"sandwich_lower", "sandwich_upper"})
    checked = [r for r in rows if r.hypothesis_met]
    bad = [r for r in checked if not r.passed]
    ok = not bad and len(checked) > 0
    criterion_log("8 eps/kappa <= r_in <= kappa eps", ok, f"{len(checked) - len(bad)}/{len(checked)} bound checks hold")
    assert ok


# ---------------------------------------------------------------- criterion 9


def _random_correction_problem(rng):
    M = int(rng.integers(8, 40))
    N = int(rng.integers(8, 40))
    dens = rng.uniform(0.2, 1.0)
    A = rng.standard_normal((M, N)) * (rng.random((M, N)) < dens)
    s = np.linalg.svd(A, compute_uv=False)
    tau = float(rng.uniform(0.2 * s[0], 0.9 * s[0]))
    k = int(rng.integers(0, 3))
    Q, _ = np.linalg.qr(rng.standard_normal((M, k + 1)))
    Z, _ = np.linalg.qr(rng.standard_normal((N, k + 1)))
    r = rng.standard_normal(M + N)
    return A, tau, Q, Z, r


def _gen_eig_oracle(F, G, dps=40):
    with mpmath.workdps(dps):
        Fm = mpmath.matrix(F.tolist())
        Gm = mpmath.matrix(G.tolist())
        L = mpmath.cholesky(Gm)
        Li = mpmath.inverse(L)
        S = Li * Fm * Li.T
        E, Qm = mpmath.eigsy(S)
        X = Li.T * Qm
        mu = np.array([float(x) for x in E])
        vecs = np.array(X.tolist(), dtype=float)
    vecs /= np.linalg.norm(vecs, axis=0)
    return mu, vecs


def test_c09_solver_component_oracles(criterion_log):
    rng = np.random.default_rng(9)
    worst_minres = 0.0
    for _ in range(50):
        A, tau, Q, Z, r = _random_correction_problem(rng)
        op = ProjectedOperator(SparseMatrix.from_dense(A), tau, Q, Z)
        b = -op.project(r)
        rep = minres_solve(op, b, 1e-14, max_inner=10 * op.size)
        x = np.concatenate([rep.s, rep.t])
        M, N = A.shape
        P = np.eye(M + N) - op._W @ op._W.T
        K = np.block([[-tau * np.eye(M), A], [A.T, -tau * np.eye(N)]])
        PKP = P @ K @ P
        x_ref = np.linalg.lstsq(PKP, b, rcond=1e-12)[0]
        worst_minres = max(worst_minres, float(np.linalg.norm(x - x_ref) / np.linalg.norm(x_ref)))

    worst_mu = 0.0
    worst_vec = 0.0
    for trial in range(50):
        n = int(rng.integers(2, 13))
        F = rng.standard_normal((n, n))
        F = F + F.T
        B = rng.standard_normal((n, n))
        G = B @ B.T + 0.5 * np.eye(n)
        got = sym_definite_gen_eig(F, G)
        mu_ref, vec_ref = _gen_eig_oracle(F, G)
        order = np.argsort(-np.abs(mu_ref), kind="stable")
        mu_ref, vec_ref = mu_ref[order], vec_ref[:, order]
        scale = np.max(np.abs(mu_ref))
        worst_mu = max(worst_mu, float(np.max(np.abs(got.mu - mu_ref))) / scale)
        for j in range(n):
            a, b_ = got.vectors[:, j], vec_ref[:, j]
            worst_vec = max(worst_vec, float(min(np.linalg.norm(a - b_), np.linalg.norm(a + b_))))
    ok = worst_minres <= 1e-8 and worst_mu <= 1e-10 and worst_vec <= 1e-10
    criterion_log("9 component oracles", ok,
                  f"MINRES rel diff {worst_minres:.2e} (<= 1e-8); pencil eigenvalues {worst_mu:.2e}, "
                  f"vectors {worst_vec:.2e} (<= 1e-10)")
    assert ok


# --------------------------------------------------------------- criterion 10


def test_c10_deflation_hygiene(criterion_log):
    worst_gram = 0.0
    dup = []
    for i in range(_suite_size()):
        A, _, s_oracle, tau = suite_matrix(i)
        thresh = one_norm(A) * TOL
        for variant in VARIANTS:
            res = suite_run(i, variant, "1e-3", 5)
            D = res.deflation
            for B in (D.U, D.V):
                G = B.T @ B
                worst_gram = max(worst_gram, float(np.max(np.abs(G - np.diag(np.diag(G))))))
            th = np.array(D.thetas)
            for a in range(th.size):
                for b in range(a):
                    if abs(th[a] - th[b]) <= thresh:
                        # allowed only for a genuine cluster in the oracle spectrum
                        near = np.sum(np.abs(s_oracle - th[a]) <= thresh)
                        if near < 2:
                            dup.append((SUITE_SHAPES[i], variant, th[a]))
    ok = worst_gram <= 1e-10 and not dup
    criterion_log("10 deflation hygiene", ok, f"max cross-Gram offdiagonal {worst_gram:.2e} (<= 1e-10); "
                  f"{len(dup)} repeated values")
    assert ok


# --------------------------------------------------------------- criterion 11


@pytest.mark.skip(reason="optional: needs SuiteSparse matrices deter4 and lp_bnl2, not available offline")
def test_c11_reference_table_reproduction():
    pass


def test_c11_reported(criterion_log):
    criterion_log("11 table reproduction", None, "optional; external matrices not available offline")
