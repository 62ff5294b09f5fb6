import struct

import numpy as np
import pytest
import scipy.sparse as sp

from jdsvd import SolverConfig, SparseMatrix, one_norm, solve
from jdsvd.dense_eig import dense_svd
from jdsvd.driver import (
    ConvergenceHistory,
    HISTORY_HEADER,
    InnerContext,
    projected_residual,
    purge_converged,
    read_vectors,
    thick_restart,
    write_results_csv,
    write_vectors,
)
from jdsvd.extraction import SearchState, expand_state, harmonic_extract, refined_harmonic_extract, residual
from synthetic import closest, sparse_orthogonal, synthetic

DIAG3 = SparseMatrix.from_dense(np.diag([1.0, 2.0, 3.0]))


def _random_state(M, N, m, seed):
    rng = np.random.default_rng(seed)
    A = SparseMatrix(sp.random(M, N, density=0.3, random_state=seed) + sp.eye(M, N))
    st_ = SearchState(M, N)
    U, _ = np.linalg.qr(rng.standard_normal((M, m)))
    V, _ = np.linalg.qr(rng.standard_normal((N, m)))
    for j in range(m):
        expand_state(st_, A, U[:, j], V[:, j])
    return A, st_


@pytest.mark.parametrize(
    "kw",
    [
        dict(tau=0.0),
        dict(tau=1.0, num=0),
        dict(tau=1.0, variant="x"),
        dict(tau=1.0, eps_tilde=1.0),
        dict(tau=1.0, tol=0.0),
        dict(tau=1.0, restart_keep=20),
        dict(tau=1.0, inner_mode="lu"),
        dict(tau=1.0, max_inner=0),
        dict(tau=1.0, max_outer=0),
    ],
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SolverConfig(**kw)


@pytest.mark.parametrize("variant", ["h", "rh"])
def test_diagonal_ground_truth(variant):
    res = solve(DIAG3, SolverConfig(tau=1.9, variant=variant))
    assert res.converged
    t = res.triplets[0]
    assert abs(t.theta - 2.0) <= 1e-10 * one_norm(DIAG3)
    np.testing.assert_allclose(np.abs(t.u), [0, 1, 0], atol=1e-10)
    np.testing.assert_allclose(np.abs(t.v), [0, 1, 0], atol=1e-10)


def test_diagonal_all_triplets_with_reinit():
    res = solve(DIAG3, SolverConfig(tau=1.9, num=3))
    assert res.converged
    np.testing.assert_allclose([t.theta for t in res.triplets], [2.0, 1.0, 3.0], atol=1e-10)


def test_log_spaced_synthetic():
    rng = np.random.default_rng(11)
    M, N = 300, 200
    s = np.logspace(0, 1, N)
    A = SparseMatrix((sparse_orthogonal(M, rng)[:, :N] @ sp.diags(s) @ sparse_orthogonal(N, rng).T).tocsr())
    tau = 0.5 * (s[100] + s[101]) + 0.1 * (s[101] - s[100])
    oracle = dense_svd(A.todense())[0]
    for variant in ("h", "rh"):
        res = solve(A, SolverConfig(tau=tau, variant=variant))
        assert res.converged
        want = closest(oracle, tau, 1)[0]
        assert abs(res.triplets[0].theta - want) <= 1e-8 * want


def test_thick_restart_keep1():
    A, st_ = _random_state(30, 20, 6, seed=1)
    tau = 1.1
    ext = harmonic_extract(st_, tau)
    u, v = st_.U @ ext.c, st_.V @ ext.d
    thick_restart(st_, A, 1, tau, variant="h")
    assert st_.m == 1
    assert st_.H[0, 0] == pytest.approx(u @ A.apply(v), rel=1e-12)
    assert max(st_.check(A).values()) <= 1e-12


def test_thick_restart_keeps_best_residual():
    A, st_ = _random_state(40, 30, 10, seed=2)
    tau = 1.2
    ext = refined_harmonic_extract(st_, harmonic_extract(st_, tau).rho, harmonic_extract(st_, tau))
    _, before = residual(A, ext.theta, st_.U @ ext.c, st_.V @ ext.d)
    thick_restart(st_, A, 3, tau, variant="rh")
    assert st_.m == 3
    e2 = refined_harmonic_extract(st_, ext.rho)
    _, after = residual(A, e2.theta, st_.U @ e2.c, st_.V @ e2.d)
    assert after == pytest.approx(before, abs=1e-10)


def test_thick_restart_exact_subspace():
    st_ = SearchState(3, 3)
    e = np.eye(3)
    for j in range(3):
        expand_state(st_, DIAG3, e[j], e[j])
    thick_restart(st_, DIAG3, 2, 1.9, variant="h")
    assert harmonic_extract(st_, 1.9).theta == pytest.approx(2.0, abs=1e-14)


def test_purge_hand_case():
    st_ = SearchState(3, 3)
    e = np.eye(3)
    expand_state(st_, DIAG3, e[0], e[0])
    expand_state(st_, DIAG3, e[1], e[1])
    purge_converged(st_, np.array([1.0, 0.0]), np.array([1.0, 0.0]))
    assert st_.m == 1
    assert abs(st_.H[0, 0]) == pytest.approx(2.0)


def test_purge_random_recompute():
    A, st_ = _random_state(30, 25, 6, seed=3)
    ext = harmonic_extract(st_, 1.0)
    u = st_.U @ ext.c
    purge_converged(st_, ext.c, ext.d)
    assert st_.m == 5
    assert np.max(np.abs(st_.H - st_.U.T @ A.apply(st_.V))) <= 1e-10 * one_norm(A)
    assert np.max(np.abs(st_.U.T @ u)) <= 1e-13


def test_purge_m1_empties():
    A, st_ = _random_state(5, 4, 1, seed=4)
    purge_converged(st_, np.ones(1), np.ones(1))
    assert st_.m == 0


def test_projected_residual():
    rng = np.random.default_rng(5)
    r = rng.standard_normal(12)
    np.testing.assert_array_equal(projected_residual(r, np.empty((7, 0)), np.empty((5, 0))), r)
    Uc, _ = np.linalg.qr(rng.standard_normal((7, 2)))
    Vc, _ = np.linalg.qr(rng.standard_normal((5, 2)))
    inside = np.concatenate([Uc @ [1.0, 2.0], Vc @ [-1.0, 0.5]])
    assert np.linalg.norm(projected_residual(inside, Uc, Vc)) <= 1e-14
    rp = projected_residual(r, Uc, Vc)
    assert np.max(np.abs(Uc.T @ rp[:7])) <= 1e-13
    assert np.max(np.abs(Vc.T @ rp[7:])) <= 1e-13


def test_no_reconvergence_to_deflated_values():
    A, _, tau = synthetic(80, 60, seed=1)
    res = solve(A, SolverConfig(tau=tau, num=4))
    thresh = one_norm(A) * 1e-10
    done = [h for h in res.history if h.inner_iters == 0 and np.isnan(h.eta)]
    assert len(done) == 4
    for i, conv in enumerate(done):
        later = [h for h in res.history if h.triplet > i + 1]
        assert all(abs(h.theta - conv.theta) > thresh for h in later)


def test_observer_and_determinism():
    A, _, tau = synthetic(60, 40, seed=0)
    seen = []
    r1 = solve(A, SolverConfig(tau=tau, num=2), observer=seen.append)
    r2 = solve(A, SolverConfig(tau=tau, num=2))
    assert all(isinstance(c, InnerContext) for c in seen)
    assert len(seen) == sum(h.inner_iters > 0 for h in r1.history)
    assert [t.theta for t in r1.triplets] == [t.theta for t in r2.triplets]
    assert r1.inner_iterations == r2.inner_iterations


def test_max_outer_reached():
    A, _, tau = synthetic(60, 40, seed=0)
    res = solve(A, SolverConfig(tau=tau, max_outer=2))
    assert not res.converged
    assert "maximum" in res.message
    assert res.outer_iterations == 2


def test_history_roundtrip(tmp_path):
    A, _, tau = synthetic(60, 40, seed=0)
    res = solve(A, SolverConfig(tau=tau))
    path = tmp_path / "h.csv"
    res.history.to_csv(path)
    assert path.read_text().splitlines()[0] == ",".join(HISTORY_HEADER)
    back = ConvergenceHistory.from_csv(path)
    assert len(back) == len(res.history)
    for a, b in zip(back, res.history):
        assert a.outer == b.outer and a.inner_iters == b.inner_iters and a.hit_cap == b.hit_cap
        assert a.theta == b.theta and a.resnorm == b.resnorm
        assert (np.isnan(a.eta) and np.isnan(b.eta)) or a.eta == b.eta


def test_history_bad_header(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ValueError):
        ConvergenceHistory.from_csv(p)


def test_results_and_vectors(tmp_path):
    res = solve(DIAG3, SolverConfig(tau=1.9, num=2))
    write_results_csv(tmp_path / "r.csv", res.triplets)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "index,theta,resnorm"
    assert len(lines) == 3
    write_vectors(tmp_path / "v.bin", res.triplets)
    raw = (tmp_path / "v.bin").read_bytes()
    assert struct.unpack("<q", raw[:8])[0] == 3
    assert len(raw) == 4 * (8 + 3 * 8)
    pairs = read_vectors(tmp_path / "v.bin")
    for (u, v), t in zip(pairs, res.triplets):
        np.testing.assert_array_equal(u, t.u)
        np.testing.assert_array_equal(v, t.v)


def test_read_vectors_truncated(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(struct.pack("<q", 4) + b"\x00" * 8)
    with pytest.raises(ValueError):
        read_vectors(p)
