import numpy as np
import pytest
import scipy.linalg as la
import scipy.sparse as sp

from riccati_si import (
    CareProblem,
    analyze_hamiltonian,
    care_residual,
    care_solve_dense,
    cayley,
    convergence_bound,
    dense_care_solve,
    dense_subspace_iteration,
    dense_threshold,
    hamiltonian_matrix,
    penzl_shifts,
    random_stable_problem,
    spectral_radius_identity_check,
    subspace_distance,
)
from oracles import dense_riccati_residual, projector_distance, scalar_problem


def test_scalar_solution_exact():
    X = dense_care_solve(scalar_problem())
    assert X.shape == (1, 1)
    assert abs(X[0, 0] - 1.0) < 1e-13
    assert np.isrealobj(X)


def test_matches_scipy_reference():
    # scipy's solver is an independent implementation of the same equation
    for seed in (0, 4, 11):
        p = random_stable_problem(18, 1, 2, seed=seed)
        A = p.A.toarray()
        X = care_solve_dense(A, p.B, p.C)
        Xref = la.solve_continuous_are(A, p.B, p.C.T @ p.C,
                                       np.eye(p.B.shape[1]))
        assert np.linalg.norm(X - Xref) <= 1e-8 * np.linalg.norm(Xref)


def test_solution_is_stabilizing_and_psd():
    p = random_stable_problem(25, 1, 1, seed=7)
    X = dense_care_solve(p)
    A = p.A.toarray()
    closed = A - (p.B @ p.B.conj().T) @ X
    assert np.linalg.eigvals(closed).real.max() < 0
    assert np.linalg.eigvalsh(X).min() > -1e-10 * np.linalg.norm(X)


def test_axis_eigenvalue_rejected():
    A = np.array([[0.0]])
    B = np.zeros((1, 1))
    C = np.array([[1.0]])
    with pytest.raises(ValueError, match="imaginary axis"):
        care_solve_dense(A, B, C)


def test_generalized_E_fold_in():
    rng = np.random.default_rng(0)
    base = random_stable_problem(15, 1, 1, seed=3)
    E = np.eye(15) + 0.05 * rng.standard_normal((15, 15))
    p = CareProblem(A=base.A, B=base.B, C=base.C, E=sp.csr_matrix(E),
                    check_stability=False)
    X = dense_care_solve(p)
    R = dense_riccati_residual(p, X)
    cc = np.linalg.norm(p.C.conj().T @ p.C)
    assert np.linalg.norm(R) <= 1e-9 * cc


def test_hamiltonian_block_structure():
    p = random_stable_problem(9, 2, 1, seed=5)
    A = p.A.toarray()
    H = hamiltonian_matrix(A, p.B, p.C)
    n = 9
    assert np.array_equal(H[:n, :n], A)
    assert np.allclose(H[:n, n:], -(p.B @ p.B.conj().T))
    assert np.allclose(H[n:, :n], -(p.C.conj().T @ p.C))
    assert np.allclose(H[n:, n:], -A.conj().T)
    # J H is Hermitian for J = [[0, I], [-I, 0]]
    J = np.block([[np.zeros((n, n)), np.eye(n)],
                  [-np.eye(n), np.zeros((n, n))]])
    JH = J @ H
    assert np.linalg.norm(JH - JH.conj().T) < 1e-12 * np.linalg.norm(H)


def test_cayley_splits_unit_circle():
    p = random_stable_problem(12, 1, 1, seed=2)
    H = hamiltonian_matrix(p.A.toarray(), p.B, p.C)
    S = cayley(H, 1.7)
    mods = np.abs(np.linalg.eigvals(S))
    assert (mods < 1).sum() == 12
    assert (mods > 1).sum() == 12


def test_cayley_eigenvalue_map():
    # on a diagonal H the transform acts entrywise
    lam = np.array([-3.0, -0.5, 2.0])
    alpha = 1.0 + 0.5j
    S = cayley(np.diag(lam), alpha)
    expect = (lam - np.conj(alpha)) / (lam + alpha)
    assert np.allclose(np.sort_complex(np.linalg.eigvals(S)),
                       np.sort_complex(expect))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cayley_singular_shift():
    with pytest.raises(ValueError, match="singular"):
        cayley(np.array([[-2.0]]), 2.0)


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_iteration_converges_to_stabilizing_solution():
    p = random_stable_problem(12, 1, 1, seed=6)
    Xs = dense_care_solve(p)
    sh = penzl_shifts(p, m=4)
    seq = sh.cycled(16)
    traj = dense_subspace_iteration(p, seq)
    err = np.linalg.norm(traj[-1].X - Xs) / np.linalg.norm(Xs)
    assert err < 1e-8
    # iterates stay Hermitian and grow monotonically
    prev = np.zeros((12, 12))
    for it in traj:
        X = it.X
        assert np.linalg.norm(X - X.conj().T) <= 1e-10 * np.linalg.norm(X)
        assert np.linalg.eigvalsh(X - prev).min() >= -1e-8 * max(
            np.linalg.norm(X), 1.0)
        prev = X


def test_exact_solution_is_fixed_point():
    p = random_stable_problem(10, 1, 1, seed=8)
    Xs = dense_care_solve(p)
    traj = dense_subspace_iteration(p, [2.5], X0=Xs, steps=1)
    assert np.linalg.norm(traj[0].X - Xs) <= 1e-9 * np.linalg.norm(Xs)


def test_iteration_rejects_generalized_E():
    base = random_stable_problem(8, 1, 1, seed=1)
    p = CareProblem(A=base.A, B=base.B, C=base.C,
                    E=sp.identity(8, format="csr"), check_stability=False)
    with pytest.raises(ValueError, match="identity"):
        dense_subspace_iteration(p, [1.0])


def test_analysis_distance_matches_projector_oracle():
    p = random_stable_problem(8, 1, 1, seed=100)
    vals = list(penzl_shifts(p, m=3).values)
    an = analyze_hamiltonian(p, vals)
    H = hamiltonian_matrix(p.A.toarray(), p.B, p.C)
    T, Z, sdim = la.schur(H.conj().T, output="complex", sort="lhp")
    assert sdim == 8
    start = np.vstack([np.eye(8), np.zeros((8, 8))])
    d_oracle = projector_distance(start, Z[:, :8])
    assert abs(an.d - d_oracle) < 1e-10


def test_zero_start_distance_below_one():
    for seed in (0, 5, 17, 23):
        p = random_stable_problem(8, 1, 1, seed=seed)
        an = analyze_hamiltonian(p, [1.0, 2.0])
        assert 0.0 <= an.d < 1.0
        assert an.sep > 0
        assert np.isfinite(an.gamma)


@pytest.mark.filterwarnings("ignore::scipy.linalg.LinAlgWarning")
def test_distance_bound_and_radius_identity():
    p = random_stable_problem(8, 1, 1, seed=101)
    vals = [complex(v) for v in penzl_shifts(p, m=3).values][:4]
    an = analyze_hamiltonian(p, vals)
    for k in range(1, 5):
        dist, bound = convergence_bound(an, k)
        assert dist <= bound * (1 + 1e-9)
        assert dist >= 0
    assert spectral_radius_identity_check(an) < 1e-8


def test_subspace_distance_matches_oracle():
    rng = np.random.default_rng(4)
    U = rng.standard_normal((20, 4))
    W = rng.standard_normal((20, 4))
    assert subspace_distance(U, W) == pytest.approx(
        projector_distance(U, W), abs=1e-12)
    assert subspace_distance(U, U) < 1e-12
    # orthogonal complement directions give distance 1
    U1 = np.eye(6)[:, :2]
    W1 = np.eye(6)[:, 2:4]
    assert subspace_distance(U1, W1) == pytest.approx(1.0)


def test_dense_threshold_env(monkeypatch):
    assert dense_threshold() == 400
    monkeypatch.setenv("RICCATI_SI_DENSE_THRESHOLD", "7")
    assert dense_threshold() == 7
    p = random_stable_problem(10, 1, 1, seed=0)
    with pytest.raises(ValueError, match="dense threshold"):
        dense_care_solve(p)


def test_care_residual_definition():
    p = random_stable_problem(6, 1, 1, seed=12)
    X = dense_care_solve(p)
    R = care_residual(p.A.toarray(), p.B, p.C, X)
    assert np.allclose(R, dense_riccati_residual(p, X))
    assert np.linalg.norm(R) <= 1e-10 * np.linalg.norm(p.C.conj().T @ p.C)
