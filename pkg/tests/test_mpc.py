import numpy as np
import pytest

from koopmpc.dictionary import build_monomial_dictionary
from koopmpc.edmd import BilinearKoopmanModel, CoordinateTransform, EdmdcModel
from koopmpc.harness import plateau
from koopmpc.mpc import (ControllerState, OcpSpec, ShootingProblem, SolverError, mpc_step, projected_gradient,
                         shift_warm_start, solve_ocp)


def linear_surrogate(Lam, Bm, c=None):
    """EDMDc model on the degree-1 dictionary (1, x): x+ = Lam x + Bm u + c."""
    n, m = Bm.shape
    d = build_monomial_dictionary(n, 1)
    A = np.zeros((n + 1, n + 1))
    A[0, 0] = 1.0
    A[1:, 0] = np.zeros(n) if c is None else c
    A[1:, 1:] = Lam
    B = np.vstack([np.zeros((1, m)), Bm])
    return EdmdcModel(d, A, B)


def condensed_qp(Lam, Bm, c, d_hat, x0, x_ref, u_ref, N, Q, R):
    """Batch least squares over the horizon, solved by normal equations."""
    n, m = Bm.shape
    G = np.zeros((N * n, N * m))
    h = np.zeros(N * n)
    x_free = x0.copy()
    for i in range(N):
        h[i * n:(i + 1) * n] = x_free
        x_free = Lam @ x_free + c + d_hat
        for j in range(i):
            G[i * n:(i + 1) * n, j * m:(j + 1) * m] = np.linalg.matrix_power(Lam, i - 1 - j) @ Bm
    Qb, Rb = np.kron(np.eye(N), Q), np.kron(np.eye(N), R)
    lhs = G.T @ Qb @ G + Rb
    rhs = G.T @ Qb @ (np.tile(x_ref, N) - h) + Rb @ np.tile(u_ref, N)
    return np.linalg.solve(lhs, rhs).reshape(N, m).T


def random_spd(rng, k, floor=0.1):
    A = rng.normal(size=(k, k))
    return A @ A.T / k + floor * np.eye(k)


def random_bilinear(rng, n=2, m=1, degree=2, scale=0.15):
    d = build_monomial_dictionary(n, degree)
    size = d.size
    mats = []
    for _ in range(m + 1):
        K = scale * rng.normal(size=(size, size))
        K[0] = 0.0
        K[0, 0] = 1.0
        K[1:n + 1, 1:n + 1] += 0.5 * np.eye(n)
        mats.append(K)
    tf = CoordinateTransform(rng.normal(size=n) * 0.2, rng.normal(size=m) * 0.2, rng.uniform(0.5, 2.0, size=m))
    return BilinearKoopmanModel(d, mats[0], tuple(mats[1:]), False, tf)


def qp_instance(rng):
    n, m = int(rng.integers(1, 5)), int(rng.integers(1, 5))
    N = int(rng.integers(1, 11))
    Lam = rng.normal(size=(n, n))
    Lam *= rng.uniform(0.3, 1.1) / max(abs(np.linalg.eigvals(Lam)))
    Bm, c, d_hat = rng.normal(size=(n, m)), 0.1 * rng.normal(size=n), 0.1 * rng.normal(size=n)
    x0, x_ref, u_ref = rng.normal(size=n), rng.normal(size=n), rng.normal(size=m)
    Q, R = random_spd(rng, n, 0.0), random_spd(rng, m)
    spec = OcpSpec(N, Q, R, np.full(m, -1e6), np.full(m, 1e6))
    sol = solve_ocp(linear_surrogate(Lam, Bm, c), x0, d_hat, (x_ref, u_ref), spec)
    oracle = condensed_qp(Lam, Bm, c, d_hat, x0, x_ref, u_ref, N, Q, R)
    return sol, oracle


def test_qp_oracle_equivalence():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        sol, oracle = qp_instance(rng)
        assert np.linalg.norm(sol.u_seq - oracle) < 1e-6


def fd_gradient(prob, u, h=1e-6):
    g = np.zeros_like(u)
    for idx in np.ndindex(*u.shape):
        up, um = u.copy(), u.copy()
        up[idx] += h
        um[idx] -= h
        g[idx] = (prob.cost(up) - prob.cost(um)) / (2 * h)
    return g


def gradient_instance(rng, lifted):
    n, m = 2, int(rng.integers(1, 3))
    model = random_bilinear(rng, n=n, m=m)
    N = int(rng.integers(2, 8))
    spec = OcpSpec(N, random_spd(rng, n, 0.0), random_spd(rng, m), np.full(m, -5.0), np.full(m, 5.0))
    d_hat = 0.05 * rng.normal(size=model.size if lifted else n)
    prob = ShootingProblem(model, rng.normal(size=n) * 0.5, d_hat,
                           (rng.normal(size=n) * 0.3, rng.normal(size=m) * 0.3), spec, lifted)
    u = rng.normal(size=(m, N)) * 0.5
    return prob, u


@pytest.mark.parametrize("lifted", [False, True])
def test_adjoint_gradient_matches_finite_differences(lifted):
    rng = np.random.default_rng(99 + lifted)
    for _ in range(50):
        prob, u = gradient_instance(rng, lifted)
        g, fd = prob.gradient(u), fd_gradient(prob, u)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)


def test_gauss_newton_jacobian_matches_adjoint(rng):
    for lifted in (False, True):
        prob, u = gradient_instance(rng, lifted)
        traj = prob.rollout(u)
        r, J = prob.residuals_and_jacobian(u, traj)
        np.testing.assert_allclose((2 * J.T @ r).reshape(prob.N, prob.m).T, prob.gradient(u, traj),
                                   rtol=1e-10, atol=1e-12)
        assert r @ r == pytest.approx(prob.cost(u), rel=1e-12)


def scalar_model(a, b):
    return linear_surrogate(np.array([[a]]), np.array([[b]]))


def test_clamp_on_box_boundary():
    a, b, x0, d, x_ref, Q, R = 0.5, 1.0, 0.0, 0.0, 10.0, 1.0, 0.01
    spec = OcpSpec(2, Q, R, [-1.0], [1.0])
    sol = solve_ocp(scalar_model(a, b), [x0], [d], ([x_ref], [0.0]), spec)
    unconstrained = b * Q * (x_ref - a * x0 - d) / (b * b * Q + R)
    assert unconstrained > 1.0
    assert sol.u_seq[0, 0] == 1.0


def test_scalar_interior_optimum():
    a, b, x0, d, x_ref, Q, R = 0.5, 1.0, 0.2, 0.1, 0.8, 1.0, 0.01
    spec = OcpSpec(2, Q, R, [-1.0], [1.0])
    sol = solve_ocp(scalar_model(a, b), [x0], [d], ([x_ref], [0.0]), spec)
    expected = b * Q * (x_ref - a * x0 - d) / (b * b * Q + R)
    assert sol.u_seq[0, 0] == pytest.approx(expected, abs=1e-10)


def test_reference_is_zero_cost_fixed_point(vdp_models):
    model = vdp_models["safedmd"]
    spec = OcpSpec(50, np.eye(2), 1e-2 * np.eye(1), [-2.0], [2.0])
    sol = solve_ocp(model, np.zeros(2), np.zeros(2), (np.zeros(2), np.zeros(1)), spec,
                    warm_start=np.zeros((1, 50)))
    assert not np.any(sol.u_seq) and sol.cost == 0.0


def test_mpc_step_at_reference(vdp_models):
    model = vdp_models["safedmd"]
    spec = OcpSpec(50, np.eye(2), 1e-2 * np.eye(1), [-2.0], [2.0])
    u, sol, nxt = mpc_step(ControllerState(), model, np.zeros(2), np.zeros(2), (np.zeros(2), np.zeros(1)), spec)
    assert np.array_equal(u, [0.0])


def test_mpc_step_determinism_and_shift(vdp_models):
    model = vdp_models["bilinear"]
    spec = OcpSpec(50, np.eye(2), 1e-2 * np.eye(1), [-2.0], [2.0])
    args = (model, np.array([1.0, 1.0]), np.zeros(2), (np.zeros(2), np.zeros(1)), spec)
    u1, sol1, s1 = mpc_step(ControllerState(), *args)
    u2, sol2, s2 = mpc_step(ControllerState(), *args)
    assert np.array_equal(u1, u2) and np.array_equal(sol1.u_seq, sol2.u_seq)
    assert np.array_equal(u1, sol1.u_seq[:, 0])
    np.testing.assert_array_equal(s1.warm_start, shift_warm_start(sol1.u_seq))
    np.testing.assert_array_equal(s1.warm_start[:, :-1], sol1.u_seq[:, 1:])
    assert s1.warm_start[0, -1] == sol1.u_seq[0, -1]


def test_feasibility_descent_stationarity():
    rng = np.random.default_rng(5)
    for _ in range(30):
        model = random_bilinear(rng, n=2, m=2)
        N = int(rng.integers(2, 10))
        lo, hi = -rng.uniform(0.05, 0.5, 2), rng.uniform(0.05, 0.5, 2)
        spec = OcpSpec(N, np.eye(2), 0.01 * np.eye(2), lo, hi)
        x0, ref = rng.normal(size=2), (rng.normal(size=2), np.zeros(2))
        warm = rng.uniform(lo[:, None], hi[:, None], size=(2, N))
        prob = ShootingProblem(model, x0, np.zeros(2), ref, spec)
        sol = solve_ocp(model, x0, np.zeros(2), ref, spec, warm_start=warm)
        assert np.all(sol.u_seq >= lo[:, None]) and np.all(sol.u_seq <= hi[:, None])
        assert sol.cost <= prob.cost(warm)
        assert sol.converged
        assert sol.stationarity <= spec.tol * (1 + abs(sol.cost))
        pg = projected_gradient(sol.u_seq, prob.gradient(sol.u_seq), lo, hi)
        assert np.linalg.norm(pg) == pytest.approx(sol.stationarity)


def test_non_finite_rollout_names_step():
    d = build_monomial_dictionary(1, 2)
    A = np.zeros((3, 3))
    A[0, 0] = 1.0
    A[1, 2] = 1e200  # x+ = 1e200 x^2
    model = EdmdcModel(d, A, np.zeros((3, 1)))
    spec = OcpSpec(5, 1.0, 1.0, [-1.0], [1.0])
    with pytest.raises(SolverError) as info:
        solve_ocp(model, [1.0], [0.0], ([0.0], [0.0]), spec)
    assert info.value.step == 2


def test_iteration_limit_is_flagged(vdp_models):
    spec = OcpSpec(50, np.eye(2), 1e-2 * np.eye(1), [-2.0], [2.0], max_iters=1)
    sol = solve_ocp(vdp_models["bilinear"], [1.0, 1.0], np.zeros(2), (np.zeros(2), np.zeros(1)), spec)
    assert not sol.converged and sol.status == "max_iters" and sol.iterations == 1


def test_ocp_spec_validation():
    with pytest.raises(ValueError):
        OcpSpec(0, 1.0, 1.0, [-1.0], [1.0])
    with pytest.raises(ValueError):
        OcpSpec(5, -np.eye(1), 1.0, [-1.0], [1.0])
    with pytest.raises(ValueError):
        OcpSpec(5, 1.0, 0.0, [-1.0], [1.0])
    with pytest.raises(ValueError):
        OcpSpec(5, 1.0, 1.0, [1.0], [-1.0])


def test_vdp_closed_loop_monotone_after_transient(vdp_suite):
    e = vdp_suite.traces[("bilinear", "offset_free", "known")].err_state
    assert np.all(np.diff(e[20:]) < 0)
    std = vdp_suite.traces[("bilinear", "standard", "known")].err_state
    level, _ = plateau(std)
    settled = np.argmax(std < 2 * level)
    assert np.all(np.diff(std[20:settled]) < 0)
