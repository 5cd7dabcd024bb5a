"""Slow manifold continuation, stiff simulation, exit statistics and Lyapunov checks."""

import numpy as np
import pytest
from scipy import optimize

from stochlin.errors import (
    ContinuationBreak,
    InsufficientExits,
    LyapunovSolveFailure,
    StiffnessViolation,
)
from stochlin.presets import slowfast_cubic, slowfast_fold, slowfast_linear
from stochlin.sde import TimeGrid
from stochlin.slowfast import (
    SlowManifold,
    check_uniform_stability,
    clopper_pearson,
    concentration_statistics,
    nondegeneracy_check,
    simulate_slowfast,
    solve_lyapunov,
    stability_dt,
    sup_distance,
    trace_slow_manifold,
)


def test_linear_manifold():
    sys_ = slowfast_linear()
    y = np.linspace(-1, 1, 11)
    man = trace_slow_manifold(sys_, y, [0.0])
    np.testing.assert_allclose(man.x_star[:, 0], y, atol=1e-12)
    np.testing.assert_allclose(man.A_star[:, 0, 0], -1.0)
    assert man.bifurcations == []
    assert check_uniform_stability(man, 0.5)


def test_cubic_manifold_against_bisection():
    sys_ = slowfast_cubic()
    y = np.linspace(-2, 2, 9)
    man = trace_slow_manifold(sys_, y, [-1.0])
    for yi, xi in zip(y, man.x_star[:, 0]):
        assert xi == pytest.approx(optimize.bisect(lambda x: x**3 + x - yi, -3, 3, xtol=1e-14), abs=1e-11)
    i0 = int(np.argmin(np.abs(y)))
    assert man.x_star[i0, 0] == pytest.approx(0.0, abs=1e-12)
    assert man.A_star[i0, 0, 0] == pytest.approx(-1.0)


def test_fold_is_flagged():
    sys_ = slowfast_fold()
    man = trace_slow_manifold(sys_, np.linspace(1.0, 0.0, 41), [1.0])
    assert man.bifurcations and man.bifurcations[-1] == 40
    check = check_uniform_stability(man, 0.5)
    assert not check
    assert all(y[0] < 0.1 for _, y in check.offending)


def test_continuation_break_past_fold():
    sys_ = slowfast_fold()
    with pytest.raises(ContinuationBreak) as err:
        trace_slow_manifold(sys_, np.linspace(1.0, -0.5, 31), [1.0])
    assert err.value.index > 20
    assert err.value.partial.size == err.value.index


def test_stability_check_reports_offender():
    man = SlowManifold(np.array([[0.0], [1.0]]), np.zeros((2, 1)), np.array([[[-1.0]], [[-0.1]]]),
                       np.array([-1.0, -0.1]), np.zeros(2))
    check = check_uniform_stability(man, 0.5)
    assert not check and check.offending == [(1, [1.0])]


def test_noiseless_relaxation():
    sys_ = slowfast_linear(eps=0.01, sigma=0.0)
    g = TimeGrid(0.0, 0.1, 1000)  # t_end = 10 eps
    ens = simulate_slowfast(sys_, [1.0], [0.2], g, 1, 0)
    gap = abs(ens.final[0, 0] - 0.2)
    assert gap <= np.exp(-10) * 0.8 * 1.01


def test_noiseless_tracking_matches_fine_reference():
    eps = 0.01
    sys_ = slowfast_linear(eps=eps, sigma=0.0, slow_rate=1.0)
    coarse = simulate_slowfast(sys_, [0.0], [1.0], TimeGrid(0.0, 1.0, 1000), 1, 0)
    fine = simulate_slowfast(sys_, [0.0], [1.0], TimeGrid(0.0, 1.0, 10000), 1, 0)
    after = coarse.grid.times >= 0.1
    x, y = coarse.states[0, after, 0], coarse.states[0, after, 1]
    assert np.max(np.abs(x - y)) <= 2 * eps
    np.testing.assert_allclose(coarse.states[0, ::100], fine.states[0, ::1000], atol=2e-3)


def test_no_slow_noise_when_rho_zero():
    sys_ = slowfast_linear(sigma=0.3, rho=0.0)
    ens = simulate_slowfast(sys_, [0.0], [0.4], TimeGrid(0.0, 0.5, 500), 20, 1)
    np.testing.assert_array_equal(ens.states[:, :, 1], 0.4)
    assert np.std(ens.final[:, 0]) > 0


def test_stiffness_violation():
    sys_ = slowfast_linear(eps=0.01)
    assert stability_dt(sys_, [0.0], [0.0], c=0.1) == pytest.approx(1e-3)
    with pytest.raises(StiffnessViolation):
        simulate_slowfast(sys_, [0.0], [0.0], TimeGrid(0.0, 1.0, 100), 1, 0)


def _concentration(sigma, M=2000, seed=5):
    sys_ = slowfast_linear(eps=0.01, sigma=sigma)
    man = trace_slow_manifold(sys_, np.linspace(-1, 1, 21), [0.0])
    ens = simulate_slowfast(sys_, [0.3], [0.3], TimeGrid(0.0, 1.0, 1000), M, seed, manifold=man)
    h = np.arange(0.10, 0.345, 0.02)
    return concentration_statistics(ens, man, h, 0.1, require_fit=False)


def test_noiseless_never_exits():
    rep = _concentration(0.0, M=50)
    np.testing.assert_array_equal(rep.exit_fractions, 0.0)
    assert rep.r_squared is None


def test_exit_fractions_monotone_and_sigma_ordered():
    big = _concentration(0.1)
    small = _concentration(0.05)
    assert big.monotone and small.monotone
    assert np.all(small.exit_fractions <= big.exit_fractions)
    assert big.r_squared is not None and big.r_squared >= 0.9


def test_insufficient_exits():
    sys_ = slowfast_linear(eps=0.01, sigma=0.0)
    man = trace_slow_manifold(sys_, np.linspace(-1, 1, 5), [0.0])
    ens = simulate_slowfast(sys_, [0.3], [0.3], TimeGrid(0.0, 0.2, 200), 10, 0)
    with pytest.raises(InsufficientExits):
        concentration_statistics(ens, man, [0.1, 0.2], 0.05)


def test_clopper_pearson_edges():
    lo, hi = clopper_pearson(np.array([0, 10]), 10)
    assert lo[0] == 0.0 and hi[0] == pytest.approx(1 - 0.025 ** 0.1)
    assert hi[1] == 1.0 and lo[1] == pytest.approx(0.025 ** 0.1)


def test_lyapunov_scalar_and_diagonal():
    assert solve_lyapunov([[-1.0]], [[1.0]])[0, 0] == pytest.approx(0.5, abs=1e-10)
    X = solve_lyapunov(np.diag([-1.0, -2.0]), np.eye(2))
    np.testing.assert_allclose(X, np.diag([0.5, 0.25]), atol=1e-10)


def test_lyapunov_against_kronecker():
    rng = np.random.default_rng(3)
    n = 4
    A = rng.standard_normal((n, n)) - 3 * np.eye(n)
    F = rng.standard_normal((n, 2))
    Q = F @ F.T
    K = np.kron(np.eye(n), A) + np.kron(A, np.eye(n))
    X_ref = np.linalg.solve(K, -Q.reshape(-1, order="F")).reshape(n, n, order="F")
    X = solve_lyapunov(A, Q)
    np.testing.assert_allclose(X, X_ref, atol=1e-10)
    assert np.linalg.norm(A @ X + X @ A.T + Q) <= 1e-10 * np.linalg.norm(Q)


def test_lyapunov_needs_hurwitz():
    with pytest.raises(LyapunovSolveFailure):
        solve_lyapunov([[0.5]], [[1.0]])


def test_nondegeneracy_flags():
    sys_ = slowfast_linear()
    man = trace_slow_manifold(sys_, np.linspace(-1, 1, 3), [0.0])
    ok = nondegeneracy_check(man, np.ones((3, 1, 1)))
    assert [d.norm_Xbar for d in ok] == pytest.approx([0.5] * 3)
    assert [d.norm_Xbar_inv for d in ok] == pytest.approx([2.0] * 3)
    assert not any(d.degenerate for d in ok)
    bad = nondegeneracy_check(man, np.zeros((3, 1, 1)))
    assert all(d.degenerate and np.isinf(d.norm_Xbar_inv) for d in bad)


def _drifting_system(eps):
    from stochlin.presets import slowfast_from_expressions
    return slowfast_from_expressions(["-(x1 - y1)"], ["1"], [["1"]], [["0"]], eps, 0.0)


def test_timescale_separation_constant_is_stable():
    consts = []
    for eps in (1e-1, 1e-2):
        sys_ = _drifting_system(eps)
        T = 20 * eps
        ens = simulate_slowfast(sys_, [0.0], [0.0], TimeGrid(0.0, T, 400), 1, 0, stability_c=0.1)
        man = trace_slow_manifold(sys_, np.linspace(0.0, T + 0.1, 41)[:, None], [0.0])
        dist, left = sup_distance(ens, man, burn_in=10 * eps)
        assert not left.any()
        consts.append(dist[0] / eps)
    assert 0.5 < consts[0] < 2.0
    assert abs(consts[0] / consts[1] - 1.0) < 0.1


def test_manifold_residuals_within_tol():
    man = trace_slow_manifold(slowfast_cubic(), np.linspace(-2, 2, 41)[:, None], [0.0], tol=1e-12)
    assert np.max(man.residuals) <= 1e-12
