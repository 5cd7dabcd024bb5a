"""Acceptance criteria at full size.

Each test prints one ``ACCEPTANCE <id> PASS|FAIL`` line; the lines are
collected and repeated in the terminal summary (see ``conftest.py``). Run
alone with ``pytest tests/test_acceptance.py -v`` or ``-m acceptance``.
"""

import filecmp
import os
import time

import numpy as np
import pytest

from stochlin.cli import execute
from stochlin.errors import RangeConditionViolated
from stochlin.girsanov import (
    CorrectionField,
    equivalence_experiment,
    martingale_check,
    simulate_weighted,
)
from stochlin.linearization import (
    Classification,
    LinearizedSystem,
    classify_hyperbolicity,
    find_fixed_point,
    linearize,
    quadratic_ratios,
)
from stochlin.presets import brownian, cubic, frozen, linear, ou, rotation, slowfast_linear, w2inf
from stochlin.regularity import (
    GridField,
    brownian_sobolev_study,
    make_mollifier,
    mollify,
    occupation_density_estimate,
    occupation_refinement,
    regularization_convergence_study,
)
from stochlin.sde import DiffusionField, TimeGrid, VectorField
from stochlin.slowfast import (
    concentration_statistics,
    nondegeneracy_check,
    simulate_slowfast,
    solve_lyapunov,
    trace_slow_manifold,
)

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

RESULTS = []
CONFIGS = os.path.join(os.path.dirname(__file__), os.pardir, "configs")


def report(cid, ok, detail):
    line = f"ACCEPTANCE {cid:>3s} {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def _cubic_lin():
    f, s = cubic()
    return f, s, linearize(f, s, find_fixed_point(f, [0.7]))


def test_1_martingale_normalization():
    f, s, lin = _cubic_lin()
    eps, grid, M = 0.3, TimeGrid.from_dt(1.0, 1e-3), 100_000
    t0 = time.perf_counter()
    we = simulate_weighted(f, s, CorrectionField(lin, s, eps), eps, lin.origin + 0.1, grid, M, 7,
                           radius=0.5, weight_nodes=[250, 500])
    elapsed = time.perf_counter() - t0
    check = martingale_check(we.weights, 3.0, [grid.n_steps])[0]
    ok = check.passed and we.escaped_fraction < 0.05 and elapsed < 120
    report("1", ok, f"mean D_T={check.mean:.5f} SE={check.std_error:.5f} "
                    f"escaped={we.escaped_fraction:.4f} t={elapsed:.1f}s")


def test_2_measure_equivalence_and_sabotage():
    f, s, lin = _cubic_lin()
    grid = TimeGrid.from_dt(0.5, 1e-3)
    exp = equivalence_experiment(f, s, lin, 0.3, [0.1], grid, 100_000, 11, ("z", "z2", "exp_neg_z2"),
                                 radius=0.5)
    sab = equivalence_experiment(f, s, lin, 0.3, [0.1], grid, 100_000, 11, ("z", "z2", "exp_neg_z2"),
                                 u_scale=2.0, radius=0.5)
    failed = [k for k, r in sab.report.results.items() if not r.passed]
    parts = ", ".join(f"{k}: |d|={abs(r.difference):.2e} <= {3 * r.combined_se + r.allowance:.2e}"
                      for k, r in exp.report.results.items())
    report("2", exp.report.passed and len(failed) >= 1, f"{parts}; sabotage fails {failed}")


def test_3_degenerate_preimage():
    s = DiffusionField.constant([[1.0], [0.0]])
    lin = LinearizedSystem(np.zeros(2), -np.eye(2), VectorField(2, lambda x: -x), s, np.zeros(2),
                           remainder_func=lambda x: x.copy())
    corr = CorrectionField(lin, s, 1.0, mode="range_project")
    r_in = np.array([[0.37, 0.0]])
    u = corr(r_in)
    resid = float(corr.decomposition.residual(r_in[0]))
    raised = []
    for _ in range(3):
        try:
            corr(np.array([[0.0, 0.2]]), node=5, path_indices=[3])
        except RangeConditionViolated as exc:
            raised.append((exc.node, exc.path_index, exc.residual))
    ok = resid <= 1e-10 and abs(u[0, 0] - 0.37) <= 1e-12 and len(raised) == 3 and len(set(raised)) == 1
    report("3", ok, f"residual={resid:.1e} pre-image={u[0, 0]:.6f} violation raised {len(raised)}/3 identically")


def test_4_linearization_exactness():
    t0 = time.perf_counter()
    f, s, lin = _cubic_lin()
    r0 = float(np.abs(lin.remainder(lin.origin)).max())
    ratios = quadratic_ratios(lin, (1e-1, 1e-2, 1e-3))
    classes = [
        find_fixed_point(f, [0.7]).classification == Classification.STABLE,
        find_fixed_point(f, [0.1]).classification == Classification.UNSTABLE,
        find_fixed_point(rotation()[0], [0.0, 0.0]).classification == Classification.NON_HYPERBOLIC,
        classify_hyperbolicity(np.diag([-1.0, 2.0])) == Classification.SADDLE,
    ]
    elapsed = time.perf_counter() - t0
    # |r(1+z)| / z^2 = |3 + z| <= 3.1 for |z| <= 0.1
    ok = r0 == 0 and np.all(ratios <= 3.1 + 1e-9) and all(classes) and elapsed < 1.0
    report("4", ok, f"r(x0)={r0} ratios={np.round(ratios, 4).tolist()} classes ok={all(classes)} "
                    f"t={elapsed:.2f}s")


def test_5_slowfast_concentration():
    t0 = time.perf_counter()
    h = np.round(np.arange(0.10, 0.345, 0.02), 10)
    reps = {}
    for sigma in (0.1, 0.05):
        sys_ = slowfast_linear(eps=0.01, sigma=sigma, rho=0.0)
        man = trace_slow_manifold(sys_, np.linspace(-1, 1, 21), [0.0])
        ens = simulate_slowfast(sys_, [0.3], [0.3], TimeGrid.from_dt(1.0, 1e-3), 10_000, 5, manifold=man,
                                record=None)
        reps[sigma] = concentration_statistics(ens, man, h, 0.1, require_fit=False)
    elapsed = time.perf_counter() - t0
    big, small = reps[0.1], reps[0.05]
    fits = [r.r_squared for r in (big, small)]
    reduced = bool(np.all(small.exit_fractions[big.exit_fractions > 0] < big.exit_fractions[big.exit_fractions > 0]))
    ok = big.monotone and small.monotone and all(v is not None and v >= 0.9 for v in fits) and reduced \
        and elapsed < 300
    report("5", ok, f"r2(0.1)={fits[0]} r2(0.05)={fits[1]} monotone={big.monotone and small.monotone} "
                    f"halving reduces={reduced} t={elapsed:.1f}s")


def test_6_lyapunov_nondegeneracy():
    x_scalar = solve_lyapunov([[-1.0]], [[1.0]])[0, 0]
    x_diag = solve_lyapunov(np.diag([-1.0, -2.0]), np.eye(2))
    rng = np.random.default_rng(6)
    A = rng.standard_normal((3, 3)) - 3 * np.eye(3)
    F = rng.standard_normal((3, 3))
    Q = F @ F.T
    X = solve_lyapunov(A, Q)
    rel = float(np.linalg.norm(A @ X + X @ A.T + Q) / np.linalg.norm(Q))
    sys_ = slowfast_linear()
    nd = nondegeneracy_check(trace_slow_manifold(sys_, [0.0], [0.0]), np.ones((1, 1, 1)))[0]
    ok = (abs(x_scalar - 0.5) <= 1e-10 and np.abs(x_diag - np.diag([0.5, 0.25])).max() <= 1e-10
          and rel <= 1e-10 and abs(nd.norm_Xbar_inv - 2.0) <= 1e-10)
    report("6", ok, f"scalar={x_scalar!r} diag err={np.abs(x_diag - np.diag([0.5, 0.25])).max():.1e} "
                    f"residual/|FF^T|={rel:.1e}")


def test_7_mollifier():
    masses = [abs(make_mollifier(1, sc).weights.sum() - 1) for sc in (0.2, 0.1, 0.05, 0.01)]
    masses.append(abs(make_mollifier(2, 0.1, 96).weights.sum() - 1))
    scale = 0.1
    m = make_mollifier(1, scale)
    g = GridField.from_function(np.abs, -2, 2, 4001)
    out = mollify(g, m)
    lip = float(np.max(np.abs(out.values[:, 0] - np.abs(out.axes[0]))))
    aff = GridField.from_function(lambda x: 2.5 * x - 1.0, -2, 2, 4001)
    aff_err = float(np.max(np.abs(mollify(aff, m).values[:, 0] - (2.5 * out.axes[0] - 1.0))))
    ok = max(masses) <= 1e-6 and lip <= scale and aff_err <= 1e-10
    report("7", ok, f"max mass err={max(masses):.1e} sup|f_e-f|={lip:.4f}<= {scale} affine err={aff_err:.1e}")


@pytest.fixture(scope="module")
def sobolev():
    t0 = time.perf_counter()
    reps = brownian_sobolev_study((0.4, 0.6), 4.0, (256, 512, 1024, 2048), n_paths=200, seed=0)
    return reps, time.perf_counter() - t0


def test_8a_sobolev_subcritical_bounded(sobolev):
    (low, _), elapsed = sobolev
    ok = low.variation <= 0.25 and elapsed < 180
    report("8a", ok, f"s=0.4 norms={np.round(low.norm_estimates, 4).tolist()} variation={low.variation:.3f}")


def test_8b_sobolev_supercritical_growth(sobolev):
    (_, high), elapsed = sobolev
    ratios = np.array(high.norm_estimates[1:]) / np.array(high.norm_estimates[:-1])
    ok = high.last_ratio >= 1.5 and elapsed < 180
    report("8b", ok, f"s=0.6 norms={np.round(high.norm_estimates, 4).tolist()} "
                     f"per-doubling ratios={np.round(ratios, 3).tolist()} (need >= 1.5)")


def test_9_fundamental_condition():
    f, s = brownian()
    gauss = occupation_density_estimate(f, s, 1.0, 1.0, ([-0.05], [0.05]), 4, ([-4.0], [4.0], [32]), 25_000, 3)
    target = 1 / np.sqrt(2 * np.pi)
    half = 0.5 * (gauss.sup_ci[1] - gauss.sup_ci[0])
    gauss_ok = abs(gauss.sup_density - target) <= 3 * half
    fo, so = ou()
    ou_ref = occupation_refinement(fo, so, 1.0, 1.0, ([-0.05], [0.05]), 4, ([-4.0], [4.0], [32]), 25_000, 3)
    fd, sd = frozen()
    dirac = occupation_refinement(fd, sd, 1.0, 1.0, ([-0.5], [0.5]), 4, ([-1.0], [1.0], [16]), 10, 3, n_steps=10)
    ok = gauss_ok and ou_ref.stable and dirac.condition == "FAIL"
    report("9", ok, f"gauss sup={gauss.sup_density:.4f} (target {target:.4f}, 3CI={3 * half:.4f}) "
                    f"ou ratio={ou_ref.ratio:.3f} dirac ratio={dirac.ratio:.2f} {dirac.condition}")


def test_10_regularization_convergence():
    f, s = w2inf()
    t0 = time.perf_counter()
    rep = regularization_convergence_study((f, s), [0.5], [0.2, 0.1, 0.05, 0.025], {"mean": lambda x: x[:, 0]},
                                           TimeGrid.from_dt(1.0, 1e-3), 10_000, 7, ([-4.0], [4.0]), eps=0.3)
    elapsed = time.perf_counter() - t0
    slope = rep.weak_slopes["mean"]
    ok = rep.strong_monotone and slope >= 0.8 and elapsed < 180
    report("10", ok, f"strong={[f'{v:.2e}' for v in rep.strong]} weak slope={slope:.2f} t={elapsed:.1f}s")


REPRO_RUNS = [
    ("linearize", "linearize_cubic.yaml"),
    ("girsanov-verify", "girsanov_martingale.yaml"),
    ("girsanov-verify", "girsanov_cubic.yaml"),
    ("girsanov-verify", "girsanov_cubic_sabotage.yaml"),
    ("slowfast", "slowfast_linear.yaml"),
    ("regularity", "regularity_mollifier.yaml"),
    ("regularity", "regularity_sobolev.yaml"),
    ("regularity", "regularity_occupation_gaussian.yaml"),
    ("regularity", "regularity_occupation_ou.yaml"),
    ("regularity", "regularity_occupation_dirac.yaml"),
    ("regularity", "regularity_convergence.yaml"),
]


def test_11_reproducibility(tmp_path):
    mismatches = []
    for command, cfg in REPRO_RUNS:
        dirs = []
        for tag, workers in (("a", 1), ("b", 1), ("c", 4)):
            out = tmp_path / f"{cfg}-{tag}"
            execute(command, os.path.join(CONFIGS, cfg), str(out), workers=workers)
            dirs.append(out)
        names = sorted(p for p in os.listdir(dirs[0]) if p != "meta.json")
        for other in dirs[1:]:
            _, bad, errs = filecmp.cmpfiles(dirs[0], other, names, shallow=False)
            mismatches += [f"{cfg}:{n}" for n in bad + errs]
    report("11", not mismatches, f"{len(REPRO_RUNS)} configs x (2 runs + 4 threads) byte-identical; "
                                 f"mismatches={mismatches}")
