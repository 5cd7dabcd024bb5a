"""Measure change between a nonlinear SDE and its linearization.

With ``f(x) = A (x - x0) + r(x)`` and ``dL = u . dB``, the drift correction is
``u = (1/eps) sigma^{-1} r`` (or the frozen pre-image version when sigma is
rank deficient or rectangular). The stochastic exponential ``E(L)`` reweights
*linear* paths into the nonlinear law. Reweighting *nonlinear* paths into the
linear law needs ``E(-L)``: under ``dQ = E(-L) dP`` the process
``B + int u dt`` is Brownian, which cancels ``r`` exactly. Both directions are
available through ``direction``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (
    DegenerateWeights,
    IllConditioned,
    NonFinite,
    RangeConditionViolated,
)
from .linearization import LinearizedSystem
from .rng import derive_seed
from .sde import (
    DiffusionField,
    Ensemble,
    SdePath,
    TimeGrid,
    brownian_increments,
    em_step,
    integrate,
    _resolve_nodes,
    map_chunks,
    mc_mean,
    simulate_ensemble,
)

INVERTIBLE = "invertible"
RANGE_PROJECT = "range_project"
COND_MAX = 1e8


@dataclass
class RangeDecomposition:
    """Orthonormal basis of ``Im(sigma0)`` and pre-images ``sigma0 a_i = v_i``."""

    sigma0: np.ndarray
    rank: int
    basis: np.ndarray  # (rank, n)
    preimages: np.ndarray  # (rank, k)
    residual_tol: float

    def coefficients(self, r):
        """Coordinates ``P_i`` of ``r`` along the basis vectors (batch aware)."""
        return np.asarray(r) @ self.basis.T

    def preimage(self, r):
        """``sum_i P_i a_i``, the least-squares pre-image of ``r``."""
        return self.coefficients(r) @ self.preimages

    @property
    def pseudo_inverse(self):
        return self.preimages.T @ self.basis

    def residual(self, r):
        r = np.asarray(r, dtype=np.float64)
        return np.linalg.norm(self.preimage(r) @ self.sigma0.T - r, axis=-1)


def range_decomposition(sigma0, rank_tol=None, residual_tol=1e-10) -> RangeDecomposition:
    s0 = np.atleast_2d(np.asarray(sigma0, dtype=np.float64))
    U, S, Vt = np.linalg.svd(s0, full_matrices=False)
    if rank_tol is None:
        rank_tol = max(s0.shape) * np.finfo(float).eps * (S[0] if S.size else 0.0)
    rank = int(np.sum(S > rank_tol))
    basis = U[:, :rank].T.copy()
    preimages = Vt[:rank] / S[:rank, None]
    return RangeDecomposition(s0, rank, basis, preimages, residual_tol)


@dataclass
class DriftCorrectionSeries:
    grid: TimeGrid
    u: np.ndarray  # (n_steps + 1, k)

    def __neg__(self):
        return DriftCorrectionSeries(self.grid, -self.u)

    def scaled(self, c):
        return DriftCorrectionSeries(self.grid, c * self.u)


class CorrectionField:
    """Evaluates ``u(x)`` for batches of states.

    Parameters
    ----------
    mode : {"invertible", "range_project"}
        ``invertible`` solves with ``sigma(X)``; ``range_project`` uses the
        pre-images of ``Im(sigma(x0))``.
    frozen : bool
        Only for ``range_project``: ``False`` projects with ``sigma(X)^+``
        along the path instead of the frozen ``sigma(x0)^+``.
    """

    def __init__(self, linsys: LinearizedSystem, sigma: DiffusionField, eps, mode=INVERTIBLE,
                 frozen=True, cond_max=COND_MAX, residual_tol=1e-10, rank_tol=None):
        if eps <= 0:
            raise ValueError("eps must be positive")
        if mode not in (INVERTIBLE, RANGE_PROJECT):
            raise ValueError(f"unknown mode {mode!r}")
        if mode == INVERTIBLE and sigma.rows != sigma.cols:
            raise ValueError("invertible mode needs a square diffusion matrix")
        self.linsys = linsys
        self.sigma = sigma
        self.eps = float(eps)
        self.mode = mode
        self.frozen = frozen
        self.cond_max = cond_max
        self.residual_tol = residual_tol
        self.rank_tol = rank_tol
        self.k = sigma.cols
        self.decomposition = None
        if mode == RANGE_PROJECT:
            self.decomposition = range_decomposition(sigma(linsys.origin), rank_tol, residual_tol)

    def __call__(self, x, node=None, path_indices=None):
        """``u`` for a batch ``x`` of shape ``(B, n)``.

        Errors report ``node`` (or the row number when ``node`` is None, i.e.
        rows are successive nodes of one path) and the offending path index.
        """
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        r = np.atleast_2d(self.linsys.remainder(x))

        def where(row):
            nd = row if node is None else node
            pid = None if path_indices is None else int(path_indices[row])
            return nd, pid

        if self.mode == INVERTIBLE:
            s = self.sigma(x)
            if s.shape[1] == 1:
                s00 = s[:, 0, 0]
                bad = s00 == 0
                if bad.any():
                    nd, pid = where(int(np.flatnonzero(bad)[0]))
                    raise IllConditioned(nd, np.inf, pid)
                return (r / s00[:, None]) / self.eps
            cond = np.linalg.cond(s)
            bad = ~(cond <= self.cond_max)
            if bad.any():
                row = int(np.flatnonzero(bad)[0])
                nd, pid = where(row)
                raise IllConditioned(nd, float(cond[row]), pid)
            return np.linalg.solve(s, r[:, :, None])[:, :, 0] / self.eps

        if self.frozen:
            dec = self.decomposition
            pre = dec.preimage(r)
            fitted = pre @ dec.sigma0.T
        else:
            pinv = np.linalg.pinv(self.sigma(x), rcond=1e-12)
            pre = np.einsum("bkn,bn->bk", pinv, r)
            fitted = np.einsum("bnk,bk->bn", self.sigma(x), pre)
        resid = np.linalg.norm(fitted - r, axis=1)
        limit = self.residual_tol * np.maximum(1.0, np.linalg.norm(r, axis=1))
        bad = resid > limit
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            nd, pid = where(row)
            raise RangeConditionViolated(nd, float(resid[row]), pid)
        return pre / self.eps

    def scalar_sup_sq(self, radius, res=201):
        """Grid-search ``sup_{|z| <= R} |u(x0 + z)|^2`` (boundary included)."""
        n = self.linsys.origin.shape[0]
        axis = np.linspace(-radius, radius, res)
        pts = np.stack(np.meshgrid(*([axis] * n), indexing="ij"), axis=-1).reshape(-1, n)
        pts = pts[np.linalg.norm(pts, axis=1) <= radius * (1 + 1e-12)]
        if n > 1:
            rng = np.random.default_rng(0)
            d = rng.standard_normal((4 * res, n))
            pts = np.vstack([pts, radius * d / np.linalg.norm(d, axis=1, keepdims=True)])
        u = self(self.linsys.origin + pts)
        return float(np.max(np.sum(u * u, axis=1)))


def drift_correction(linsys: LinearizedSystem, sigma: DiffusionField, eps, path: SdePath,
                     mode=INVERTIBLE, **kwargs) -> DriftCorrectionSeries:
    """``u`` at every node of a nonlinear path."""
    field_ = CorrectionField(linsys, sigma, eps, mode, **kwargs)
    u = field_(path.states)
    if not np.all(np.isfinite(u)):
        raise NonFinite(int(np.flatnonzero(~np.all(np.isfinite(u), axis=1))[0]), what="drift correction")
    return DriftCorrectionSeries(path.grid, u)


def log_increment(u, db, dt):
    """``u . dB - |u|^2 dt / 2`` for a batch (shared by every accumulation path)."""
    if u.shape[-1] == 1:
        uu = u[..., 0] * u[..., 0]
        return u[..., 0] * db[..., 0] - 0.5 * uu * dt, uu * dt
    uu = np.sum(u * u, axis=-1)
    return np.sum(u * db, axis=-1) - 0.5 * uu * dt, uu * dt


@dataclass
class GirsanovWeight:
    """Per-node ``log D`` and running ``int |u|^2 ds`` (leading path axis optional)."""

    grid: TimeGrid
    log_D: np.ndarray
    quadratic_variation: np.ndarray
    nodes: Optional[np.ndarray] = None

    @property
    def D(self):
        return np.exp(self.log_D)

    def at_node(self, node):
        nodes = np.arange(self.grid.n_steps + 1) if self.nodes is None else self.nodes
        j = int(np.searchsorted(nodes, node))
        if j >= len(nodes) or nodes[j] != node:
            raise KeyError(f"node {node} not stored")
        return self.log_D[..., j]


def stochastic_exponential(u: DriftCorrectionSeries, driver) -> GirsanovWeight:
    """Log-domain ``E(int u dB)`` on the driver's grid."""
    if u.grid != driver.grid:
        raise ValueError("correction and driver grids differ")
    if u.u.shape[1] != driver.k:
        raise ValueError("correction dimension differs from driver dimension")
    n = driver.grid.n_steps
    inc, qv_inc = log_increment(u.u[:n], driver.increments, driver.grid.dt)
    log_D = np.zeros(n + 1)
    qv = np.zeros(n + 1)
    np.cumsum(inc, out=log_D[1:])
    np.cumsum(qv_inc, out=qv[1:])
    if not np.all(np.isfinite(log_D)):
        node = int(np.flatnonzero(~np.isfinite(log_D))[0])
        raise NonFinite(node, what="log density (Novikov condition likely fails)")
    return GirsanovWeight(driver.grid, log_D, qv)


@dataclass
class WeightedEnsemble:
    """Nonlinear ensemble with online density accumulation."""

    ensemble: Ensemble
    weights: GirsanovWeight  # log_D shape (M, len(weight_nodes))
    escaped: np.ndarray
    exit_node: np.ndarray
    origin: np.ndarray
    direction: str
    u_scale: float

    @property
    def escaped_fraction(self):
        return float(np.mean(self.escaped))

    @property
    def D_T(self):
        return np.exp(self.weights.at_node(self.ensemble.grid.n_steps))


def simulate_weighted(f, sigma, corr: CorrectionField, eps, x_start, grid, M, base_seed,
                      direction="remove", u_scale=1.0, radius=None, weight_nodes=None,
                      record="final", workers=1, chunk_size=16384) -> WeightedEnsemble:
    """Simulate the nonlinear SDE and accumulate ``log D`` with the same increments.

    ``direction="remove"`` integrates ``-u`` (density taking the nonlinear law to
    the linear one); ``"add"`` integrates ``+u``. With ``radius`` the
    integrand is stopped (set to zero) from the first node where
    ``|X - x0| > radius``.
    """
    sign = {"remove": -1.0, "add": 1.0}[direction]
    c = sign * float(u_scale)
    x0 = corr.linsys.origin
    if weight_nodes is None:
        weight_nodes = np.array([grid.n_steps])
    weight_nodes = np.unique(np.append(np.asarray(weight_nodes, dtype=int), grid.n_steps))
    wslot = {int(v): j for j, v in enumerate(weight_nodes)}
    dt = grid.dt

    def run(lo, hi):
        P = hi - lo
        pids = np.arange(lo, hi)
        log_D = np.zeros(P)
        qv = np.zeros(P)
        rec_D = np.empty((P, len(weight_nodes)))
        rec_qv = np.empty((P, len(weight_nodes)))
        escaped = np.zeros(P, dtype=bool)
        exit_node = np.full(P, -1)

        def observer(i, x, db):
            nonlocal log_D, qv
            if radius is not None:
                out = np.linalg.norm(x - x0, axis=1) > radius
                new = out & ~escaped
                exit_node[new] = i
                escaped[:] |= out
            if i in wslot:
                rec_D[:, wslot[i]] = log_D
                rec_qv[:, wslot[i]] = qv
            if db is None:
                return
            active = ~escaped
            if active.all():
                u = corr(x, node=i, path_indices=pids) * c
            else:
                u = np.zeros((P, corr.k))
                if active.any():
                    u[active] = corr(x[active], node=i, path_indices=pids[active]) * c
            inc, qv_inc = log_increment(u, db, dt)
            log_D = log_D + inc
            qv = qv + qv_inc
            if not np.all(np.isfinite(log_D)):
                p = int(np.flatnonzero(~np.isfinite(log_D))[0])
                raise NonFinite(i + 1, int(pids[p]), what="log density")

        states, nodes = integrate(f, sigma, eps, x_start, grid, base_seed, pids,
                                  record=record, observer=observer, check_domain=radius is None)
        return states, rec_D, rec_qv, escaped, exit_node

    parts = map_chunks(run, M, workers, chunk_size)
    cat = [np.concatenate([p[j] for p in parts], axis=0) for j in range(5)]
    ens = Ensemble(grid, cat[0], _resolve_nodes(grid, record), int(base_seed), np.arange(M), sigma.cols,
                   system_id="nonlinear")
    w = GirsanovWeight(grid, cat[1], cat[2], weight_nodes)
    return WeightedEnsemble(ens, w, cat[3], cat[4], x0.copy(), direction, float(u_scale))


@dataclass
class MartingaleCheck:
    node: int
    t: float
    mean: float
    std_error: float
    passed: bool

    def to_dict(self):
        return {"node": self.node, "t": self.t, "mean_D": self.mean, "std_error": self.std_error,
                "pass": self.passed}


def martingale_check(weights: GirsanovWeight, confidence_k=3.0, nodes=None):
    """``|mean(D_t) - 1| <= k SE`` at each stored node (node 0 excluded)."""
    stored = weights.nodes if weights.nodes is not None else np.arange(weights.grid.n_steps + 1)
    nodes = [int(v) for v in (stored if nodes is None else nodes) if v > 0]
    out = []
    for nd in nodes:
        est = mc_mean(np.exp(weights.at_node(nd)))
        ok = abs(est.mean - 1.0) <= confidence_k * est.std_error
        out.append(MartingaleCheck(nd, float(weights.grid.times[nd]), est.mean, est.std_error, bool(ok)))
    return out


@dataclass
class NovikovReport:
    estimate: float
    std_error: float
    escaped_fraction: float
    ceiling: float
    sup_u_sq: float
    prefix_estimates: list
    divergence_flag: bool
    M: int

    def to_dict(self):
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "escaped_fraction": self.escaped_fraction,
            "ceiling": self.ceiling,
            "sup_u_sq": self.sup_u_sq,
            "prefix_estimates": self.prefix_estimates,
            "divergence_flag": self.divergence_flag,
            "M": self.M,
        }


def novikov_functional(qv_T, escaped, grid, sup_u_sq, confidence_k=3.0):
    """MC estimate of ``E[exp(0.5 int |u|^2)]`` over non-escaped paths.

    Divergence is flagged (not raised) when the estimate keeps increasing over
    the nested prefixes ``M/4, M/2, M`` by more than ``k`` standard errors.
    """
    qv_T = np.asarray(qv_T, dtype=np.float64)
    escaped = np.asarray(escaped, dtype=bool)
    M = qv_T.shape[0]
    kept = np.exp(0.5 * qv_T[~escaped])
    if kept.size == 0:
        nan = float("nan")
        return NovikovReport(nan, nan, 1.0, float(np.exp(0.5 * grid.T * sup_u_sq)),
                             sup_u_sq, [], False, M)
    full = mc_mean(kept)
    prefixes = []
    for frac in (4, 2, 1):
        m = max(1, M // frac)
        sub = np.exp(0.5 * qv_T[:m][~escaped[:m]])
        prefixes.append(float(np.mean(sub)) if sub.size else float("nan"))
    rising = prefixes[0] < prefixes[1] < prefixes[2]
    flag = bool(rising and (prefixes[2] - prefixes[0]) > confidence_k * full.std_error)
    return NovikovReport(full.mean, full.std_error, float(np.mean(escaped)),
                         float(np.exp(0.5 * grid.T * sup_u_sq)), sup_u_sq, prefixes, flag, M)


def novikov_estimate(f, sigma, corr: CorrectionField, eps, x_start, grid, M, base_seed, radius_R,
                     u_scale=1.0, workers=1, grid_res=201) -> NovikovReport:
    if radius_R <= 0:
        raise ValueError("radius_R must be positive")
    we = simulate_weighted(f, sigma, corr, eps, x_start, grid, M, base_seed, direction="add",
                           u_scale=u_scale, radius=radius_R, workers=workers)
    qv_T = we.weights.quadratic_variation[:, -1]
    sup_sq = corr.scalar_sup_sq(radius_R, grid_res) * u_scale**2
    return novikov_functional(qv_T, we.escaped, grid, sup_sq)


# --- equivalence ------------------------------------------------------------

OBSERVABLES = {
    "z": lambda z: z[:, 0],
    "z2": lambda z: np.sum(z * z, axis=1),
    "exp_neg_z2": lambda z: np.exp(-np.sum(z * z, axis=1)),
}


def observable(name):
    if name in OBSERVABLES:
        return OBSERVABLES[name]
    if name.startswith("z") and name[1:].isdigit():
        j = int(name[1:]) - 1
        return lambda z: z[:, j]
    raise KeyError(f"unknown observable {name!r}")


@dataclass
class ObservableResult:
    name: str
    weighted_mean: float
    direct_mean: float
    se_weighted: float
    se_direct: float
    allowance: float
    confidence_k: float

    @property
    def difference(self):
        return self.weighted_mean - self.direct_mean

    @property
    def combined_se(self):
        return float(np.hypot(self.se_weighted, self.se_direct))

    @property
    def passed(self):
        return abs(self.difference) <= self.confidence_k * self.combined_se + self.allowance

    def to_dict(self):
        return {
            "weighted_mean": self.weighted_mean,
            "direct_mean": self.direct_mean,
            "se_weighted": self.se_weighted,
            "se_direct": self.se_direct,
            "difference": self.difference,
            "combined_se": self.combined_se,
            "allowance": self.allowance,
            "pass": bool(self.passed),
        }


@dataclass
class EquivalenceReport:
    results: dict
    ess: float
    M: int
    weight_summary: dict
    histogram: tuple = field(repr=False, default=None)

    @property
    def passed(self):
        return all(r.passed for r in self.results.values())

    def to_dict(self):
        return {
            "observables": {k: v.to_dict() for k, v in self.results.items()},
            "pass": bool(self.passed),
            "ess": self.ess,
            "ess_fraction": self.ess / self.M,
            "M": self.M,
            "weights": self.weight_summary,
        }

    def histogram_rows(self):
        counts, edges = self.histogram
        return [(float(edges[i]), float(edges[i + 1]), int(counts[i])) for i in range(len(counts))]


def effective_sample_size(w):
    w = np.asarray(w, dtype=np.float64)
    return float(np.sum(w) ** 2 / np.sum(w * w))


def verify_measure_equivalence(nonlinear: Ensemble, weights, linear: Ensemble, observables, origin,
                               confidence_k=3.0, allowance=None, bins=50) -> EquivalenceReport:
    """Compare ``E_P[D_T phi(X_T - x0)]`` with ``E[phi(Z_T)]`` of the linear SDE.

    ``weights`` is the per-path terminal density ``D_T``; ``linear`` holds the
    shifted linear process. ``observables`` maps names to ``phi(z)`` acting on
    ``(M, n)`` arrays. ``allowance`` maps names to the discretization allowance.
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    M = nonlinear.M
    if w.shape[0] != M:
        raise ValueError("one weight per nonlinear path required")
    ess = effective_sample_size(w)
    if ess < 0.01 * M:
        raise DegenerateWeights(ess, M)
    z_nl = nonlinear.final - np.asarray(origin)
    z_lin = linear.final
    allowance = allowance or {}
    results = {}
    for name, phi in observables.items():
        a = mc_mean(phi(z_nl), w)
        b = mc_mean(phi(z_lin))
        results[name] = ObservableResult(name, a.mean, b.mean, a.std_error, b.std_error,
                                         float(allowance.get(name, 0.0)), confidence_k)
    q = np.quantile(w, [0.01, 0.05, 0.5, 0.95, 0.99])
    summary = {
        "min": float(w.min()), "max": float(w.max()), "mean": float(w.mean()), "std": float(w.std()),
        "q01": float(q[0]), "q05": float(q[1]), "q50": float(q[2]), "q95": float(q[3]), "q99": float(q[4]),
    }
    hist = np.histogram(w, bins=bins)
    return EquivalenceReport(results, ess, M, summary, hist)


def simulate_linear(linsys: LinearizedSystem, eps, z0, grid, M, seed, record="final", workers=1,
                    chunk_size=16384) -> Ensemble:
    """Independent ensemble of ``dz = A z dt + eps sigma(x0 + z) dW``."""
    return simulate_ensemble(linsys.linear_drift(), linsys.shifted_diffusion(), eps, z0, grid, M, seed,
                             record=record, workers=workers, chunk_size=chunk_size, system_id="linear")


def calibrate_bias(linsys: LinearizedSystem, eps, z0, grid, M, seed, observables, workers=1,
                   chunk_size=8192):
    """Allowance ``c_bias * dt`` per observable from a coupled dt-halving run.

    The linear SDE is run at ``dt`` and ``dt/2`` with the coarse increments built
    from pairs of fine ones. Assuming weak error ``c dt``, the difference of the
    two estimates is ``c dt / 2``, so ``c_bias = 2 |difference| / dt``.
    """
    f = linsys.linear_drift()
    s = linsys.shifted_diffusion()
    fine_dt = grid.dt / 2
    k = s.cols
    z0 = np.asarray(z0, dtype=np.float64).reshape(-1)

    def run(lo, hi):
        pids = np.arange(lo, hi)
        zc = np.array(np.broadcast_to(z0, (hi - lo, z0.shape[0])))
        zf = zc.copy()
        block = 128
        for start in range(0, grid.n_steps, block):
            nb = min(block, grid.n_steps - start)
            dB = brownian_increments(seed, pids, 2 * start, 2 * nb, k, fine_dt)
            for j in range(nb):
                d1, d2 = dB[:, 2 * j, :], dB[:, 2 * j + 1, :]
                zf = em_step(f, s, eps, zf, d1, fine_dt)
                zf = em_step(f, s, eps, zf, d2, fine_dt)
                zc = em_step(f, s, eps, zc, d1 + d2, grid.dt)
        return zc, zf

    parts = map_chunks(run, M, workers, chunk_size)
    zc = np.concatenate([p[0] for p in parts])
    zf = np.concatenate([p[1] for p in parts])
    out = {}
    for name, phi in observables.items():
        diff = float(np.mean(phi(zc)) - np.mean(phi(zf)))
        c_bias = 2.0 * abs(diff) / grid.dt
        out[name] = {"c_bias": c_bias, "allowance": c_bias * grid.dt, "difference": diff}
    return out


@dataclass
class EquivalenceExperiment:
    report: EquivalenceReport
    weighted: WeightedEnsemble
    linear: Ensemble
    martingale: list
    calibration: dict

    def to_dict(self):
        return {
            "equivalence": self.report.to_dict(),
            "martingale": [m.to_dict() for m in self.martingale],
            "escaped_fraction": self.weighted.escaped_fraction,
            "calibration": self.calibration,
            "direction": self.weighted.direction,
            "u_scale": self.weighted.u_scale,
        }


def equivalence_experiment(f, sigma, linsys, eps, z0, grid, M, base_seed, observable_names=("z", "z2", "exp_neg_z2"),
                           mode=INVERTIBLE, u_scale=1.0, radius=None, confidence_k=3.0, calibrate=True,
                           calibration_M=None, workers=1, martingale_fracs=(0.25, 0.5, 1.0)):
    """Full pipeline: weighted nonlinear paths vs an independent linear ensemble."""
    corr = CorrectionField(linsys, sigma, eps, mode)
    z0 = np.asarray(z0, dtype=np.float64).reshape(-1)
    x_start = linsys.origin + z0
    wnodes = [int(round(fr * grid.n_steps)) for fr in martingale_fracs]
    we = simulate_weighted(f, sigma, corr, eps, x_start, grid, M, base_seed, direction="remove",
                           u_scale=u_scale, radius=radius, weight_nodes=wnodes, workers=workers)
    lin = simulate_linear(linsys, eps, z0, grid, M, derive_seed(base_seed, 1), workers=workers)
    obs = {name: observable(name) for name in observable_names}
    calib = {}
    if calibrate:
        calib = calibrate_bias(linsys, eps, z0, grid, calibration_M or M, derive_seed(base_seed, 2), obs,
                               workers=workers)
    allowance = {k: v["allowance"] for k, v in calib.items()}
    report = verify_measure_equivalence(we.ensemble, we.D_T, lin, obs, linsys.origin, confidence_k, allowance)
    mart = martingale_check(we.weights, confidence_k, wnodes)
    return EquivalenceExperiment(report, we, lin, mart, calib)
