"""Two-timescale SDEs, slow-manifold continuation and concentration statistics.

    dx = (1/eps) f(x, y) dt + (sigma / sqrt(eps)) F(x, y) dB
    dy = g(x, y) dt + rho * sigma * G(x, y) dB

with a shared ``k``-dimensional driver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
from scipy import stats

from .errors import (
    ContinuationBreak,
    InsufficientExits,
    LyapunovSolveFailure,
    NoConvergence,
    SingularJacobian,
    StiffnessViolation,
)
from .linearization import find_fixed_point
from .sde import DiffusionField, Ensemble, VectorField, simulate_ensemble


@dataclass
class SlowFastSystem:
    n: int
    m: int
    k: int
    f: Callable  # (B, n), (B, m) -> (B, n)
    g: Callable  # -> (B, m)
    F: Callable  # -> (B, n, k)
    G: Callable  # -> (B, m, k)
    eps: float
    sigma: float
    rho: float = 1.0
    name: str = ""
    fx: Optional[Callable] = None  # analytic d_x f at a single point (x, y) -> (n, n)

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def split(self, z):
        return z[:, : self.n], z[:, self.n:]

    def fast_field(self, y) -> VectorField:
        """``x -> f(x, y)`` at frozen ``y``."""
        y = np.asarray(y, dtype=np.float64).reshape(self.m)
        jac = None
        if self.fx is not None:
            jac = lambda x: self.fx(x, y)  # noqa: E731
        return VectorField(self.n, lambda x: self.f(x, np.broadcast_to(y, (x.shape[0], self.m))), jac=jac)

    def joint_fields(self):
        """Drift and diffusion of the joint process on ``R^{n+m}``."""
        n, m, k = self.n, self.m, self.k
        eps, sig, rho = self.eps, self.sigma, self.rho
        fast_noise = sig / np.sqrt(eps)
        slow_noise = rho * sig

        def drift(z):
            x, y = self.split(z)
            return np.concatenate([self.f(x, y) / eps, self.g(x, y)], axis=1)

        def diffusion(z):
            x, y = self.split(z)
            B = z.shape[0]
            out = np.empty((B, n + m, k))
            out[:, :n, :] = fast_noise * np.broadcast_to(self.F(x, y), (B, n, k))
            out[:, n:, :] = slow_noise * np.broadcast_to(self.G(x, y), (B, m, k))
            return out

        return (VectorField(n + m, drift, name=f"{self.name}:drift"),
                DiffusionField(n + m, k, diffusion, name=f"{self.name}:diffusion"))

    def params(self):
        return {"n": self.n, "m": self.m, "k": self.k, "eps": self.eps, "sigma": self.sigma, "rho": self.rho}


@dataclass
class SlowManifold:
    y_grid: np.ndarray  # (S, m)
    x_star: np.ndarray  # (S, n)
    A_star: np.ndarray  # (S, n, n)
    max_real_part: np.ndarray  # (S,)
    residuals: np.ndarray
    bifurcations: list = field(default_factory=list)
    stability_margin: Optional[float] = None

    @property
    def size(self):
        return self.y_grid.shape[0]

    def uniformly_stable(self, margin):
        return bool(np.max(self.max_real_part) <= -margin)

    def rows(self):
        """``(y..., x*..., max_real_part)`` rows for CSV output."""
        return np.column_stack([self.y_grid, self.x_star, self.max_real_part])

    def x_of_y(self, y):
        """Piecewise-linear ``x*(y)`` for a batch ``y`` of shape ``(B, m)``."""
        y = np.asarray(y, dtype=np.float64)
        if self.y_grid.shape[1] == 1:
            yg = self.y_grid[:, 0]
            order = np.argsort(yg)
            yg = yg[order]
            xs = self.x_star[order]
            return np.stack([np.interp(y[:, 0], yg, xs[:, j]) for j in range(xs.shape[1])], axis=1)
        return _polyline_interp(self.y_grid, self.x_star, y)

    def covers(self, y):
        lo = self.y_grid.min(axis=0)
        hi = self.y_grid.max(axis=0)
        return np.all((y >= lo) & (y <= hi), axis=-1)


def _polyline_interp(yg, xs, y, chunk=4096):
    # project each y onto the ordered polyline through yg
    a, b = yg[:-1], yg[1:]
    d = b - a
    dd = np.maximum(np.sum(d * d, axis=1), 1e-300)
    out = np.empty((y.shape[0], xs.shape[1]))
    for lo in range(0, y.shape[0], chunk):
        yy = y[lo:lo + chunk]
        t = np.clip(np.einsum("psm,sm->ps", yy[:, None, :] - a[None], d) / dd, 0.0, 1.0)
        proj = a[None] + t[:, :, None] * d[None]
        j = np.argmin(np.sum((proj - yy[:, None, :]) ** 2, axis=2), axis=1)
        tj = t[np.arange(yy.shape[0]), j][:, None]
        out[lo:lo + chunk] = xs[j] + tj * (xs[j + 1] - xs[j])
    return out


def trace_slow_manifold(sys: SlowFastSystem, y_grid, x_init, tol=1e-12, max_iter=60,
                        fold_tol=1e-3) -> SlowManifold:
    """Continuation of ``f(x, y) = 0`` along an ordered ``y_grid``.

    Each Newton solve is warm-started from the previous sample. A sample is
    flagged as a bifurcation when the largest real part changes sign from the
    previous sample or lies within ``fold_tol`` of zero.
    """
    yg = np.asarray(y_grid, dtype=np.float64).reshape(-1, sys.m)
    S = yg.shape[0]
    xs = np.empty((S, sys.n))
    As = np.empty((S, sys.n, sys.n))
    mr = np.empty(S)
    res = np.empty(S)
    bif = []
    x = np.asarray(x_init, dtype=np.float64).reshape(sys.n)

    def partial(upto):
        return SlowManifold(yg[:upto], xs[:upto], As[:upto], mr[:upto], res[:upto], list(bif))

    for i in range(S):
        try:
            fp = find_fixed_point(sys.fast_field(yg[i]), x, tol=tol, max_iter=max_iter)
        except (NoConvergence, SingularJacobian) as exc:
            raise ContinuationBreak(i, yg[i].tolist(), partial(i)) from exc
        x = fp.location
        xs[i] = x
        As[i] = fp.jacobian
        mr[i] = float(np.max(np.real(fp.eigenvalues)))
        res[i] = fp.residual_norm
        if abs(mr[i]) <= fold_tol or (i > 0 and np.sign(mr[i]) != np.sign(mr[i - 1])):
            bif.append(i)
    return SlowManifold(yg, xs, As, mr, res, bif)


@dataclass
class StabilityCheck:
    ok: bool
    margin: float
    per_sample: np.ndarray  # max_real_part
    offending: list  # list of (index, y)

    def __bool__(self):
        return self.ok

    def to_dict(self):
        return {"uniformly_stable": self.ok, "margin": self.margin,
                "worst_max_real_part": float(np.max(self.per_sample)),
                "offending": [{"index": i, "y": y} for i, y in self.offending]}


def check_uniform_stability(manifold: SlowManifold, margin) -> StabilityCheck:
    bad = np.flatnonzero(manifold.max_real_part > -margin)
    offending = [(int(i), manifold.y_grid[i].tolist()) for i in bad]
    manifold.stability_margin = margin
    return StabilityCheck(bad.size == 0, float(margin), manifold.max_real_part.copy(), offending)


def stability_dt(sys: SlowFastSystem, x0, y0, manifold: Optional[SlowManifold] = None, c=0.1):
    """``c * eps / max |spec(A*)|`` over the manifold (or at the initial point)."""
    if manifold is not None and manifold.size:
        rad = max(float(np.max(np.abs(np.linalg.eigvals(A)))) for A in manifold.A_star)
    else:
        J = sys.fast_field(y0).jacobian(x0)
        rad = float(np.max(np.abs(np.linalg.eigvals(J))))
    return np.inf if rad == 0 else c * sys.eps / rad


def simulate_slowfast(sys: SlowFastSystem, x0, y0, grid, M, base_seed, manifold=None, stability_c=0.1,
                      record=None, workers=1) -> Ensemble:
    """Joint Euler-Maruyama; refuses grids that violate the explicit stability bound."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(sys.n)
    y0 = np.asarray(y0, dtype=np.float64).reshape(sys.m)
    bound = stability_dt(sys, x0, y0, manifold, stability_c)
    if grid.dt > bound:
        raise StiffnessViolation(grid.dt, bound)
    drift, diffusion = sys.joint_fields()
    ens = simulate_ensemble(drift, diffusion, 1.0, np.concatenate([x0, y0]), grid, M, base_seed,
                            record=record, workers=workers, system_id=sys.name or "slowfast")
    ens.meta.update(sys.params())
    return ens


def clopper_pearson(hits, n, level=0.95):
    hits = np.asarray(hits)
    a = (1 - level) / 2
    lo = np.where(hits > 0, stats.beta.ppf(a, hits, n - hits + 1), 0.0)
    hi = np.where(hits < n, stats.beta.ppf(1 - a, hits + 1, n - hits), 1.0)
    return lo, hi


@dataclass
class ConcentrationReport:
    h_values: np.ndarray
    exit_fractions: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    sigma: float
    M: int
    fit_slope: Optional[float] = None
    fit_intercept: Optional[float] = None
    r_squared: Optional[float] = None
    usable: Optional[np.ndarray] = None
    left_manifold_range: float = 0.0

    @property
    def monotone(self):
        """Non-increasing in ``h`` up to CI overlap."""
        p = self.exit_fractions
        return bool(np.all((np.diff(p) <= 0) | (self.ci_low[1:] <= self.ci_high[:-1])))

    def rows(self):
        return np.column_stack([self.h_values, self.exit_fractions, self.ci_low, self.ci_high])

    def to_dict(self):
        return {
            "h_values": [float(v) for v in self.h_values],
            "exit_fractions": [float(v) for v in self.exit_fractions],
            "ci_low": [float(v) for v in self.ci_low],
            "ci_high": [float(v) for v in self.ci_high],
            "sigma": self.sigma,
            "M": self.M,
            "fit_slope": self.fit_slope,
            "fit_intercept": self.fit_intercept,
            "r_squared": self.r_squared,
            "monotone": self.monotone,
            "left_manifold_range": self.left_manifold_range,
        }


def sup_distance(ensemble: Ensemble, manifold: SlowManifold, burn_in, n=None):
    """Per path ``sup_{t >= burn_in} |x_t - x*(y_t)|`` and whether ``y`` left the traced range."""
    n = ensemble.meta.get("n") if n is None else n
    times = ensemble.grid.times[ensemble.nodes]
    keep = times >= burn_in - 1e-12 * ensemble.grid.T
    st = ensemble.states[:, keep, :]
    M, R, d = st.shape
    flat = st.reshape(M * R, d)
    x, y = flat[:, :n], flat[:, n:]
    dist = np.linalg.norm(x - manifold.x_of_y(y), axis=1).reshape(M, R)
    left = ~manifold.covers(y).reshape(M, R)
    return dist.max(axis=1), left.any(axis=1)


def concentration_statistics(ensemble: Ensemble, manifold: SlowManifold, h_values, burn_in, sigma=None,
                             require_fit=True, p_range=(0.001, 0.5), level=0.95) -> ConcentrationReport:
    """Exit fractions from the ``h``-neighbourhood of the slow manifold after ``burn_in``.

    Fits ``-log p = slope * h^2 / sigma^2 + intercept`` over the ``h`` with
    ``p`` strictly inside ``p_range``.
    """
    if not burn_in < ensemble.grid.t_end:
        raise ValueError("burn_in must be before the final time")
    sigma = ensemble.meta.get("sigma") if sigma is None else sigma
    h = np.asarray(h_values, dtype=np.float64)
    sup, left = sup_distance(ensemble, manifold, burn_in)
    M = ensemble.M
    hits = np.array([int(np.sum(sup > hv)) for hv in h])
    p = hits / M
    lo, hi = clopper_pearson(hits, M, level)
    rep = ConcentrationReport(h, p, lo, hi, float(sigma), M, left_manifold_range=float(np.mean(left)))
    usable = (p > p_range[0]) & (p < p_range[1])
    rep.usable = usable
    if usable.sum() < 2 or sigma == 0:
        if require_fit:
            raise InsufficientExits(f"only {int(usable.sum())} usable h values")
        return rep
    xs = h[usable] ** 2 / sigma**2
    fit = stats.linregress(xs, -np.log(p[usable]))
    rep.fit_slope = float(fit.slope)
    rep.fit_intercept = float(fit.intercept)
    rep.r_squared = float(fit.rvalue**2)
    return rep


def solve_lyapunov(A, Q):
    """Solve ``A X + X A^T + Q = 0`` for a Hurwitz ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    ev = np.linalg.eigvals(A)
    if np.max(np.real(ev)) >= -1e-12:
        raise LyapunovSolveFailure("A* spectrum touches or crosses the imaginary axis")
    X = scipy.linalg.solve_continuous_lyapunov(A, -Q)
    return 0.5 * (X + X.T)


@dataclass
class NonDegeneracy:
    y: list
    norm_Xbar: float
    norm_Xbar_inv: float
    degenerate: bool
    Xbar: np.ndarray = field(repr=False, default=None)
    residual: float = 0.0

    def to_dict(self):
        return {"y": self.y, "norm_Xbar": self.norm_Xbar,
                "norm_Xbar_inv": self.norm_Xbar_inv if np.isfinite(self.norm_Xbar_inv) else None,
                "degenerate": self.degenerate, "lyapunov_residual": self.residual}


def nondegeneracy_check(manifold: SlowManifold, F_at_manifold, eps=None, bound=1e6):
    """Stationary covariance ``Xbar(y)`` of the frozen linearized fast process.

    ``A* Xbar + Xbar A*^T + F F^T = 0``; the ``sigma^2`` and ``1/eps`` factors of
    the fast equation cancel, so ``eps`` is accepted for the record only.
    ``F_at_manifold`` is an ``(S, n, k)`` array or a callable ``(x*, y) -> (n, k)``.
    """
    out = []
    for i in range(manifold.size):
        A = manifold.A_star[i]
        if callable(F_at_manifold):
            Fi = np.atleast_2d(F_at_manifold(manifold.x_star[i], manifold.y_grid[i]))
        else:
            Fi = np.atleast_2d(np.asarray(F_at_manifold)[i])
        Q = Fi @ Fi.T
        X = solve_lyapunov(A, Q)
        resid = float(np.linalg.norm(A @ X + X @ A.T + Q))
        sv = np.linalg.svd(X, compute_uv=False)
        norm_x = float(sv[0])
        norm_inv = float(1.0 / sv[-1]) if sv[-1] > np.finfo(float).eps * max(1.0, sv[0]) else np.inf
        out.append(NonDegeneracy(manifold.y_grid[i].tolist(), norm_x, norm_inv,
                                 bool(norm_x > bound or norm_inv > bound), X, resid))
    return out
