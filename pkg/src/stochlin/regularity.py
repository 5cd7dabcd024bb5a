"""Mollification, occupation densities and fractional Sobolev norms of paths."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import kernels
from .errors import DomainEscape, QuadratureUnderresolved, SupportEscape
from .sde import (
    DiffusionField,
    TimeGrid,
    VectorField,
    brownian_increments,
    em_step,
    map_chunks,
    sample_brownian,
    simulate_ensemble,
)
from .slowfast import SlowFastSystem, clopper_pearson

MASS_TOL = 1e-6


def bump(u):
    """Unnormalised profile ``exp(-1 / (1 - |u|^2))`` on the open unit ball."""
    u = np.asarray(u, dtype=np.float64)
    r2 = np.sum(u * u, axis=-1)
    out = np.zeros(r2.shape)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


def _midpoint_nodes(dim, res):
    axis = -1.0 + (np.arange(res) + 0.5) * (2.0 / res)
    pts = np.stack(np.meshgrid(*([axis] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    return pts, (2.0 / res) ** dim


@dataclass
class Mollifier:
    """Unit-mass bump ``phi`` and its rescaling ``scale^{-m} phi(. / scale)``.

    ``nodes``/``weights`` are the midpoint quadrature restricted to the
    support; ``weights`` already include ``phi`` and sum to one.
    """

    dim: int
    scale: float
    quadrature_res: int
    norm_const: float
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    def profile(self, u):
        return self.norm_const * bump(u)

    def kernel(self, x):
        return self.scale ** (-self.dim) * self.profile(np.asarray(x) / self.scale)

    def offsets(self):
        """Physical quadrature offsets ``scale * u_q``."""
        return self.scale * self.nodes


def make_mollifier(dim, scale, quadrature_res=128) -> Mollifier:
    if scale <= 0:
        raise ValueError("scale must be positive")
    if quadrature_res < 32:
        raise ValueError("quadrature_res must be at least 32")
    pts, w = _midpoint_nodes(dim, quadrature_res)
    vals = bump(pts)
    mass = float(np.sum(vals) * w)
    pts2, w2 = _midpoint_nodes(dim, 2 * quadrature_res)
    mass2 = float(np.sum(bump(pts2)) * w2)
    if abs(mass / mass2 - 1.0) > MASS_TOL:
        raise QuadratureUnderresolved(
            f"normalisation changes by {abs(mass / mass2 - 1.0):.2e} when doubling quadrature_res={quadrature_res}"
        )
    keep = vals > 0
    c = 1.0 / mass
    weights = vals[keep] * w * c
    return Mollifier(dim, float(scale), quadrature_res, c, pts[keep], weights)


class GridField:
    """Samples on a uniform tensor lattice with multilinear interpolation.

    ``values`` has shape ``lattice_shape + value_shape``.
    """

    def __init__(self, axes, values):
        self.axes = [np.asarray(a, dtype=np.float64) for a in axes]
        self.values = np.asarray(values, dtype=np.float64)
        self.dim = len(self.axes)
        self.lattice_shape = tuple(len(a) for a in self.axes)
        if self.values.shape[: self.dim] != self.lattice_shape:
            raise ValueError("values do not match the lattice")
        self.value_shape = self.values.shape[self.dim:]
        self._interp = None

    @classmethod
    def from_function(cls, func, lo, hi, counts, value_shape=None):
        """Sample ``func`` (batch ``(B, m) -> (B, ...)``) on a uniform lattice."""
        lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
        hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
        counts = np.broadcast_to(np.atleast_1d(counts), lo.shape)
        axes = [np.linspace(a, b, int(c)) for a, b, c in zip(lo, hi, counts)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        vals = np.asarray(func(pts), dtype=np.float64)
        shape = tuple(int(c) for c in counts) + vals.shape[1:]
        return cls(axes, vals.reshape(shape))

    @property
    def lo(self):
        return np.array([a[0] for a in self.axes])

    @property
    def hi(self):
        return np.array([a[-1] for a in self.axes])

    @property
    def spacing(self):
        return np.array([a[1] - a[0] for a in self.axes])

    def points(self):
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.dim)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1, self.dim)
        if self.dim == 1:
            flat = self.values.reshape(self.lattice_shape[0], -1)
            out = np.stack([np.interp(x[:, 0], self.axes[0], flat[:, j]) for j in range(flat.shape[1])], axis=1)
            return out.reshape((x.shape[0],) + self.value_shape)
        if self._interp is None:
            self._interp = RegularGridInterpolator(self.axes, self.values, method="linear", bounds_error=False,
                                                   fill_value=None)
        return self._interp(x)

    def to_rows(self):
        pts = self.points()
        return np.column_stack([pts, self.values.reshape(pts.shape[0], -1)])


def mollify(field_: GridField, moll: Mollifier, out_axes=None) -> GridField:
    """Convolve ``field_`` with the scaled mollifier, component by component.

    Without ``out_axes`` the output lattice is the set of input nodes whose
    kernel support stays inside the input box.
    """
    if moll.dim != field_.dim:
        raise ValueError("mollifier and field dimensions differ")
    if np.any(field_.spacing > moll.scale / 4 * (1 + 1e-12)):
        raise ValueError("lattice spacing must be at most scale / 4")
    lo, hi = field_.lo, field_.hi
    if out_axes is None:
        out_axes = [a[(a - moll.scale >= l - 1e-12) & (a + moll.scale <= h + 1e-12)]
                    for a, l, h in zip(field_.axes, lo, hi)]
        if any(len(a) == 0 for a in out_axes):
            raise SupportEscape("lattice box is too small for the mollifier support")
    else:
        out_axes = [np.asarray(a, dtype=np.float64) for a in out_axes]
        for a, l, h in zip(out_axes, lo, hi):
            if a[0] - moll.scale < l - 1e-12 or a[-1] + moll.scale > h + 1e-12:
                raise SupportEscape("convolution needs values outside the lattice box; enlarge it")
    pts = np.stack(np.meshgrid(*out_axes, indexing="ij"), axis=-1).reshape(-1, field_.dim)
    offs = moll.offsets()
    acc = np.zeros((pts.shape[0],) + field_.value_shape)
    chunk = max(1, (1 << 20) // max(1, offs.shape[0]))
    for a in range(0, pts.shape[0], chunk):
        p = pts[a:a + chunk]
        sample = field_((p[:, None, :] - offs[None, :, :]).reshape(-1, field_.dim))
        sample = sample.reshape((p.shape[0], offs.shape[0]) + field_.value_shape)
        acc[a:a + chunk] = np.einsum("q,pq...->p...", moll.weights, sample)
    shape = tuple(len(a) for a in out_axes) + field_.value_shape
    return GridField(out_axes, acc.reshape(shape))


def _lattice_counts(lo, hi, spacing):
    return [int(np.ceil((h - l) / spacing)) + 1 for l, h in zip(lo, hi)]


def mollified_vector_field(f: VectorField, moll: Mollifier, box, spacing=None) -> VectorField:
    """``f * phi_scale`` tabulated on a lattice over ``box`` (interpolated between nodes)."""
    lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (f.dim,)) for b in box)
    spacing = moll.scale / 8 if spacing is None else spacing
    big_lo, big_hi = lo - moll.scale, hi + moll.scale
    raw = GridField.from_function(f, big_lo, big_hi, _lattice_counts(big_lo, big_hi, spacing))
    out_axes = [np.linspace(l, h, c) for l, h, c in zip(lo, hi, _lattice_counts(lo, hi, spacing))]
    smooth = mollify(raw, moll, out_axes)
    return VectorField(f.dim, smooth, domain_box=(lo, hi), name=f"{f.name}*phi[{moll.scale:g}]")


def mollified_diffusion(s: DiffusionField, moll: Mollifier, box, spacing=None) -> DiffusionField:
    if s.is_constant:
        return s
    lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (s.rows,)) for b in box)
    spacing = moll.scale / 8 if spacing is None else spacing
    big_lo, big_hi = lo - moll.scale, hi + moll.scale
    raw = GridField.from_function(s, big_lo, big_hi, _lattice_counts(big_lo, big_hi, spacing))
    out_axes = [np.linspace(l, h, c) for l, h, c in zip(lo, hi, _lattice_counts(lo, hi, spacing))]
    smooth = mollify(raw, moll, out_axes)
    return DiffusionField(s.rows, s.cols, smooth, name=f"{s.name}*phi[{moll.scale:g}]")


# --- occupation density -----------------------------------------------------

@dataclass
class OccupationEstimate:
    sup_density: float
    sup_ci: tuple
    densities: np.ndarray  # per partition box (flattened)
    ci_low: np.ndarray
    ci_high: np.ndarray
    hits: np.ndarray
    box_lo: np.ndarray  # (B, n) lower corners
    box_volume: float
    counts: tuple
    n_samples: int

    def rows(self):
        return np.column_stack([self.box_lo, self.hits, self.densities, self.ci_low, self.ci_high])

    def to_dict(self):
        return {"sup_density": self.sup_density, "sup_ci": list(self.sup_ci), "counts": list(self.counts),
                "box_volume": self.box_volume, "n_samples": self.n_samples}


def _start_grid(start_box, res):
    lo, hi = (np.atleast_1d(np.asarray(b, dtype=np.float64)) for b in start_box)
    axes = [l + (np.arange(res) + 0.5) * (h - l) / res for l, h in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.shape[0])


def occupation_samples(f, sigma, eps, t, start_box, start_grid_res, M_per_start, base_seed, n_steps=100,
                       workers=1):
    """Terminal states ``X_t`` for ``M_per_start`` paths from every start node."""
    if t <= 0:
        raise ValueError("t must be positive")
    starts = _start_grid(start_box, start_grid_res)
    x0 = np.repeat(starts, M_per_start, axis=0)
    ens = simulate_ensemble(f, sigma, eps, x0, TimeGrid(0.0, t, n_steps), x0.shape[0], base_seed,
                            record="final", workers=workers, check_domain=False)
    return ens.final, starts.shape[0]


def bin_occupation(samples, box_partition, level=0.95) -> OccupationEstimate:
    """Empirical ``P(X_t in A) / |A|`` per partition box (start-averaged)."""
    lo, hi, counts = box_partition
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    counts = tuple(int(c) for c in np.broadcast_to(np.atleast_1d(counts), lo.shape))
    width = (hi - lo) / np.array(counts)
    N = samples.shape[0]
    idx = np.floor((samples - lo) / width).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.array(counts)), axis=1)
    flat = np.ravel_multi_index(tuple(idx[inside].T), counts)
    hits = np.bincount(flat, minlength=int(np.prod(counts)))
    vol = float(np.prod(width))
    dens = hits / (N * vol)
    cl, ch = clopper_pearson(hits, N, level)
    grid_idx = np.stack(np.unravel_index(np.arange(hits.size), counts), axis=1)
    j = int(np.argmax(dens))
    return OccupationEstimate(float(dens[j]), (float(cl[j] / vol), float(ch[j] / vol)), dens, cl / vol, ch / vol,
                              hits, lo + grid_idx * width, vol, counts, N)


def occupation_density_estimate(f, sigma, eps, t, start_box, start_grid_res, box_partition, M_per_start,
                                base_seed, n_steps=100, workers=1) -> OccupationEstimate:
    """Start-box average of ``P_x(X_t in A) / |A|`` for each partition box ``A``.

    The integral over starting points is restricted to ``start_box`` and
    normalised by its volume (midpoint quadrature with ``start_grid_res``
    nodes per axis).
    """
    samples, _ = occupation_samples(f, sigma, eps, t, start_box, start_grid_res, M_per_start, base_seed,
                                    n_steps, workers)
    return bin_occupation(samples, box_partition)


@dataclass
class OccupationRefinement:
    coarse: OccupationEstimate
    fine: OccupationEstimate
    ratio: float
    condition: str  # "PASS" or "FAIL"
    stable: bool

    def to_dict(self):
        return {"coarse": self.coarse.to_dict(), "fine": self.fine.to_dict(), "ratio": self.ratio,
                "condition": self.condition, "stable": self.stable}


def occupation_refinement(f, sigma, eps, t, start_box, start_grid_res, box_partition, M_per_start, base_seed,
                          n_steps=100, stable_tol=0.2, workers=1) -> OccupationRefinement:
    """Same samples binned at the given partition and at one refinement.

    The condition FAILS when the sup density at least doubles (up to float
    rounding) under the refinement.
    """
    samples, _ = occupation_samples(f, sigma, eps, t, start_box, start_grid_res, M_per_start, base_seed,
                                    n_steps, workers)
    lo, hi, counts = box_partition
    coarse = bin_occupation(samples, (lo, hi, counts))
    fine = bin_occupation(samples, (lo, hi, 2 * np.atleast_1d(counts)))
    ratio = fine.sup_density / coarse.sup_density if coarse.sup_density > 0 else np.inf
    condition = "FAIL" if ratio >= 2.0 * (1 - 1e-12) else "PASS"
    return OccupationRefinement(coarse, fine, float(ratio), condition, bool(abs(ratio - 1.0) <= stable_tol))


# --- fractional Sobolev norms -------------------------------------------------

def _check_sp(s, p):
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if p < 1:
        raise ValueError("p must be >= 1")
    if not 1.0 / p < s:
        raise ValueError("need 1/p < s")


def fractional_sobolev_power(values, grid: TimeGrid, s, p):
    """``||M||_{W^{s,p}}^p`` per row by left-endpoint double Riemann sums.

    ``values`` has shape ``(P, n_steps + 1)``. The diagonal ``i == j`` is
    excluded; that band contributes ``O(dt^{(1-s)p})`` to the integral.
    """
    _check_sp(s, p)
    v = np.atleast_2d(np.asarray(values, dtype=np.float64))
    n = grid.n_steps
    if v.shape[1] != n + 1:
        raise ValueError("values must have one entry per grid node")
    left = np.ascontiguousarray(v[:, :n])
    dt = grid.dt
    lags = np.arange(n, dtype=np.float64)
    lag_w = np.zeros(n)
    lag_w[1:] = (lags[1:] * dt) ** (-(1.0 + s * p))
    double = 2.0 * dt * dt * kernels.gagliardo_lag_sums(left, lag_w, float(p))
    lp = dt * np.sum(np.abs(left) ** p, axis=1)
    return double + lp


def fractional_sobolev_norm(path_values, grid: TimeGrid, s, p) -> float:
    """``W^{s,p}`` norm estimate of one scalar path sampled on ``grid``."""
    v = np.asarray(path_values, dtype=np.float64).reshape(1, -1)
    return float(fractional_sobolev_power(v, grid, s, p)[0] ** (1.0 / p))


@dataclass
class SobolevNormReport:
    s: float
    p: float
    resolutions: list
    norm_estimates: list  # mean over paths of the norm
    power_estimates: list  # mean over paths of the p-th power
    variation: float
    last_ratio: float
    bounded: bool
    growing: bool

    def to_dict(self):
        return {"s": self.s, "p": self.p, "resolutions": self.resolutions, "norm_estimates": self.norm_estimates,
                "power_estimates": self.power_estimates, "variation": self.variation,
                "last_ratio": self.last_ratio, "bounded": self.bounded, "growing": self.growing}


def brownian_sobolev_study(s_values=(0.4, 0.6), p=4.0, resolutions=(256, 512, 1024, 2048), n_paths=200, T=1.0,
                           seed=0, bounded_tol=0.25, growth_factor=1.5):
    """Norm estimates of Brownian paths under grid refinement.

    Paths are generated on the finest grid and subsampled, so every resolution
    sees the same underlying Brownian paths. ``bounded`` means the estimates
    vary by at most ``bounded_tol`` relative to the smallest; ``growing`` means
    the last refinement multiplies the estimate by at least ``growth_factor``.
    """
    finest = max(resolutions)
    g = TimeGrid(0.0, T, finest)
    paths = np.stack([sample_brownian(g, 1, seed, i).values[:, 0] for i in range(n_paths)])
    reports = []
    for s in s_values:
        norms, powers = [], []
        for res in resolutions:
            stride = finest // res
            sub = paths[:, ::stride]
            pw = fractional_sobolev_power(sub, TimeGrid(0.0, T, res), s, p)
            powers.append(float(np.mean(pw)))
            norms.append(float(np.mean(pw ** (1.0 / p))))
        variation = (max(norms) - min(norms)) / min(norms)
        ratio = norms[-1] / norms[-2]
        reports.append(SobolevNormReport(float(s), float(p), list(resolutions), norms, powers, float(variation),
                                         float(ratio), bool(variation <= bounded_tol), bool(ratio >= growth_factor)))
    return reports


# --- regularization convergence ----------------------------------------------

@dataclass
class ConvergenceReport:
    scales: list
    strong: list
    weak: dict
    strong_monotone: bool
    weak_monotone: bool
    C: float
    final_within_C: bool
    weak_slopes: dict
    converged: bool
    M: int

    def rows(self):
        names = sorted(self.weak)
        return [[sc, st] + [self.weak[n][i] for n in names] for i, (sc, st) in enumerate(zip(self.scales, self.strong))]

    def to_dict(self):
        return {"scales": self.scales, "strong": self.strong, "weak": self.weak,
                "strong_monotone": self.strong_monotone, "weak_monotone": self.weak_monotone, "C": self.C,
                "final_within_C": self.final_within_C, "weak_slopes": self.weak_slopes,
                "converged": self.converged, "M": self.M}


def _loglog_slope(x, y):
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    ok = (x > 0) & (y > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(x[ok]), np.log(y[ok]), 1)[0])


def regularization_convergence_study(system, x0, scales, observables, grid, M, base_seed, box, eps=1.0,
                                     quadrature_res=64, spacing_factor=8, workers=1,
                                     chunk_size=8192) -> ConvergenceReport:
    """Couple the raw SDE with its mollified versions on common Brownian drivers.

    ``system`` is ``(VectorField, DiffusionField)`` or a :class:`SlowFastSystem`.
    ``box`` bounds the lattice on which mollified coefficients are tabulated.
    """
    scales = [float(s) for s in scales]
    if any(b >= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly decreasing")
    if isinstance(system, SlowFastSystem):
        f, sig = system.joint_fields()
        eps = 1.0
    else:
        f, sig = system
    x0 = np.asarray(x0, dtype=np.float64).reshape(f.dim)
    systems = [(f, sig)]
    for sc in scales:
        moll = make_mollifier(f.dim, sc, quadrature_res)
        systems.append((mollified_vector_field(f, moll, box, sc / spacing_factor),
                        mollified_diffusion(sig, moll, box, sc / spacing_factor)))
    k = sig.cols
    lo_box, hi_box = (np.broadcast_to(np.asarray(b, dtype=float), (f.dim,)) for b in box)

    def run(lo, hi):
        pids = np.arange(lo, hi)
        xs = [np.array(np.broadcast_to(x0, (hi - lo, f.dim))) for _ in systems]
        sup = np.zeros((len(scales), hi - lo))
        block = 128
        for start in range(0, grid.n_steps, block):
            nb = min(block, grid.n_steps - start)
            dB = brownian_increments(base_seed, pids, start, nb, k, grid.dt)
            for j in range(nb):
                db = dB[:, j, :]
                xs = [em_step(ff, ss, eps, x, db, grid.dt) for (ff, ss), x in zip(systems, xs)]
                for q in range(len(scales)):
                    d = np.linalg.norm(xs[q + 1] - xs[0], axis=1)
                    np.maximum(sup[q], d, out=sup[q])
                for x in xs:
                    if np.any(x < lo_box) or np.any(x > hi_box) or not np.all(np.isfinite(x)):
                        raise DomainEscape(start + j + 1)
        return sup, xs

    parts = map_chunks(run, M, workers, chunk_size)
    sup = np.concatenate([p[0] for p in parts], axis=1)
    finals = [np.concatenate([p[1][q] for p in parts], axis=0) for q in range(len(systems))]
    strong = [float(v) for v in sup.mean(axis=1)]
    weak = {}
    for name, phi in observables.items():
        ref = float(np.mean(phi(finals[0])))
        weak[name] = [abs(float(np.mean(phi(finals[q + 1]))) - ref) for q in range(len(scales))]
    strong_mono = all(b <= a for a, b in zip(strong, strong[1:]))
    weak_mono = all(all(b <= a for a, b in zip(w, w[1:])) for w in weak.values())
    sc = np.array(scales[:-1]) if len(scales) > 1 else np.array(scales)
    st = np.array(strong[:-1]) if len(scales) > 1 else np.array(strong)
    C = float(np.dot(sc, st) / np.dot(sc, sc))
    within = strong[-1] <= C * scales[-1]
    slopes = {name: _loglog_slope(scales, w) for name, w in weak.items()}
    return ConvergenceReport(scales, strong, weak, strong_mono, weak_mono, C, bool(within), slopes,
                             bool(strong_mono and weak_mono and within), M)
