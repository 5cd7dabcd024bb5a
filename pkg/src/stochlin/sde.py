"""Time grids, coefficient fields, Brownian drivers and Euler-Maruyama ensembles.

All simulation is vectorized over paths. A path's Brownian increments depend
only on ``(seed, path_index, step)`` (see :mod:`stochlin.rng`), so ensembles
are bit-identical regardless of chunking or the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainEscape, EmptyEnsemble, NonFinite
from .rng import standard_normals

_BLOCK_FLOATS = 1 << 22


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_end: float
    n_steps: int

    def __post_init__(self):
        if not self.t_end > self.t0:
            raise ValueError("t_end must exceed t0")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise ValueError("n_steps must be a positive integer")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.n_steps + 1) * self.dt

    @property
    def T(self) -> float:
        return self.t_end - self.t0

    def node_at(self, t: float) -> int:
        """Index of the node nearest to time ``t``."""
        i = int(round((t - self.t0) / self.dt))
        if not 0 <= i <= self.n_steps:
            raise ValueError(f"time {t} outside the grid")
        return i

    @classmethod
    def from_dt(cls, t_end, dt, t0=0.0):
        return cls(t0, t_end, int(round((t_end - t0) / dt)))

    def to_dict(self):
        return {"t0": self.t0, "t_end": self.t_end, "n_steps": self.n_steps}


def _as_batch(x, dim):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x.reshape(-1, dim)
    return x2, single


@dataclass
class VectorField:
    """Drift ``f: R^n -> R^n``.

    ``func`` maps a batch of shape ``(B, n)`` to ``(B, n)``. ``jac`` (optional)
    maps a single point ``(n,)`` to the ``(n, n)`` Jacobian. ``domain_box`` is a
    pair of ``(n,)`` arrays ``(lo, hi)`` or ``None`` for all of R^n.
    """

    dim: int
    func: Callable[[np.ndarray], np.ndarray]
    jac: Optional[Callable[[np.ndarray], np.ndarray]] = None
    domain_box: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        if self.domain_box is not None:
            lo, hi = (np.broadcast_to(np.asarray(b, dtype=float), (self.dim,)) for b in self.domain_box)
            self.domain_box = (lo.copy(), hi.copy())

    def __call__(self, x):
        xb, single = _as_batch(x, self.dim)
        out = np.asarray(self.func(xb), dtype=np.float64)
        out = np.broadcast_to(out, xb.shape) if out.shape != xb.shape else out
        return out[0] if single else out

    def jacobian(self, x, h=None):
        """Analytic Jacobian when available, else central differences."""
        x = np.asarray(x, dtype=np.float64).reshape(self.dim)
        if self.jac is not None:
            return np.asarray(self.jac(x), dtype=np.float64).reshape(self.dim, self.dim)
        return fd_jacobian(self, x, h)

    def contains(self, x):
        """Boolean mask over a batch: inside the domain box."""
        xb, single = _as_batch(x, self.dim)
        if self.domain_box is None:
            inside = np.ones(xb.shape[0], dtype=bool)
        else:
            lo, hi = self.domain_box
            inside = np.all((xb >= lo) & (xb <= hi), axis=1)
        return inside[0] if single else inside


def fd_jacobian(f, x, h=None):
    """Central-difference Jacobian with step ``cbrt(eps) * max(1, |x|)``."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if h is None:
        h = np.cbrt(np.finfo(float).eps) * max(1.0, float(np.linalg.norm(x)))
    pts = np.repeat(x[None, :], 2 * n, axis=0)
    idx = np.arange(n)
    pts[idx, idx] += h
    pts[n + idx, idx] -= h
    vals = f(pts)
    return ((vals[:n] - vals[n:]) / (2.0 * h)).T


@dataclass
class DiffusionField:
    """Diffusion ``sigma: R^n -> R^{n x k}``; ``func`` maps ``(B, n)`` to ``(B, n, k)``."""

    rows: int
    cols: int
    func: Callable[[np.ndarray], np.ndarray]
    name: str = ""
    is_constant: bool = False

    def __call__(self, x):
        xb, single = _as_batch(x, self.rows)
        out = np.asarray(self.func(xb), dtype=np.float64)
        shape = (xb.shape[0], self.rows, self.cols)
        if out.shape != shape:
            out = np.broadcast_to(out, shape)
        return out[0] if single else out

    @classmethod
    def constant(cls, matrix, name=""):
        m = np.atleast_2d(np.asarray(matrix, dtype=np.float64))
        return cls(m.shape[0], m.shape[1], lambda x: np.broadcast_to(m, (x.shape[0],) + m.shape),
                   name=name, is_constant=True)


@dataclass
class BrownianPath:
    grid: TimeGrid
    k: int
    increments: np.ndarray  # (n_steps, k)
    seed: int
    path_index: int

    @property
    def values(self) -> np.ndarray:
        """``B`` at every node, starting from the zero vector."""
        out = np.zeros((self.grid.n_steps + 1, self.k))
        np.cumsum(self.increments, axis=0, out=out[1:])
        return out


@dataclass
class SdePath:
    grid: TimeGrid
    states: np.ndarray  # (n_steps + 1, n)
    driver: Optional[BrownianPath] = None

    @property
    def final(self):
        return self.states[-1]


@dataclass
class Ensemble:
    """``M`` paths on one grid, stored at the recorded node indices ``nodes``."""

    grid: TimeGrid
    states: np.ndarray  # (M, len(nodes), n)
    nodes: np.ndarray
    base_seed: int
    path_indices: np.ndarray
    k: int
    system_id: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def M(self) -> int:
        return self.states.shape[0]

    @property
    def full(self) -> bool:
        return len(self.nodes) == self.grid.n_steps + 1

    def at_node(self, node):
        j = np.searchsorted(self.nodes, node)
        if j >= len(self.nodes) or self.nodes[j] != node:
            raise KeyError(f"node {node} was not recorded")
        return self.states[:, j, :]

    @property
    def final(self):
        return self.at_node(self.grid.n_steps)

    def path(self, i) -> SdePath:
        if not self.full:
            raise ValueError("ensemble does not store full paths")
        driver = sample_brownian(self.grid, self.k, self.base_seed, int(self.path_indices[i]))
        return SdePath(self.grid, self.states[i], driver)

    @property
    def paths(self):
        return [self.path(i) for i in range(self.M)]


def sample_brownian(grid: TimeGrid, k: int, seed: int, path_index: int) -> BrownianPath:
    """Brownian increments for one substream ``(seed, path_index)``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    z = standard_normals(seed, [path_index], 0, grid.n_steps, k)[0]
    return BrownianPath(grid, k, z * np.sqrt(grid.dt), int(seed), int(path_index))


def brownian_increments(seed, path_indices, step0, n_steps, k, dt):
    """Increments ``(P, n_steps, k)`` for many substreams at once."""
    return standard_normals(seed, path_indices, step0, n_steps, k) * np.sqrt(dt)


def em_step(f, sigma, eps, x, db, dt):
    """One Euler-Maruyama update for a batch of states."""
    s = sigma(x)
    if s.shape[1] == 1 and s.shape[2] == 1:
        noise = s[:, :, 0] * db
    else:
        noise = np.einsum("pnk,pk->pn", s, db)
    return x + f(x) * dt + eps * noise


def _check_states(f, x, node, path_indices, check_domain):
    bad = ~np.all(np.isfinite(x), axis=1)
    if bad.any():
        p = int(np.flatnonzero(bad)[0])
        raise NonFinite(node, None if path_indices is None else int(path_indices[p]))
    if check_domain and f.domain_box is not None:
        out = ~f.contains(x)
        if out.any():
            p = int(np.flatnonzero(out)[0])
            raise DomainEscape(node, None if path_indices is None else int(path_indices[p]), x[p].copy())


def _resolve_nodes(grid, record):
    if record is None or (isinstance(record, str) and record == "all"):
        return np.arange(grid.n_steps + 1)
    if isinstance(record, str) and record == "final":
        return np.array([grid.n_steps])
    nodes = np.unique(np.asarray(record, dtype=int))
    if nodes.size and (nodes[0] < 0 or nodes[-1] > grid.n_steps):
        raise ValueError("recorded nodes outside the grid")
    return nodes


def integrate(f, sigma, eps, x0, grid, seed, path_indices, record=None, observer=None,
              increments=None, check_domain=True):
    """Euler-Maruyama for a batch of paths driven by counter-based substreams.

    Parameters
    ----------
    x0 : array_like
        ``(n,)`` shared initial condition or ``(P, n)``.
    record : None, "final" or sequence of int
        Node indices to store (``None`` stores every node).
    observer : callable, optional
        ``observer(i, x_i, dB_i)`` is called before each update and once more
        with ``(n_steps, x_N, None)``. Must not modify ``x_i``.
    increments : ndarray, optional
        ``(P, n_steps, k)`` increments to use instead of generating them.

    Returns
    -------
    states : ndarray ``(P, len(nodes), n)``
    nodes : ndarray
    """
    path_indices = np.asarray(path_indices, dtype=np.uint64)
    P = path_indices.shape[0] if increments is None else increments.shape[0]
    n, k = f.dim, sigma.cols
    x = np.array(np.broadcast_to(np.asarray(x0, dtype=np.float64), (P, n)))
    nodes = _resolve_nodes(grid, record)
    slot = {int(v): j for j, v in enumerate(nodes)}
    out = np.empty((P, len(nodes), n))
    dt = grid.dt
    _check_states(f, x, 0, path_indices, check_domain)
    block = max(1, min(256, _BLOCK_FLOATS // max(1, P * k)))
    for start in range(0, grid.n_steps, block):
        nb = min(block, grid.n_steps - start)
        if increments is None:
            dB = brownian_increments(seed, path_indices, start, nb, k, dt)
        else:
            dB = increments[:, start:start + nb, :]
        for j in range(nb):
            i = start + j
            if i in slot:
                out[:, slot[i], :] = x
            db = dB[:, j, :]
            if observer is not None:
                observer(i, x, db)
            x = em_step(f, sigma, eps, x, db, dt)
            _check_states(f, x, i + 1, path_indices, check_domain)
    if grid.n_steps in slot:
        out[:, slot[grid.n_steps], :] = x
    if observer is not None:
        observer(grid.n_steps, x, None)
    return out, nodes


def euler_maruyama(f: VectorField, sigma: DiffusionField, eps: float, x0, driver: BrownianPath) -> SdePath:
    """Single-path Euler-Maruyama on the stored increments of ``driver``."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if not (f.dim == sigma.rows == x0.shape[0]):
        raise ValueError("dimension mismatch between drift, diffusion and x0")
    if driver.k != sigma.cols:
        raise ValueError("driver dimension does not match diffusion columns")
    states, _ = integrate(f, sigma, eps, x0, driver.grid, driver.seed, [driver.path_index],
                          increments=driver.increments[None, :, :])
    states = states[0]
    return SdePath(driver.grid, states, driver)


def chunk_ranges(M, chunk_size):
    return [(a, min(M, a + chunk_size)) for a in range(0, M, chunk_size)]


def map_chunks(fn, M, workers=1, chunk_size=16384):
    """Apply ``fn(lo, hi)`` over fixed path chunks; results come back in path order.

    Chunk boundaries do not depend on ``workers``, so output is identical for
    any thread count.
    """
    ranges = chunk_ranges(M, chunk_size)
    if workers <= 1 or len(ranges) == 1:
        return [fn(lo, hi) for lo, hi in ranges]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(fn, lo, hi) for lo, hi in ranges]
        return [fut.result() for fut in futures]


def simulate_ensemble(f, sigma, eps, x0, grid, M, base_seed, record=None, workers=1,
                      chunk_size=16384, system_id="", check_domain=True):
    """Simulate ``M`` independent paths with substreams ``0 .. M-1`` of ``base_seed``.

    ``x0`` is either shared ``(n,)`` or per path ``(M, n)``.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    x0 = np.asarray(x0, dtype=np.float64)
    per_path = x0.ndim == 2
    if per_path and x0.shape[0] != M:
        raise ValueError("per-path initial conditions must have M rows")
    if not (f.dim == sigma.rows == x0.shape[-1]):
        raise ValueError("dimension mismatch between drift, diffusion and x0")
    x0 = x0 if per_path else x0.reshape(-1)
    nodes = _resolve_nodes(grid, record)

    def run(lo, hi):
        start = x0[lo:hi] if per_path else x0
        states, _ = integrate(f, sigma, eps, start, grid, base_seed, np.arange(lo, hi),
                              record=nodes, check_domain=check_domain)
        return states

    parts = map_chunks(run, M, workers, chunk_size)
    states = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
    return Ensemble(grid, states, nodes, int(base_seed), np.arange(M), sigma.cols, system_id)


@dataclass
class MCEstimate:
    mean: float
    std_error: float
    M: int

    def to_dict(self):
        return {"mean": self.mean, "std_error": self.std_error, "M": self.M}


def mc_mean(values, weights=None):
    """Mean of ``w_i * phi_i`` normalised by ``M`` (not by the weight sum)."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    m = values.shape[0]
    if m == 0:
        raise EmptyEnsemble("cannot estimate from an empty ensemble")
    if weights is not None:
        weights = np.asarray(weights, dtype=np.float64).reshape(-1)
        if weights.shape[0] != m:
            raise ValueError("weights must have one entry per path")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        values = weights * values
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / np.sqrt(m)) if m > 1 else float("nan")
    return MCEstimate(mean, se, m)


def terminal(phi):
    """Observable acting on the final recorded state: ``phi((M, n)) -> (M,)``."""

    def observable(states):
        return phi(states[:, -1, :])

    return observable


def mc_estimate(ensemble: Ensemble, observable, weights=None) -> MCEstimate:
    """Monte Carlo estimate of ``E[w * phi(path)]``.

    ``observable`` receives the stored states ``(M, len(nodes), n)`` and
    returns one value per path.
    """
    if ensemble.M == 0:
        raise EmptyEnsemble("cannot estimate from an empty ensemble")
    return mc_mean(observable(ensemble.states), weights)
