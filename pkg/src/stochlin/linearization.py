"""Fixed points, hyperbolicity and the linear part of the drift.

The drift is split exactly as ``f(x) = A (x - x0) + r(x)`` with
``A = Df(x0)`` and ``r(x) = f(x) - f(x0) - A (x - x0)``; no mean-value point
is chosen for the quadratic term.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EigenSolverFailure, NoConvergence, SingularJacobian
from .sde import DiffusionField, VectorField

HYPERBOLICITY_TOL = 1e-8


class Classification(str, enum.Enum):
    STABLE = "StableHyperbolic"
    UNSTABLE = "UnstableHyperbolic"
    SADDLE = "Saddle"
    NON_HYPERBOLIC = "NonHyperbolic"


def _eigvals(A):
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    try:
        return np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise EigenSolverFailure(str(exc)) from exc


def classify_spectrum(eigenvalues, hyperbolicity_tol=HYPERBOLICITY_TOL):
    re = np.real(np.asarray(eigenvalues))
    if np.any(np.abs(re) <= hyperbolicity_tol):
        return Classification.NON_HYPERBOLIC
    if np.all(re < 0):
        return Classification.STABLE
    if np.all(re > 0):
        return Classification.UNSTABLE
    return Classification.SADDLE


def classify_hyperbolicity(A, hyperbolicity_tol=HYPERBOLICITY_TOL) -> Classification:
    return classify_spectrum(_eigvals(A), hyperbolicity_tol)


@dataclass
class FixedPoint:
    location: np.ndarray
    residual_norm: float
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    classification: Classification
    iterations: int = 0

    def to_dict(self):
        return {
            "location": [float(v) for v in self.location],
            "residual_norm": float(self.residual_norm),
            "jacobian": [[float(v) for v in row] for row in self.jacobian],
            "eigenvalues": [[float(np.real(z)), float(np.imag(z))] for z in _sorted_eigs(self.eigenvalues)],
            "classification": self.classification.value,
            "iterations": self.iterations,
        }


def _sorted_eigs(ev):
    ev = np.asarray(ev)
    order = np.lexsort((np.imag(ev), np.real(ev)))
    return ev[order]


def find_fixed_point(f: VectorField, x_init, tol=1e-12, max_iter=50,
                     hyperbolicity_tol=HYPERBOLICITY_TOL) -> FixedPoint:
    """Newton iteration for ``f(x) = 0``.

    Uses ``f.jac`` when available and central differences otherwise. A
    rank-deficient Newton matrix triggers one least-squares (pseudo-inverse)
    step; a second one raises :class:`SingularJacobian`.
    """
    x = np.asarray(x_init, dtype=np.float64).reshape(f.dim).copy()
    if not f.contains(x):
        raise ValueError("initial guess outside the domain box")
    fx = f(x)
    best_x, best_r = x.copy(), float(np.linalg.norm(fx))
    used_pinv = False
    for it in range(max_iter + 1):
        r = float(np.linalg.norm(fx))
        if r < best_r:
            best_x, best_r = x.copy(), r
        if r <= tol:
            J = f.jacobian(x)
            ev = _eigvals(J)
            return FixedPoint(x, r, J, ev, classify_spectrum(ev, hyperbolicity_tol), it)
        if it == max_iter:
            break
        J = f.jacobian(x)
        if np.linalg.matrix_rank(J) < f.dim:
            if used_pinv:
                raise SingularJacobian(x.copy())
            used_pinv = True
            step = np.linalg.lstsq(J, -fx, rcond=None)[0]
        else:
            step = np.linalg.solve(J, -fx)
        x = x + step
        fx = f(x)
        if not np.all(np.isfinite(fx)):
            break
    raise NoConvergence(best_x, best_r, max_iter)


@dataclass
class LinearizedSystem:
    """``dz = A z dt + eps sigma(x0 + z) dW`` around ``origin``."""

    origin: np.ndarray
    A: np.ndarray
    drift: VectorField
    sigma: DiffusionField
    f_origin: np.ndarray
    remainder_func: Callable | None = None

    def remainder(self, x):
        """``r(x) = f(x) - f(x0) - A (x - x0)`` for a point or a batch."""
        if self.remainder_func is not None:
            return self.remainder_func(np.asarray(x, dtype=np.float64))
        x = np.asarray(x, dtype=np.float64)
        z = x - self.origin
        return self.drift(x) - self.f_origin - z @ self.A.T

    def shifted_diffusion(self) -> DiffusionField:
        s, x0 = self.sigma, self.origin
        return DiffusionField(s.rows, s.cols, lambda z: s(z + x0), name=f"{s.name}@shift",
                              is_constant=s.is_constant)

    def linear_drift(self) -> VectorField:
        """Drift of the linear SDE in shifted coordinates ``z = x - x0``."""
        A = self.A
        return VectorField(self.A.shape[0], lambda z: z @ A.T, jac=lambda z: A, name="linear")

    def to_dict(self):
        ev = np.linalg.eigvals(self.A)
        return {
            "origin": [float(v) for v in self.origin],
            "A": [[float(v) for v in row] for row in self.A],
            "eigenvalues": [[float(np.real(z)), float(np.imag(z))] for z in _sorted_eigs(ev)],
            "classification": classify_spectrum(ev).value,
        }


def linearize(f: VectorField, sigma: DiffusionField, fp: FixedPoint) -> LinearizedSystem:
    x0 = np.asarray(fp.location, dtype=np.float64).copy()
    return LinearizedSystem(x0, np.asarray(fp.jacobian, dtype=np.float64).copy(), f, sigma,
                            np.asarray(f(x0), dtype=np.float64))


def quadratic_ratios(linsys: LinearizedSystem, radii=(1e-1, 1e-2, 1e-3), n_dirs=16, seed=0):
    """``max_u |r(x0 + rho u)| / rho^2`` over random unit directions, per radius."""
    n = linsys.origin.shape[0]
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_dirs, n))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    out = []
    for rho in radii:
        r = linsys.remainder(linsys.origin + rho * u)
        out.append(float(np.max(np.linalg.norm(r, axis=1)) / rho**2))
    return np.array(out)
