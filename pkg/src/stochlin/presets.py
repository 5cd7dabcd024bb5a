"""Named test systems used by the examples, the tests and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .expr import compile_matrix, compile_vector
from .sde import DiffusionField, VectorField
from .slowfast import SlowFastSystem


def cubic():
    """``f(x) = x - x^3`` with ``sigma(x) = 1 + 0.1 sin(x)``."""
    f = VectorField(1, lambda x: x - x**3, jac=lambda x: np.array([[1.0 - 3.0 * x[0] ** 2]]), name="cubic")
    s = DiffusionField(1, 1, lambda x: (1.0 + 0.1 * np.sin(x))[:, :, None], name="1+0.1sin")
    return f, s


def cubic_unit_noise():
    f, _ = cubic()
    return f, DiffusionField.constant([[1.0]], name="1")


def linear(a=-1.0):
    """``f(x) = a x`` with unit noise; its remainder is identically zero."""
    A = np.array([[float(a)]])
    f = VectorField(1, lambda x: x @ A.T, jac=lambda x: A, name="linear")
    return f, DiffusionField.constant([[1.0]], name="1")


def rotation():
    """``f(x, y) = (y, -x)``: centre at the origin."""
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    f = VectorField(2, lambda x: x @ J.T, jac=lambda x: J, name="rotation")
    return f, DiffusionField.constant(np.eye(2), name="I")


def ou(theta=1.0, s=1.0):
    f = VectorField(1, lambda x: -theta * x, jac=lambda x: np.array([[-theta]]), name="ou")
    return f, DiffusionField.constant([[s]], name=str(s))


def brownian():
    f = VectorField(1, lambda x: np.zeros_like(x), jac=lambda x: np.zeros((1, 1)), name="zero")
    return f, DiffusionField.constant([[1.0]], name="1")


def frozen():
    """No drift and no noise: the law of ``X_t`` is a point mass."""
    f = VectorField(1, lambda x: np.zeros_like(x), jac=lambda x: np.zeros((1, 1)), name="zero")
    return f, DiffusionField.constant([[0.0]], name="0")


def w2inf():
    """``f(x) = -x + x|x| / 2``; ``f'`` is Lipschitz and ``f''`` jumps at 0."""
    f = VectorField(1, lambda x: -x + 0.5 * x * np.abs(x),
                    jac=lambda x: np.array([[-1.0 + np.abs(x[0])]]), name="w2inf")
    return f, DiffusionField.constant([[1.0]], name="1")


def degenerate_2x1():
    """Two states driven by one noise through ``sigma = (1, 0)^T``."""
    f = VectorField(2, lambda x: np.stack([-x[:, 0] - x[:, 0] ** 2, -x[:, 1]], axis=1), name="degenerate")
    return f, DiffusionField.constant([[1.0], [0.0]], name="e1")


PLAIN = {
    "cubic": cubic,
    "cubic_unit_noise": cubic_unit_noise,
    "linear": linear,
    "rotation": rotation,
    "ou": ou,
    "brownian": brownian,
    "frozen": frozen,
    "w2inf": w2inf,
    "degenerate_2x1": degenerate_2x1,
}


def _scalar_sf(f, g, F, G, eps, sigma, rho, name, fx):
    return SlowFastSystem(
        1, 1, 1,
        f=f, g=g,
        F=lambda x, y: np.broadcast_to(F, (x.shape[0], 1, 1)),
        G=lambda x, y: np.broadcast_to(G, (x.shape[0], 1, 1)),
        eps=eps, sigma=sigma, rho=rho, name=name, fx=fx,
    )


def slowfast_linear(eps=0.01, sigma=0.1, rho=0.0, slow_rate=0.0):
    """``f = -(x - y)``, ``F = 1``, ``g = -slow_rate * y``, ``G = 0``."""
    return _scalar_sf(lambda x, y: -(x - y), lambda x, y: -slow_rate * y, 1.0, 0.0, eps, sigma, rho,
                      "slowfast_linear", lambda x, y: np.array([[-1.0]]))


def slowfast_cubic(eps=0.01, sigma=0.1, rho=0.0):
    """``f = -x^3 - x + y``: unique attracting branch for every ``y``."""
    return _scalar_sf(lambda x, y: -x**3 - x + y, lambda x, y: np.zeros_like(y), 1.0, 0.0, eps, sigma, rho,
                      "slowfast_cubic", lambda x, y: np.array([[-3.0 * x[0] ** 2 - 1.0]]))


def slowfast_fold(eps=0.01, sigma=0.1, rho=0.0):
    """``f = y - x^2``: the attracting branch ``x = sqrt(y)`` folds at ``y = 0``."""
    return _scalar_sf(lambda x, y: y - x**2, lambda x, y: np.zeros_like(y), 1.0, 0.0, eps, sigma, rho,
                      "slowfast_fold", lambda x, y: np.array([[-2.0 * x[0]]]))


SLOWFAST = {
    "slowfast_linear": slowfast_linear,
    "slowfast_cubic": slowfast_cubic,
    "slowfast_fold": slowfast_fold,
}


def _build(table, name, params):
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; known: {sorted(table)}")
    try:
        return table[name](**params)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for preset {name!r}: {exc}") from None


def plain_system(name, **params):
    return _build(PLAIN, name, params)


def slowfast_system(name, **params):
    return _build(SLOWFAST, name, params)


def system_from_expressions(drift, diffusion, name="custom"):
    """Build fields from expression strings over ``x1 .. xn``.

    ``drift`` is a list of ``n`` strings and ``diffusion`` an ``n x k`` nested
    list.
    """
    n = len(drift)
    names = [f"x{i + 1}" for i in range(n)]
    f = VectorField(n, compile_vector(drift, names), name=name)
    if len(diffusion) != n:
        raise ConfigError("diffusion must have one row per state")
    k = len(diffusion[0])
    s = DiffusionField(n, k, compile_matrix(diffusion, names), name=f"{name}:sigma")
    return f, s


def slowfast_from_expressions(fast, slow, F, G, eps, sigma, rho=1.0, name="custom"):
    """Slow-fast system from expressions over ``x1 .. xn`` and ``y1 .. ym``."""
    n, m = len(fast), len(slow)
    names = [f"x{i + 1}" for i in range(n)] + [f"y{j + 1}" for j in range(m)]
    fv, gv = compile_vector(fast, names), compile_vector(slow, names)
    Fm, Gm = compile_matrix(F, names), compile_matrix(G, names)
    if len(F) != n or len(G) != m or len(F[0]) != len(G[0]):
        raise ConfigError("F must be n x k and G must be m x k with the same k")
    k = len(F[0])

    def joint(fn):
        return lambda x, y: fn(np.concatenate([x, y], axis=1))

    return SlowFastSystem(n, m, k, joint(fv), joint(gv), joint(Fm), joint(Gm), eps, sigma, rho, name)
