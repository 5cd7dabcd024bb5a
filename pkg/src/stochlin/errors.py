"""Exception hierarchy shared by all modules."""


class StochLinError(Exception):
    """Base class for errors raised by this package."""


class DomainEscape(StochLinError):
    def __init__(self, node, path_index=None, state=None):
        self.node = node
        self.path_index = path_index
        self.state = state
        where = f"node {node}" + (f", path {path_index}" if path_index is not None else "")
        super().__init__(f"state left the domain box at {where}")


class NonFinite(StochLinError):
    def __init__(self, node, path_index=None, what="state"):
        self.node = node
        self.path_index = path_index
        where = f"node {node}" + (f", path {path_index}" if path_index is not None else "")
        super().__init__(f"non-finite {what} at {where}")


class EmptyEnsemble(StochLinError):
    pass


class NoConvergence(StochLinError):
    def __init__(self, best_iterate, residual_norm, iterations):
        self.best_iterate = best_iterate
        self.residual_norm = residual_norm
        self.iterations = iterations
        super().__init__(
            f"Newton did not converge in {iterations} iterations "
            f"(best residual {residual_norm:.3e})"
        )


class SingularJacobian(StochLinError):
    def __init__(self, iterate):
        self.iterate = iterate
        super().__init__("Jacobian is rank deficient at the Newton iterate")


class EigenSolverFailure(StochLinError):
    pass


class IllConditioned(StochLinError):
    def __init__(self, node, condition_number, path_index=None):
        self.node = node
        self.condition_number = condition_number
        self.path_index = path_index
        super().__init__(f"diffusion matrix ill-conditioned at node {node} (cond={condition_number:.3e})")


class RangeConditionViolated(StochLinError):
    """Remainder does not lie in the image of the frozen diffusion matrix."""

    def __init__(self, node, residual, path_index=None):
        self.node = node
        self.residual = residual
        self.path_index = path_index
        super().__init__(f"remainder outside Im(sigma(x0)) at node {node} (residual {residual:.3e})")


class DegenerateWeights(StochLinError):
    def __init__(self, ess, m):
        self.ess = ess
        self.m = m
        super().__init__(f"effective sample size {ess:.1f} is below 1% of M={m}")


class ContinuationBreak(StochLinError):
    def __init__(self, index, y, partial):
        self.index = index
        self.y = y
        self.partial = partial
        super().__init__(f"slow-manifold continuation failed at sample {index} (y={y})")


class StiffnessViolation(StochLinError):
    def __init__(self, dt, stability_dt):
        self.dt = dt
        self.stability_dt = stability_dt
        super().__init__(f"dt={dt:.3e} exceeds the explicit stability bound {stability_dt:.3e}")


class InsufficientExits(StochLinError):
    pass


class LyapunovSolveFailure(StochLinError):
    pass


class QuadratureUnderresolved(StochLinError):
    pass


class SupportEscape(StochLinError):
    pass


class ConfigError(StochLinError):
    pass
