"""Error taxonomy and the exit-code contract shared by CLI and service."""

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_HYPOTHESIS = 2
EXIT_NUMERICAL = 3
EXIT_INCONCLUSIVE = 4


class AttractorDimError(Exception):
    """Base class; carries the process exit code for the CLI."""

    exit_code = EXIT_NUMERICAL


class ConfigError(AttractorDimError):
    """Malformed or invalid experiment configuration."""

    exit_code = EXIT_USAGE

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class MissingConstantError(ConfigError):
    """A required named constant (or its provenance) is absent."""


class DomainError(AttractorDimError):
    """Invalid domain, field, or operator construction."""


class GridMismatchError(DomainError):
    """Operands live on different grids."""


class OverflowNodeError(AttractorDimError):
    """Pointwise nonlinearity evaluation produced a non-finite value."""

    def __init__(self, node_index, coords, order):
        self.node_index = int(node_index)
        self.coords = tuple(float(c) for c in coords)
        self.order = int(order)
        super().__init__(
            f"non-finite nonlinearity value (order {order}) at node "
            f"{self.node_index}, x={self.coords}"
        )


class NumericalError(AttractorDimError):
    """Solver breakdown: non-convergence, singularity, rank collapse."""


class LinearSolveError(NumericalError):
    """Iterative or direct linear solve did not reach its tolerance."""


class EigensolverError(NumericalError):
    """Eigenvalue computation failed to converge or verify."""


class SingularJacobianError(NumericalError):
    """Newton Jacobian was numerically singular."""


class DegenerateBundleError(NumericalError):
    """Tangent bundle lost rank (vanishing QR diagonal)."""


class BlowUpError(NumericalError):
    """Trajectory exceeded the blow-up threshold."""

    def __init__(self, time, norm, threshold):
        self.time = float(time)
        self.norm = float(norm)
        self.threshold = float(threshold)
        super().__init__(
            f"solution norm {norm:.3e} exceeded blow-up threshold "
            f"{threshold:.3e}; last finite time t={time:.6g}"
        )


class HypothesisViolationError(AttractorDimError):
    """A structural hypothesis fails on this instance; bounds refuse to run."""

    exit_code = EXIT_HYPOTHESIS

    def __init__(self, message, value=None, witness=None):
        self.value = value
        self.witness = witness
        super().__init__(message)
