"""Exception types shared across the package.

The CLI maps these onto exit codes: validation problems exit 2,
numerical non-convergence exits 3, partial sweep failures exit 4.
"""


class ParameterError(ValueError):
    """A parameter or configuration value violates its contract."""


class SingularKickError(ParameterError):
    """The tangent in the Anderson hopping kernel reaches its pole
    (K(1+eps) >= pi*kbar), so the tight-binding expansion is undefined."""


class GridSaturatedError(RuntimeError):
    """Too much probability reached the edge of the momentum grid."""


class NonConvergenceError(RuntimeError):
    """An iterative fit exhausted its iteration budget without converging."""


class RankDeficiencyError(ValueError):
    """A fit has no degrees of freedom left (orders exceed data support)."""


class NonOverlapError(ValueError):
    """Scaling curves share too few lnLambda levels to be collapsed."""


class BootstrapError(RuntimeError):
    """Too many bootstrap refits failed for the intervals to be trusted."""


class SweepFailure(RuntimeError):
    """One or more sweep points failed; the assembled dataset excludes them."""

    def __init__(self, message: str, failed_points: list | None = None):
        super().__init__(message)
        self.failed_points = failed_points or []
