"""Exception types shared across the package.

Every error raised on a documented failure path derives from
:class:`LmmError` so callers can catch the package's failures with a
single except clause. The CLI maps these onto stable exit codes.
"""

from __future__ import annotations


class LmmError(Exception):
    """Base class for all errors raised by this package."""


class ZeroColumn(LmmError):
    """A design column has (numerically) zero norm and cannot be standardized."""

    def __init__(self, index: int, norm: float):
        self.index = index
        self.norm = norm
        super().__init__(f"design column {index} has norm {norm:.3e} < 1e-12")


class SingularBlock(LmmError):
    """A per-group block could not be inverted reliably."""

    def __init__(self, group: int, cond: float | None = None):
        self.group = group
        self.cond = cond
        detail = f" (condition number {cond:.3e})" if cond is not None else ""
        super().__init__(f"block for group {group} is numerically singular{detail}")


class NonPD(LmmError):
    """A matrix required to be symmetric positive definite is not."""

    def __init__(self, what: str = "psi"):
        self.what = what
        super().__init__(f"{what} is not symmetric positive definite")


class LayoutMismatch(LmmError):
    """Block layouts of the operands do not agree."""


class UnboundedProgram(LmmError):
    """The linear program is unbounded below (cannot happen for L1 objectives)."""


class InfeasibleError(LmmError):
    """A constrained-L1 problem has an empty feasible region.

    ``diagnosis`` maps each constraint family to the amount of slack a
    feasibility phase needed to make that family satisfiable; families
    with positive slack are the binding ones.
    """

    def __init__(self, problem: str, diagnosis: dict[str, float] | None = None):
        self.problem = problem
        self.diagnosis = diagnosis or {}
        binding = ", ".join(
            f"{k}: +{v:.3e}" for k, v in self.diagnosis.items() if v > 1e-10
        )
        msg = f"constrained-L1 problem '{problem}' infeasible"
        if binding:
            msg += f"; binding families: {binding}"
        super().__init__(msg)


class DegenerateScale(LmmError):
    """Residual scale collapsed below 1e-10 on non-degenerate data."""


class DegenerateVariance(LmmError):
    """A variance estimate entering the test statistic is numerically zero."""


class CollinearZ(LmmError):
    """The tested covariate is explained exactly by the nuisance design."""


class NoSignChange(LmmError):
    """Confidence-interval bracket never crosses the critical value.

    Carries the side that failed and the best one-sided bound found.
    """

    def __init__(self, side: str, bound: float):
        self.side = side
        self.bound = bound
        super().__init__(
            f"no sign change on the {side} side of the bracket; "
            f"one-sided bound at {bound:.6g}"
        )


class NotPositiveDefinite(LmmError):
    """A requested covariance design is not positive definite."""

    def __init__(self, design: str, rho: float):
        self.design = design
        self.rho = rho
        super().__init__(f"{design} covariance with rho={rho} is not positive definite")


class SparsityOverflow(LmmError):
    """Requested sparsity cannot be placed inside p coordinates."""


class SingularSubmatrix(LmmError):
    """Submatrix solve for the feature-regression oracle failed."""


class ProxyNotInvertible(LmmError):
    """Random-effect prediction in proxy mode needs an invertible M."""


class SchemaError(LmmError):
    """CSV input does not match the documented schema.

    ``code`` is a short machine-readable identifier printed by the CLI.
    """

    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)
