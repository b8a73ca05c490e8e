"""Dense linear programming layer.

All constrained-L1 estimators reduce to LPs of the form

    min c^T x   s.t.  A x <= b,  x >= 0.

Solving is delegated to HiGHS dual simplex (through scipy), which returns
vertex solutions deterministically; optimality is double-checked here by
direct substitution of the returned point into the constraints. The
surrounding code never relies on solver internals beyond this contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from .errors import UnboundedProgram

__all__ = ["LinearProgram", "LpSolution", "SolverStatus", "lp_solve"]


class SolverStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    ITERATION_LIMIT = "iteration_limit"


@dataclass(frozen=True)
class LinearProgram:
    """min c^T x subject to A x <= b and x >= 0."""

    c: np.ndarray
    A: np.ndarray
    b: np.ndarray

    def __init__(self, c, A, b):
        c = np.asarray(c, dtype=float).ravel()
        A = np.atleast_2d(np.asarray(A, dtype=float))
        b = np.asarray(b, dtype=float).ravel()
        if A.shape != (b.shape[0], c.shape[0]):
            raise ValueError(
                f"shape mismatch: A is {A.shape}, c has {c.shape[0]} entries, "
                f"b has {b.shape[0]}"
            )
        for name, arr in (("c", c), ("A", A), ("b", b)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite entries")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_constraints(self) -> int:
        return self.b.shape[0]

    def max_violation(self, x: np.ndarray) -> float:
        """Largest constraint violation at x (0 means strictly feasible)."""
        viol = self.A @ x - self.b
        return float(max(viol.max(initial=0.0), (-x).max(initial=0.0)))


@dataclass(frozen=True)
class LpSolution:
    x: np.ndarray | None
    objective: float | None
    status: SolverStatus
    max_violation: float | None
    iterations: int


def lp_solve(lp: LinearProgram, tol: float = 1e-9, maxiter: int | None = None) -> LpSolution:
    """Solve the LP to a vertex optimum.

    ``maxiter`` defaults to 50 * (#vars + #constraints). Feasibility of a
    reported optimum is verified by substitution; the acceptable violation
    is 1e-8 * (1 + ||b||_inf).
    """
    if maxiter is None:
        maxiter = 50 * (lp.n_vars + lp.n_constraints)
    res = linprog(
        lp.c,
        A_ub=lp.A,
        b_ub=lp.b,
        bounds=(0, None),
        method="highs-ds",
        options={
            "maxiter": int(maxiter),
            "primal_feasibility_tolerance": min(tol, 1e-9),
            "dual_feasibility_tolerance": min(tol, 1e-9),
        },
    )
    nit = int(getattr(res, "nit", 0) or 0)
    if res.status == 2:
        return LpSolution(None, None, SolverStatus.INFEASIBLE, None, nit)
    if res.status == 1:
        x = np.asarray(res.x, dtype=float) if res.x is not None else None
        viol = lp.max_violation(x) if x is not None else None
        obj = float(lp.c @ x) if x is not None else None
        return LpSolution(x, obj, SolverStatus.ITERATION_LIMIT, viol, nit)
    if res.status == 3:
        raise UnboundedProgram("linear program is unbounded below")
    if res.status != 0 or res.x is None:
        raise ArithmeticError(f"LP solver failed: status={res.status} ({res.message})")
    x = np.asarray(res.x, dtype=float)
    viol = lp.max_violation(x)
    limit = 1e-8 * (1.0 + float(np.abs(lp.b).max(initial=0.0)))
    if viol > limit:
        raise ArithmeticError(
            f"solver reported optimal but violation {viol:.3e} exceeds {limit:.3e}"
        )
    return LpSolution(x, float(lp.c @ x), SolverStatus.OPTIMAL, viol, nit)
