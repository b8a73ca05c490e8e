"""Sampled design diagnostics.

The restricted-eigenvalue constant of a design is a combinatorial quantity;
this module only samples cone directions and reports an optimistic (upper)
estimate. It is a diagnostic, never a certificate, and nothing in the
estimation pipeline enforces it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["REDiagnostic", "sample_restricted_eigenvalue"]


@dataclass(frozen=True)
class REDiagnostic:
    estimate: float
    sparsity: int
    draws: int
    note: str = "diagnostic only, not a certificate"


def sample_restricted_eigenvalue(
    X: np.ndarray,
    s: int,
    draws: int,
    seed: int | None = None,
    extra_directions=None,
) -> REDiagnostic:
    """Minimum of ||X d||_2 / (sqrt(n) ||d_J0||_2) over sampled cone directions.

    Each draw picks a random support J0 of size s and evaluates two
    candidates: a direction supported on J0 only, and a mixed direction
    whose off-support l1 mass is a uniform fraction of the on-support l1
    mass (so it stays inside the cone ||d_{J0^c}||_1 <= ||d_{J0}||_1).
    ``extra_directions`` is an optional iterable of (delta, J0) pairs
    evaluated deterministically in addition to the sampled ones.
    """
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    if not 1 <= s <= p:
        raise ValueError(f"sparsity s={s} must lie in [1, {p}]")
    if draws < 1:
        raise ValueError("draws must be >= 1")
    rng = np.random.default_rng(seed)
    sqrt_n = np.sqrt(n)

    def ratio(delta: np.ndarray, j0: np.ndarray) -> float:
        on = np.linalg.norm(delta[j0])
        if on < 1e-300:
            return np.inf
        return float(np.linalg.norm(X @ delta) / (sqrt_n * on))

    best = np.inf
    for _ in range(draws):
        j0 = rng.choice(p, size=s, replace=False)
        core = rng.standard_normal(s)
        pure = np.zeros(p)
        pure[j0] = core
        best = min(best, ratio(pure, j0))
        if s < p:
            mixed = pure.copy()
            tail = rng.standard_normal(p - s)
            budget = rng.uniform() * np.abs(core).sum()
            l1 = np.abs(tail).sum()
            if l1 > 0:
                comp = np.setdiff1d(np.arange(p), j0, assume_unique=False)
                mixed[comp] = tail * (budget / l1)
            best = min(best, ratio(mixed, j0))
    for delta, j0 in extra_directions or ():
        best = min(best, ratio(np.asarray(delta, dtype=float), np.asarray(j0)))
    return REDiagnostic(estimate=float(best), sparsity=s, draws=draws)
