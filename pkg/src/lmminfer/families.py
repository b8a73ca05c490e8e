"""Canonical exponential families for the generalized extension.

Only the mean function b' (inverse canonical link) and its derivative b''
enter the estimators and the test statistic; normalizing constants of the
density never appear.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

__all__ = ["ExponentialFamily", "GAUSSIAN", "BERNOULLI_LOGIT", "POISSON_LOG", "family_by_name"]


@dataclass(frozen=True)
class ExponentialFamily:
    name: str
    bprime: Callable[[np.ndarray], np.ndarray]
    bdoubleprime: Callable[[np.ndarray], np.ndarray]

    def __repr__(self) -> str:  # keep solver diagnostics compact
        return f"ExponentialFamily({self.name})"


def _logit_var(eta: np.ndarray) -> np.ndarray:
    mu = expit(eta)
    return mu * (1.0 - mu)


GAUSSIAN = ExponentialFamily("gaussian", lambda eta: np.asarray(eta, dtype=float), lambda eta: np.ones_like(np.asarray(eta, dtype=float)))
BERNOULLI_LOGIT = ExponentialFamily("bernoulli_logit", expit, _logit_var)
POISSON_LOG = ExponentialFamily("poisson_log", np.exp, np.exp)

_REGISTRY = {
    "gaussian": GAUSSIAN,
    "bernoulli": BERNOULLI_LOGIT,
    "bernoulli_logit": BERNOULLI_LOGIT,
    "logit": BERNOULLI_LOGIT,
    "poisson": POISSON_LOG,
    "poisson_log": POISSON_LOG,
}


def family_by_name(name: str) -> ExponentialFamily:
    try:
        return _REGISTRY[name.lower()]
    except KeyError:
        raise ValueError(f"unknown family {name!r}; choose from {sorted(set(_REGISTRY))}") from None
