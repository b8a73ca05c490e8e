"""Tuning recipes for the two constrained-L1 problems.

The defaults follow the simulation-calibrated recipe: residual scales come
from scaled-lasso initializers, the gradient bound and the sup-norm bound
are multiples of that scale, and the correlation floor is five percent of
the quadratic form of the raw (pseudo-)response. The recipe also yields a
data-free default proxy block M = 2/(3q) I.

Residual scales are root-mean-square (per observation): the scale entering
the eta/mu multiples is ||resid||_2 / sqrt(n). The unnormalized reading of
the recipe makes the sup-norm bound grow like sqrt(n) and was rejected
after a size/power calibration study; see the package README.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np

from .blockdiag import BlockDiagMatrix
from .data import GroupedDataset, ProxySpec
from .errors import DegenerateScale
from .families import ExponentialFamily
from .scaled_lasso import ScaledLassoResult, default_lambda0, scaled_lasso

__all__ = ["TuningParams", "DefaultTuning", "default_tuning", "default_tuning_glmm"]


@dataclass(frozen=True)
class TuningParams:
    """The seven tuning scalars of the two constrained-L1 problems.

    All entries must be finite and non-negative; zeros arise only on
    degenerate (all-zero) data and keep the trivial solution feasible.
    """

    eta_gamma: float
    etabar_gamma: float
    mu_gamma: float
    eta_theta: float
    eta_theta_prime: float
    etabar_theta: float
    mu_theta: float

    def __post_init__(self):
        for name, value in self.__dict__.items():
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"tuning parameter {name}={value} must be finite and >= 0")

    def scaled(self, eta: float = 1.0, mu: float = 1.0, etabar: float = 1.0) -> "TuningParams":
        """Multiply the eta family, the mu family and the etabar family."""
        return replace(
            self,
            eta_gamma=self.eta_gamma * eta,
            eta_theta=self.eta_theta * eta,
            eta_theta_prime=self.eta_theta_prime * eta,
            mu_gamma=self.mu_gamma * mu,
            mu_theta=self.mu_theta * mu,
            etabar_gamma=self.etabar_gamma * etabar,
            etabar_theta=self.etabar_theta * etabar,
        )

    def relax_gamma(self, factor: float = 1.5) -> "TuningParams":
        return replace(
            self,
            eta_gamma=self.eta_gamma * factor,
            mu_gamma=self.mu_gamma * factor,
            etabar_gamma=self.etabar_gamma / 2.0,
        )

    def relax_theta(self, factor: float = 1.5) -> "TuningParams":
        return replace(
            self,
            eta_theta=self.eta_theta * factor,
            eta_theta_prime=self.eta_theta_prime * factor,
            mu_theta=self.mu_theta * factor,
            etabar_theta=self.etabar_theta / 2.0,
        )

    def as_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


@dataclass(frozen=True)
class DefaultTuning:
    tuning: TuningParams
    gamma_init: ScaledLassoResult
    theta_init: ScaledLassoResult
    proxy: ProxySpec
    sigma_gamma: float
    sigma_theta: float
    sigma_eps_prelim: float


def _rms(resid: np.ndarray, n: int) -> float:
    return float(np.linalg.norm(resid) / np.sqrt(n))


def default_tuning(
    dataset: GroupedDataset,
    proxy: BlockDiagMatrix,
    beta0: float,
    lambda0: float | None = None,
) -> DefaultTuning:
    """Default tuning scalars for the gamma and theta problems.

    The dataset must be standardized. ``proxy`` is the concrete proxy
    precision used by the downstream estimators.
    """
    X, Z, y = dataset.X, dataset.Z, dataset.y
    n, p = dataset.n, dataset.p
    if lambda0 is None:
        lambda0 = default_lambda0(n, p)
    V = y - Z * float(beta0)

    eta_rate = np.sqrt(0.5 * np.log(p) / n)
    mu_rate = 4.0 * np.sqrt(np.log(n))

    if np.linalg.norm(V) == 0.0:
        # All-zero pseudo-response: zero tunings keep gamma = 0 feasible.
        sl_gamma = ScaledLassoResult(np.zeros(p - 1), 0.0, 0, 0, True)
        sigma_gamma = 0.0
        etabar_gamma = 0.0
        sigma_eps_prelim = 0.0
    else:
        sl_gamma = scaled_lasso(X, V, lambda0)
        resid = V - X @ sl_gamma.gamma_init
        sigma_gamma = _rms(proxy.matvec(resid), n)
        if sigma_gamma < 1e-10:
            raise DegenerateScale(
                f"proxy-weighted residual scale {sigma_gamma:.3e} below 1e-10"
            )
        etabar_gamma = 0.05 * proxy.quad(V) / n
        denom = n - sl_gamma.df
        if denom < 1:
            warnings.warn(
                f"scaled-lasso df={sl_gamma.df} >= n={n}; flooring variance "
                "denominator at 1",
                RuntimeWarning,
                stacklevel=2,
            )
            denom = 1
        sigma_eps_prelim = float(resid @ resid) / denom

    sl_theta = scaled_lasso(X, Z, lambda0)
    sigma_theta = _rms(Z - X @ sl_theta.gamma_init, n)
    etabar_theta = 0.05 * float(Z @ Z) / n

    tuning = TuningParams(
        eta_gamma=eta_rate * sigma_gamma,
        etabar_gamma=etabar_gamma,
        mu_gamma=mu_rate * sigma_gamma,
        eta_theta=eta_rate * sigma_theta,
        eta_theta_prime=eta_rate * sigma_theta,
        etabar_theta=etabar_theta,
        mu_theta=mu_rate * sigma_theta,
    )

    q = dataset.q
    # psi_init = (0.4/q) s2 I and sigma2_init = 0.6 s2, so M = psi/sigma2
    # collapses to the data-free 2/(3q) I.
    s2 = sigma_eps_prelim if sigma_eps_prelim > 0 else 1.0
    psi_init = (0.4 / q) * s2 * np.eye(q)
    sigma2_init = 0.6 * s2
    default_proxy = ProxySpec.matrix(psi_init / sigma2_init)

    return DefaultTuning(
        tuning=tuning,
        gamma_init=sl_gamma,
        theta_init=sl_theta,
        proxy=default_proxy,
        sigma_gamma=sigma_gamma,
        sigma_theta=sigma_theta,
        sigma_eps_prelim=sigma_eps_prelim,
    )


def default_tuning_glmm(
    dataset: GroupedDataset,
    proxy: BlockDiagMatrix,
    beta0: float,
    family: ExponentialFamily,
    lambda0: float | None = None,
) -> DefaultTuning:
    """Tuning recipe for the generalized estimators.

    Mirrors the linear recipe on the working residual Y - b'(Z beta0): the
    correlation floor is five percent of the generalized constraint value
    at gamma = 0, the theta side is unchanged.
    """
    X, Z, y = dataset.X, dataset.Z, dataset.y
    n, p = dataset.n, dataset.p
    if lambda0 is None:
        lambda0 = default_lambda0(n, p)

    eta_rate = np.sqrt(0.5 * np.log(p) / n)
    mu_rate = 4.0 * np.sqrt(np.log(n))

    v_work = y - family.bprime(Z * float(beta0))
    sl_gamma = scaled_lasso(X, v_work, lambda0)
    resid = v_work - X @ sl_gamma.gamma_init
    sigma_gamma = _rms(proxy.matvec(resid), n)
    if sigma_gamma < 1e-10:
        raise DegenerateScale("working-residual scale below 1e-10")
    etabar_gamma = 0.05 * float(y @ proxy.matvec(y - family.bprime(Z * float(beta0)))) / n
    etabar_gamma = max(etabar_gamma, 0.0)

    sl_theta = scaled_lasso(X, Z, lambda0)
    sigma_theta = _rms(Z - X @ sl_theta.gamma_init, n)

    tuning = TuningParams(
        eta_gamma=eta_rate * sigma_gamma,
        etabar_gamma=etabar_gamma,
        mu_gamma=mu_rate * sigma_gamma,
        eta_theta=eta_rate * sigma_theta,
        eta_theta_prime=eta_rate * sigma_theta,
        etabar_theta=0.05 * float(Z @ Z) / n,
        mu_theta=mu_rate * sigma_theta,
    )
    denom = max(1, n - sl_gamma.df)
    s2 = float(resid @ resid) / denom
    q = dataset.q
    default_proxy = ProxySpec.matrix(((0.4 / q) * s2 * np.eye(q)) / (0.6 * s2))
    return DefaultTuning(
        tuning=tuning,
        gamma_init=sl_gamma,
        theta_init=sl_theta,
        proxy=default_proxy,
        sigma_gamma=sigma_gamma,
        sigma_theta=sigma_theta,
        sigma_eps_prelim=s2,
    )
