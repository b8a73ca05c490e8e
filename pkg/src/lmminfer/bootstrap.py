"""Multivariate max-statistic test with a Gaussian multiplier bootstrap.

Several coordinates are tested jointly: one nuisance estimate is shared,
one feature regression is solved per tested coordinate, and the null
quantile of the max statistic comes from multiplier draws applied to the
centered per-observation terms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blockdiag import BlockDiagMatrix, build_proxy
from .data import GroupedDataset, ProxySpec, standardize_columns
from .dantzig import _solve_l1, _theta_families, estimate_gamma
from .errors import CollinearZ, DegenerateVariance
from .inference import p_value
from .lp import SolverStatus
from .tuning import TuningParams, default_tuning
from .scaled_lasso import default_lambda0, scaled_lasso

__all__ = ["BootstrapResult", "multivariate_test", "bootstrap_max_draws"]


@dataclass(frozen=True)
class BootstrapResult:
    t_max: float
    quantile: float
    per_coordinate: list[tuple[float, float]]  # (T_{n,j}, two-sided normal p_j)
    reps: int
    p_value: float
    seed: int
    alpha: float
    rejected: bool
    diagnostics: dict


def bootstrap_max_draws(tij: np.ndarray, tnj: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """Bootstrapped max statistics for multiplier draws ``xi`` (B, n).

    Each draw recombines the centered per-observation terms; with xi == 1
    the centering makes every bootstrapped coordinate exactly zero.
    """
    n = tij.shape[0]
    centered = tij - tnj[None, :] / np.sqrt(n)
    boot = (xi @ centered) / np.sqrt(n)  # (B, d)
    return np.abs(boot).max(axis=1)


def _order_statistic_quantile(draws: np.ndarray, alpha: float) -> float:
    """Empirical (1 - alpha) quantile as the ceil((1-alpha) B) order statistic."""
    b = draws.shape[0]
    k = int(np.ceil((1.0 - alpha) * b))
    k = min(max(k, 1), b)
    return float(np.sort(draws)[k - 1])


def multivariate_test(
    dataset: GroupedDataset,
    beta0_vec,
    coords,
    alpha: float = 0.05,
    B: int = 1000,
    seed: int = 0,
    proxy: ProxySpec | BlockDiagMatrix | None = None,
    tuning: TuningParams | None = None,
) -> BootstrapResult:
    """Joint test of d coordinates via the bootstrapped max statistic.

    The tested set consists of the dataset's Z column plus the X columns
    listed in ``coords`` (0-based); all of them are held out of the
    nuisance design for every coordinate. ``beta0_vec`` gives the
    hypothesized values in that order. Rejects when the max |T_{n,j}|
    exceeds the bootstrap quantile; the reported p-value is one minus the
    empirical bootstrap CDF at the observed max.
    """
    coords = [int(c) for c in (coords if coords is not None else [])]
    beta0_vec = np.asarray(beta0_vec, dtype=float).ravel()
    d = 1 + len(coords)
    if beta0_vec.shape[0] != d:
        raise ValueError(f"beta0_vec has {beta0_vec.shape[0]} entries, expected {d}")
    if B < 100:
        raise ValueError("bootstrap needs B >= 100 draws")
    if len(set(coords)) != len(coords):
        raise ValueError("duplicate tested coordinates")

    ds, _ = standardize_columns(dataset)
    n = ds.n
    Zmat = np.column_stack([ds.Z] + [ds.X[:, c] for c in coords])
    keep = np.setdiff1d(np.arange(ds.X.shape[1]), np.array(coords, dtype=int))
    X = ds.X[:, keep]
    V = ds.y - Zmat @ beta0_vec

    spec = proxy if proxy is not None else ProxySpec.default_for(ds.q)
    ptilde = spec if isinstance(spec, BlockDiagMatrix) else build_proxy(ds, spec)

    # Shared nuisance estimate on the reduced design; the pseudo-response
    # already has the tested contribution removed, so beta0 = 0 below.
    work = GroupedDataset(y=V, X=X, Z=np.zeros(n), W=ds.W, groups=ds.groups)
    if tuning is None:
        gamma_tuning = default_tuning(work, ptilde, 0.0).tuning
    else:
        gamma_tuning = tuning
    gamma_res = estimate_gamma(work, 0.0, ptilde, gamma_tuning)
    gresid = V - X @ gamma_res.coef
    pgresid = ptilde.matvec(gresid)
    sigma_eps_sq = float(pgresid @ pgresid) / n
    if sigma_eps_sq < 1e-20:
        raise DegenerateVariance("bootstrap: weighted nuisance residual degenerate")
    sigma_eps = float(np.sqrt(sigma_eps_sq))

    lam0 = default_lambda0(n, ds.p)
    eta_rate = np.sqrt(0.5 * np.log(ds.p) / n)
    mu_rate = 4.0 * np.sqrt(np.log(n))

    tij = np.empty((n, d))
    tnj = np.empty(d)
    per_coord = []
    statuses = []
    for jdx in range(d):
        zj = Zmat[:, jdx]
        if tuning is None:
            sl = scaled_lasso(X, zj, lam0)
            scale = float(np.linalg.norm(zj - X @ sl.gamma_init) / np.sqrt(n))
            tp = TuningParams(
                eta_gamma=gamma_tuning.eta_gamma,
                etabar_gamma=gamma_tuning.etabar_gamma,
                mu_gamma=gamma_tuning.mu_gamma,
                eta_theta=eta_rate * scale,
                eta_theta_prime=eta_rate * scale,
                etabar_theta=0.05 * float(zj @ zj) / n,
                mu_theta=mu_rate * scale,
            )
        else:
            tp = tuning
        fam = _theta_families(X, zj, ptilde, tp, n)
        theta, _, sol = _solve_l1(fam, f"theta[{jdx}]")
        statuses.append(sol.status.value)
        if sol.status is not SolverStatus.OPTIMAL:
            raise ArithmeticError(f"coordinate {jdx}: solver status {sol.status}")
        uresid = zj - X @ theta
        su_sq = float(uresid @ uresid) / n
        if su_sq < 1e-20:
            raise CollinearZ(f"coordinate {jdx} explained exactly by the design")
        su = float(np.sqrt(su_sq))
        tij[:, jdx] = uresid * pgresid / (su * sigma_eps)
        tnj[jdx] = tij[:, jdx].sum() / np.sqrt(n)
        per_coord.append((float(tnj[jdx]), p_value(float(tnj[jdx]))))

    rng = np.random.default_rng(seed)
    xi = rng.standard_normal((B, n))
    boot_max = bootstrap_max_draws(tij, tnj, xi)
    quantile = _order_statistic_quantile(boot_max, alpha)
    observed = float(np.abs(tnj).max())
    p_boot = float(np.mean(boot_max > observed))
    return BootstrapResult(
        t_max=observed,
        quantile=quantile,
        per_coordinate=per_coord,
        reps=B,
        p_value=p_boot,
        seed=seed,
        alpha=alpha,
        rejected=bool(observed > quantile),
        diagnostics={
            "gamma_nnz": gamma_res.nnz,
            "sigma_eps": sigma_eps,
            "theta_statuses": statuses,
            "coords": coords,
        },
    )
