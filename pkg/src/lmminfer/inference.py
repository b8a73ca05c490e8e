"""Test statistics, p-values, confidence intervals and analytic power.

The moment-matching statistic correlates the feature-regression residual
with the proxy-weighted nuisance residual of the pseudo-response; under
the null it is asymptotically standard normal regardless of how well the
random-effect structure is approximated. Everything here is a pure
function of its inputs; Monte Carlo layers above parallelize freely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.stats import norm

from .blockdiag import BlockDiagMatrix, build_proxy
from .data import GroupedDataset, ProxySpec, RandomEffectSpec, standardize_columns
from .dantzig import (
    EstimateResult,
    estimate_gamma,
    estimate_gamma_glmm,
    estimate_theta,
    estimate_theta_glmm,
)
from .errors import (
    DegenerateVariance,
    InfeasibleError,
    NoSignChange,
    ProxyNotInvertible,
    SingularBlock,
)
from .families import ExponentialFamily
from .tuning import TuningParams, default_tuning, default_tuning_glmm

__all__ = [
    "Alternative",
    "TestProblem",
    "TestResult",
    "PowerQuery",
    "p_value",
    "test_statistic",
    "run_test",
    "confidence_interval",
    "CIResult",
    "power_curve",
    "ci_halfwidth",
    "predict_random_effects",
    "glmm_test",
]


class Alternative(Enum):
    TWO_SIDED = "two"
    GREATER = "greater"
    LESS = "less"

    @classmethod
    def parse(cls, value) -> "Alternative":
        if isinstance(value, cls):
            return value
        lookup = {
            "two": cls.TWO_SIDED,
            "two-sided": cls.TWO_SIDED,
            "two_sided": cls.TWO_SIDED,
            "greater": cls.GREATER,
            "less": cls.LESS,
        }
        try:
            return lookup[str(value).lower()]
        except KeyError:
            raise ValueError(f"unknown alternative {value!r}") from None


def p_value(t: float, alternative: Alternative = Alternative.TWO_SIDED) -> float:
    """Normal-reference p-value for the chosen alternative."""
    t = float(t)
    if not np.isfinite(t):
        raise ValueError("test statistic must be finite")
    alternative = Alternative.parse(alternative)
    if alternative is Alternative.TWO_SIDED:
        return float(2.0 * norm.sf(abs(t)))
    if alternative is Alternative.GREATER:
        return float(norm.sf(t))
    return float(norm.cdf(t))


@dataclass(frozen=True)
class TestProblem:
    """A single hypothesis-test instance.

    ``proxy`` may be a ProxySpec (resolved against the dataset) or an
    already-built block-diagonal proxy precision. ``tuning`` of None means
    the default recipe.
    """

    dataset: GroupedDataset
    beta0: float
    alternative: Alternative = Alternative.TWO_SIDED
    proxy: ProxySpec | BlockDiagMatrix = field(default_factory=lambda: ProxySpec.zero())
    tuning: TuningParams | None = None

    def __post_init__(self):
        if not np.isfinite(self.beta0):
            raise ValueError("beta0 must be finite")
        object.__setattr__(self, "alternative", Alternative.parse(self.alternative))


@dataclass(frozen=True)
class TestResult:
    t_stat: float
    sigma_hat: float
    sigma_u_hat: float
    p_value: float
    gamma_nnz: int
    theta_nnz: int
    alternative: Alternative
    beta0: float
    diagnostics: dict = field(default_factory=dict)


def _resolve_proxy(dataset, proxy) -> BlockDiagMatrix:
    if isinstance(proxy, BlockDiagMatrix):
        return proxy
    return build_proxy(dataset, proxy)


def _assemble_statistic(dataset, beta0, ptilde, gamma_res, theta_res, alternative):
    n = dataset.n
    V = dataset.y - dataset.Z * float(beta0)
    gresid = V - dataset.X @ gamma_res.coef
    pgresid = ptilde.matvec(gresid)
    uresid = dataset.Z - dataset.X @ theta_res.coef
    sigma_sq = float(pgresid @ pgresid) / n
    sigma_u_sq = float(uresid @ uresid) / n
    if sigma_sq < 1e-20 or sigma_u_sq < 1e-20:
        raise DegenerateVariance(
            f"variance estimates degenerate: sigma^2={sigma_sq:.3e}, "
            f"sigma_u^2={sigma_u_sq:.3e}"
        )
    sigma = float(np.sqrt(sigma_sq))
    sigma_u = float(np.sqrt(sigma_u_sq))
    t = float(uresid @ pgresid) / (np.sqrt(n) * sigma_u * sigma)
    return TestResult(
        t_stat=t,
        sigma_hat=sigma,
        sigma_u_hat=sigma_u,
        p_value=p_value(t, alternative),
        gamma_nnz=gamma_res.nnz,
        theta_nnz=theta_res.nnz,
        alternative=alternative,
        beta0=float(beta0),
        diagnostics={
            "gamma_status": gamma_res.solver_status.value,
            "theta_status": theta_res.solver_status.value,
            "gamma_min_slack": gamma_res.min_slack(),
            "theta_min_slack": theta_res.min_slack(),
        },
    )


def test_statistic(problem: TestProblem) -> TestResult:
    """Moment-matching test statistic with plug-in variance estimates.

    The dataset is assumed standardized; use :func:`run_test` for the
    end-to-end pipeline from raw data.
    """
    dataset = problem.dataset
    ptilde = _resolve_proxy(dataset, problem.proxy)
    tuning = problem.tuning
    if tuning is None:
        tuning = default_tuning(dataset, ptilde, problem.beta0).tuning
    gamma_res = estimate_gamma(dataset, problem.beta0, ptilde, tuning)
    theta_res = estimate_theta(dataset, ptilde, tuning)
    result = _assemble_statistic(
        dataset, problem.beta0, ptilde, gamma_res, theta_res, problem.alternative
    )
    result.diagnostics["tuning"] = tuning.as_dict()
    return result


def run_test(
    dataset: GroupedDataset,
    beta0: float = 0.0,
    alternative: Alternative | str = Alternative.TWO_SIDED,
    proxy: ProxySpec | None = None,
    tuning: TuningParams | None = None,
    tuning_scale: tuple[float, float, float] | None = None,
    auto_relax: bool = False,
) -> TestResult:
    """End-to-end univariate test: standardize, build proxy, tune, test.

    ``proxy`` of None selects the data-free default block M = 2/(3q) I.
    ``tuning_scale`` multiplies the (eta, mu, etabar) families of the
    default recipe. With ``auto_relax``, an infeasible problem is retried
    up to three times with the eta/mu bounds widened by 1.5 and the floor
    halved on the offending side.
    """
    alternative = Alternative.parse(alternative)
    ds, _ = standardize_columns(dataset)
    spec = proxy if proxy is not None else ProxySpec.default_for(ds.q)
    ptilde = build_proxy(ds, spec)
    if tuning is None:
        tuning = default_tuning(ds, ptilde, beta0).tuning
        if tuning_scale is not None:
            tuning = tuning.scaled(*tuning_scale)
    attempts = 0
    while True:
        try:
            result = test_statistic(
                TestProblem(ds, beta0, alternative, ptilde, tuning)
            )
            result.diagnostics["proxy"] = spec.kind
            result.diagnostics["auto_relax_rounds"] = attempts
            return result
        except InfeasibleError as err:
            if not auto_relax or attempts >= 3:
                raise
            attempts += 1
            if err.problem.startswith("gamma"):
                tuning = tuning.relax_gamma()
            else:
                tuning = tuning.relax_theta()


@dataclass(frozen=True)
class CIResult:
    lo: float
    hi: float
    beta_center: float
    evaluations: int

    def __iter__(self):
        return iter((self.lo, self.hi))


def confidence_interval(
    dataset: GroupedDataset,
    alpha: float,
    proxy: ProxySpec | BlockDiagMatrix | None = None,
    tuning: TuningParams | None = None,
    bracket: tuple[float, float] = (-5.0, 5.0),
) -> CIResult:
    """Invert the test over ``bracket``: {beta : |T(beta)| <= z_{1-alpha/2}}.

    The statistic is recomputed in full at every evaluated beta (new
    pseudo-response, new nuisance estimate, new default tuning unless an
    explicit one is supplied); the feature regression does not depend on
    beta and is solved once. A 41-point grid locates the center, then
    bisection pins each boundary to 1e-3 of the bracket width.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    lo_b, hi_b = float(bracket[0]), float(bracket[1])
    if hi_b < lo_b:
        raise ValueError("bracket must be ordered")
    ds, _ = standardize_columns(dataset)
    spec = proxy if proxy is not None else ProxySpec.default_for(ds.q)
    ptilde = spec if isinstance(spec, BlockDiagMatrix) else build_proxy(ds, spec)
    z = float(norm.ppf(1.0 - alpha / 2.0))

    theta_tuning = tuning
    if theta_tuning is None:
        theta_tuning = default_tuning(ds, ptilde, lo_b).tuning
    theta_res = estimate_theta(ds, ptilde, theta_tuning)

    evals = 0

    def tstat(beta: float) -> float:
        nonlocal evals
        evals += 1
        tp = tuning if tuning is not None else default_tuning(ds, ptilde, beta).tuning
        gamma_res = estimate_gamma(ds, beta, ptilde, tp)
        res = _assemble_statistic(
            ds, beta, ptilde, gamma_res, theta_res, Alternative.TWO_SIDED
        )
        return res.t_stat

    if hi_b == lo_b:
        return CIResult(lo_b, hi_b, lo_b, 0)

    grid = np.linspace(lo_b, hi_b, 41)
    tvals = np.array([tstat(b) for b in grid])
    center_idx = int(np.argmin(np.abs(tvals)))
    beta_center = float(grid[center_idx])
    tol = 1e-3 * (hi_b - lo_b)

    def bisect(level: float, b_lo: float, b_hi: float, sign_lo: bool) -> float:
        while b_hi - b_lo > tol:
            mid = 0.5 * (b_lo + b_hi)
            if (tstat(mid) - level > 0) == sign_lo:
                b_lo = mid
            else:
                b_hi = mid
        return 0.5 * (b_lo + b_hi)

    # T(beta) decreases in beta, so the lower endpoint is where T crosses
    # +z left of the center and the upper one where it crosses -z.
    def locate(level: float, side: str) -> float:
        vals = tvals - level
        if side == "left":
            pairs = ((i - 1, i) for i in range(center_idx, 0, -1))
        else:
            pairs = ((i, i + 1) for i in range(center_idx, len(grid) - 1))
        for i, j in pairs:
            if (vals[i] > 0) != (vals[j] > 0):
                return bisect(level, float(grid[i]), float(grid[j]), vals[i] > 0)
        raise NoSignChange(side, float(grid[0] if side == "left" else grid[-1]))

    lo = locate(z, "left")
    hi = locate(-z, "right")
    return CIResult(float(lo), float(hi), beta_center, evals)


@dataclass(frozen=True)
class PowerQuery:
    """Inputs of the analytic power formula.

    ``trace_proxy`` is n^{-1} trace(P~) and ``trace_k`` is
    n^{-1} trace(P~ P^{-1} P~).
    """

    h: float
    alpha: float
    sigma_u: float
    sigma_eps: float
    trace_proxy: float
    trace_k: float

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.trace_proxy <= 0 or self.trace_k <= 0:
            raise ValueError("traces must be positive")

    def deviation(self) -> float:
        """Noncentrality D(h) of the limiting normal under the local alternative."""
        return (
            self.h
            * (self.sigma_u / self.sigma_eps)
            * self.trace_proxy
            / np.sqrt(self.trace_k)
        )


def power_curve(query: PowerQuery) -> float:
    """Asymptotic two-sided rejection probability; equals alpha at h = 0."""
    z = norm.ppf(1.0 - query.alpha / 2.0)
    d = query.deviation()
    return float(norm.sf(z - d) + norm.cdf(-z - d))


def ci_halfwidth(
    alpha: float,
    trace_proxy: float,
    trace_k: float,
    sigma_u: float,
    sigma_eps: float,
    n: int,
) -> tuple[float, float]:
    """Solve 2 Phi(z_{1-alpha/2} - D(h)) = 1 - alpha for h >= 0 by bisection.

    Returns (h_alpha, n^{-1/2} |h_alpha|), the asymptotic CI half-width.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    z = float(norm.ppf(1.0 - alpha / 2.0))
    slope = (sigma_u / sigma_eps) * trace_proxy / np.sqrt(trace_k)
    if slope <= 0:
        raise ValueError("deviation slope must be positive")

    def g(h: float) -> float:
        return 2.0 * norm.cdf(z - slope * h) - (1.0 - alpha)

    lo, hi = 0.0, 1.0
    while g(hi) > 0:
        hi *= 2.0
        if hi > 1e12:
            raise ArithmeticError("failed to bracket the half-width equation")
    while hi - lo > 1e-8:
        mid = 0.5 * (lo + hi)
        if g(mid) > 0:
            lo = mid
        else:
            hi = mid
    h_alpha = 0.5 * (lo + hi)
    return float(h_alpha), float(abs(h_alpha) / np.sqrt(n))


def predict_random_effects(
    dataset: GroupedDataset,
    gamma: np.ndarray,
    beta0: float,
    proxy_or_re: ProxySpec | RandomEffectSpec,
) -> list[np.ndarray]:
    """Per-group random-effect predictions b_i.

    In proxy mode the shrinkage matrix is W_i^T W_i + M^{-1} (M must be
    invertible); in oracle mode it is W_i^T W_i + sigma_eps^2 psi^{-1}.
    """
    resid = dataset.y - dataset.Z * float(beta0) - dataset.X @ np.asarray(gamma, dtype=float)
    q = dataset.q
    if isinstance(proxy_or_re, RandomEffectSpec):
        ridge = proxy_or_re.sigma_eps_sq * np.linalg.inv(proxy_or_re.psi)
    else:
        M = proxy_or_re.resolve(q, dataset.n)
        if np.linalg.matrix_rank(M, tol=1e-12) < q:
            raise ProxyNotInvertible("proxy block M is singular")
        ridge = np.linalg.inv(M)
    out = []
    for g, (Wi, sl) in enumerate(zip(dataset.w_blocks(), dataset.group_slices())):
        E = Wi.T @ Wi + ridge
        try:
            out.append(np.linalg.solve(E, Wi.T @ resid[sl]))
        except np.linalg.LinAlgError:
            raise SingularBlock(g) from None
    return out


def glmm_test(
    dataset: GroupedDataset,
    beta0: float,
    family: ExponentialFamily,
    proxy: ProxySpec | BlockDiagMatrix | None = None,
    tuning: TuningParams | None = None,
    alternative: Alternative | str = Alternative.TWO_SIDED,
) -> TestResult:
    """Moment test in a generalized mixed model with canonical link.

    The residual is Y - b'(X gamma_hat + Z beta0); the feature-residual
    variance is weighted by the curvature b'' averaged over observations.
    With the Gaussian family this reproduces the linear statistic exactly.
    """
    alternative = Alternative.parse(alternative)
    ds, _ = standardize_columns(dataset)
    spec = proxy if proxy is not None else ProxySpec.default_for(ds.q)
    ptilde = spec if isinstance(spec, BlockDiagMatrix) else build_proxy(ds, spec)
    if tuning is None:
        tuning = default_tuning_glmm(ds, ptilde, beta0, family).tuning
    gamma_res = estimate_gamma_glmm(ds, beta0, ptilde, family, tuning)
    theta_res = estimate_theta_glmm(ds, gamma_res.coef, beta0, ptilde, family, tuning)

    n = ds.n
    eta = ds.X @ gamma_res.coef + ds.Z * float(beta0)
    resid = ds.y - family.bprime(eta)
    presid = ptilde.matvec(resid)
    uresid = ds.Z - ds.X @ theta_res.coef
    w = family.bdoubleprime(eta)
    sigma_sq = float(presid @ presid) / n
    sigma_u_sq = float(w @ (uresid**2)) / n
    if sigma_sq < 1e-20 or sigma_u_sq < 1e-20:
        raise DegenerateVariance("GLMM variance estimates degenerate")
    sigma = float(np.sqrt(sigma_sq))
    sigma_u = float(np.sqrt(sigma_u_sq))
    t = float(uresid @ presid) / (np.sqrt(n) * sigma_u * sigma)
    return TestResult(
        t_stat=t,
        sigma_hat=sigma,
        sigma_u_hat=sigma_u,
        p_value=p_value(t, alternative),
        gamma_nnz=gamma_res.nnz,
        theta_nnz=theta_res.nnz,
        alternative=alternative,
        beta0=float(beta0),
        diagnostics={
            "family": family.name,
            "gamma_converged": gamma_res.converged,
            "gamma_iterations": gamma_res.iterations,
            "tuning": tuning.as_dict(),
        },
    )
