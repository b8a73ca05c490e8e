"""Generative models and the seeded Monte Carlo harness.

Implements the simulation designs used for the size/power tables: Toeplitz,
one-lag banded and equi-correlated covariances, Gaussian or (variance-
normalized) Student-t innovations, random-effect designs built from the
leading design columns, and the sparse coefficient rule. Replications are
seeded through numpy's SeedSequence spawning, i.e. the substream of
replication r is a deterministic 64-bit mix of (master_seed, r), so results
never depend on the parallel schedule.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .data import GroupedDataset, ProxySpec
from .errors import LmmError, NotPositiveDefinite, SingularSubmatrix, SparsityOverflow
from .inference import Alternative, TestResult, run_test
from .tuning import TuningParams

__all__ = [
    "Design",
    "ErrorLaw",
    "ModelSpec",
    "GroundTruth",
    "RejectionReport",
    "make_sigma",
    "oracle_theta",
    "gen_beta",
    "gen_dataset",
    "monte_carlo",
    "lm_baseline",
    "model_preset",
]


@dataclass(frozen=True)
class Design:
    """Row-covariance family: toeplitz, equicorr or banded (one off-diagonal)."""

    kind: str
    rho: float

    def __post_init__(self):
        if self.kind not in ("toeplitz", "equicorr", "banded"):
            raise ValueError(f"unknown design kind {self.kind!r}")


@dataclass(frozen=True)
class ErrorLaw:
    """Innovation law: gaussian, or student t(df) scaled to unit variance."""

    kind: str = "gaussian"
    df: float | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "student_t"):
            raise ValueError(f"unknown error law {self.kind!r}")
        if self.kind == "student_t":
            if self.df is None or self.df <= 2:
                raise ValueError("student_t requires df > 2 for unit-variance scaling")

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.standard_normal(size)
        scale = np.sqrt(self.df / (self.df - 2.0))
        return rng.standard_t(self.df, size) / scale


def make_sigma(design: Design, p: int) -> np.ndarray:
    """Dense covariance for the chosen design; positive definiteness is checked."""
    rho = design.rho
    if design.kind == "toeplitz":
        idx = np.arange(p)
        sigma = rho ** np.abs(idx[:, None] - idx[None, :])
    elif design.kind == "equicorr":
        sigma = np.full((p, p), rho)
        np.fill_diagonal(sigma, 1.0)
    else:  # banded: unit diagonal, -rho/(1+rho^2) on the first off-diagonal
        sigma = np.eye(p)
        off = -rho / (1.0 + rho**2)
        i = np.arange(p - 1)
        sigma[i, i + 1] = off
        sigma[i + 1, i] = off
    try:
        np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        raise NotPositiveDefinite(design.kind, rho) from None
    return sigma


@lru_cache(maxsize=8)
def _sigma_sqrt(design: Design, p: int) -> np.ndarray:
    """Symmetric PSD square root (eigendecomposition, basis-symmetric)."""
    sigma = make_sigma(design, p)
    evals, evecs = np.linalg.eigh(sigma)
    root = (evecs * np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
    root.flags.writeable = False
    return root


def oracle_theta(sigma: np.ndarray, j: int) -> tuple[np.ndarray, float]:
    """Population feature-regression coefficients for column j (1-based).

    Solves Sigma_{-j,-j} theta = Sigma_{-j,j} directly (no full inversion)
    and returns (theta, sigma_u^2) with
    sigma_u^2 = Sigma_{jj} - Sigma_{j,-j} theta.
    """
    sigma = np.asarray(sigma, dtype=float)
    p = sigma.shape[0]
    if not 1 <= j <= p:
        raise ValueError(f"tested index {j} out of range 1..{p}")
    k = j - 1
    keep = np.r_[0:k, k + 1 : p]
    try:
        theta = np.linalg.solve(sigma[np.ix_(keep, keep)], sigma[keep, k])
    except np.linalg.LinAlgError:
        raise SingularSubmatrix(f"submatrix without column {j} is singular") from None
    sigma_u_sq = float(sigma[k, k] - sigma[k, keep] @ theta)
    return theta, sigma_u_sq


def gen_beta(s: int, p: int, magnitude: float = 5.0, rng=None) -> np.ndarray:
    """Sparse coefficient vector with s nonzeros and fixed Euclidean norm.

    Nonzeros sit at 1-based positions {j <= 3s/2 : j not divisible by 3};
    their raw values are uniform on (0, 1) before rescaling to the target
    norm.
    """
    if s < 0:
        raise ValueError("sparsity must be >= 0")
    if s == 0:
        return np.zeros(p)
    limit = int(np.floor(1.5 * s))
    if limit > p:
        raise SparsityOverflow(f"3s/2 = {limit} exceeds p = {p}")
    positions = [j for j in range(1, limit + 1) if j % 3 != 0]
    assert len(positions) == s
    rng = np.random.default_rng(rng)
    a = np.zeros(p)
    a[np.array(positions) - 1] = rng.uniform(0.0, 1.0, size=s)
    return magnitude * a / np.linalg.norm(a)


@dataclass(frozen=True)
class ModelSpec:
    """Full description of one simulation scenario."""

    n: int
    p: int
    N: int
    design: Design
    q: int
    psi: tuple  # diagonal or full q x q, stored as nested tuples for hashability
    s: int
    tested_index: int  # 1-based column of the full design
    h: float = 0.0
    error: ErrorLaw = field(default_factory=ErrorLaw)
    group_sizes: tuple[int, ...] | None = None
    seed: int = 0
    beta_magnitude: float = 5.0
    sigma_eps_sq: float = 1.0
    random_intercept: bool = False

    def __post_init__(self):
        sizes = self.resolved_group_sizes()
        if sum(sizes) != self.n:
            raise ValueError(f"group sizes sum to {sum(sizes)}, expected n={self.n}")
        if not 1 <= self.tested_index <= self.p:
            raise ValueError("tested_index out of range")
        if self.s > self.p:
            raise ValueError("sparsity exceeds p")
        psi = np.atleast_2d(np.asarray(self.psi, dtype=float))
        if psi.shape == (1, self.q):
            psi = np.diag(psi.ravel())
        if psi.shape != (self.q, self.q):
            raise ValueError(f"psi has shape {psi.shape}, expected ({self.q}, {self.q})")
        object.__setattr__(self, "psi", tuple(map(tuple, psi.tolist())))
        make_sigma(self.design, self.p)  # validates positive definiteness

    def resolved_group_sizes(self) -> tuple[int, ...]:
        if self.group_sizes is not None:
            return tuple(int(g) for g in self.group_sizes)
        if self.n % self.N:
            raise ValueError("n must be divisible by N for uniform groups")
        return tuple([self.n // self.N] * self.N)

    def psi_matrix(self) -> np.ndarray:
        return np.asarray(self.psi, dtype=float)


@dataclass(frozen=True)
class GroundTruth:
    """What the generator knows: the full coefficient vector at the null,
    the tested coordinate's null value, its nuisance part, the drawn random
    effects, and the noise/covariance parameters."""

    beta_full: np.ndarray
    beta0: float
    gamma_star: np.ndarray
    b: np.ndarray
    psi: np.ndarray
    sigma_eps_sq: float
    tested_index: int


def gen_dataset(spec: ModelSpec, seed=None) -> tuple[GroupedDataset, GroundTruth]:
    """Draw one dataset from the scenario.

    ``seed`` overrides ``spec.seed`` and may be anything accepted by
    numpy's default_rng (ints or SeedSequence). Draw order is fixed:
    design innovations, coefficient magnitudes, random effects, noise.
    """
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    n, p, q = spec.n, spec.p, spec.q
    sizes = spec.resolved_group_sizes()
    root = _sigma_sqrt(spec.design, p)

    xi = spec.error.draw(rng, (n, p))
    design = xi @ root

    beta_full = gen_beta(spec.s, p, spec.beta_magnitude, rng)
    j = spec.tested_index - 1
    beta_gen = beta_full.copy()
    beta_gen[j] += spec.h / np.sqrt(n)

    psi = spec.psi_matrix()
    b = rng.multivariate_normal(np.zeros(q), psi, size=spec.N) if q else np.zeros((spec.N, 0))

    if spec.random_intercept:
        W = np.ones((n, 1))
    else:
        W = design[:, :q]

    noise = spec.error.draw(rng, n) * np.sqrt(spec.sigma_eps_sq)
    y = design @ beta_gen + noise
    start = 0
    for i, g in enumerate(sizes):
        y[start : start + g] += W[start : start + g] @ b[i]
        start += g

    Z = design[:, j]
    X = np.delete(design, j, axis=1)
    dataset = GroupedDataset(y=y, X=X, Z=Z, W=W, groups=sizes)
    truth = GroundTruth(
        beta_full=beta_full,
        beta0=float(beta_full[j]),
        gamma_star=np.delete(beta_full, j),
        b=b,
        psi=psi,
        sigma_eps_sq=spec.sigma_eps_sq,
        tested_index=spec.tested_index,
    )
    return dataset, truth


@dataclass(frozen=True)
class RejectionReport:
    spec: ModelSpec
    reps: int
    alpha: float
    rejections: int
    failures: int
    rejection_rate: float
    monte_carlo_se: float
    t_stats: np.ndarray
    p_values: np.ndarray
    mean_gamma_nnz: float
    mean_theta_nnz: float

    @property
    def effective_reps(self) -> int:
        return self.reps - self.failures


def _mc_rep(args):
    """One replication; module-level so process pools can pickle it."""
    (spec, alpha, master_seed, r, proxy, tuning_scale, alternative) = args
    ss = np.random.SeedSequence(master_seed, spawn_key=(r,))
    dataset, truth = gen_dataset(spec, seed=ss)
    try:
        res: TestResult = run_test(
            dataset,
            beta0=truth.beta0,
            alternative=alternative,
            proxy=proxy,
            tuning_scale=tuning_scale,
        )
    except LmmError as err:
        return (r, None, np.nan, np.nan, 0, 0, type(err).__name__)
    reject = res.p_value <= alpha
    return (r, bool(reject), res.t_stat, res.p_value, res.gamma_nnz, res.theta_nnz, "")


def monte_carlo(
    spec: ModelSpec,
    reps: int,
    alpha: float = 0.05,
    master_seed: int = 0,
    parallel: int = 1,
    proxy: ProxySpec | None = None,
    tuning_scale: tuple[float, float, float] | None = None,
    alternative: Alternative | str = Alternative.TWO_SIDED,
) -> RejectionReport:
    """Seeded rejection-rate study.

    Replication r uses the substream SeedSequence(master_seed, spawn_key=(r,)),
    so identical (spec, reps, master_seed) reproduce identical counts for
    any ``parallel`` degree. Per-replication failures (infeasible tuning,
    degenerate data) are counted, not fatal.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    alternative = Alternative.parse(alternative)
    tasks = [
        (spec, alpha, master_seed, r, proxy, tuning_scale, alternative)
        for r in range(reps)
    ]
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_mc_rep, tasks, chunksize=max(1, reps // (4 * parallel))))
    else:
        rows = [_mc_rep(t) for t in tasks]
    rows.sort(key=lambda row: row[0])

    rejections = sum(1 for row in rows if row[1])
    failures = sum(1 for row in rows if row[1] is None)
    ok = max(reps - failures, 1)
    rate = rejections / ok
    t_stats = np.array([row[2] for row in rows])
    p_values = np.array([row[3] for row in rows])
    nnz_g = np.array([row[4] for row in rows if row[1] is not None], dtype=float)
    nnz_t = np.array([row[5] for row in rows if row[1] is not None], dtype=float)
    if failures:
        warnings.warn(f"{failures}/{reps} replications failed", RuntimeWarning, stacklevel=2)
    return RejectionReport(
        spec=spec,
        reps=reps,
        alpha=alpha,
        rejections=rejections,
        failures=failures,
        rejection_rate=rate,
        monte_carlo_se=float(np.sqrt(rate * (1.0 - rate) / ok)),
        t_stats=t_stats,
        p_values=p_values,
        mean_gamma_nnz=float(nnz_g.mean()) if nnz_g.size else float("nan"),
        mean_theta_nnz=float(nnz_t.mean()) if nnz_t.size else float("nan"),
    )


def lm_baseline(
    spec_or_dataset,
    alpha: float = 0.05,
    beta0: float | None = None,
    alternative: Alternative | str = Alternative.TWO_SIDED,
    tuning: TuningParams | None = None,
    seed=None,
) -> TestResult:
    """The naive linear-model variant: identical pipeline with a zero proxy.

    With the proxy precision equal to the identity the plain and the
    proxy-weighted gradient constraints of the feature regression coincide
    and the method ignores the group structure entirely.
    """
    if isinstance(spec_or_dataset, ModelSpec):
        dataset, truth = gen_dataset(spec_or_dataset, seed=seed)
        beta0 = truth.beta0 if beta0 is None else beta0
    else:
        dataset = spec_or_dataset
        beta0 = 0.0 if beta0 is None else beta0
    return run_test(
        dataset,
        beta0=beta0,
        alternative=alternative,
        proxy=ProxySpec.zero(),
        tuning=tuning,
    )


def model_preset(name: str, **overrides) -> ModelSpec:
    """Named scenarios from the simulation study (paper-scale defaults).

    model1: Toeplitz(-0.5), q=2, psi=diag(0.56, 0.56), Gaussian.
    model2: as model1 with q=3, psi=diag(3, 3, 2).
    model3: banded design (rho free, default 0.3), otherwise as model1.
    model4/model5: model1 with t(10) / t(3) innovations.
    """
    base = dict(
        n=200,
        p=500,
        N=50,
        design=Design("toeplitz", -0.5),
        q=2,
        psi=((0.56, 0.0), (0.0, 0.56)),
        s=5,
        tested_index=4,
        h=0.0,
        error=ErrorLaw(),
        seed=0,
    )
    name = name.lower()
    if name == "model1":
        pass
    elif name == "model2":
        base.update(q=3, psi=((3.0, 0, 0), (0, 3.0, 0), (0, 0, 2.0)))
    elif name == "model3":
        rho = overrides.pop("rho", 0.3)
        base.update(design=Design("banded", rho))
    elif name == "model4":
        base.update(error=ErrorLaw("student_t", 10))
    elif name == "model5":
        base.update(error=ErrorLaw("student_t", 3))
    else:
        raise ValueError(f"unknown preset {name!r}")
    psi_override = overrides.pop("psi", None)
    if psi_override is not None:
        base["psi"] = psi_override
    base.update(overrides)
    return ModelSpec(**base)
