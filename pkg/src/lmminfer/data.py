"""Grouped longitudinal data containers.

A :class:`GroupedDataset` is the universal input of the package: a response
``y``, a nuisance design ``X``, the tested covariate ``Z``, and a per-group
random-effect design ``W``, all row-aligned with an ordered list of group
sizes. Instances are immutable after construction (the wrapped arrays are
marked read-only), so they can be freely shared across threads/processes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonPD, ZeroColumn

__all__ = [
    "GroupedDataset",
    "RandomEffectSpec",
    "ProxySpec",
    "standardize_columns",
]


def _frozen(a: np.ndarray, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class GroupedDataset:
    """Grouped design (y, X, Z, W) with ordered group sizes.

    ``W`` is stored stacked as an (n, q) array; the model's block-diagonal
    random-effect design is recovered by restricting rows to each group.
    """

    y: np.ndarray
    X: np.ndarray
    Z: np.ndarray
    W: np.ndarray
    groups: tuple[int, ...]

    def __init__(self, y, X, Z, W, groups):
        object.__setattr__(self, "y", _frozen(np.ravel(y)))
        object.__setattr__(self, "X", _frozen(np.atleast_2d(X)))
        object.__setattr__(self, "Z", _frozen(np.ravel(Z)))
        W = np.asarray(W, dtype=float)
        if W.ndim == 1:
            W = W[:, None]
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "groups", tuple(int(g) for g in groups))
        self._validate()

    def _validate(self) -> None:
        n = self.y.shape[0]
        if len(self.groups) < 1:
            raise ValueError("need at least one group")
        if any(g < 1 for g in self.groups):
            raise ValueError("every group must contain at least one row")
        if sum(self.groups) != n:
            raise ValueError(
                f"group sizes sum to {sum(self.groups)} but y has {n} rows"
            )
        for name in ("X", "Z", "W"):
            arr = getattr(self, name)
            if arr.shape[0] != n:
                raise ValueError(f"{name} has {arr.shape[0]} rows, expected {n}")

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def N(self) -> int:
        return len(self.groups)

    @property
    def p(self) -> int:
        """Total number of fixed effects (nuisance columns plus the tested one)."""
        return self.X.shape[1] + 1

    @property
    def q(self) -> int:
        return self.W.shape[1]

    def group_slices(self) -> list[slice]:
        out, start = [], 0
        for g in self.groups:
            out.append(slice(start, start + g))
            start += g
        return out

    def w_blocks(self) -> list[np.ndarray]:
        """Per-group random-effect design matrices W_i of shape (n_i, q)."""
        return [self.W[s] for s in self.group_slices()]

    def replace(self, **arrays) -> "GroupedDataset":
        """New dataset with some arrays swapped out; groups are kept."""
        kw = {"y": self.y, "X": self.X, "Z": self.Z, "W": self.W}
        kw.update(arrays)
        return GroupedDataset(groups=self.groups, **kw)


@dataclass(frozen=True)
class RandomEffectSpec:
    """True random-effect law: covariance ``psi`` (q x q SPD) and error variance."""

    psi: np.ndarray
    sigma_eps_sq: float

    def __init__(self, psi, sigma_eps_sq):
        psi = np.atleast_2d(np.asarray(psi, dtype=float))
        object.__setattr__(self, "psi", _frozen(psi))
        object.__setattr__(self, "sigma_eps_sq", float(sigma_eps_sq))
        if self.sigma_eps_sq <= 0:
            raise ValueError("sigma_eps_sq must be > 0")
        if not np.allclose(psi, psi.T, rtol=0, atol=1e-12 * max(1.0, np.abs(psi).max())):
            raise NonPD("psi")
        try:
            np.linalg.cholesky(psi)
        except np.linalg.LinAlgError:
            raise NonPD("psi") from None

    @property
    def q(self) -> int:
        return self.psi.shape[0]


@dataclass(frozen=True)
class ProxySpec:
    """Choice of the known q x q proxy block M shared by every group.

    Three forms: an explicit symmetric PSD matrix, the ``log(n) * I`` tag,
    or the zero matrix (which makes the proxy precision the identity and
    collapses the method onto the plain linear-model variant).
    """

    kind: str  # "matrix" | "logn_identity" | "zero"
    M: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("matrix", "logn_identity", "zero"):
            raise ValueError(f"unknown proxy kind {self.kind!r}")
        if self.kind == "matrix":
            M = np.atleast_2d(np.asarray(self.M, dtype=float))
            if not np.allclose(M, M.T, atol=1e-12 * max(1.0, np.abs(M).max())):
                raise ValueError("proxy matrix M must be symmetric")
            if np.linalg.eigvalsh((M + M.T) / 2).min() < -1e-10:
                raise ValueError("proxy matrix M must be positive semi-definite")
            object.__setattr__(self, "M", _frozen(M))
        elif self.M is not None:
            raise ValueError(f"proxy kind {self.kind!r} takes no matrix")

    @classmethod
    def matrix(cls, M) -> "ProxySpec":
        return cls("matrix", np.asarray(M, dtype=float))

    @classmethod
    def logn_identity(cls) -> "ProxySpec":
        return cls("logn_identity")

    @classmethod
    def zero(cls) -> "ProxySpec":
        return cls("zero")

    @classmethod
    def default_for(cls, q: int) -> "ProxySpec":
        """Default data-free proxy M = 2/(3q) * I_q (see tuning recipe)."""
        return cls.matrix(np.eye(q) * (2.0 / (3.0 * q)))

    def resolve(self, q: int, n: int) -> np.ndarray:
        """Concrete q x q block for a dataset with n observations."""
        if self.kind == "zero":
            return np.zeros((q, q))
        if self.kind == "logn_identity":
            return np.log(n) * np.eye(q)
        M = self.M
        if M.shape != (q, q):
            raise ValueError(f"proxy matrix is {M.shape}, expected ({q}, {q})")
        return np.array(M)


def standardize_columns(dataset: GroupedDataset):
    """Rescale every column of X to Euclidean norm sqrt(n).

    Returns the standardized dataset together with the per-column scale
    factors s (X_std = X / s), so a coefficient gamma_std maps back to the
    original scale as gamma = gamma_std / s.
    """
    X = dataset.X
    n = dataset.n
    norms = np.linalg.norm(X, axis=0)
    bad = np.flatnonzero(norms < 1e-12)
    if bad.size:
        raise ZeroColumn(int(bad[0]), float(norms[bad[0]]))
    scales = norms / np.sqrt(n)
    return dataset.replace(X=X / scales), scales
