"""Block-diagonal matrix algebra keyed to group sizes.

Carriers for the proxy precision (I + W M W^T)^{-1}, the true precision
(I + sigma^-2 W psi W^T)^{-1} and products thereof. Blocks are dense and
small (group sizes are bounded), so everything is plain per-block numpy.
Blockwise reductions use a fixed left-to-right group order so results do
not depend on any parallel schedule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import GroupedDataset, ProxySpec, RandomEffectSpec
from .errors import LayoutMismatch, NonPD, SingularBlock

__all__ = [
    "BlockDiagMatrix",
    "build_proxy",
    "true_precision",
    "check_p_condition",
    "PConditionReport",
    "block_trace",
    "block_triple_trace",
]

_COND_LIMIT = 1e14


@dataclass(frozen=True)
class BlockDiagMatrix:
    """Square block-diagonal matrix with one dense symmetric block per group.

    Blocks are symmetrized on construction ((A + A^T)/2) after a relative
    asymmetry check at 1e-12; stored blocks are therefore exactly symmetric.
    """

    groups: tuple[int, ...]
    blocks: tuple[np.ndarray, ...]

    def __init__(self, groups, blocks):
        groups = tuple(int(g) for g in groups)
        mats = []
        for g, (size, B) in enumerate(zip(groups, blocks)):
            B = np.atleast_2d(np.asarray(B, dtype=float))
            if B.shape != (size, size):
                raise LayoutMismatch(
                    f"block {g} has shape {B.shape}, expected ({size}, {size})"
                )
            scale = max(1.0, np.abs(B).max())
            if np.abs(B - B.T).max() > 1e-12 * scale:
                raise ValueError(f"block {g} is not symmetric within 1e-12 relative")
            B = (B + B.T) / 2.0
            B.flags.writeable = False
            mats.append(B)
        if len(mats) != len(groups):
            raise LayoutMismatch("number of blocks does not match number of groups")
        object.__setattr__(self, "groups", groups)
        object.__setattr__(self, "blocks", tuple(mats))

    @classmethod
    def identity(cls, groups) -> "BlockDiagMatrix":
        return cls(groups, [np.eye(int(g)) for g in groups])

    @property
    def n(self) -> int:
        return sum(self.groups)

    def _check_layout(self, other: "BlockDiagMatrix") -> None:
        if self.groups != other.groups:
            raise LayoutMismatch(
                f"block layouts differ: {self.groups} vs {other.groups}"
            )

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.n:
            raise LayoutMismatch(f"vector length {v.shape[0]} != {self.n}")
        out = np.empty_like(v)
        start = 0
        for g, B in zip(self.groups, self.blocks):
            out[start : start + g] = B @ v[start : start + g]
            start += g
        return out

    def matmat(self, A: np.ndarray) -> np.ndarray:
        """Row-blockwise product: (block-diag) @ A for an (n, k) array."""
        A = np.asarray(A, dtype=float)
        if A.shape[0] != self.n:
            raise LayoutMismatch(f"matrix has {A.shape[0]} rows, expected {self.n}")
        out = np.empty_like(A)
        start = 0
        for g, B in zip(self.groups, self.blocks):
            out[start : start + g] = B @ A[start : start + g]
            start += g
        return out

    def quad(self, u: np.ndarray, v: np.ndarray | None = None) -> float:
        """u^T A v (v defaults to u), accumulated in group order."""
        if v is None:
            v = u
        return float(u @ self.matvec(v))

    def trace(self) -> float:
        return float(sum(np.trace(B) for B in self.blocks))

    def to_dense(self) -> np.ndarray:
        n = self.n
        out = np.zeros((n, n))
        start = 0
        for g, B in zip(self.groups, self.blocks):
            out[start : start + g, start : start + g] = B
            start += g
        return out

    def block_eigvals(self) -> list[np.ndarray]:
        return [np.linalg.eigvalsh(B) for B in self.blocks]

    def max_abs(self) -> float:
        return float(max(np.abs(B).max() for B in self.blocks))


def _invert_block(G: np.ndarray, group: int) -> np.ndarray:
    """Inverse of a symmetric PD block, guarded by a condition-number check."""
    cond = float(np.linalg.cond(G))
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularBlock(group, cond)
    try:
        c = np.linalg.cholesky(G)
    except np.linalg.LinAlgError:
        raise SingularBlock(group, cond) from None
    inv_c = np.linalg.inv(c)
    return inv_c.T @ inv_c


def _inverse_of_identity_plus(W: np.ndarray, M: np.ndarray, group: int) -> np.ndarray:
    """(I + W M W^T)^{-1} for one group, picking Woodbury when q < n_i / 2.

    The Woodbury route uses the symmetric square root of M so that PSD
    (possibly singular) M is handled without forming M^{-1}.
    """
    ni, q = W.shape
    if q < ni / 2:
        evals, evecs = np.linalg.eigh((M + M.T) / 2.0)
        evals = np.clip(evals, 0.0, None)
        R = evecs * np.sqrt(evals)  # M = R R^T
        WR = W @ R
        core = np.eye(q) + WR.T @ WR
        cond = float(np.linalg.cond(core))
        if not np.isfinite(cond) or cond > _COND_LIMIT:
            raise SingularBlock(group, cond)
        return np.eye(ni) - WR @ np.linalg.solve(core, WR.T)
    G = np.eye(ni) + W @ M @ W.T
    return _invert_block(G, group)


def build_proxy(dataset: GroupedDataset, proxy: ProxySpec) -> BlockDiagMatrix:
    """Proxy precision P~ with blocks (I + W_i M W_i^T)^{-1}."""
    if proxy.kind == "zero":
        return BlockDiagMatrix.identity(dataset.groups)
    M = proxy.resolve(dataset.q, dataset.n)
    blocks = [
        _inverse_of_identity_plus(Wi, M, g)
        for g, Wi in enumerate(dataset.w_blocks())
    ]
    return BlockDiagMatrix(dataset.groups, blocks)


def true_precision(
    dataset: GroupedDataset, re: RandomEffectSpec, verify: bool = False
) -> BlockDiagMatrix:
    """Precision P with blocks (I + sigma^-2 W_i psi W_i^T)^{-1}.

    With ``verify=True`` the long profile-likelihood form
    (I - W E^{-1} W^T)^2 + sigma^2 W E^{-1} psi^{-1} E^{-1} W^T,
    E = W^T W + sigma^2 psi^{-1}, is also evaluated per block and the two
    must agree entrywise within 1e-9.
    """
    psi = re.psi
    s2 = re.sigma_eps_sq
    try:
        psi_inv = np.linalg.inv(psi)
    except np.linalg.LinAlgError:
        raise NonPD("psi") from None
    blocks = []
    for g, Wi in enumerate(dataset.w_blocks()):
        short = _inverse_of_identity_plus(Wi, psi / s2, g)
        if verify:
            ni = Wi.shape[0]
            E = Wi.T @ Wi + s2 * psi_inv
            Einv = np.linalg.inv(E)
            shrink = np.eye(ni) - Wi @ Einv @ Wi.T
            long = shrink @ shrink + s2 * Wi @ Einv @ psi_inv @ Einv @ Wi.T
            if np.abs(short - long).max() > 1e-9:
                raise ArithmeticError(
                    f"precision identity violated on block {g}: "
                    f"max deviation {np.abs(short - long).max():.3e}"
                )
        blocks.append(short)
    return BlockDiagMatrix(dataset.groups, blocks)


@dataclass(frozen=True)
class PConditionReport:
    ok: bool
    layout_ok: bool
    psd_ok: bool
    bound: float
    max_abs: float
    min_eigenvalue: float
    violations: tuple  # (group, row, col, value) for entries above the bound


def check_p_condition(
    A: BlockDiagMatrix, dataset: GroupedDataset, c: float
) -> PConditionReport:
    """Structural diagnostic: block layout matches the grouping, blocks are
    PSD (smallest eigenvalue >= -1e-10) and all entries are bounded by
    c * log(n). Returns a report; never raises.
    """
    layout_ok = A.groups == dataset.groups
    min_eig = min(ev.min() for ev in A.block_eigvals())
    psd_ok = bool(min_eig >= -1e-10)
    bound = c * np.log(dataset.n)
    violations = []
    for g, B in enumerate(A.blocks):
        rows, cols = np.nonzero(np.abs(B) > bound)
        for r, cc in zip(rows, cols):
            violations.append((g, int(r), int(cc), float(B[r, cc])))
    ok = layout_ok and psd_ok and not violations
    return PConditionReport(
        ok=ok,
        layout_ok=layout_ok,
        psd_ok=psd_ok,
        bound=float(bound),
        max_abs=A.max_abs(),
        min_eigenvalue=float(min_eig),
        violations=tuple(violations),
    )


def block_trace(A: BlockDiagMatrix) -> float:
    """trace(A), accumulated left to right over groups."""
    return A.trace()


def block_triple_trace(
    A: BlockDiagMatrix, B: BlockDiagMatrix, C: BlockDiagMatrix
) -> float:
    """trace(A B C) computed blockwise in fixed group order."""
    A._check_layout(B)
    A._check_layout(C)
    total = 0.0
    for Ab, Bb, Cb in zip(A.blocks, B.blocks, C.blocks):
        total += float(np.trace(Ab @ Bb @ Cb))
    return total
