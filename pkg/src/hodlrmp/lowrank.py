"""Truncated-SVD compression of dense blocks and factored-block algebra.

Convention: a low-rank block is held as U @ V.T where U has orthonormal
columns (to working accuracy) and V carries the singular-value scaling.
Truncation tolerances are relative in the Frobenius norm: the discarded
singular-value tail satisfies ||tail|| <= eps * ||block||_F.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arithmetic import Arithmetic
from .fpsim import FP64, PrecisionFormat, round_matrix

__all__ = [
    "LowRankFactor",
    "truncate_block",
    "truncate_from_svd",
    "store_factor",
    "recompress_sum",
    "factor_product",
]

_EPS64 = 2.0**-53


@dataclass(frozen=True, eq=False)
class LowRankFactor:
    """A factored block U @ V.T with a storage-format tag for its entries."""

    U: np.ndarray
    V: np.ndarray
    fmt: PrecisionFormat = field(default=FP64)

    def __post_init__(self):
        if self.U.ndim != 2 or self.V.ndim != 2:
            raise ValueError("factor matrices must be 2-D")
        if self.U.shape[1] != self.V.shape[1]:
            raise ValueError(
                f"rank mismatch between U {self.U.shape} and V {self.V.shape}"
            )

    @property
    def rows(self) -> int:
        return self.U.shape[0]

    @property
    def cols(self) -> int:
        return self.V.shape[0]

    @property
    def rank(self) -> int:
        return self.U.shape[1]

    def dense(self) -> np.ndarray:
        """Reconstruct the block in binary64."""
        return self.U @ self.V.T

    def restrict(self, rows: slice, cols: slice) -> "LowRankFactor":
        """The sub-block picked out by row/column slices, same rank."""
        return LowRankFactor(self.U[rows], self.V[cols], self.fmt)

    def negated(self) -> "LowRankFactor":
        return LowRankFactor(self.U, -self.V, self.fmt)


def _svd(B: np.ndarray):
    try:
        return np.linalg.svd(B, full_matrices=False)
    except np.linalg.LinAlgError:
        # gesdd occasionally fails to converge; gesvd is slower but sturdier
        import scipy.linalg

        return scipy.linalg.svd(B, full_matrices=False, lapack_driver="gesvd")


def _truncation_rank(s: np.ndarray, eps: float, nmax: int) -> int:
    """Smallest rank whose discarded singular-value tail meets the tolerance.

    eps == 0 keeps the numerical rank: everything above nmax * u64 * s[0].
    """
    if s.size == 0:
        return 0
    if eps == 0.0:
        return int(np.count_nonzero(s > nmax * _EPS64 * s[0]))
    tails = np.sqrt(np.cumsum(s[::-1] ** 2))[::-1]  # tails[r] = ||s[r:]||
    ok = np.concatenate([tails <= eps * tails[0], [True]])
    return int(np.argmax(ok))


def truncate_from_svd(
    U: np.ndarray, s: np.ndarray, Vt: np.ndarray, eps: float, nmax: int
) -> LowRankFactor:
    """Assemble the eps-truncated factor from a precomputed thin SVD."""
    r = _truncation_rank(s, eps, nmax)
    return LowRankFactor(np.ascontiguousarray(U[:, :r]), Vt[:r].T * s[:r], FP64)


def truncate_block(B: np.ndarray, eps: float) -> LowRankFactor:
    """Compress a dense block to relative Frobenius tolerance eps via the SVD.

    Returns the factor of smallest rank r with sqrt(sum_{i>r} s_i^2)
    <= eps * ||B||_F; eps == 0 keeps the full numerical rank.
    """
    B = np.asarray(B, dtype=np.float64)
    if not np.all(np.isfinite(B)):
        raise ValueError("cannot compress a block with non-finite entries")
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"tolerance {eps} outside [0, 1)")
    U, s, Vt = _svd(B)
    return truncate_from_svd(U, s, Vt, eps, max(B.shape))


def store_factor(f: LowRankFactor, fmt: PrecisionFormat) -> LowRankFactor:
    """Round both factor matrices entrywise into fmt; rank unchanged."""
    return LowRankFactor(round_matrix(f.U, fmt), round_matrix(f.V, fmt), fmt)


def recompress_sum(a: LowRankFactor, b: LowRankFactor, eps: float) -> LowRankFactor:
    """Recompress a + b (as U_a V_a^T + U_b V_b^T) to relative tolerance eps.

    Thin QR of the stacked factors followed by an SVD of the small core, so
    the cost is governed by the combined rank, not the block size.
    """
    if (a.rows, a.cols) != (b.rows, b.cols):
        raise ValueError(f"shape mismatch: {(a.rows, a.cols)} vs {(b.rows, b.cols)}")
    joint = a.rank + b.rank
    if joint == 0:
        return LowRankFactor(np.zeros((a.rows, 0)), np.zeros((a.cols, 0)), FP64)
    Qu, Ru = np.linalg.qr(np.hstack([a.U, b.U]))
    Qv, Rv = np.linalg.qr(np.hstack([a.V, b.V]))
    X, s, Yt = _svd(Ru @ Rv.T)
    r = _truncation_rank(s, eps, max(a.rows, a.cols))
    return LowRankFactor(Qu @ X[:, :r], Qv @ (Yt[:r].T * s[:r]), FP64)


def factor_product(
    a: LowRankFactor, b: LowRankFactor, arith: Arithmetic | None = None
) -> LowRankFactor:
    """The product (U_a V_a^T)(U_b V_b^T) as a factor of rank min(a.rank, b.rank).

    The small core V_a^T U_b is absorbed into the thinner side.  When an
    Arithmetic context is given, the products are evaluated with its
    per-operation rounding.
    """
    if a.cols != b.rows:
        raise ValueError(f"shape mismatch: inner dimensions {a.cols} vs {b.rows}")
    mm = arith.matmul if arith is not None else np.matmul
    if min(a.rank, b.rank) == 0:
        return LowRankFactor(np.zeros((a.rows, 0)), np.zeros((b.cols, 0)), FP64)
    core = mm(a.V.T, b.U)  # a.rank x b.rank
    if a.rank <= b.rank:
        return LowRankFactor(a.U, mm(b.V, core.T), FP64)
    return LowRankFactor(mm(a.U, core), b.V, FP64)
