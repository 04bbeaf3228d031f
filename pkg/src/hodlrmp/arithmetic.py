"""Per-operation rounding for simulated working-precision kernels."""

from __future__ import annotations

import numpy as np

from .fpsim import PrecisionFormat, round_matrix

__all__ = ["MODES", "Arithmetic"]

MODES = ("storage-only", "full-arithmetic")


class Arithmetic:
    """Elementary matrix operations in a simulated working precision.

    In "full-arithmetic" mode the result of every scalar add, subtract,
    multiply and divide is rounded to the working format before it is used
    again, emulating execution on hardware of that precision.  Operands held
    in binary64 enter operations as-is (an upcast is exact); only results are
    rounded.  In "storage-only" mode, or when the working format represents
    every binary64 value, operations run in plain binary64.

    Matrix products accumulate strictly left to right along the contraction
    axis, so results are reproducible and independent of how callers block
    their data.
    """

    def __init__(self, fmt: PrecisionFormat, mode: str = "full-arithmetic"):
        if mode not in MODES:
            raise ValueError(f"unknown arithmetic mode {mode!r}; expected one of {MODES}")
        self.fmt = fmt
        self.mode = mode
        self.exact = mode == "storage-only" or fmt.is_exact_for_binary64

    def round(self, x: np.ndarray) -> np.ndarray:
        return x if self.exact else round_matrix(x, self.fmt)

    def add(self, a, b):
        return a + b if self.exact else self.round(a + b)

    def sub(self, a, b):
        return a - b if self.exact else self.round(a - b)

    def mul(self, a, b):
        return a * b if self.exact else self.round(a * b)

    def div(self, a, b):
        return a / b if self.exact else self.round(a / b)

    def matmul(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Product A @ B with every scalar multiply and add rounded.

        The contraction runs j = 0, 1, ... with one rounded outer product and
        one rounded accumulation per step.
        """
        if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
            raise ValueError(f"matmul shape mismatch: {A.shape} x {B.shape}")
        if self.exact:
            return A @ B
        q = A.shape[1]
        if q == 0:
            return np.zeros((A.shape[0], B.shape[1]))
        acc = self.round(A[:, 0:1] * B[0:1, :])
        for j in range(1, q):
            acc = self.round(acc + self.round(A[:, j : j + 1] * B[j : j + 1, :]))
        return acc
