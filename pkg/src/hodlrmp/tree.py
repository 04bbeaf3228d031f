"""Balanced binary cluster trees defining the block partition.

Index intervals are half-open 0-based pairs (start, stop); level k splits
the index set {0, ..., n-1} into 2**k consecutive intervals.  Every split
gives the left child the ceiling of half the parent size, so sibling sizes
differ by at most one and for n = 2**depth * m all leaves have size m.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["ClusterTree", "build_tree", "depth_for_leaf_size"]

Interval = tuple[int, int]


@dataclass(frozen=True)
class ClusterTree:
    n: int
    depth: int
    ranges: tuple[tuple[Interval, ...], ...]  # ranges[k][i], level k, node i

    def level_blocks(self, k: int) -> list[Interval]:
        """The 2**k index intervals at level k, in order."""
        if not 0 <= k <= self.depth:
            raise ValueError(f"level {k} out of range for tree of depth {self.depth}")
        return list(self.ranges[k])

    @property
    def leaf_ranges(self) -> list[Interval]:
        return list(self.ranges[self.depth])


def build_tree(n: int, depth: int) -> ClusterTree:
    """Build the depth-level cluster tree over {0, ..., n-1}.

    Requires 2**depth <= n so that no leaf is empty.
    """
    if n < 1:
        raise ValueError(f"dimension {n} must be positive")
    if depth < 0:
        raise ValueError(f"depth {depth} must be nonnegative")
    if 2**depth > n:
        raise ValueError(f"tree too deep for dimension: 2**{depth} > {n}")
    levels: list[tuple[Interval, ...]] = [((0, n),)]
    for _ in range(depth):
        nxt: list[Interval] = []
        for a, b in levels[-1]:
            left = (b - a + 1) // 2  # ceil of half the parent size
            nxt.append((a, a + left))
            nxt.append((a + left, b))
        levels.append(tuple(nxt))
    return ClusterTree(n=n, depth=depth, ranges=tuple(levels))


def depth_for_leaf_size(n: int, n_min: int) -> int:
    """Largest depth whose smallest leaf still holds at least n_min indices."""
    if n < 1 or n_min < 1:
        raise ValueError("n and n_min must be positive")
    depth = 0
    while n // 2 ** (depth + 1) >= n_min:
        depth += 1
    return depth
