"""HODLR matrices with per-level storage precisions.

A HODLR matrix mirrors its cluster tree: every node above the leaf level is
a 2x2 block partition whose two off-diagonal blocks are stored as low-rank
factors, and each leaf holds a dense diagonal block in the working format.
The off-diagonal factors at tree level k share one storage format, recorded
in a per-build PrecisionPlan.

The adaptive builder measures, for each level k, the weight

    xi_k = max ||off-diagonal block at level k||_F / ||A||_F

and admits any storage format whose unit roundoff is at most
eps / (2**(k/2) * xi_k); the coarsest admissible format is chosen.  A build
with no fallback flags keeps the global reconstruction error below
(2*sqrt(2*depth) + 1) * eps relative.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .fpsim import FP64, PrecisionFormat, format_spec, parse_format, round_matrix
from .lowrank import LowRankFactor, store_factor, truncate_block, truncate_from_svd
from .tree import ClusterTree, build_tree

__all__ = [
    "HodlrLeaf",
    "HodlrBranch",
    "PrecisionPlan",
    "HodlrMatrix",
    "admissible_roundoff",
    "select_level_format",
    "build_uniform",
    "build_adaptive",
    "reconstruct_dense",
    "storage_bits",
    "max_rank",
    "save_hodlr",
    "load_hodlr",
]

CONTAINER_VERSION = 1


@dataclass(eq=False)
class HodlrLeaf:
    block: np.ndarray


@dataclass(eq=False)
class HodlrBranch:
    first: "HodlrNode"   # leading diagonal child
    second: "HodlrNode"  # trailing diagonal child
    upper: LowRankFactor  # block (1,2)
    lower: LowRankFactor  # block (2,1)


HodlrNode = HodlrLeaf | HodlrBranch


def node_dim(node: HodlrNode) -> int:
    if isinstance(node, HodlrLeaf):
        return node.block.shape[0]
    return node_dim(node.first) + node_dim(node.second)


@dataclass
class PrecisionPlan:
    """Storage formats per tree level (index 0 holds level 1).

    For adaptive builds, xi, thresholds and fallback record the measured
    level weights, the admissible roundoffs eps / (2**(k/2) * xi_k), and
    whether no available format met the threshold (in which case the working
    format was used and the build's error guarantee is not certified).
    """

    chosen: list[PrecisionFormat]
    xi: list[float] | None = None
    thresholds: list[float] | None = None
    fallback: list[bool] | None = None

    def level_format(self, k: int) -> PrecisionFormat:
        return self.chosen[k - 1]

    @property
    def any_fallback(self) -> bool:
        return bool(self.fallback) and any(self.fallback)


@dataclass(eq=False)
class HodlrMatrix:
    tree: ClusterTree
    root: HodlrNode
    eps: float
    plan: PrecisionPlan
    working_format: PrecisionFormat

    @property
    def n(self) -> int:
        return self.tree.n

    @property
    def depth(self) -> int:
        return self.tree.depth

    def offdiag_blocks(self):
        """Yield (level, pair, rows_first, rows_second, upper, lower) for all
        sibling pairs, level by level and left to right within each level."""
        wave = [(self.root, 0)]
        for k in range(self.depth):
            nxt = []
            for node, i in wave:
                r1 = self.tree.ranges[k + 1][2 * i]
                r2 = self.tree.ranges[k + 1][2 * i + 1]
                yield k + 1, i, r1, r2, node.upper, node.lower
                nxt.append((node.first, 2 * i))
                nxt.append((node.second, 2 * i + 1))
            wave = nxt

    def leaves(self):
        """Yield (index, (start, stop), block) for the dense diagonal leaves."""

        def rec(node, k, i):
            if isinstance(node, HodlrLeaf):
                yield i, self.tree.ranges[k][i], node.block
            else:
                yield from rec(node.first, k + 1, 2 * i)
                yield from rec(node.second, k + 1, 2 * i + 1)

        yield from rec(self.root, 0, 0)


def admissible_roundoff(eps: float, k: int, xi: float) -> float:
    """Largest storage roundoff allowed at level k for weight xi."""
    if xi < 0:
        raise ValueError("level weight must be nonnegative")
    if xi == 0.0:
        return math.inf
    return eps / (2.0 ** (k / 2.0) * xi)


def select_level_format(
    threshold: float,
    working: PrecisionFormat,
    available: list[PrecisionFormat] | tuple[PrecisionFormat, ...],
) -> tuple[PrecisionFormat, bool]:
    """Coarsest format from {working} | available with roundoff <= threshold.

    Returns (format, fallback); fallback is True when no candidate qualifies
    and the working format is used as the floor.
    """
    candidates = {format_spec(f): f for f in (working, *available)}
    eligible = [f for f in candidates.values() if f.unit_roundoff <= threshold]
    if not eligible:
        return working, True
    return max(eligible, key=lambda f: (f.unit_roundoff, f.name)), False


def _validate_input(A: np.ndarray, tree: ClusterTree) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if A.shape[0] != tree.n:
        raise ValueError(f"dimension mismatch: matrix {A.shape[0]}, tree {tree.n}")
    return A


def _compress(A, rows, cols, eps, svd_cache):
    """Truncate the sub-block A[rows, cols]; full SVDs are memoized so eps
    sweeps over one matrix pay the factorization cost once."""
    a, b = rows
    c, d = cols
    if svd_cache is None:
        return truncate_block(A[a:b, c:d], eps)
    key = (a, b, c, d)
    if key not in svd_cache:
        B = A[a:b, c:d]
        if not np.all(np.isfinite(B)):
            raise ValueError("cannot compress a block with non-finite entries")
        svd_cache[key] = np.linalg.svd(B, full_matrices=False)
    U, s, Vt = svd_cache[key]
    return truncate_from_svd(U, s, Vt, eps, max(b - a, d - c))


def _assemble(A, tree, eps, plan, working, svd_cache) -> HodlrNode:
    def rec(k, i):
        a, b = tree.ranges[k][i]
        if k == tree.depth:
            return HodlrLeaf(round_matrix(A[a:b, a:b], working))
        r1 = tree.ranges[k + 1][2 * i]
        r2 = tree.ranges[k + 1][2 * i + 1]
        fmt = plan.level_format(k + 1)
        upper = store_factor(_compress(A, r1, r2, eps, svd_cache), fmt)
        lower = store_factor(_compress(A, r2, r1, eps, svd_cache), fmt)
        return HodlrBranch(rec(k + 1, 2 * i), rec(k + 1, 2 * i + 1), upper, lower)

    return rec(0, 0)


def build_uniform(
    A: np.ndarray,
    tree: ClusterTree,
    eps: float,
    formats: list[PrecisionFormat],
    working: PrecisionFormat = FP64,
    svd_cache: dict | None = None,
) -> HodlrMatrix:
    """Build a HODLR matrix storing level-k factors in formats[k-1].

    Off-diagonal blocks are truncated to relative tolerance eps and the
    factors rounded into the level's format; only the factors are kept.
    Leaf diagonal blocks are stored dense in the working format.
    """
    A = _validate_input(A, tree)
    if len(formats) != tree.depth:
        raise ValueError(f"need {tree.depth} level formats, got {len(formats)}")
    plan = PrecisionPlan(chosen=list(formats))
    root = _assemble(A, tree, eps, plan, working, svd_cache)
    return HodlrMatrix(tree, root, eps, plan, working)


def build_adaptive(
    A: np.ndarray,
    tree: ClusterTree,
    eps: float,
    working: PrecisionFormat = FP64,
    available: tuple[PrecisionFormat, ...] = (),
    svd_cache: dict | None = None,
) -> HodlrMatrix:
    """Build a HODLR matrix choosing each level's storage format adaptively.

    Level weights xi_k come from the original (pre-truncation) block norms,
    all measured in binary64.  Each level gets the coarsest format from
    {working} | available whose unit roundoff is at most
    eps / (2**(k/2) * xi_k); if none qualifies the working format is used
    and a fallback flag is recorded for the level.
    """
    A = _validate_input(A, tree)
    if not 0.0 <= eps < 1.0:
        raise ValueError(f"tolerance {eps} outside [0, 1)")
    nrm_all = float(np.sum(A * A))
    xi, thresholds, chosen, fallback = [], [], [], []
    for k in range(1, tree.depth + 1):
        nrm = 0.0
        level = tree.ranges[k]
        for p in range(0, 2**k, 2):
            a, b = level[p]
            c, d = level[p + 1]
            nrm = max(nrm, float(np.sum(A[a:b, c:d] ** 2)))
            nrm = max(nrm, float(np.sum(A[c:d, a:b] ** 2)))
        x = math.sqrt(nrm / nrm_all) if nrm_all > 0.0 else 0.0
        thr = admissible_roundoff(eps, k, x)
        fmt, fb = select_level_format(thr, working, available)
        xi.append(x)
        thresholds.append(thr)
        chosen.append(fmt)
        fallback.append(fb)
    plan = PrecisionPlan(chosen=chosen, xi=xi, thresholds=thresholds, fallback=fallback)
    root = _assemble(A, tree, eps, plan, working, svd_cache)
    return HodlrMatrix(tree, root, eps, plan, working)


def reconstruct_dense(H: HodlrMatrix) -> np.ndarray:
    """Assemble the full matrix in binary64 from leaves and factor products."""
    out = np.zeros((H.n, H.n))
    for _, (a, b), block in H.leaves():
        out[a:b, a:b] = block
    for _, _, (a, b), (c, d), upper, lower in H.offdiag_blocks():
        out[a:b, c:d] = upper.dense()
        out[c:d, a:b] = lower.dense()
    return out


def storage_bits(H: HodlrMatrix) -> int:
    """Total bits to store all factors (in their formats) and dense leaves."""
    total = 0
    for _, (a, b), _ in H.leaves():
        total += (b - a) * (b - a) * H.working_format.bits
    for _, _, _, _, upper, lower in H.offdiag_blocks():
        for f in (upper, lower):
            total += (f.rows + f.cols) * f.rank * f.fmt.bits
    return total


def max_rank(H: HodlrMatrix) -> int:
    """Largest off-diagonal factor rank in the matrix (0 for depth 0)."""
    return max((u.rank for _, _, _, _, u, _ in H.offdiag_blocks()), default=0) | max(
        (l.rank for _, _, _, _, _, l in H.offdiag_blocks()), default=0
    )


def save_hodlr(H: HodlrMatrix, path) -> None:
    """Write a HodlrMatrix to a self-describing .npz container (schema v1).

    The container holds a JSON metadata record (dimension, depth, tolerance,
    per-level formats, precision plan) plus one array per dense leaf and two
    per off-diagonal factor.  Payload arrays are binary64, so reloading is
    bitwise exact.
    """
    meta = {
        "container_version": CONTAINER_VERSION,
        "n": H.n,
        "depth": H.depth,
        "eps": H.eps,
        "working": format_spec(H.working_format),
        "level_formats": [format_spec(f) for f in H.plan.chosen],
        "xi": H.plan.xi,
        "thresholds": H.plan.thresholds,
        "fallback": H.plan.fallback,
    }
    arrays = {}
    for i, _, block in H.leaves():
        arrays[f"leaf{i}"] = block
    for k, pair, _, _, upper, lower in H.offdiag_blocks():
        arrays[f"lvl{k}_pair{pair}_upper_U"] = upper.U
        arrays[f"lvl{k}_pair{pair}_upper_V"] = upper.V
        arrays[f"lvl{k}_pair{pair}_lower_U"] = lower.U
        arrays[f"lvl{k}_pair{pair}_lower_V"] = lower.V
    np.savez(path, __meta__=json.dumps(meta), **arrays)


def load_hodlr(path) -> HodlrMatrix:
    """Read a HodlrMatrix written by save_hodlr."""
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"][()]))
        if meta.get("container_version") != CONTAINER_VERSION:
            raise ValueError(
                f"unsupported container version {meta.get('container_version')!r}"
            )
        tree = build_tree(meta["n"], meta["depth"])
        working = parse_format(meta["working"])
        chosen = [parse_format(s) for s in meta["level_formats"]]
        plan = PrecisionPlan(
            chosen=chosen,
            xi=meta.get("xi"),
            thresholds=meta.get("thresholds"),
            fallback=meta.get("fallback"),
        )

        def rec(k, i):
            if k == tree.depth:
                return HodlrLeaf(data[f"leaf{i}"])
            pair = i  # pair index within level k equals the node index
            fmt = chosen[k]
            upper = LowRankFactor(
                data[f"lvl{k + 1}_pair{pair}_upper_U"],
                data[f"lvl{k + 1}_pair{pair}_upper_V"],
                fmt,
            )
            lower = LowRankFactor(
                data[f"lvl{k + 1}_pair{pair}_lower_U"],
                data[f"lvl{k + 1}_pair{pair}_lower_V"],
                fmt,
            )
            return HodlrBranch(rec(k + 1, 2 * i), rec(k + 1, 2 * i + 1), upper, lower)

        root = rec(0, 0)
    return HodlrMatrix(tree, root, float(meta["eps"]), plan, working)
