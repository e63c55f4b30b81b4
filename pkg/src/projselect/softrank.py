"""Hard and differentiable descending ranking of score vectors.

Descending ranks live on the permutahedron spanned by (n, n-1, ..., 1): the
best (largest) score gets rank 1. The differentiable variant solves a
quadratically regularized linear program over that polytope, which reduces to
a Euclidean projection and, after sorting, to an isotonic regression solved by
pool-adjacent-violators. The pooled block structure is exactly what the
Jacobian needs, so it is returned alongside the ranks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError


def _as_score_vector(scores) -> np.ndarray:
    x = np.asarray(scores, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise InvalidInputError("scores must be a non-empty 1-D vector")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("scores must be finite")
    return x


def permutahedron_weights(n: int) -> np.ndarray:
    """The vertex weight vector (n, n-1, ..., 1)."""
    if n < 1:
        raise InvalidInputError("need n >= 1")
    return np.arange(n, 0, -1, dtype=float)


@dataclass(frozen=True)
class PavPartition:
    """Contiguous pooled blocks of an isotonic regression solution.

    ``starts[i]`` is the first index of block i, ``counts[i]`` its length and
    ``values[i]`` its fitted value. Blocks are ordered, disjoint and cover
    0..n-1; values are non-increasing.
    """

    starts: np.ndarray
    counts: np.ndarray
    values: np.ndarray

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def n_blocks(self) -> int:
        return len(self.values)

    def expand(self) -> np.ndarray:
        """The fitted vector, one value per original index."""
        return np.repeat(self.values, self.counts)


class SoftRankResult(NamedTuple):
    ranks: np.ndarray
    partition: PavPartition
    permutation: np.ndarray


def hard_rank(scores) -> np.ndarray:
    """Exact descending ranks; tied entries share the mean of their span."""
    x = _as_score_vector(scores)
    n = x.size
    order = np.argsort(-x, kind="stable")
    sx = x[order]
    ranks = np.empty(n)
    boundaries = np.flatnonzero(np.diff(sx)) + 1
    starts = np.concatenate(([0], boundaries))
    stops = np.concatenate((boundaries, [n]))
    for a, b in zip(starts, stops):
        ranks[order[a:b]] = 0.5 * (a + b + 1)
    return ranks


def isotonic_regression_decreasing(targets) -> tuple[np.ndarray, PavPartition]:
    """Least-squares fit of targets under a non-increasing constraint.

    Pool-adjacent-violators: maintain a stack of blocks carrying (sum, count)
    and merge whenever a block mean rises above its predecessor's. Each block
    of the result holds the mean of the targets it covers.
    """
    y = np.asarray(targets, dtype=float)
    if y.ndim != 1 or y.size == 0:
        raise InvalidInputError("targets must be a non-empty 1-D vector")
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("targets must be finite")

    sums: list[float] = []
    counts: list[int] = []
    for value in y:
        sums.append(float(value))
        counts.append(1)
        while len(sums) >= 2 and sums[-2] * counts[-1] < sums[-1] * counts[-2]:
            s, c = sums.pop(), counts.pop()
            sums[-1] += s
            counts[-1] += c

    counts_arr = np.asarray(counts, dtype=np.int64)
    values = np.asarray(sums) / counts_arr
    starts = np.concatenate(([0], np.cumsum(counts_arr)[:-1]))
    partition = PavPartition(starts=starts, counts=counts_arr, values=values)
    return partition.expand(), partition


def soft_rank(scores, eps: float) -> SoftRankResult:
    """Differentiable descending ranks with regularization strength eps.

    Computed as the Euclidean projection of -scores/eps onto the
    permutahedron: sort descending, isotonically fit the sorted vector minus
    the vertex weights, subtract the fit and undo the sort. Small eps
    approaches :func:`hard_rank`; large eps pulls every entry towards the
    centroid (n+1)/2.
    """
    x = _as_score_vector(scores)
    if not (np.isfinite(eps) and eps > 0):
        raise InvalidInputError("eps must be a positive finite number")
    z = -x / eps
    permutation = np.argsort(-z, kind="stable")
    s = z[permutation]
    phi = permutahedron_weights(x.size)
    fitted, partition = isotonic_regression_decreasing(s - phi)
    ranks = np.empty_like(s)
    ranks[permutation] = s - fitted
    return SoftRankResult(ranks=ranks, partition=partition, permutation=permutation)


def ascending_soft_rank(scores, eps: float) -> np.ndarray:
    """Ascending variant (smallest score gets rank 1): negate the input."""
    x = _as_score_vector(scores)
    return soft_rank(-x, eps).ranks


def soft_rank_jvp(scores, eps: float, partition: PavPartition, permutation, tangent) -> np.ndarray:
    """Jacobian-vector product of :func:`soft_rank` at (scores, eps).

    The projection's Jacobian averages within pooled blocks: in sorted space
    it is (I - A) with A the blockwise mean operator, composed with the input
    scaling -1/eps and the sort permutation. ``partition``/``permutation``
    must come from a soft_rank call on the same inputs.
    """
    x = _as_score_vector(scores)
    t = np.asarray(tangent, dtype=float)
    sigma = np.asarray(permutation)
    if t.shape != x.shape or sigma.shape != x.shape or partition.n != x.size:
        raise InvalidInputError("tangent/partition/permutation do not match the scores")
    ts = (-t / eps)[sigma]
    block_means = np.add.reduceat(ts, partition.starts) / partition.counts
    out_sorted = ts - np.repeat(block_means, partition.counts)
    out = np.empty_like(out_sorted)
    out[sigma] = out_sorted
    return out


def soft_rank_vjp(scores, eps: float, partition: PavPartition, permutation, upstream) -> np.ndarray:
    """Vector-Jacobian product; the Jacobian is symmetric up to the sort,
    so this is the same map as :func:`soft_rank_jvp`."""
    return soft_rank_jvp(scores, eps, partition, permutation, upstream)


def check_rank_vector(mu, rel_tol: float = 1e-9) -> None:
    """Raise if ``mu`` is not a valid point of the rank permutahedron."""
    mu = np.asarray(mu, dtype=float)
    n = mu.size
    phi = permutahedron_weights(n)
    total = phi.sum()
    if abs(mu.sum() - total) > rel_tol * total:
        raise InvalidInputError("rank vector entries do not sum to n(n+1)/2")
    if mu.min() < 1.0 - 1e-8 or mu.max() > n + 1e-8:
        raise InvalidInputError("rank vector entries outside [1, n]")
    prefix = np.cumsum(np.sort(mu)[::-1])
    if np.any(prefix > np.cumsum(phi) + 1e-8 * total):
        raise InvalidInputError("rank vector violates majorization by the vertex weights")
