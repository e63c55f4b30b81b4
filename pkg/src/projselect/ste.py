"""Top-k thresholding of rank vectors with a straight-through backward pass."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError


@dataclass
class SelectionMask:
    """Binary marker of chosen projections plus the requested count k.

    With exact integer ranks the mask carries exactly k ones; soft rank
    vectors may select more or fewer, which ``count`` surfaces.
    """

    values: np.ndarray
    k: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.int64)
        if v.ndim != 1 or v.size == 0:
            raise InvalidInputError("mask must be a non-empty 1-D vector")
        if not np.all((v == 0) | (v == 1)):
            raise InvalidInputError("mask entries must be 0 or 1")
        if self.k < 1:
            raise InvalidInputError("k must be at least 1")
        self.values = v

    @property
    def count(self) -> int:
        return int(self.values.sum())

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.values)


def threshold_topk(ranks, k: int) -> SelectionMask:
    """Entrywise selection rule: mark a projection iff its rank value <= k.

    The boundary is inclusive. No re-normalization is applied when soft
    ranks yield a count different from k; inspect ``SelectionMask.count``.
    """
    r = np.asarray(ranks, dtype=float)
    if r.ndim != 1 or r.size == 0:
        raise InvalidInputError("ranks must be a non-empty 1-D vector")
    if not np.all(np.isfinite(r)):
        raise InvalidInputError("ranks must be finite")
    if not (1 <= k <= r.size):
        raise InvalidInputError(f"k={k} outside [1, {r.size}]")
    return SelectionMask(values=(r <= k).astype(np.int64), k=int(k))


def ste_vjp(upstream, n: int) -> np.ndarray:
    """Backward pass of the threshold: the identity map on the upstream vector."""
    u = np.asarray(upstream, dtype=float)
    if u.ndim != 1 or u.size != n:
        raise InvalidInputError(f"upstream must be a 1-D vector of length {n}")
    return u.copy()
