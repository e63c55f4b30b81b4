"""Supervision labels: pick k of N projections by detectability under a
minimum pairwise great-circle separation (a cheap data-completeness surrogate)."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleSelectionError, InvalidInputError, ProblemTooLargeError
from .geometry import ScanPosition, fibonacci_sphere, haversine, pairwise_haversine
from .ste import SelectionMask

EXHAUSTIVE_CAP = 10**6


@dataclass(eq=False)
class LabelProblem:
    d2: np.ndarray
    positions: list[ScanPosition]
    k: int
    delta_min: float

    def __post_init__(self):
        self.d2 = np.asarray(self.d2, dtype=float)
        if self.d2.ndim != 1 or self.d2.size != len(self.positions):
            raise InvalidInputError("detectability vector must match the positions")
        if not (1 <= self.k <= self.d2.size):
            raise InvalidInputError("k must lie in [1, N]")
        if self.delta_min < 0:
            raise InvalidInputError("delta_min must be non-negative")

    @property
    def n(self) -> int:
        return self.d2.size


def _check_separation(p: LabelProblem, chosen: list[int]) -> None:
    for a, b in itertools.combinations(chosen, 2):
        if haversine(p.positions[a], p.positions[b]) < p.delta_min - 1e-12:
            raise InvalidInputError("selection violates the pairwise separation constraint")


def select_greedy(p: LabelProblem) -> SelectionMask:
    """Accept positions in descending detectability (ties to the lower index)
    whenever they keep the pairwise separation, stopping at k accepted."""
    order = np.lexsort((np.arange(p.n), -p.d2))
    chosen: list[int] = []
    for idx in order:
        idx = int(idx)
        if all(
            haversine(p.positions[idx], p.positions[j]) >= p.delta_min for j in chosen
        ):
            chosen.append(idx)
            if len(chosen) == p.k:
                break
    if len(chosen) < p.k:
        raise InfeasibleSelectionError(
            f"greedy selection accepted only {len(chosen)} of {p.k} positions",
            achieved=len(chosen),
        )
    _check_separation(p, chosen)
    values = np.zeros(p.n, dtype=np.int64)
    values[chosen] = 1
    return SelectionMask(values=values, k=p.k)


def select_exhaustive(p: LabelProblem) -> SelectionMask:
    """Exact solver for small instances: best feasible k-subset by total
    detectability, ties broken towards the lexicographically first subset."""
    n_subsets = math.comb(p.n, p.k)
    if n_subsets > EXHAUSTIVE_CAP:
        raise ProblemTooLargeError(
            f"C({p.n},{p.k}) = {n_subsets} subsets exceeds the cap of {EXHAUSTIVE_CAP}"
        )
    dist = pairwise_haversine(p.positions)
    feasible_pair = dist >= p.delta_min
    best: tuple[int, ...] | None = None
    best_value = -np.inf
    for subset in itertools.combinations(range(p.n), p.k):
        ok = True
        for a, b in itertools.combinations(subset, 2):
            if not feasible_pair[a, b]:
                ok = False
                break
        if not ok:
            continue
        value = float(p.d2[list(subset)].sum())
        if value > best_value:
            best_value = value
            best = subset
    if best is None:
        raise InfeasibleSelectionError("no feasible subset exists", achieved=0)
    values = np.zeros(p.n, dtype=np.int64)
    values[list(best)] = 1
    return SelectionMask(values=values, k=p.k)


def default_delta_min(k: int) -> float:
    """Half the mean nearest-neighbour spacing of a k-point uniform lattice.

    A single point has no neighbour; its spacing is defined as pi.
    """
    if k < 1:
        raise InvalidInputError("k must be at least 1")
    if k == 1:
        return 0.5 * math.pi
    lattice = fibonacci_sphere(k)
    dist = pairwise_haversine(lattice)
    np.fill_diagonal(dist, np.inf)
    return 0.5 * float(dist.min(axis=1).mean())


def save_label_json(path, mask: SelectionMask, delta_min: float, specimen_digest: str | None = None) -> None:
    obj = {
        "n": int(mask.values.size),
        "k": mask.k,
        "delta_min": delta_min,
        "mask": [int(v) for v in mask.values],
    }
    if specimen_digest is not None:
        obj["specimen"] = specimen_digest
    with open(path, "w") as f:
        json.dump(obj, f, sort_keys=True, indent=1)


def load_label_json(path) -> tuple[SelectionMask, dict]:
    with open(path) as f:
        obj = json.load(f)
    mask = SelectionMask(values=np.asarray(obj["mask"], dtype=np.int64), k=int(obj["k"]))
    return mask, obj
