"""Projection-to-scalar regressor and the end-to-end selection training loop.

Every projection of a scan is pooled to 32x32 and regressed to one score.
Scores pass through the differentiable ranking and the hard top-k threshold;
binary cross entropy against the label mask drives Adam updates, with
gradients reaching the regressor through the straight-through threshold and
the exact ranking Jacobian.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import InvalidInputError
from .phantom import ProjectionImage
from .softrank import PavPartition, soft_rank, soft_rank_vjp
from .ste import SelectionMask, ste_vjp, threshold_topk

INPUT_SIDE = 32

# name, (rows, cols) of the dense layers; biases follow each weight.
ARCHITECTURE = (
    ("w1", (64, INPUT_SIDE * INPUT_SIDE)),
    ("b1", (64,)),
    ("w2", (16, 64)),
    ("b2", (16,)),
    ("w3", (1, 16)),
    ("b3", (1,)),
)

# biases use the fan-in of their layer for the init bound
_BIAS_FAN_IN = {"b1": INPUT_SIDE * INPUT_SIDE, "b2": 64, "b3": 16}

CHECKPOINT_MAGIC = b"PSEL"


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-5
    epochs: int = 600
    eps: float = 1.0
    k: int = 100
    clamp: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise InvalidInputError("learning rate must be positive")
        if self.epochs < 1:
            raise InvalidInputError("need at least one epoch")
        if self.eps <= 0:
            raise InvalidInputError("soft-rank eps must be positive")
        if not (0.0 < self.clamp < 0.5):
            raise InvalidInputError("bce clamp must lie in (0, 0.5)")
        if self.k < 1:
            raise InvalidInputError("k must be at least 1")


@lru_cache(maxsize=32)
def _pool_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Area-overlap averaging matrix mapping n_in samples to n_out bins."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        j0, j1 = int(np.floor(lo)), int(np.ceil(hi))
        for j in range(j0, min(j1, n_in)):
            overlap = min(hi, j + 1) - max(lo, j)
            if overlap > 0:
                m[i, j] = overlap / scale
    return m


def downsample_image(img: np.ndarray, side: int = INPUT_SIDE) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    if img.ndim != 2:
        raise InvalidInputError("projection must be a 2-D pixel array")
    left = _pool_matrix(img.shape[0], side)
    right = _pool_matrix(img.shape[1], side)
    return left @ img @ right.T


@dataclass(eq=False)
class Regressor:
    """Fixed small dense network: 1024 -> 64 -> 16 -> 1 with ReLU."""

    params: dict[str, np.ndarray]

    def __post_init__(self):
        for name, shape in ARCHITECTURE:
            if name not in self.params or self.params[name].shape != shape:
                raise InvalidInputError(f"parameter {name} missing or of wrong shape")
            if not np.all(np.isfinite(self.params[name])):
                raise InvalidInputError(f"parameter {name} contains non-finite values")

    @classmethod
    def initialize(cls, seed: int = 0) -> "Regressor":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init from a seeded generator."""
        rng = np.random.default_rng(seed)
        params = {}
        for name, shape in ARCHITECTURE:
            fan_in = shape[1] if len(shape) == 2 else _BIAS_FAN_IN[name]
            bound = 1.0 / np.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        return cls(params=params)

    def copy(self) -> "Regressor":
        return Regressor(params={k: v.copy() for k, v in self.params.items()})


class _ForwardCache(NamedTuple):
    x: np.ndarray
    pre1: np.ndarray
    act1: np.ndarray
    pre2: np.ndarray
    act2: np.ndarray


def _stack_scan(scan) -> np.ndarray:
    """Pool a scan (list of projections or (N, H, W) array) to (N, 1024)."""
    if isinstance(scan, np.ndarray) and scan.ndim == 2:
        raise InvalidInputError("a scan must contain multiple projections")
    images = [p.pixels if isinstance(p, ProjectionImage) else np.asarray(p) for p in scan]
    if len(images) == 0:
        raise InvalidInputError("scan must be non-empty")
    return np.stack([downsample_image(img).ravel() for img in images])


def forward_scores(reg: Regressor, x: np.ndarray) -> tuple[np.ndarray, _ForwardCache]:
    """Scores for pooled flattened inputs x of shape (N, 1024)."""
    p = reg.params
    pre1 = x @ p["w1"].T + p["b1"]
    act1 = np.maximum(pre1, 0.0)
    pre2 = act1 @ p["w2"].T + p["b2"]
    act2 = np.maximum(pre2, 0.0)
    scores = act2 @ p["w3"].T + p["b3"]
    return scores[:, 0], _ForwardCache(x, pre1, act1, pre2, act2)


def backward_scores(reg: Regressor, cache: _ForwardCache, dscores: np.ndarray) -> dict[str, np.ndarray]:
    """Parameter gradients given d(objective)/d(scores)."""
    p = reg.params
    d3 = np.asarray(dscores, dtype=float)[:, None]
    grads = {
        "w3": d3.T @ cache.act2,
        "b3": d3.sum(axis=0),
    }
    d2 = (d3 @ p["w3"]) * (cache.pre2 > 0.0)
    grads["w2"] = d2.T @ cache.act1
    grads["b2"] = d2.sum(axis=0)
    d1 = (d2 @ p["w2"]) * (cache.pre1 > 0.0)
    grads["w1"] = d1.T @ cache.x
    grads["b1"] = d1.sum(axis=0)
    return grads


def regress(reg: Regressor, projection) -> float:
    """Scalar value of a single projection."""
    img = projection.pixels if isinstance(projection, ProjectionImage) else projection
    x = downsample_image(img).ravel()[None, :]
    scores, _ = forward_scores(reg, x)
    return float(scores[0])


class PipelineResult(NamedTuple):
    scores: np.ndarray
    ranks: np.ndarray
    mask: SelectionMask
    partition: PavPartition
    permutation: np.ndarray


def forward_pipeline(reg: Regressor, scan, cfg: TrainConfig) -> PipelineResult:
    """Scores -> soft ranks -> top-k mask for one scan."""
    x = _stack_scan(scan)
    scores, _ = forward_scores(reg, x)
    sr = soft_rank(scores, cfg.eps)
    mask = threshold_topk(sr.ranks, min(cfg.k, scores.size))
    return PipelineResult(scores, sr.ranks, mask, sr.partition, sr.permutation)


def bce_loss(mask_values, label_values, clamp: float) -> float:
    """Binary cross entropy between a clamped binary mask and a binary label."""
    m = np.asarray(mask_values, dtype=float)
    y = np.asarray(label_values, dtype=float)
    if m.shape != y.shape:
        raise InvalidInputError("mask and label must have the same length")
    if not (0.0 < clamp < 0.5):
        raise InvalidInputError("clamp must lie in (0, 0.5)")
    p = np.clip(m, clamp, 1.0 - clamp)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def bce_mask_gradient(mask_values, label_values, clamp: float) -> np.ndarray:
    """Analytic BCE derivative w.r.t. the mask, evaluated at the clamped values."""
    m = np.asarray(mask_values, dtype=float)
    y = np.asarray(label_values, dtype=float)
    if m.shape != y.shape:
        raise InvalidInputError("mask and label must have the same length")
    p = np.clip(m, clamp, 1.0 - clamp)
    return -(y / p - (1.0 - y) / (1.0 - p)) / m.size


def adam_init(params: dict[str, np.ndarray]) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    return {k: (np.zeros_like(v), np.zeros_like(v)) for k, v in params.items()}


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict[str, tuple[np.ndarray, np.ndarray]],
    t: int,
    cfg: TrainConfig,
) -> tuple[dict[str, np.ndarray], dict[str, tuple[np.ndarray, np.ndarray]]]:
    """One bias-corrected Adam update (t counts from 1)."""
    if t < 1:
        raise InvalidInputError("step index starts at 1")
    new_params, new_state = {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise InvalidInputError(f"gradient shape mismatch for {name}")
        m, v = state[name]
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * g
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g
        m_hat = m / (1.0 - cfg.beta1**t)
        v_hat = v / (1.0 - cfg.beta2**t)
        new_params[name] = p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_epsilon)
        new_state[name] = (m, v)
    return new_params, new_state


def selection_gradient(scores: np.ndarray, result: PipelineResult, label_values, cfg: TrainConfig) -> np.ndarray:
    """d(loss)/d(scores) for the trained selection objective.

    The loss gradient w.r.t. the mask passes straight through the threshold.
    The threshold selects *small* rank values, so its straight-through
    surrogate carries the orientation flip (a mask that should grow asks the
    rank value to shrink); the result then flows through the exact ranking
    Jacobian transpose.
    """
    upstream = bce_mask_gradient(result.mask.values, label_values, cfg.clamp)
    through_ste = ste_vjp(upstream, scores.size)
    return soft_rank_vjp(scores, cfg.eps, result.partition, result.permutation, -through_ste)


def scan_step_gradient(
    reg: Regressor, x: np.ndarray, label_values, cfg: TrainConfig
) -> tuple[float, dict[str, np.ndarray], PipelineResult]:
    """Loss, parameter gradients and forward artifacts for one scan batch."""
    scores, cache = forward_scores(reg, x)
    sr = soft_rank(scores, cfg.eps)
    mask = threshold_topk(sr.ranks, min(cfg.k, scores.size))
    result = PipelineResult(scores, sr.ranks, mask, sr.partition, sr.permutation)
    loss = bce_loss(mask.values, label_values, cfg.clamp)
    dscores = selection_gradient(scores, result, label_values, cfg)
    grads = backward_scores(reg, cache, dscores)
    return loss, grads, result


def train(dataset, cfg: TrainConfig) -> tuple[Regressor, np.ndarray]:
    """Train the regressor on (scan, label) pairs, one scan per batch.

    Returns the trained regressor and the loss history with one row per
    epoch and one column per scan. Deterministic for a given seed.
    """
    if len(dataset) == 0:
        raise InvalidInputError("dataset must be non-empty")
    pooled = []
    labels = []
    n_ref = None
    for scan, label in dataset:
        x = _stack_scan(scan)
        y = label.values if isinstance(label, SelectionMask) else np.asarray(label)
        if y.size != x.shape[0]:
            raise InvalidInputError("label length does not match the scan")
        if n_ref is None:
            n_ref = x.shape[0]
        elif x.shape[0] != n_ref:
            raise InvalidInputError("all scans must contain the same number of projections")
        pooled.append(x)
        labels.append(np.asarray(y, dtype=float))

    reg = Regressor.initialize(cfg.seed)
    params = reg.params
    state = adam_init(params)
    history = np.zeros((cfg.epochs, len(pooled)))
    t = 0
    for epoch in range(cfg.epochs):
        for si, (x, y) in enumerate(zip(pooled, labels)):
            loss, grads, _ = scan_step_gradient(Regressor(params=params), x, y, cfg)
            t += 1
            params, state = adam_step(params, grads, state, t, cfg)
            history[epoch, si] = loss
    return Regressor(params=params), history


# ---------------------------------------------------------------------------
# Checkpoints: JSON header with a shape table, then little-endian float32.
# ---------------------------------------------------------------------------


def save_checkpoint(path, reg: Regressor, cfg: TrainConfig | None = None) -> None:
    header = {
        "architecture": [{"name": n, "shape": list(s)} for n, s in ARCHITECTURE],
        "seed": cfg.seed if cfg is not None else None,
        "config": asdict(cfg) if cfg is not None else None,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for name, _ in ARCHITECTURE:
            f.write(reg.params[name].astype("<f4").tobytes())


def load_checkpoint(path) -> tuple[Regressor, dict]:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise InvalidInputError("not a model checkpoint")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        params = {}
        for entry in header["architecture"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape))
            params[entry["name"]] = (
                np.frombuffer(f.read(4 * n), dtype="<f4").astype(float).reshape(shape)
            )
    return Regressor(params=params), header
