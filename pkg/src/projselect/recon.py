"""Row-action algebraic reconstruction with an on-the-fly ray-driven system model.

Each detector pixel defines one linear equation whose coefficients are the
exact traversal lengths of the source-to-pixel ray through the voxels it
crosses. Reconstruction sweeps over those rows Kaczmarz style.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import Pose, SystemGeometry
from .phantom import GridSpec, ProjectionImage, Volume

_ROW_ORDERS = ("sequential", "shuffled")


@dataclass(frozen=True)
class ArtConfig:
    iterations: int = 3
    relaxation: float = 0.3
    # Sequential visiting of spherically ordered poses converges poorly, so
    # rows are shuffled (pose order and pixels within a pose) by default.
    row_order: str = "shuffled"
    seed: int = 0
    nonneg: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidInputError("need at least one sweep")
        if not (0.0 < self.relaxation < 2.0):
            raise InvalidInputError("relaxation must lie in (0, 2)")
        if self.row_order not in _ROW_ORDERS:
            raise InvalidInputError(f"row order must be one of {_ROW_ORDERS}")


def _pixel_directions(pose: Pose, g: SystemGeometry) -> np.ndarray:
    rows, cols = g.detector_pixels
    pu, pv = g.pixel_pitch
    u_off = (np.arange(cols) - (cols - 1) / 2.0) * pu
    v_off = (np.arange(rows) - (rows - 1) / 2.0) * pv
    centres = (
        pose.detector_centre[None, None, :]
        + v_off[:, None, None] * pose.v_axis[None, None, :]
        + u_off[None, :, None] * pose.u_axis[None, None, :]
    )
    return (centres - pose.source_point[None, None, :]).reshape(-1, 3)


def _trace_rays(source: np.ndarray, dirs: np.ndarray, grid: GridSpec):
    """Voxel indices and traversal lengths for a batch of rays.

    Returns padded arrays (n_rays, n_segments): ``idx`` holds flat voxel
    indices (zero where padded) and ``w`` the segment lengths (zero where
    padded). The sum of each row equals the chord length of the ray inside
    the grid bounding box.
    """
    n_rays = dirs.shape[0]
    lo = grid.bbox_min
    hi = grid.bbox_max
    voxel = grid.voxel_size
    shape = grid.shape

    t_in = np.zeros(n_rays)
    t_out = np.full(n_rays, np.inf)
    for a in range(3):
        o, d = source[a], dirs[:, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (lo[a] - o) / d
            t2 = (hi[a] - o) / d
        tlo, thi = np.minimum(t1, t2), np.maximum(t1, t2)
        parallel = d == 0
        inside = (lo[a] <= o) & (o <= hi[a])
        tlo = np.where(parallel, np.where(inside, -np.inf, np.inf), tlo)
        thi = np.where(parallel, np.where(inside, np.inf, -np.inf), thi)
        t_in = np.maximum(t_in, tlo)
        t_out = np.minimum(t_out, thi)
    t_out = np.maximum(t_out, t_in)  # missed rays collapse to zero length

    crossing_blocks = []
    for a in range(3):
        planes = lo[a] + voxel * np.arange(shape[a] + 1)
        d = dirs[:, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (planes[None, :] - source[a]) / d[:, None]
        t = np.where(np.isfinite(t), t, t_in[:, None])
        crossing_blocks.append(t)
    crossing_blocks.append(t_in[:, None])
    crossing_blocks.append(t_out[:, None])
    t_all = np.concatenate(crossing_blocks, axis=1)
    np.clip(t_all, t_in[:, None], t_out[:, None], out=t_all)
    t_all.sort(axis=1)

    dt = np.diff(t_all, axis=1)
    t_mid = 0.5 * (t_all[:, :-1] + t_all[:, 1:])
    pts = source[None, None, :] + t_mid[:, :, None] * dirs[:, None, :]
    ijk = np.floor((pts - lo[None, None, :]) / voxel).astype(np.int64)
    for a in range(3):
        np.clip(ijk[:, :, a], 0, shape[a] - 1, out=ijk[:, :, a])
    idx = (ijk[:, :, 0] * shape[1] + ijk[:, :, 1]) * shape[2] + ijk[:, :, 2]

    speeds = np.linalg.norm(dirs, axis=1)
    w = dt * speeds[:, None]
    empty = w <= 0.0
    w[empty] = 0.0
    idx[empty] = 0
    return idx, w


def system_row(
    pose: Pose, g: SystemGeometry, pixel: tuple[int, int], grid: GridSpec
) -> tuple[np.ndarray, np.ndarray]:
    """Sparse system-matrix row for one detector pixel.

    Returns (flat voxel indices, traversal lengths); an empty pair when the
    ray misses the grid.
    """
    rows, cols = g.detector_pixels
    r, c = pixel
    if not (0 <= r < rows and 0 <= c < cols):
        raise InvalidInputError(f"pixel {pixel} outside the {rows}x{cols} detector")
    dirs = _pixel_directions(pose, g)[r * cols + c][None, :]
    idx, w = _trace_rays(pose.source_point, dirs, grid)
    keep = w[0] > 0.0
    return idx[0][keep], w[0][keep]


def art_reconstruct(
    projections: list[ProjectionImage],
    poses: list[Pose],
    g: SystemGeometry,
    grid: GridSpec,
    cfg: ArtConfig = ArtConfig(),
) -> Volume:
    """Kaczmarz sweeps over all (projection, pixel) rows, starting from zero.

    Each row update is x <- x + relaxation * (b_i - <a_i, x>) / |a_i|^2 * a_i;
    rows whose ray misses the grid are skipped. With ``nonneg`` the volume is
    clamped to be non-negative after every sweep. ``shuffled`` row order
    permutes the pose visiting order and the pixels within each pose,
    deterministically from the seed.
    """
    if len(projections) == 0:
        raise InvalidInputError("need at least one projection")
    if len(projections) != len(poses):
        raise InvalidInputError("projections and poses must align")
    rows, cols = g.detector_pixels
    for p in projections:
        if p.pixels.shape != (rows, cols):
            raise InvalidInputError("projection shape does not match the detector")

    x = np.zeros(grid.n_voxels)
    shuffle = cfg.row_order == "shuffled"
    rng = np.random.default_rng(cfg.seed)
    lam = cfg.relaxation

    for _ in range(cfg.iterations):
        pose_order = rng.permutation(len(poses)) if shuffle else np.arange(len(poses))
        for pi in pose_order:
            pose = poses[pi]
            b = projections[pi].pixels.ravel()
            dirs = _pixel_directions(pose, g)
            idx, w = _trace_rays(pose.source_point, dirs, grid)
            norms = np.einsum("ij,ij->i", w, w)
            ray_order = rng.permutation(len(b)) if shuffle else np.arange(len(b))
            for r in ray_order:
                nrm = norms[r]
                if nrm <= 0.0:
                    continue
                wi = w[r]
                ii = idx[r]
                residual = b[r] - wi @ x[ii]
                np.add.at(x, ii, (lam * residual / nrm) * wi)
        if cfg.nonneg:
            np.maximum(x, 0.0, out=x)
    return Volume(data=x.reshape(grid.shape), grid=grid)
