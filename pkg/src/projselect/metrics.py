"""ROI-restricted image quality metrics between volumes.

Volumes are min-max normalized over the ROI bounding box before comparison,
so artefacts far from the ROI cannot skew the intensity scale. RMSE and SSIM
are then evaluated on the voxels inside the ROI sphere only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import InvalidInputError
from .phantom import GridSpec, Volume

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = (0.01) ** 2  # dynamic range is 1 after normalization
SSIM_C2 = (0.03) ** 2


@dataclass(frozen=True)
class RoiSpec:
    centre: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidInputError("roi radius must be positive")


def _same_grid(a: Volume, b: Volume) -> None:
    ga, gb = a.grid, b.grid
    if ga.shape != gb.shape or ga.voxel_size != gb.voxel_size or ga.origin != gb.origin:
        raise InvalidInputError("volumes must share one grid")


def roi_sphere_mask(grid: GridSpec, roi: RoiSpec) -> np.ndarray:
    centre = np.asarray(roi.centre, dtype=float)
    axes = [grid.centers(a) for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    mask = np.sum((pts - centre) ** 2, axis=-1) <= roi.radius**2
    if not mask.any():
        raise InvalidInputError("roi does not contain any voxel centre")
    return mask


def roi_bbox_slices(grid: GridSpec, roi: RoiSpec) -> tuple[slice, slice, slice]:
    centre = np.asarray(roi.centre, dtype=float)
    slices = []
    for a in range(3):
        lo = int(np.floor((centre[a] - roi.radius - grid.origin[a]) / grid.voxel_size))
        hi = int(np.ceil((centre[a] + roi.radius - grid.origin[a]) / grid.voxel_size))
        lo = max(lo, 0)
        hi = min(hi, grid.shape[a])
        if hi <= lo:
            raise InvalidInputError("roi bounding box does not intersect the grid")
        slices.append(slice(lo, hi))
    return tuple(slices)


def normalize(v: Volume, roi: RoiSpec | None = None) -> Volume:
    """Min-max scale to [0, 1], with the scale taken over the ROI bounding box
    (or the whole volume when no ROI is given)."""
    region = v.data[roi_bbox_slices(v.grid, roi)] if roi is not None else v.data
    mn = float(region.min())
    mx = float(region.max())
    if mx <= mn:
        raise InvalidInputError("cannot normalize a constant volume")
    return Volume(data=(v.data - mn) / (mx - mn), grid=v.grid)


def rmse(a: Volume, b: Volume, roi: RoiSpec) -> float:
    """Root mean squared difference over the ROI sphere, after normalization."""
    _same_grid(a, b)
    mask = roi_sphere_mask(a.grid, roi)
    na = normalize(a, roi).data[mask]
    nb = normalize(b, roi).data[mask]
    return float(np.sqrt(np.mean((na - nb) ** 2)))


def _gaussian_kernel_1d(window: int, sigma: float) -> np.ndarray:
    half = (window - 1) / 2.0
    x = np.arange(window) - half
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _local_mean(slice_2d: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = correlate1d(slice_2d, kernel, axis=0, mode="reflect")
    return correlate1d(out, kernel, axis=1, mode="reflect")


def ssim(a: Volume, b: Volume, roi: RoiSpec) -> float:
    """Mean local structural similarity over the ROI sphere.

    Local statistics use an 11-tap gaussian window (sigma 1.5) applied per
    axial (fixed-z) slice; both volumes are normalized over the ROI bounding
    box first, so the dynamic range constants assume L = 1.
    """
    _same_grid(a, b)
    mask = roi_sphere_mask(a.grid, roi)
    na = normalize(a, roi).data
    nb = normalize(b, roi).data
    kernel = _gaussian_kernel_1d(SSIM_WINDOW, SSIM_SIGMA)

    ssim_map = np.empty_like(na)
    z_needed = np.flatnonzero(mask.any(axis=(0, 1)))
    for iz in range(na.shape[2]):
        if iz not in z_needed:
            ssim_map[:, :, iz] = 0.0
            continue
        sa = na[:, :, iz]
        sb = nb[:, :, iz]
        mu_a = _local_mean(sa, kernel)
        mu_b = _local_mean(sb, kernel)
        var_a = _local_mean(sa * sa, kernel) - mu_a * mu_a
        var_b = _local_mean(sb * sb, kernel) - mu_b * mu_b
        cov = _local_mean(sa * sb, kernel) - mu_a * mu_b
        num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
        den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
        ssim_map[:, :, iz] = num / den
    return float(ssim_map[mask].mean())
