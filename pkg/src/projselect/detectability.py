"""Projection-dependent detectability of a region of interest.

A task function weights spatial frequencies by the magnitude spectrum of the
ROI mask. Each pose is scored by a ratio of frequency sums involving a
modulation transfer model and a noise power model; pose dependence enters
through the system magnification (MTF width) and through the attenuation
along the ray from the source to the ROI centre (fluence-driven noise).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .geometry import Pose, ScanPosition
from .phantom import GridSpec, Specimen, segment_integral


@dataclass(frozen=True)
class PoseContext:
    """Pose-derived quantities the frequency models may consume."""

    magnification: float
    path_attenuation: float


class FrequencyResponseModel:
    """Scalar frequency response evaluated on a grid of frequency magnitudes."""

    kind = "abstract"

    def evaluate(self, freq: np.ndarray, ctx: PoseContext) -> np.ndarray:
        raise NotImplementedError


@dataclass(frozen=True)
class FlatMtf(FrequencyResponseModel):
    value: float = 1.0
    kind = "flat"

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise InvalidInputError("MTF values must lie in [0, 1]")

    def evaluate(self, freq, ctx):
        return np.full_like(freq, self.value)


@dataclass(frozen=True)
class GaussianApertureMtf(FrequencyResponseModel):
    """Gaussian rolloff whose frequency width scales with magnification."""

    sigma: float = 0.1
    kind = "gaussian-aperture"

    def __post_init__(self):
        if self.sigma <= 0:
            raise InvalidInputError("aperture sigma must be positive")

    def evaluate(self, freq, ctx):
        width = self.sigma * ctx.magnification
        return np.exp(-0.5 * (freq / width) ** 2)


@dataclass(frozen=True)
class FlatNps(FrequencyResponseModel):
    value: float = 1.0
    kind = "flat"

    def __post_init__(self):
        if self.value <= 0:
            raise InvalidInputError("NPS values must be positive")

    def evaluate(self, freq, ctx):
        return np.full_like(freq, self.value)


@dataclass(frozen=True)
class FluenceNps(FrequencyResponseModel):
    """Flat noise power scaled up by the attenuation seen on the way to the ROI."""

    base: float = 1.0
    kind = "fluence"

    def __post_init__(self):
        if self.base <= 0:
            raise InvalidInputError("NPS base must be positive")

    def evaluate(self, freq, ctx):
        return np.full_like(freq, self.base * np.exp(ctx.path_attenuation))


@dataclass(eq=False)
class TaskFunction:
    """Spherical ROI mask over a grid and the magnitude of its (unnormalized) DFT."""

    grid: GridSpec
    roi_centre: np.ndarray
    roi_radius: float
    mask: np.ndarray
    spectrum: np.ndarray
    freq_magnitude: np.ndarray

    def verify_spectrum(self, tol: float = 1e-9) -> None:
        ref = np.abs(np.fft.fftn(self.mask.astype(float)))
        if not np.allclose(self.spectrum, ref, atol=tol * max(1.0, ref.max())):
            raise InvalidInputError("task spectrum does not match the DFT of its mask")

    @property
    def n_frequency_bins(self) -> int:
        return self.spectrum.size


def build_task(grid: GridSpec, roi_centre, roi_radius: float) -> TaskFunction:
    """Spherical ROI task on a volume grid."""
    centre = np.asarray(roi_centre, dtype=float)
    if roi_radius <= 0:
        raise InvalidInputError("roi radius must be positive")
    if np.any(centre - roi_radius < grid.bbox_min) or np.any(centre + roi_radius > grid.bbox_max):
        raise InvalidInputError("roi sphere must lie inside the grid")
    axes = [grid.centers(a) for a in range(3)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    mask = np.sum((pts - centre) ** 2, axis=-1) <= roi_radius**2
    if not mask.any():
        raise InvalidInputError("roi does not contain any voxel centre")
    spectrum = np.abs(np.fft.fftn(mask.astype(float)))
    freqs = np.meshgrid(*(np.fft.fftfreq(n) for n in grid.shape), indexing="ij")
    fmag = np.sqrt(freqs[0] ** 2 + freqs[1] ** 2 + freqs[2] ** 2)
    return TaskFunction(
        grid=grid,
        roi_centre=centre,
        roi_radius=roi_radius,
        mask=mask,
        spectrum=spectrum,
        freq_magnitude=fmag,
    )


def pose_context(pose: Pose, task: TaskFunction, specimen: Specimen) -> PoseContext:
    r_source = float(np.linalg.norm(pose.source_point))
    r_detector = float(np.linalg.norm(pose.detector_centre))
    magnification = (r_source + r_detector) / r_source
    path = segment_integral(specimen, pose.source_point, task.roi_centre)
    return PoseContext(magnification=magnification, path_attenuation=path)


def compute_pdi(
    pose: Pose,
    task: TaskFunction,
    mtf: FrequencyResponseModel,
    nps: FrequencyResponseModel,
    specimen: Specimen,
) -> float:
    """Detectability of the task from one pose.

    d2 = (sum |MTF|^2 |W|^2)^2 / sum |NPS * MTF|^2 |W|^2 over all frequency
    bins of the task grid.
    """
    ctx = pose_context(pose, task, specimen)
    w2 = task.spectrum**2
    mtf2 = mtf.evaluate(task.freq_magnitude, ctx) ** 2
    nps2 = nps.evaluate(task.freq_magnitude, ctx) ** 2
    numerator = float(np.sum(mtf2 * w2)) ** 2
    denominator = float(np.sum(nps2 * mtf2 * w2))
    if denominator <= 0.0:
        raise InvalidInputError("degenerate task: NPS*MTF has no overlap with the spectrum")
    return numerator / denominator


def pdi_vector(
    poses: list[Pose],
    task: TaskFunction,
    mtf: FrequencyResponseModel,
    nps: FrequencyResponseModel,
    specimen: Specimen,
) -> np.ndarray:
    if len(poses) < 1:
        raise InvalidInputError("need at least one pose")
    return np.array([compute_pdi(p, task, mtf, nps, specimen) for p in poses])


def export_pdi_csv(path, positions: list[ScanPosition], d2: np.ndarray) -> None:
    if len(positions) != len(d2):
        raise InvalidInputError("positions and detectability values must align")
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "azimuth", "elevation", "d2"])
        for i, (p, v) in enumerate(zip(positions, d2)):
            writer.writerow([i, repr(p.azimuth), repr(p.elevation), repr(float(v))])


def read_pdi_csv(path) -> tuple[list[ScanPosition], np.ndarray]:
    positions, values = [], []
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            positions.append(
                ScanPosition(azimuth=float(row["azimuth"]), elevation=float(row["elevation"]))
            )
            values.append(float(row["d2"]))
    return positions, np.asarray(values)
