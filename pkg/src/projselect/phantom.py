"""Analytic test specimens and their exact line integrals.

A specimen is an attenuating box with spherical defects (negative deltas are
voids). Chord lengths through boxes and spheres have closed forms, so
projections are exact and fast; voxelization provides the reconstruction
ground truth.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .geometry import Pose, SystemGeometry

# Effective monochromatic attenuation for the aluminium-like default
# material, in 1/m (0.5 per cm).
DEFAULT_MU = 50.0
DEFAULT_DEFECT_RADIUS = 1e-3

SPECIMEN_PRESETS = {
    # 10 cm x 8 cm x 8 cm box, given as half extents in metres.
    "default": (0.05, 0.04, 0.04),
}


@dataclass(frozen=True)
class SphereDefect:
    centre: tuple[float, float, float]
    radius: float
    delta_mu: float

    def __post_init__(self):
        if self.radius <= 0:
            raise InvalidInputError("defect radius must be positive")


@dataclass(frozen=True)
class Specimen:
    """Axis-aligned box centred at the origin, with spherical defects inside."""

    half_extents: tuple[float, float, float]
    mu: float
    defects: tuple[SphereDefect, ...] = ()

    def __post_init__(self):
        if min(self.half_extents) <= 0:
            raise InvalidInputError("box half extents must be positive")
        for d in self.defects:
            for c, h in zip(d.centre, self.half_extents):
                if abs(c) + d.radius > h:
                    raise InvalidInputError("defect must lie strictly inside the box")

    def digest(self) -> str:
        payload = json.dumps(
            {
                "half_extents": list(self.half_extents),
                "mu": self.mu,
                "defects": [
                    {"centre": list(d.centre), "radius": d.radius, "delta_mu": d.delta_mu}
                    for d in self.defects
                ],
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def make_specimen(
    variant: str = "default",
    defect_centre=(0.0, 0.0, 0.0),
    mu: float = DEFAULT_MU,
    defect_radius: float = DEFAULT_DEFECT_RADIUS,
    defect_delta: float | None = None,
) -> Specimen:
    """Box preset with a single spherical defect (a void unless told otherwise)."""
    if variant not in SPECIMEN_PRESETS:
        raise InvalidInputError(f"unknown specimen preset {variant!r}")
    if mu <= 0:
        raise InvalidInputError("attenuation must be positive")
    delta = -mu if defect_delta is None else defect_delta
    defect = SphereDefect(
        centre=tuple(float(c) for c in defect_centre), radius=defect_radius, delta_mu=delta
    )
    return Specimen(half_extents=SPECIMEN_PRESETS[variant], mu=mu, defects=(defect,))


@dataclass(frozen=True)
class GridSpec:
    """Regular voxel grid: ``origin`` is the low corner, voxels are cubes."""

    shape: tuple[int, int, int]
    voxel_size: float
    origin: tuple[float, float, float]

    def __post_init__(self):
        if min(self.shape) < 1:
            raise InvalidInputError("grid needs at least one voxel per axis")
        if self.voxel_size <= 0:
            raise InvalidInputError("voxel size must be positive")

    def centers(self, axis: int) -> np.ndarray:
        n = self.shape[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.voxel_size

    @property
    def bbox_min(self) -> np.ndarray:
        return np.asarray(self.origin, dtype=float)

    @property
    def bbox_max(self) -> np.ndarray:
        return self.bbox_min + np.asarray(self.shape) * self.voxel_size

    @property
    def n_voxels(self) -> int:
        return int(np.prod(self.shape))

    def to_json_obj(self) -> dict:
        return {
            "dims": list(self.shape),
            "voxel_size": self.voxel_size,
            "origin": list(self.origin),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "GridSpec":
        return cls(
            shape=tuple(int(v) for v in obj["dims"]),
            voxel_size=float(obj["voxel_size"]),
            origin=tuple(float(v) for v in obj["origin"]),
        )


def cube_grid_for_specimen(s: Specimen, n: int, margin: float = 1.05) -> GridSpec:
    """Cubic n^3 grid centred on the specimen, covering the box with a margin."""
    half = max(s.half_extents) * margin
    voxel = 2.0 * half / n
    return GridSpec(shape=(n, n, n), voxel_size=voxel, origin=(-half, -half, -half))


@dataclass(eq=False)
class Volume:
    """Voxel array of attenuation values on a :class:`GridSpec`."""

    data: np.ndarray
    grid: GridSpec

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.shape != tuple(self.grid.shape):
            raise InvalidInputError("volume data shape does not match its grid")


@dataclass(eq=False)
class ProjectionImage:
    """Detector array of line integrals for one pose."""

    pixels: np.ndarray
    pose: Pose

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=float)
        if self.pixels.ndim != 2:
            raise InvalidInputError("projection pixels must be a 2-D array")


def _box_chords(origins: np.ndarray, dirs: np.ndarray, half_extents) -> np.ndarray:
    """Chord lengths of rays (t >= 0) through the centred box, vectorized."""
    h = np.asarray(half_extents, dtype=float)
    t_in = np.zeros(len(origins))
    t_out = np.full(len(origins), np.inf)
    for a in range(3):
        o, d = origins[:, a], dirs[:, a]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-h[a] - o) / d
            t2 = (h[a] - o) / d
        lo, hi = np.minimum(t1, t2), np.maximum(t1, t2)
        parallel = d == 0
        inside = np.abs(o) <= h[a]
        lo = np.where(parallel, np.where(inside, -np.inf, np.inf), lo)
        hi = np.where(parallel, np.where(inside, np.inf, -np.inf), hi)
        t_in = np.maximum(t_in, lo)
        t_out = np.minimum(t_out, hi)
    speeds = np.linalg.norm(dirs, axis=1)
    return np.maximum(t_out - t_in, 0.0) * speeds


def _sphere_chords(origins: np.ndarray, dirs: np.ndarray, centre, radius: float) -> np.ndarray:
    """Chord lengths of rays (t >= 0) through a sphere, vectorized."""
    oc = origins - np.asarray(centre, dtype=float)
    a = np.einsum("ij,ij->i", dirs, dirs)
    b = 2.0 * np.einsum("ij,ij->i", oc, dirs)
    c = np.einsum("ij,ij->i", oc, oc) - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc > 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    t1 = np.maximum((-b - sq) / (2.0 * a), 0.0)
    t2 = np.maximum((-b + sq) / (2.0 * a), 0.0)
    return np.where(hit, (t2 - t1) * np.sqrt(a), 0.0)


def batch_line_integrals(s: Specimen, origins, dirs) -> np.ndarray:
    """Exact attenuation line integrals for many rays at once (t >= 0)."""
    origins = np.atleast_2d(np.asarray(origins, dtype=float))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    if origins.shape[0] == 1 and dirs.shape[0] > 1:
        origins = np.broadcast_to(origins, dirs.shape)
    if np.any(np.linalg.norm(dirs, axis=1) == 0):
        raise InvalidInputError("ray direction must be non-zero")
    total = s.mu * _box_chords(origins, dirs, s.half_extents)
    for d in s.defects:
        total = total + d.delta_mu * _sphere_chords(origins, dirs, d.centre, d.radius)
    return total


def line_integral(s: Specimen, origin, direction) -> float:
    """Attenuation integral along a single ray from ``origin`` towards ``direction``."""
    return float(batch_line_integrals(s, np.asarray(origin, dtype=float)[None, :],
                                      np.asarray(direction, dtype=float)[None, :])[0])


def segment_integral(s: Specimen, start, end) -> float:
    """Attenuation integral over the straight segment from start to end."""
    start = np.asarray(start, dtype=float)
    end = np.asarray(end, dtype=float)
    # Integrate the ray from each endpoint and subtract: [start, end] =
    # [start, inf) - [end, inf) along the same line.
    d = end - start
    if np.linalg.norm(d) == 0:
        return 0.0
    full = line_integral(s, start, d)
    tail = line_integral(s, end, d)
    return full - tail


def forward_project(
    s: Specimen,
    pose: Pose,
    g: SystemGeometry,
    photons: float | None = None,
    rng: np.random.Generator | None = None,
) -> ProjectionImage:
    """Project a specimen onto the detector, one ray per pixel centre.

    With ``photons`` set, a Poisson measurement stage is applied: counts are
    drawn from Poisson(photons * exp(-integral)), clamped to at least one
    count, and converted back to a noisy integral. Without it the result is
    bit-reproducible.
    """
    rows, cols = g.detector_pixels
    pu, pv = g.pixel_pitch
    u_off = (np.arange(cols) - (cols - 1) / 2.0) * pu
    v_off = (np.arange(rows) - (rows - 1) / 2.0) * pv
    centres = (
        pose.detector_centre[None, None, :]
        + v_off[:, None, None] * pose.v_axis[None, None, :]
        + u_off[None, :, None] * pose.u_axis[None, None, :]
    )
    dirs = (centres - pose.source_point[None, None, :]).reshape(-1, 3)
    integrals = batch_line_integrals(s, pose.source_point[None, :], dirs)
    img = integrals.reshape(rows, cols)
    if photons is not None:
        if photons <= 0:
            raise InvalidInputError("photon count must be positive")
        if rng is None:
            rng = np.random.default_rng(0)
        counts = rng.poisson(photons * np.exp(-img)).astype(float)
        counts = np.maximum(counts, 1.0)  # zero counts would break the log
        img = -np.log(counts / photons)
    return ProjectionImage(pixels=img, pose=pose)


def mu_at_points(s: Specimen, points: np.ndarray) -> np.ndarray:
    """Attenuation coefficient sampled at world points (..., 3)."""
    pts = np.asarray(points, dtype=float)
    h = np.asarray(s.half_extents)
    inside = np.all(np.abs(pts) <= h, axis=-1)
    mu = np.where(inside, s.mu, 0.0)
    for d in s.defects:
        r2 = np.sum((pts - np.asarray(d.centre)) ** 2, axis=-1)
        mu = mu + np.where(r2 <= d.radius**2, d.delta_mu, 0.0)
    return mu


def voxelize(s: Specimen, grid: GridSpec) -> Volume:
    """Ground-truth volume by sampling attenuation at voxel centres."""
    h = np.asarray(s.half_extents)
    if np.any(grid.bbox_min > -h) or np.any(grid.bbox_max < h):
        raise InvalidInputError("grid does not cover the specimen box")
    x, y, z = (grid.centers(a) for a in range(3))
    pts = np.stack(np.meshgrid(x, y, z, indexing="ij"), axis=-1)
    return Volume(data=mu_at_points(s, pts), grid=grid)


# ---------------------------------------------------------------------------
# File formats: raw little-endian float32 arrays with a JSON sidecar.
# ---------------------------------------------------------------------------


def save_projection(basepath, proj: ProjectionImage, g: SystemGeometry, specimen_digest: str) -> None:
    basepath = str(basepath)
    proj.pixels.astype("<f4").tofile(basepath + ".raw")
    sidecar = {
        "rows": proj.pixels.shape[0],
        "cols": proj.pixels.shape[1],
        "pose": proj.pose.to_json_obj(),
        "geometry": g.to_json_obj(),
        "specimen": specimen_digest,
    }
    with open(basepath + ".json", "w") as f:
        json.dump(sidecar, f, sort_keys=True, indent=1)


def load_projection(basepath) -> tuple[ProjectionImage, dict]:
    basepath = str(basepath)
    with open(basepath + ".json") as f:
        sidecar = json.load(f)
    rows, cols = int(sidecar["rows"]), int(sidecar["cols"])
    pixels = np.fromfile(basepath + ".raw", dtype="<f4").astype(float).reshape(rows, cols)
    pose = Pose.from_json_obj(sidecar["pose"])
    return ProjectionImage(pixels=pixels, pose=pose), sidecar


def save_volume(basepath, vol: Volume) -> None:
    basepath = str(basepath)
    vol.data.astype("<f4").tofile(basepath + ".raw")
    with open(basepath + ".json", "w") as f:
        json.dump(vol.grid.to_json_obj(), f, sort_keys=True, indent=1)


def load_volume(basepath) -> Volume:
    basepath = str(basepath)
    with open(basepath + ".json") as f:
        grid = GridSpec.from_json_obj(json.load(f))
    data = np.fromfile(basepath + ".raw", dtype="<f4").astype(float).reshape(grid.shape)
    return Volume(data=data, grid=grid)
