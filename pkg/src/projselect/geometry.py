"""Spherical acquisition geometry.

Scan positions live on a sphere around the isocentre and are parametrized by
azimuth/elevation. The source sits on that sphere and the detector faces it
from the opposite side, so a single position determines the whole pose.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError

GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ScanPosition:
    """A point on the acquisition sphere: azimuth in [0, 2pi), elevation in [-pi/2, pi/2]."""

    azimuth: float
    elevation: float

    def __post_init__(self):
        if not (math.isfinite(self.azimuth) and math.isfinite(self.elevation)):
            raise InvalidInputError("scan position angles must be finite")
        if not (0.0 <= self.azimuth < TWO_PI):
            raise InvalidInputError(f"azimuth {self.azimuth} outside [0, 2pi)")
        if not (-math.pi / 2 <= self.elevation <= math.pi / 2):
            raise InvalidInputError(f"elevation {self.elevation} outside [-pi/2, pi/2]")


@dataclass(frozen=True)
class SystemGeometry:
    """Distances and detector layout of the scanner.

    Defaults: source 1 m and detector 3 m from the isocentre (4 m
    source-detector), 375 x 375 detector pixels at 400 um pitch.
    """

    source_isocentre_distance: float = 1.0
    detector_isocentre_distance: float = 3.0
    detector_pixels: tuple[int, int] = (375, 375)
    pixel_pitch: tuple[float, float] = (400e-6, 400e-6)

    def __post_init__(self):
        if self.source_isocentre_distance <= 0 or self.detector_isocentre_distance <= 0:
            raise InvalidInputError("distances must be positive")
        rows, cols = self.detector_pixels
        if rows < 1 or cols < 1:
            raise InvalidInputError("detector needs at least one pixel per axis")
        if min(self.pixel_pitch) <= 0:
            raise InvalidInputError("pixel pitch must be positive")

    @property
    def source_detector_distance(self) -> float:
        return self.source_isocentre_distance + self.detector_isocentre_distance

    @property
    def magnification(self) -> float:
        return self.source_detector_distance / self.source_isocentre_distance

    def to_json_obj(self) -> dict:
        return {
            "source_isocentre_distance": self.source_isocentre_distance,
            "detector_isocentre_distance": self.detector_isocentre_distance,
            "detector_pixels": list(self.detector_pixels),
            "pixel_pitch": list(self.pixel_pitch),
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "SystemGeometry":
        return cls(
            source_isocentre_distance=float(obj["source_isocentre_distance"]),
            detector_isocentre_distance=float(obj["detector_isocentre_distance"]),
            detector_pixels=tuple(int(v) for v in obj["detector_pixels"]),
            pixel_pitch=tuple(float(v) for v in obj["pixel_pitch"]),
        )


@dataclass(eq=False)
class Pose:
    """Source point and detector frame for one scan position.

    ``u_axis``/``v_axis`` span the detector plane; both are orthogonal to the
    central ray and to each other, and (u, v, ray) is right-handed.
    """

    source_point: np.ndarray
    detector_centre: np.ndarray
    u_axis: np.ndarray
    v_axis: np.ndarray

    @property
    def ray_direction(self) -> np.ndarray:
        d = self.detector_centre - self.source_point
        return d / np.linalg.norm(d)

    def to_json_obj(self) -> dict:
        return {
            "source_point": [float(x) for x in self.source_point],
            "detector_centre": [float(x) for x in self.detector_centre],
            "u_axis": [float(x) for x in self.u_axis],
            "v_axis": [float(x) for x in self.v_axis],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "Pose":
        return cls(
            source_point=np.asarray(obj["source_point"], dtype=float),
            detector_centre=np.asarray(obj["detector_centre"], dtype=float),
            u_axis=np.asarray(obj["u_axis"], dtype=float),
            v_axis=np.asarray(obj["v_axis"], dtype=float),
        )


def unit_vector(p: ScanPosition) -> np.ndarray:
    """Cartesian unit vector of a scan position."""
    ce = math.cos(p.elevation)
    return np.array(
        [ce * math.cos(p.azimuth), ce * math.sin(p.azimuth), math.sin(p.elevation)]
    )


def position_from_vector(v) -> ScanPosition:
    """Scan position of a (not necessarily unit) direction vector."""
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n == 0:
        raise InvalidInputError("zero vector has no direction")
    v = v / n
    elevation = math.asin(max(-1.0, min(1.0, v[2])))
    azimuth = math.atan2(v[1], v[0]) % TWO_PI
    return ScanPosition(azimuth=azimuth, elevation=elevation)


def fibonacci_sphere(n: int) -> list[ScanPosition]:
    """Deterministic near-uniform sampling of n positions on the sphere.

    Uses the offset lattice z_i = 1 - (2i+1)/n with azimuth stepping by the
    golden angle, which keeps samples away from the exact poles.
    """
    if n < 1:
        raise InvalidInputError("need at least one sample")
    positions = []
    for i in range(n):
        z = 1.0 - (2.0 * i + 1.0) / n
        azimuth = (i * GOLDEN_ANGLE) % TWO_PI
        elevation = math.asin(max(-1.0, min(1.0, z)))
        positions.append(ScanPosition(azimuth=azimuth, elevation=elevation))
    return positions


def haversine(a: ScanPosition, b: ScanPosition, radius: float = 1.0) -> float:
    """Great-circle distance between two scan positions on a sphere."""
    if radius <= 0:
        raise InvalidInputError("radius must be positive")
    dlat = b.elevation - a.elevation
    dlon = b.azimuth - a.azimuth
    h = (
        math.sin(dlat / 2.0) ** 2
        + math.cos(a.elevation) * math.cos(b.elevation) * math.sin(dlon / 2.0) ** 2
    )
    h = max(0.0, min(1.0, h))
    return 2.0 * radius * math.asin(math.sqrt(h))


def pairwise_haversine(positions: list[ScanPosition], radius: float = 1.0) -> np.ndarray:
    """Symmetric matrix of great-circle distances."""
    n = len(positions)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = haversine(positions[i], positions[j], radius)
    return d


def pose_from_position(p: ScanPosition, g: SystemGeometry) -> Pose:
    """Build the facing source/detector pair for one scan position.

    The detector v axis follows the local meridian towards the north pole
    (the elevation derivative of the position direction, which stays well
    defined at the poles), and u = v x ray so the frame is right-handed.
    """
    direction = unit_vector(p)
    source = g.source_isocentre_distance * direction
    detector = -g.detector_isocentre_distance * direction
    se, ce = math.sin(p.elevation), math.cos(p.elevation)
    v_axis = np.array([-se * math.cos(p.azimuth), -se * math.sin(p.azimuth), ce])
    ray = -direction
    u_axis = np.cross(v_axis, ray)
    return Pose(source_point=source, detector_centre=detector, u_axis=u_axis, v_axis=v_axis)


def positions_to_json_obj(positions: list[ScanPosition]) -> list[dict]:
    return [{"azimuth": p.azimuth, "elevation": p.elevation} for p in positions]


def positions_from_json_obj(obj: list[dict]) -> list[ScanPosition]:
    return [ScanPosition(azimuth=float(o["azimuth"]), elevation=float(o["elevation"])) for o in obj]
