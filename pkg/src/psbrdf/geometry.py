"""Candidate normals on the view hemisphere, cone neighborhoods, and angle math.

Candidate sets are deterministic generalized-spiral point layouts restricted
to the open hemisphere around the view axis (only camera-facing normals are
observable).  A pyramid stacks sets of strictly decreasing angular spacing
for the coarse-to-fine search.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Steradian coverage constant of the spiral layout: point count for spacing d
# (radians) is round(DENSITY / d^2).  Calibrated so a 5-degree spacing yields
# ~327 hemisphere points and a 0.5-degree spacing ~32.7k.
DENSITY = 2.49

_GOLDEN_FRAC = (np.sqrt(5.0) - 1.0) / 2.0

DEFAULT_SCHEDULE = (10.0, 5.0, 3.0, 1.0, 0.5)


@dataclass(frozen=True, eq=False)
class CandidateSet:
    """Unit candidate normals with a nominal equi-angular spacing (degrees)."""

    normals: np.ndarray
    spacing_deg: float

    def __post_init__(self):
        n = np.asarray(self.normals, dtype=np.float64)
        if n.ndim != 2 or n.shape[1] != 3:
            raise ValueError("normals must be (N, 3)")
        if not np.allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-9):
            raise ValueError("candidate normals must be unit-norm")
        n = n.copy()
        n.flags.writeable = False
        object.__setattr__(self, "normals", n)

    def __len__(self) -> int:
        return len(self.normals)


def hemisphere_count(spacing_deg: float) -> int:
    """Spiral point count for a nominal spacing."""
    d = np.radians(spacing_deg)
    return max(1, int(round(DENSITY / (d * d))))


def spacing_for_count(count: int) -> float:
    """Nominal spacing (degrees) whose spiral has exactly `count` points."""
    return float(np.degrees(np.sqrt(DENSITY / count)))


def equiangular_hemisphere(spacing_deg: float, axis=(0.0, 0.0, 1.0)) -> CandidateSet:
    """Deterministic near-uniform point set over the hemisphere about `axis`.

    Uses a golden-angle spiral with equal-area latitude steps; the first
    point is the axis itself and all points satisfy n.axis > 0.
    """
    if not (0.0 < spacing_deg <= 90.0):
        raise ValueError("spacing must be in (0, 90] degrees")
    axis = np.asarray(axis, dtype=np.float64)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise ValueError("axis must be unit-norm")
    count = hemisphere_count(spacing_deg)
    k = np.arange(count)
    z = 1.0 - k / count  # equal-area in z, exact pole at k = 0, z > 0 throughout
    phi = 2.0 * np.pi * np.mod(k * _GOLDEN_FRAC, 1.0)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    pts = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    pts[0] = (0.0, 0.0, 1.0)
    if not np.allclose(axis, (0.0, 0.0, 1.0)):
        pts = pts @ _rotation_from_z(axis).T
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        pts[0] = axis
    return CandidateSet(pts, spacing_deg)


def _rotation_from_z(axis: np.ndarray) -> np.ndarray:
    """Rotation matrix taking +z to `axis` (Rodrigues about their common normal)."""
    z = np.array([0.0, 0.0, 1.0])
    c = float(np.clip(axis @ z, -1.0, 1.0))
    if c > 1.0 - 1e-15:
        return np.eye(3)
    if c < -1.0 + 1e-15:
        return np.diag([1.0, -1.0, -1.0])
    k = np.cross(z, axis)
    k /= np.linalg.norm(k)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    s = np.sqrt(1.0 - c * c)
    return np.eye(3) + s * kx + (1.0 - c) * (kx @ kx)


def cone_filter(candidates: CandidateSet, center, theta_deg: float) -> CandidateSet:
    """Subset of candidates within theta degrees of `center`, order preserved."""
    if theta_deg <= 0:
        raise ValueError("cone angle must be > 0")
    center = np.asarray(center, dtype=np.float64)
    keep = candidates.normals @ center >= np.cos(np.radians(min(theta_deg, 180.0)))
    return CandidateSet(candidates.normals[keep], candidates.spacing_deg)


def cone_mask(candidates: CandidateSet, center, theta_deg: float) -> np.ndarray:
    """Boolean membership mask for the cone, aligned with candidate order."""
    center = np.asarray(center, dtype=np.float64)
    return candidates.normals @ center >= np.cos(np.radians(min(theta_deg, 180.0)))


def angular_error(n1, n2):
    """Angle between unit vectors in degrees; broadcasts over leading dims.

    Computed from the chord length, which is exact for identical vectors
    and well-conditioned at both small and straight angles.
    """
    n1 = np.asarray(n1, dtype=np.float64)
    n2 = np.asarray(n2, dtype=np.float64)
    chord = 0.5 * np.linalg.norm(n1 - n2, axis=-1)
    return 2.0 * np.degrees(np.arcsin(np.clip(chord, 0.0, 1.0)))


def euler_to_normal(theta_deg, phi_deg) -> np.ndarray:
    """Unit normal (cos(phi) sin(theta), sin(phi) sin(theta), cos(theta))."""
    t = np.radians(np.asarray(theta_deg, dtype=np.float64))
    p = np.radians(np.asarray(phi_deg, dtype=np.float64))
    st = np.sin(t)
    return np.stack([np.cos(p) * st, np.sin(p) * st, np.cos(t)], axis=-1)


def normal_to_euler(n) -> tuple[np.ndarray, np.ndarray]:
    """(theta, phi) in degrees inverting euler_to_normal; phi = 0 at the pole."""
    n = np.asarray(n, dtype=np.float64)
    theta = np.degrees(np.arccos(np.clip(n[..., 2], -1.0, 1.0)))
    phi = np.degrees(np.arctan2(n[..., 1], n[..., 0])) % 360.0
    phi = np.where(theta < 1e-12, 0.0, phi)
    if n.ndim == 1:
        return float(theta), float(phi)
    return theta, phi


@dataclass(frozen=True, eq=False)
class CandidatePyramid:
    """Candidate sets with strictly decreasing spacing, coarse to fine."""

    levels: tuple[CandidateSet, ...]

    def __post_init__(self):
        levels = tuple(self.levels)
        if not levels:
            raise ValueError("pyramid needs at least one level")
        if len(levels[0]) == 0:
            raise ValueError("coarsest level must be non-empty")
        spacings = [s.spacing_deg for s in levels]
        if any(b >= a for a, b in zip(spacings, spacings[1:])):
            raise ValueError(f"spacings must strictly decrease, got {spacings}")
        object.__setattr__(self, "levels", levels)

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def spacings(self) -> tuple[float, ...]:
        return tuple(s.spacing_deg for s in self.levels)

    @property
    def finest(self) -> CandidateSet:
        return self.levels[-1]

    @classmethod
    def build(cls, schedule=DEFAULT_SCHEDULE, axis=(0.0, 0.0, 1.0)) -> "CandidatePyramid":
        return cls(tuple(equiangular_hemisphere(s, axis) for s in schedule))
