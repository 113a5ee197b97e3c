"""Image formation: shading, per-pixel rendering, exemplar matrices and banks,
and synthetic scene generation for experiments.

The response of a candidate normal to the dictionary is the Q x M matrix
whose (i, j) entry is the intensity a surface with that normal and atom j
would produce under light i: intensity * max(0, n.l_i) * brdf_j(n, l_i, v).
Pre-rendering these matrices over a candidate pyramid gives the exemplar
bank the normal search scans.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .brdf import BrdfDictionary, TabulatedBrdf
from .geometry import CandidatePyramid, CandidateSet
from .halfdiff import half_diff_coords


@dataclass(frozen=True, eq=False)
class LightingRig:
    """Q unit light directions with per-light intensities and one view direction."""

    lights: np.ndarray
    intensities: np.ndarray | None = None
    view: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))

    def __post_init__(self):
        lights = np.asarray(self.lights, dtype=np.float64)
        if lights.ndim != 2 or lights.shape[1] != 3:
            raise ValueError("lights must be (Q, 3)")
        if lights.shape[0] < 3:
            raise ValueError("need at least 3 lights")
        if not np.allclose(np.linalg.norm(lights, axis=1), 1.0, atol=1e-9):
            raise ValueError("light directions must be unit-norm")
        inten = self.intensities
        if inten is None:
            inten = np.ones(lights.shape[0])
        inten = np.asarray(inten, dtype=np.float64)
        if inten.shape != (lights.shape[0],):
            raise ValueError("need one intensity per light")
        if np.any(inten <= 0):
            raise ValueError("intensities must be > 0")
        view = np.asarray(self.view, dtype=np.float64)
        if abs(np.linalg.norm(view) - 1.0) > 1e-9:
            raise ValueError("view must be unit-norm")
        for a in (lights, inten, view):
            a.flags.writeable = False
        object.__setattr__(self, "lights", lights)
        object.__setattr__(self, "intensities", inten)
        object.__setattr__(self, "view", view)

    @property
    def q(self) -> int:
        return self.lights.shape[0]

    def subset(self, indices) -> "LightingRig":
        idx = np.asarray(indices)
        return LightingRig(self.lights[idx], self.intensities[idx], self.view)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.lights.tobytes())
        h.update(self.intensities.tobytes())
        h.update(self.view.tobytes())
        return h.hexdigest()


def shading(n, l):
    """Attached-shadow factor max(0, n.l); broadcasts."""
    n = np.asarray(n, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    return np.maximum(0.0, np.sum(n * l, axis=-1))


def render_pixel(brdf: TabulatedBrdf, n, rig: LightingRig) -> np.ndarray:
    """Intensity profile of a surface element: (Q,) or (Q, channels).

    I_i = intensity_i * max(0, n.l_i) * brdf(n, l_i, v); lights below the
    local horizon contribute zero.
    """
    n = np.asarray(n, dtype=np.float64)
    s = shading(n, rig.lights) * rig.intensities
    lit = s > 0
    vals = np.zeros((brdf.channels, rig.q))
    if np.any(lit):
        coords = half_diff_coords(n, rig.lights[lit], rig.view)
        vals[:, lit] = brdf.sample(coords)
    out = s * vals
    return out[0] if brdf.channels == 1 else out.T


@dataclass(frozen=True, eq=False)
class ExemplarMatrix:
    """Response of one candidate normal to every dictionary atom, (Q, M)."""

    normal: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise ValueError("values must be (Q, M)")
        n = np.asarray(self.normal, dtype=np.float64)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "values", v)


def render_exemplar(
    dictionary: BrdfDictionary, n, rig: LightingRig, dtype=np.float64
) -> ExemplarMatrix:
    """Render the (Q, M) response matrix of one candidate normal."""
    if dictionary.channels != 1:
        raise ValueError("exemplar rendering expects a single-channel dictionary; use channel_view")
    n = np.asarray(n, dtype=np.float64)
    vals = _render_block(dictionary, n[None, :], rig, dtype)[0]
    return ExemplarMatrix(n, vals)


def _render_block(
    dictionary: BrdfDictionary, normals: np.ndarray, rig: LightingRig, dtype
) -> np.ndarray:
    """Response matrices for a block of normals: (K, Q, M)."""
    k, q, m = len(normals), rig.q, len(dictionary)
    s = np.maximum(0.0, normals @ rig.lights.T) * rig.intensities  # (K, Q)
    coords = half_diff_coords(normals[:, None, :], rig.lights[None, :, :], rig.view)
    idx, w = dictionary.grid.interp(coords)  # (K, Q, 8)
    out = np.empty((k, q, m), dtype=dtype)
    for j, atom in enumerate(dictionary.atoms):
        table = atom.values[0]
        out[:, :, j] = (s * np.einsum("kqe,kqe->kq", table[idx], w)).astype(dtype)
    return out


@dataclass(frozen=True, eq=False)
class ExemplarBank:
    """Pre-rendered response matrices for every candidate at every pyramid level."""

    pyramid: CandidatePyramid
    rig: LightingRig
    dictionary: BrdfDictionary
    level_values: tuple[np.ndarray, ...]
    dictionary_id: str

    def __post_init__(self):
        if len(self.level_values) != len(self.pyramid):
            raise ValueError("one value block per pyramid level required")
        for lv, cs in zip(self.level_values, self.pyramid.levels):
            if lv.shape != (len(cs), self.rig.q, len(self.dictionary)):
                raise ValueError("value block shape mismatch")
            lv.flags.writeable = False

    @property
    def n_levels(self) -> int:
        return len(self.pyramid)

    @property
    def matrix_count(self) -> int:
        return sum(len(cs) for cs in self.pyramid.levels)

    def candidates(self, level: int) -> CandidateSet:
        return self.pyramid.levels[level]

    def values(self, level: int) -> np.ndarray:
        return self.level_values[level]

    def matrix(self, level: int, index: int) -> ExemplarMatrix:
        return ExemplarMatrix(
            self.pyramid.levels[level].normals[index], self.level_values[level][index]
        )


def dictionary_hash(dictionary: BrdfDictionary) -> str:
    h = hashlib.sha256()
    g = dictionary.grid
    h.update(np.asarray([g.n_th, g.n_td, g.n_pd], dtype="<i8").tobytes())
    for atom in dictionary.atoms:
        h.update(atom.values.astype("<f8").tobytes())
    return h.hexdigest()


def build_bank(
    dictionary: BrdfDictionary,
    pyramid: CandidatePyramid,
    rig: LightingRig,
    dtype=np.float32,
    block: int = 1024,
) -> ExemplarBank:
    """Render every candidate at every level; deterministic and chunked."""
    if dictionary.channels != 1:
        raise ValueError("banks are single-channel; use channel_view")
    levels = []
    for cs in pyramid.levels:
        normals = cs.normals
        vals = np.empty((len(cs), rig.q, len(dictionary)), dtype=dtype)
        for start in range(0, len(cs), block):
            stop = min(start + block, len(cs))
            vals[start:stop] = _render_block(dictionary, normals[start:stop], rig, dtype)
        levels.append(vals)
    return ExemplarBank(
        pyramid, rig, dictionary, tuple(levels), dictionary_hash(dictionary)
    )


# ---------------------------------------------------------------------------
# Image stacks and synthetic scenes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ImageStack:
    """Q registered intensity planes with a validity mask and the rig."""

    images: np.ndarray  # (Q, H, W)
    mask: np.ndarray  # (H, W) bool
    rig: LightingRig

    def __post_init__(self):
        imgs = np.asarray(self.images, dtype=np.float64)
        if imgs.ndim != 3:
            raise ValueError("images must be (Q, H, W)")
        if imgs.shape[0] != self.rig.q:
            raise ValueError(f"{imgs.shape[0]} planes for {self.rig.q} lights")
        if np.any(imgs < 0) or not np.all(np.isfinite(imgs)):
            raise ValueError("intensities must be finite and >= 0")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != imgs.shape[1:]:
            raise ValueError("mask shape must match image planes")
        imgs.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "images", imgs)
        object.__setattr__(self, "mask", mask)

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    def profiles(self) -> tuple[np.ndarray, np.ndarray]:
        """(pixels, profiles): masked-in pixel coords (N, 2) as (y, x) and (N, Q) intensities."""
        ys, xs = np.nonzero(self.mask)
        return np.stack([ys, xs], axis=1), self.images[:, ys, xs].T.copy()


@dataclass(frozen=True, eq=False)
class NormalMap:
    """Per-pixel unit normals (H, W, 3) with a validity mask."""

    normals: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.normals, dtype=np.float64)
        m = np.asarray(self.mask, dtype=bool)
        if n.ndim != 3 or n.shape[2] != 3 or m.shape != n.shape[:2]:
            raise ValueError("normals must be (H, W, 3) with matching mask")
        object.__setattr__(self, "normals", n)
        object.__setattr__(self, "mask", m)


@dataclass(frozen=True, eq=False)
class SceneSpec:
    """Synthetic scene: geometry, per-pixel reflectance, and optional noise.

    geometry is either "sphere" (orthographic disk of radius `radius` in
    normalized coordinates) or an explicit (H, W, 3) normal-map array with
    its own mask.  Reflectance is a dictionary plus per-pixel abundance
    planes (M, H, W), or a single tabulated BRDF.
    """

    width: int
    height: int
    geometry: str | NormalMap = "sphere"
    radius: float = 0.95
    dictionary: BrdfDictionary | None = None
    abundances: np.ndarray | None = None  # (M, H, W), columns of the true C
    brdf: TabulatedBrdf | None = None
    noise_sigma: float = 0.0

    def __post_init__(self):
        if (self.dictionary is None) == (self.brdf is None):
            raise ValueError("specify exactly one of (dictionary + abundances) or brdf")
        if self.dictionary is not None:
            a = np.asarray(self.abundances, dtype=np.float64)
            if a.shape != (len(self.dictionary), self.height, self.width):
                raise ValueError("abundances must be (M, H, W)")
            if np.any(a < 0):
                raise ValueError("abundances must be non-negative")
            object.__setattr__(self, "abundances", a)
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def sphere_normals(width: int, height: int, radius: float = 0.95) -> NormalMap:
    """Orthographic sphere normals: n = (x, y, sqrt(1 - x^2 - y^2)) on the disk."""
    xs = (2.0 * (np.arange(width) + 0.5) / width - 1.0) / radius
    ys = (1.0 - 2.0 * (np.arange(height) + 0.5) / height) / radius  # +y up
    x, y = np.meshgrid(xs, ys)
    r2 = x * x + y * y
    mask = r2 < 1.0
    z = np.sqrt(np.maximum(0.0, 1.0 - r2))
    n = np.stack([x, y, z], axis=-1)
    n[~mask] = (0.0, 0.0, 1.0)
    return NormalMap(n, mask)


def render_scene(
    spec: SceneSpec, rig: LightingRig, seed: int | None = None
) -> tuple[ImageStack, NormalMap, np.ndarray | None]:
    """Render a synthetic stack plus its ground truth.

    Returns (stack, true normal map, true abundance planes or None).  Noise
    is additive Gaussian, clamped at zero, drawn from `seed`.
    """
    if isinstance(spec.geometry, NormalMap):
        nmap = spec.geometry
    elif spec.geometry == "sphere":
        nmap = sphere_normals(spec.width, spec.height, spec.radius)
    else:
        raise ValueError(f"unknown geometry {spec.geometry!r}")

    h, w = nmap.mask.shape
    images = np.zeros((rig.q, h, w))
    ys, xs = np.nonzero(nmap.mask)
    normals = nmap.normals[ys, xs]
    s = np.maximum(0.0, normals @ rig.lights.T) * rig.intensities  # (N, Q)

    if spec.brdf is not None:
        if spec.brdf.channels != 1:
            raise ValueError("scene rendering expects single-channel reflectance")
        profiles = s * _sample_profiles(spec.brdf, normals, rig)
    else:
        d = spec.dictionary
        if d.channels != 1:
            raise ValueError("scene rendering expects a single-channel dictionary")
        c = spec.abundances[:, ys, xs]  # (M, N)
        atom_vals = np.stack(
            [_sample_profiles(a, normals, rig) for a in d.atoms]
        )  # (M, N, Q)
        profiles = s * np.einsum("mn,mnq->nq", c, atom_vals)

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        profiles = profiles + rng.normal(0.0, spec.noise_sigma, profiles.shape)
        profiles = np.maximum(profiles, 0.0)

    images[:, ys, xs] = profiles.T
    stack = ImageStack(images, nmap.mask, rig)
    truth_c = None if spec.abundances is None else spec.abundances[:, ys, xs]
    return stack, nmap, truth_c


def _sample_profiles(brdf: TabulatedBrdf, normals: np.ndarray, rig: LightingRig) -> np.ndarray:
    """Reflectance term of each (normal, light) pair: (N, Q), single channel."""
    coords = half_diff_coords(normals[:, None, :], rig.lights[None, :, :], rig.view)
    return brdf.sample(coords)[0]


def mixture_weights(width: int, height: int, radius: float = 0.95) -> np.ndarray:
    """Three smooth abundance planes summing to one on the image (3, H, W).

    The planes span three independent functions of the image coordinates,
    so the resulting ground-truth abundance matrix has rank 3.
    """
    xs = (2.0 * (np.arange(width) + 0.5) / width - 1.0) / radius
    ys = (1.0 - 2.0 * (np.arange(height) + 0.5) / height) / radius
    x, y = np.meshgrid(xs, ys)
    x = np.clip(x, -1.0, 1.0)
    y = np.clip(y, -1.0, 1.0)
    w1 = (1.0 + x) / 2.0
    w2 = (1.0 - x) * (1.0 + y) / 4.0
    w3 = (1.0 - x) * (1.0 - y) / 4.0
    return np.stack([w1, w2, w3])
