"""Half-angle reflectance coordinates and trilinear grid sampling.

An isotropic BRDF is stored on a regular (theta_h, theta_d, phi_d) grid:
theta_h is the angle between the surface normal and the half vector,
(theta_d, phi_d) locate the light direction once the half vector has been
rotated onto the normal.  Reciprocity folds phi_d into [0, 180).
All angles in this module are degrees.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

UNIT_TOL = 1e-6

# Full angular resolution: 1 degree per bin.
FULL_DIMS = (90, 90, 180)


@dataclass(frozen=True)
class HalfDiffGrid:
    """Regular sampling of (theta_h, theta_d, phi_d) in [0,90) x [0,90) x [0,180).

    Nodes sit at i * step along each axis; theta axes clamp at their last
    node, phi_d wraps modulo 180.
    """

    n_th: int
    n_td: int
    n_pd: int

    def __post_init__(self):
        if self.n_th < 2 or self.n_td < 2 or self.n_pd < 2:
            raise ValueError("grid needs at least 2 bins per axis")

    @classmethod
    def full_resolution(cls) -> "HalfDiffGrid":
        return cls(*FULL_DIMS)

    @classmethod
    def with_divisor(cls, r: int) -> "HalfDiffGrid":
        """Desk-scale grid with dims (90/r, 90/r, 180/r); r must divide 90."""
        if r < 1 or 90 % r != 0:
            raise ValueError(f"divisor must divide 90, got {r}")
        return cls(90 // r, 90 // r, 180 // r)

    @property
    def size(self) -> int:
        return self.n_th * self.n_td * self.n_pd

    @property
    def step_th(self) -> float:
        return 90.0 / self.n_th

    @property
    def step_td(self) -> float:
        return 90.0 / self.n_td

    @property
    def step_pd(self) -> float:
        return 180.0 / self.n_pd

    def node_coords(self) -> np.ndarray:
        """All grid nodes as an (size, 3) array of (theta_h, theta_d, phi_d)."""
        th = np.arange(self.n_th) * self.step_th
        td = np.arange(self.n_td) * self.step_td
        pd = np.arange(self.n_pd) * self.step_pd
        g = np.meshgrid(th, td, pd, indexing="ij")
        return np.stack([a.ravel() for a in g], axis=1)

    def flat_index(self, i_th, i_td, i_pd):
        """Linear index with phi_d fastest: i_pd + n_pd*(i_td + n_td*i_th)."""
        return i_pd + self.n_pd * (i_td + self.n_td * i_th)

    def interp(self, coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Trilinear interpolation stencil for coords (..., 3).

        Returns (indices, weights), both shaped (..., 8).  Weights are
        non-negative and sum to one; phi_d wraps, theta axes clamp.
        """
        coords = np.asarray(coords, dtype=np.float64)
        th, td, pd = coords[..., 0], coords[..., 1], coords[..., 2]
        i_th, f_th = _axis_clamped(th, self.step_th, self.n_th)
        i_td, f_td = _axis_clamped(td, self.step_td, self.n_td)
        i_pd, f_pd = _axis_wrapped(pd, self.step_pd, self.n_pd)

        shape = th.shape + (8,)
        idx = np.empty(shape, dtype=np.int64)
        w = np.empty(shape, dtype=np.float64)
        k = 0
        for a, wa in ((i_th[0], 1.0 - f_th), (i_th[1], f_th)):
            for b, wb in ((i_td[0], 1.0 - f_td), (i_td[1], f_td)):
                for c, wc in ((i_pd[0], 1.0 - f_pd), (i_pd[1], f_pd)):
                    idx[..., k] = self.flat_index(a, b, c)
                    w[..., k] = wa * wb * wc
                    k += 1
        return idx, w


def _axis_clamped(x, step, n):
    """Bracketing node indices and fraction for a clamped axis."""
    t = np.asarray(x) / step
    i0 = np.floor(t).astype(np.int64)
    i0 = np.clip(i0, 0, n - 1)
    f = np.clip(t - i0, 0.0, 1.0)
    i1 = np.minimum(i0 + 1, n - 1)
    # beyond the last node the value is held constant
    f = np.where(i0 == n - 1, 0.0, f)
    return (i0, i1), f


def _axis_wrapped(x, step, n):
    """Bracketing node indices and fraction for the periodic phi_d axis."""
    t = np.mod(np.asarray(x) / step, n)
    i0 = np.floor(t).astype(np.int64)
    i0 = np.clip(i0, 0, n - 1)
    f = np.clip(t - i0, 0.0, 1.0)
    i1 = (i0 + 1) % n
    return (i0, i1), f


@dataclass(frozen=True, eq=False)
class SampleWeights:
    """Sparse interpolation functional: value = sum(weights * table[indices])."""

    indices: np.ndarray
    weights: np.ndarray

    def apply(self, values: np.ndarray) -> np.ndarray:
        """Dot with a table; values is (T,) or (channels, T)."""
        return np.asarray(values)[..., self.indices] @ self.weights


def sample_weights(grid: HalfDiffGrid, coords) -> SampleWeights:
    """Interpolation weights for a single (theta_h, theta_d, phi_d) triple.

    Duplicate stencil entries (from boundary clamping) are merged and
    zero-weight entries dropped, so an on-node query returns one index
    with weight 1.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.shape != (3,):
        raise ValueError("coords must be a single (theta_h, theta_d, phi_d) triple")
    th, td, pd = coords
    if not (0.0 <= th < 90.0 + 1e-9 and 0.0 <= td < 90.0 + 1e-9):
        raise ValueError(f"theta_h/theta_d out of [0, 90): {coords}")
    if not np.isfinite(pd):
        raise ValueError("phi_d must be finite")
    idx, w = grid.interp(coords)
    merged: dict[int, float] = {}
    for i, wi in zip(idx.tolist(), w.tolist()):
        if wi != 0.0:
            merged[i] = merged.get(i, 0.0) + wi
    ind = np.array(sorted(merged), dtype=np.int64)
    return SampleWeights(ind, np.array([merged[i] for i in ind]))


def _check_unit(name, x):
    n = np.linalg.norm(x)
    if abs(n - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must be unit-norm (|{name}| = {n:.8f})")


def _tangent_frame(n: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic orthonormal (tangent, binormal) around each normal.

    The choice only shifts the azimuth origin; the folded coordinates of an
    isotropic configuration do not depend on it.  Broadcasts over (..., 3).
    """
    ref = np.zeros_like(n)
    pick = np.argmin(np.abs(n), axis=-1)
    np.put_along_axis(ref, pick[..., None], 1.0, axis=-1)
    t = ref - (np.sum(ref * n, axis=-1, keepdims=True)) * n
    t = t / np.linalg.norm(t, axis=-1, keepdims=True)
    b = np.cross(n, t)
    return t, b


_DEGENERATE_SIN = 1e-12


def half_diff_coords(n, l, v) -> np.ndarray:
    """Vectorized (theta_h, theta_d, phi_d) in degrees, phi_d folded to [0,180).

    Inputs broadcast over leading dimensions; no unit/front-facing checks
    are performed here (see to_half_diff for the validated scalar form).
    The (l, v) pair is ordered canonically first: the folded coordinates of
    an isotropic configuration are invariant under the swap, and computing
    from a fixed order makes that equality bit-exact.
    """
    n = np.asarray(n, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    n, l, v = np.broadcast_arrays(n, l, v)

    swap = _lex_greater(l, v)
    if np.any(swap):
        l, v = np.where(swap[..., None], v, l), np.where(swap[..., None], l, v)

    h = l + v
    h = h / np.linalg.norm(h, axis=-1, keepdims=True)

    cos_th = np.clip(np.sum(n * h, axis=-1), -1.0, 1.0)
    theta_h = np.degrees(np.arccos(cos_th))
    # the half vector bisects (l, v), so theta_d is half their angle
    cos_lv = np.clip(np.sum(l * v, axis=-1), -1.0, 1.0)
    theta_d = 0.5 * np.degrees(np.arccos(cos_lv))

    # local coordinates of h and l in a frame around n
    t, b = _tangent_frame(n)
    hx, hy = np.sum(h * t, axis=-1), np.sum(h * b, axis=-1)
    lx = np.sum(l * t, axis=-1)
    ly = np.sum(l * b, axis=-1)
    lz = np.sum(l * n, axis=-1)

    # rotate by -phi_h about n, then by -theta_h about the binormal
    sin_th = np.sqrt(np.maximum(0.0, 1.0 - cos_th * cos_th))
    r = np.hypot(hx, hy)
    safe = r > _DEGENERATE_SIN
    cos_ph = np.where(safe, hx / np.where(safe, r, 1.0), 1.0)
    sin_ph = np.where(safe, hy / np.where(safe, r, 1.0), 0.0)
    ux = cos_ph * lx + sin_ph * ly
    uy = -sin_ph * lx + cos_ph * ly
    dx = cos_th * ux - sin_th * lz
    dy = uy

    phi_d = np.degrees(np.arctan2(dy, dx))
    phi_d = np.mod(phi_d, 180.0)
    # the fold can land exactly on 180 through rounding
    phi_d = np.where(phi_d >= 180.0, phi_d - 180.0, phi_d)
    # azimuth is undefined when h == n or l == h; pin it to 0
    sin_td = np.hypot(dx, dy)
    phi_d = np.where((sin_th <= _DEGENERATE_SIN) | (sin_td <= _DEGENERATE_SIN), 0.0, phi_d)

    return np.stack([theta_h, theta_d, phi_d], axis=-1)


def _lex_greater(a, b):
    """Elementwise lexicographic a > b over the trailing 3-vector axis."""
    gx = a[..., 0] > b[..., 0]
    ex = a[..., 0] == b[..., 0]
    gy = a[..., 1] > b[..., 1]
    ey = a[..., 1] == b[..., 1]
    gz = a[..., 2] > b[..., 2]
    return gx | (ex & (gy | (ey & gz)))


def to_half_diff(n, l, v) -> tuple[float, float, float]:
    """Half-angle coordinates of one (normal, light, view) configuration.

    Requires unit inputs and a front-facing configuration (n.l > 0, n.v > 0);
    l == -v has no half vector and is rejected.
    """
    n = np.asarray(n, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    for name, x in (("n", n), ("l", l), ("v", v)):
        if x.shape != (3,):
            raise ValueError(f"{name} must be a 3-vector")
        _check_unit(name, x)
    if float(n @ l) < 0.0 or float(n @ v) < 0.0:
        raise ValueError("configuration must be front-facing (n.l >= 0 and n.v >= 0)")
    if np.linalg.norm(l + v) < 1e-9:
        raise ValueError("half vector undefined for l == -v")
    out = half_diff_coords(n, l, v)
    return float(out[0]), float(out[1]), float(out[2])


def half_diff_to_directions(theta_h, theta_d, phi_d):
    """Representative (n, l, v) for grid coordinates, with n = +z.

    Inverts the rotation convention of half_diff_coords with the half
    vector placed in the x-z plane (azimuth origin).  Broadcasts over
    arrays; returns (n, l, v) each shaped (..., 3).
    """
    th = np.radians(np.asarray(theta_h, dtype=np.float64))
    td = np.radians(np.asarray(theta_d, dtype=np.float64))
    pd = np.radians(np.asarray(phi_d, dtype=np.float64))
    th, td, pd = np.broadcast_arrays(th, td, pd)

    d = np.stack(
        [np.sin(td) * np.cos(pd), np.sin(td) * np.sin(pd), np.cos(td)], axis=-1
    )
    # rotate d by +theta_h about y: the inverse of the forward transform at phi_h = 0
    ct, st = np.cos(th), np.sin(th)
    l = np.stack(
        [ct * d[..., 0] + st * d[..., 2], d[..., 1], -st * d[..., 0] + ct * d[..., 2]],
        axis=-1,
    )
    h = np.stack([st, np.zeros_like(st), ct], axis=-1)
    v = 2.0 * np.sum(h * l, axis=-1, keepdims=True) * h - l
    n = np.zeros_like(l)
    n[..., 2] = 1.0
    return n, l, v
