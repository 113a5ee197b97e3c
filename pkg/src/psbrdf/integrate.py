"""Depth from a normal map by least-squares gradient integration.

Surface slopes p = -nx/nz and q = -ny/nz are integrated over the masked
region with a sparse Poisson-style least squares on forward differences.
Depth is recovered up to an additive constant, fixed by a zero mean over
the valid pixels.
"""

from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve

from .render import NormalMap

MIN_NZ = 1e-3


def integrate_normals(normal_map: NormalMap, mask: np.ndarray | None = None) -> np.ndarray:
    """Integrate a normal map into a depth map (H, W); invalid pixels are NaN.

    Pixels with nz below MIN_NZ are treated as masked.  +y is up in image
    space (row index decreases upward), matching the scene generator.
    """
    n = normal_map.normals
    valid = normal_map.mask.copy() if mask is None else (normal_map.mask & np.asarray(mask, dtype=bool))
    valid &= n[..., 2] >= MIN_NZ
    h, w = valid.shape
    idx = -np.ones((h, w), dtype=np.int64)
    ys, xs = np.nonzero(valid)
    npix = len(ys)
    if npix == 0:
        return np.full((h, w), np.nan)
    idx[ys, xs] = np.arange(npix)

    p = -n[..., 0] / np.maximum(n[..., 2], MIN_NZ)  # dz/dx
    q = -n[..., 1] / np.maximum(n[..., 2], MIN_NZ)  # dz/d(+y), i.e. up

    rows, cols, vals, rhs = [], [], [], []
    eq = 0

    def add(a, b, g):
        nonlocal eq
        rows.extend((eq, eq))
        cols.extend((a, b))
        vals.extend((-1.0, 1.0))
        rhs.append(g)
        eq += 1

    # z[y, x+1] - z[y, x] = (p[y,x] + p[y,x+1]) / 2
    right = valid[:, :-1] & valid[:, 1:]
    yy, xx = np.nonzero(right)
    for y, x in zip(yy, xx):
        add(idx[y, x], idx[y, x + 1], 0.5 * (p[y, x] + p[y, x + 1]))
    # z[y-1, x] - z[y, x] = (q[y,x] + q[y-1,x]) / 2   (row y-1 is one step up)
    up = valid[1:, :] & valid[:-1, :]
    yy, xx = np.nonzero(up)
    for y, x in zip(yy + 1, xx):
        add(idx[y, x], idx[y - 1, x], 0.5 * (q[y, x] + q[y - 1, x]))

    # gauge: pin the first valid pixel, then remove the mean
    rows.append(eq)
    cols.append(0)
    vals.append(1.0)
    rhs.append(0.0)
    eq += 1

    A = coo_matrix((vals, (rows, cols)), shape=(eq, npix)).tocsr()
    b = np.asarray(rhs)
    z = spsolve((A.T @ A).tocsc(), A.T @ b)
    z = np.asarray(z, dtype=np.float64)
    z -= z.mean()

    depth = np.full((h, w), np.nan)
    depth[ys, xs] = z
    return depth
