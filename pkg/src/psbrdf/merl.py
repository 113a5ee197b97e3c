"""Reader and writer for the public measured-BRDF binary layout.

File layout: three little-endian int32 dims (90, 90, 180), then
3 * 90 * 90 * 180 little-endian float64 values, channel-major (all red,
then green, then blue), with linear index
phi_d_idx + 180 * (theta_d_idx + 90 * theta_h_idx).

Stored theta_h bins are square-root spaced: bin i holds the sample at
theta_h = i^2 / 90 degrees (the inverse of index = floor(sqrt(th/90)*90)).
Loading resamples onto the linear 1-degree grid of this package, applies
the conventional per-channel radiometric scales, and clamps negative
entries (sensor noise) to zero.
"""

from __future__ import annotations

import struct

import numpy as np

from .brdf import TabulatedBrdf
from .errors import FormatError
from .halfdiff import HalfDiffGrid

DIMS = (90, 90, 180)
N_SAMPLES = DIMS[0] * DIMS[1] * DIMS[2]
CHANNEL_SCALES = (1.0 / 1500.0, 1.15 / 1500.0, 1.66 / 1500.0)


def decode_merl(data: bytes) -> np.ndarray:
    """Raw stored values as a (3, 90, 90, 180) float64 array, unscaled."""
    header = data[:12]
    if len(header) < 12:
        raise FormatError("truncated header")
    dims = struct.unpack("<3i", header)
    if tuple(dims) != DIMS:
        raise FormatError(f"unexpected dimensions {dims}, want {DIMS}")
    expected = 12 + 3 * N_SAMPLES * 8
    if len(data) < expected:
        raise FormatError(f"truncated payload: {len(data)} bytes, want {expected}")
    vals = np.frombuffer(data[12:expected], dtype="<f8")
    return vals.reshape(3, *DIMS).astype(np.float64)


def encode_merl(raw: np.ndarray) -> bytes:
    """Inverse of decode_merl; raw must be (3, 90, 90, 180)."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.shape != (3, *DIMS):
        raise ValueError(f"raw must be shaped (3, {DIMS[0]}, {DIMS[1]}, {DIMS[2]})")
    return struct.pack("<3i", *DIMS) + raw.astype("<f8").tobytes()


def _theta_h_resample_stencil() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear-grid theta_h nodes bracketed by the square-root-spaced samples."""
    stored = (np.arange(DIMS[0]) ** 2) / 90.0  # degrees of stored sample i
    target = np.arange(DIMS[0], dtype=np.float64)  # 1-degree nodes
    i1 = np.searchsorted(stored, target, side="right")
    i1 = np.clip(i1, 1, DIMS[0] - 1)
    i0 = i1 - 1
    span = stored[i1] - stored[i0]
    w = (target - stored[i0]) / span
    w = np.clip(w, 0.0, 1.0)  # clamp past the last stored sample
    return i0, i1, w


def load_merl(data: bytes) -> TabulatedBrdf:
    """Decode, scale, clamp, and resample a measured-BRDF byte stream."""
    raw = decode_merl(data)
    scaled = raw * np.asarray(CHANNEL_SCALES)[:, None, None, None]
    scaled = np.maximum(scaled, 0.0)
    i0, i1, w = _theta_h_resample_stencil()
    resampled = (1.0 - w)[None, :, None, None] * scaled[:, i0] + w[None, :, None, None] * scaled[:, i1]
    grid = HalfDiffGrid(*DIMS)
    return TabulatedBrdf(grid, resampled.reshape(3, -1))


def load_merl_file(path) -> TabulatedBrdf:
    with open(path, "rb") as f:
        return load_merl(f.read())
