"""Image and light-calibration file I/O.

Formats:
  - PFM: "PF" (3-channel) / "Pf" (1-channel) header, negative scale for
    little-endian float32, rows stored bottom-up.
  - 16-bit grayscale PNG intensity planes (linear, value/65535).
  - Light files: one "lx ly lz [intensity]" line per image, '#' comments.
  - False-color normal PNGs: 8-bit RGB via (n + 1) / 2.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# PFM
# ---------------------------------------------------------------------------


def write_pfm(path, data: np.ndarray) -> None:
    """Write (H, W) or (H, W, 3) float32 data, little-endian, bottom-up."""
    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        header = b"Pf"
    elif data.ndim == 3 and data.shape[2] == 3:
        header = b"PF"
    else:
        raise ValueError("PFM data must be (H, W) or (H, W, 3)")
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header + b"\n")
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data[::-1]).astype("<f4").tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"PF", b"Pf"):
            raise FormatError(f"not a PFM file: magic {magic!r}")
        dims = f.readline().split()
        if len(dims) != 2:
            raise FormatError("malformed PFM dimensions")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline().strip())
        count = w * h * (3 if magic == b"PF" else 1)
        dtype = "<f4" if scale < 0 else ">f4"
        buf = f.read(count * 4)
        if len(buf) != count * 4:
            raise FormatError("truncated PFM payload")
        data = np.frombuffer(buf, dtype=dtype).astype(np.float32)
    shape = (h, w, 3) if magic == b"PF" else (h, w)
    return data.reshape(shape)[::-1].copy()


# ---------------------------------------------------------------------------
# PNG
# ---------------------------------------------------------------------------


def write_png16(path, data: np.ndarray) -> None:
    """Write linear intensities in [0, 1] as 16-bit grayscale PNG."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2:
        raise ValueError("PNG16 data must be (H, W)")
    scaled = np.clip(np.round(data * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(scaled, mode="I;16").save(path)


def read_png16(path) -> np.ndarray:
    """Read a 16-bit (or 8-bit) grayscale PNG as linear [0, 1] intensities."""
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim != 2:
        raise FormatError(f"expected single-channel image, got shape {arr.shape}")
    peak = 65535.0 if arr.dtype == np.uint16 or img.mode in ("I;16", "I") else 255.0
    return arr.astype(np.float64) / peak


def write_mask_png(path, mask: np.ndarray) -> None:
    Image.fromarray(np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8), mode="L").save(path)


def read_mask_png(path) -> np.ndarray:
    arr = np.asarray(Image.open(path).convert("L"))
    return arr > 0


def write_falsecolor_png(path, normals: np.ndarray, mask: np.ndarray) -> None:
    """8-bit RGB visualization mapping each component by (n + 1) / 2."""
    n = np.asarray(normals, dtype=np.float64)
    rgb = np.clip(np.round((n + 1.0) * 0.5 * 255.0), 0, 255).astype(np.uint8)
    rgb[~np.asarray(mask, bool)] = 0
    Image.fromarray(rgb, mode="RGB").save(path)


# ---------------------------------------------------------------------------
# Light calibration files
# ---------------------------------------------------------------------------


def write_light_file(path, lights: np.ndarray, intensities: np.ndarray | None = None) -> None:
    lights = np.asarray(lights, dtype=np.float64)
    with open(path, "w") as f:
        f.write("# lx ly lz intensity\n")
        for i, l in enumerate(lights):
            inten = 1.0 if intensities is None else float(intensities[i])
            f.write(f"{l[0]!r} {l[1]!r} {l[2]!r} {inten!r}\n")


def read_light_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse directions and intensities; directions are normalized on load."""
    lights, intens = [], []
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = re.split(r"\s+", line)
            if len(parts) not in (3, 4):
                raise FormatError(f"{path}:{lineno}: expected 'lx ly lz [intensity]'")
            try:
                vec = np.array([float(p) for p in parts[:3]])
                inten = float(parts[3]) if len(parts) == 4 else 1.0
            except ValueError as e:
                raise FormatError(f"{path}:{lineno}: {e}") from e
            norm = np.linalg.norm(vec)
            if norm == 0:
                raise FormatError(f"{path}:{lineno}: zero light direction")
            if abs(norm - 1.0) > 1e-6:
                log.warning("%s:%d: non-unit light direction (|l| = %.6f), normalizing", path, lineno, norm)
            lights.append(vec / norm)
            intens.append(inten)
    if not lights:
        raise FormatError(f"{path}: no light directions found")
    return np.asarray(lights), np.asarray(intens)


# ---------------------------------------------------------------------------
# Stack directories
# ---------------------------------------------------------------------------


def write_stack_dir(directory, images: np.ndarray, mask: np.ndarray, lights: np.ndarray,
                    intensities: np.ndarray | None = None, fmt: str = "pfm") -> None:
    """Write images (Q, H, W), a mask, and the light file into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if fmt not in ("pfm", "png"):
        raise ValueError("fmt must be 'pfm' or 'png'")
    for i, img in enumerate(images):
        name = f"img_{i:04d}.{fmt}"
        if fmt == "pfm":
            write_pfm(directory / name, img)
        else:
            write_png16(directory / name, img)
    write_mask_png(directory / "mask.png", mask)
    write_light_file(directory / "lights.txt", lights, intensities)


def read_stack_dir(directory) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Read (images, mask, lights, intensities) from a stack directory.

    Image files are matched to light-file lines in lexicographic order; a
    count mismatch is an error.
    """
    directory = Path(directory)
    light_path = directory / "lights.txt"
    if not light_path.exists():
        raise FormatError(f"{directory}: missing lights.txt")
    lights, intens = read_light_file(light_path)
    files = sorted(
        p for p in directory.iterdir()
        if p.suffix.lower() in (".pfm", ".png") and p.stem != "mask"
    )
    if len(files) != len(lights):
        raise FormatError(
            f"{directory}: {len(files)} image(s) for {len(lights)} light line(s)"
        )
    planes = []
    for p in files:
        planes.append(read_pfm(p) if p.suffix.lower() == ".pfm" else read_png16(p))
    images = np.stack(planes)
    mask_path = directory / "mask.png"
    mask = read_mask_png(mask_path) if mask_path.exists() else np.ones(images.shape[1:], bool)
    return images, mask, lights, intens
