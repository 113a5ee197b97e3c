"""Binary container formats: dictionaries, abundance matrices, bank caches.

Dictionary ("BDCT"): magic, version u16, grid dims 3 x u32, channel count
u8, atom count u32, then per atom a u16 length-prefixed UTF-8 label and
float32 values (channel-major, phi_d fastest).  All integers and floats
little-endian.

Abundance ("ABDC"): magic, dims (M, N) as u32, N pixel coordinates as
(u32 x, u32 y), then float32 values column-major.

Bank cache ("BANK"): magic, version u16, dictionary and rig hashes, the
pyramid schedule, then per level the candidate normals (float64) and the
float32 response matrices.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .brdf import BrdfDictionary, TabulatedBrdf
from .errors import FormatError
from .geometry import CandidatePyramid, CandidateSet
from .halfdiff import HalfDiffGrid
from .reflectance import AbundanceMatrix
from .render import ExemplarBank, LightingRig, dictionary_hash

DICT_MAGIC = b"BDCT"
ABUND_MAGIC = b"ABDC"
BANK_MAGIC = b"BANK"
DICT_VERSION = 1
BANK_VERSION = 1


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}")
    return data


# ---------------------------------------------------------------------------
# Dictionary container
# ---------------------------------------------------------------------------


def save_dictionary(path, dictionary: BrdfDictionary) -> None:
    g = dictionary.grid
    with open(path, "wb") as f:
        f.write(DICT_MAGIC)
        f.write(struct.pack("<H", DICT_VERSION))
        f.write(struct.pack("<3I", g.n_th, g.n_td, g.n_pd))
        f.write(struct.pack("<B", dictionary.channels))
        f.write(struct.pack("<I", len(dictionary)))
        for atom, label in zip(dictionary.atoms, dictionary.labels):
            enc = label.encode("utf-8")
            f.write(struct.pack("<H", len(enc)))
            f.write(enc)
            f.write(atom.values.astype("<f4").tobytes())


def load_dictionary(path) -> BrdfDictionary:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != DICT_MAGIC:
            raise FormatError("not a dictionary container")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != DICT_VERSION:
            raise FormatError(f"unsupported dictionary version {version}")
        n_th, n_td, n_pd = struct.unpack("<3I", _read_exact(f, 12, "grid dims"))
        grid = HalfDiffGrid(n_th, n_td, n_pd)
        (channels,) = struct.unpack("<B", _read_exact(f, 1, "channel count"))
        (m,) = struct.unpack("<I", _read_exact(f, 4, "atom count"))
        atoms, labels = [], []
        for _ in range(m):
            (label_len,) = struct.unpack("<H", _read_exact(f, 2, "label length"))
            labels.append(_read_exact(f, label_len, "label").decode("utf-8"))
            raw = _read_exact(f, channels * grid.size * 4, "atom values")
            vals = np.frombuffer(raw, dtype="<f4").reshape(channels, grid.size)
            atoms.append(TabulatedBrdf(grid, vals.astype(np.float64)))
        return BrdfDictionary(grid, tuple(atoms), tuple(labels))


# ---------------------------------------------------------------------------
# Abundance container
# ---------------------------------------------------------------------------


def save_abundances(path, abund: AbundanceMatrix) -> None:
    m, n = abund.values.shape
    with open(path, "wb") as f:
        f.write(ABUND_MAGIC)
        f.write(struct.pack("<2I", m, n))
        xy = np.stack([abund.pixel_index[:, 1], abund.pixel_index[:, 0]], axis=1)
        f.write(xy.astype("<u4").tobytes())
        f.write(np.asfortranarray(abund.values.astype("<f4")).tobytes(order="F"))


def load_abundances(path) -> AbundanceMatrix:
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != ABUND_MAGIC:
            raise FormatError("not an abundance container")
        m, n = struct.unpack("<2I", _read_exact(f, 8, "dims"))
        xy = np.frombuffer(_read_exact(f, n * 8, "pixel index"), dtype="<u4").reshape(n, 2)
        vals = np.frombuffer(_read_exact(f, m * n * 4, "values"), dtype="<f4")
        values = vals.reshape(m, n, order="F").astype(np.float64)
        pixel_index = np.stack([xy[:, 1], xy[:, 0]], axis=1).astype(np.int64)
        return AbundanceMatrix(values, pixel_index)


# ---------------------------------------------------------------------------
# Bank cache
# ---------------------------------------------------------------------------


def save_bank(path, bank: ExemplarBank) -> None:
    with open(path, "wb") as f:
        f.write(BANK_MAGIC)
        f.write(struct.pack("<H", BANK_VERSION))
        f.write(bytes.fromhex(bank.dictionary_id))
        f.write(bytes.fromhex(bank.rig.content_hash()))
        f.write(struct.pack("<H", bank.n_levels))
        for cs, vals in zip(bank.pyramid.levels, bank.level_values):
            k, q, m = vals.shape
            f.write(struct.pack("<d", cs.spacing_deg))
            f.write(struct.pack("<3I", k, q, m))
            f.write(cs.normals.astype("<f8").tobytes())
            f.write(vals.astype("<f4").tobytes())


def load_bank(path, dictionary: BrdfDictionary, rig: LightingRig) -> ExemplarBank:
    """Load a cached bank; the stored hashes must match the given inputs."""
    with open(path, "rb") as f:
        if _read_exact(f, 4, "magic") != BANK_MAGIC:
            raise FormatError("not a bank cache")
        (version,) = struct.unpack("<H", _read_exact(f, 2, "version"))
        if version != BANK_VERSION:
            raise FormatError(f"unsupported bank version {version}")
        dict_id = _read_exact(f, 32, "dictionary hash").hex()
        rig_id = _read_exact(f, 32, "rig hash").hex()
        if dict_id != dictionary_hash(dictionary):
            raise FormatError("bank cache was built for a different dictionary")
        if rig_id != rig.content_hash():
            raise FormatError("bank cache was built for a different lighting rig")
        (n_levels,) = struct.unpack("<H", _read_exact(f, 2, "level count"))
        sets, blocks = [], []
        for _ in range(n_levels):
            (spacing,) = struct.unpack("<d", _read_exact(f, 8, "spacing"))
            k, q, m = struct.unpack("<3I", _read_exact(f, 12, "level dims"))
            normals = np.frombuffer(
                _read_exact(f, k * 24, "candidates"), dtype="<f8"
            ).reshape(k, 3)
            vals = np.frombuffer(
                _read_exact(f, k * q * m * 4, "responses"), dtype="<f4"
            ).reshape(k, q, m).copy()
            sets.append(CandidateSet(normals.astype(np.float64), spacing))
            blocks.append(vals)
    pyramid = CandidatePyramid(tuple(sets))
    return ExemplarBank(pyramid, rig, dictionary, tuple(blocks), dict_id)


def bank_cache_name(dictionary: BrdfDictionary, rig: LightingRig, schedule, divisor: int) -> str:
    """Deterministic cache file name from the bank's identifying inputs."""
    sched = "-".join(f"{s:g}" for s in schedule)
    return (
        f"bank_{dictionary_hash(dictionary)[:12]}_{rig.content_hash()[:12]}"
        f"_{sched}_r{divisor}.bank"
    )


def load_or_build_bank(cache_dir, dictionary, rig, pyramid, divisor: int):
    """Build a bank, reusing an on-disk cache when hashes line up."""
    from .render import build_bank

    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    path = cache_dir / bank_cache_name(dictionary, rig, pyramid.spacings, divisor)
    if path.exists():
        try:
            return load_bank(path, dictionary, rig)
        except FormatError:
            pass  # stale or foreign cache entry: rebuild
    bank = build_bank(dictionary, pyramid, rig)
    save_bank(path, bank)
    return bank
