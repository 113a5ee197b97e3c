"""Tabulated BRDFs, parametric generators, dictionaries, and the error metric.

A tabulated BRDF is a non-negative table over a HalfDiffGrid, one row per
color channel.  A dictionary is an ordered set of such tables sharing one
grid; reflectance elsewhere in the package is expressed as non-negative
combinations of its atoms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .halfdiff import (
    HalfDiffGrid,
    half_diff_coords,
    half_diff_to_directions,
)
from ._fista import nonneg_lasso


@dataclass(frozen=True, eq=False)
class TabulatedBrdf:
    """Reflectance sampled on a half-angle grid; values are (channels, T), 1/sr."""

    grid: HalfDiffGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[0] not in (1, 3):
            raise ValueError("values must be (T,) or (channels, T) with 1 or 3 channels")
        if v.shape[1] != self.grid.size:
            raise ValueError(f"expected {self.grid.size} samples per channel, got {v.shape[1]}")
        if not np.all(np.isfinite(v)):
            raise ValueError("BRDF values must be finite")
        if np.any(v < 0):
            raise ValueError("BRDF values must be non-negative")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def channel(self, c: int) -> "TabulatedBrdf":
        """Single-channel view of channel c."""
        return TabulatedBrdf(self.grid, self.values[c])

    def sample(self, coords: np.ndarray) -> np.ndarray:
        """Trilinear table lookup at coords (..., 3); returns (channels, ...)."""
        idx, w = self.grid.interp(coords)
        return np.einsum("c...k,...k->c...", self.values[:, idx], w)


def eval_brdf(brdf: TabulatedBrdf, n, l, v) -> np.ndarray:
    """Reflectance of one configuration, one value per channel.

    Backfacing configurations (n.l <= 0 or n.v <= 0) evaluate to 0 so that
    rendering code needs no special-casing; shading is applied separately.
    """
    n = np.asarray(n, dtype=np.float64)
    l = np.asarray(l, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    for name, x in (("n", n), ("l", l), ("v", v)):
        if abs(np.linalg.norm(x) - 1.0) > 1e-6:
            raise ValueError(f"{name} must be unit-norm")
    if float(n @ l) <= 0.0 or float(n @ v) <= 0.0:
        return np.zeros(brdf.channels)
    coords = half_diff_coords(n, l, v)
    return brdf.sample(coords)


@dataclass(frozen=True, eq=False)
class BrdfDictionary:
    """Ordered atoms on a shared grid; the reflectance model is their non-negative span."""

    grid: HalfDiffGrid
    atoms: tuple[TabulatedBrdf, ...]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        atoms = tuple(self.atoms)
        if not atoms:
            raise ValueError("dictionary needs at least one atom")
        ch = atoms[0].channels
        for a in atoms:
            if a.grid != self.grid:
                raise ValueError("all atoms must share the dictionary grid")
            if a.channels != ch:
                raise ValueError("all atoms must share the channel count")
        labels = tuple(self.labels) if self.labels else tuple(f"atom_{i}" for i in range(len(atoms)))
        if len(labels) != len(atoms):
            raise ValueError("one label per atom required")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def channels(self) -> int:
        return self.atoms[0].channels

    def matrix(self, channel: int = 0) -> np.ndarray:
        """Atom table stack for one channel, shaped (M, T)."""
        return np.stack([a.values[channel] for a in self.atoms])

    def channel_view(self, c: int) -> "BrdfDictionary":
        return BrdfDictionary(self.grid, tuple(a.channel(c) for a in self.atoms), self.labels)

    def combine(self, coeffs: np.ndarray) -> TabulatedBrdf:
        """Non-negative combination of atoms; coeffs is (M,) or (channels, M)."""
        c = np.asarray(coeffs, dtype=np.float64)
        if c.ndim == 1:
            c = np.broadcast_to(c, (self.channels, len(self)))
        if c.shape != (self.channels, len(self)):
            raise ValueError(f"coeffs must be ({len(self)},) or ({self.channels}, {len(self)})")
        tables = np.stack([a.values for a in self.atoms])  # (M, channels, T)
        vals = np.einsum("cm,mct->ct", c, tables)
        return TabulatedBrdf(self.grid, np.maximum(vals, 0.0))


# ---------------------------------------------------------------------------
# Parametric generators (desk-scale dictionary source)
# ---------------------------------------------------------------------------

_MODELS = ("lambertian", "blinn-phong", "ward-isotropic", "cook-torrance")

_GRAZING_CLAMP = 1e-2


@dataclass(frozen=True, eq=False)
class ParametricBrdfSpec:
    """An analytic isotropic model with validated positive parameters.

    Models and parameters:
      lambertian      albedo
      blinn-phong     diffuse, specular, exponent
      ward-isotropic  diffuse, specular, roughness
      cook-torrance   diffuse, specular, roughness, f0
    """

    model: str
    params: dict

    def __post_init__(self):
        if self.model not in _MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose one of {_MODELS}")
        p = dict(self.params)
        required = {
            "lambertian": ("albedo",),
            "blinn-phong": ("diffuse", "specular", "exponent"),
            "ward-isotropic": ("diffuse", "specular", "roughness"),
            "cook-torrance": ("diffuse", "specular", "roughness", "f0"),
        }[self.model]
        for k in required:
            if k not in p:
                raise ValueError(f"{self.model} requires parameter {k!r}")
            if not (np.isfinite(p[k]) and p[k] >= 0):
                raise ValueError(f"parameter {k!r} must be finite and >= 0")
        if self.model == "lambertian" and p["albedo"] > 1.0:
            raise ValueError("lambertian albedo must be <= 1")
        if "roughness" in required and p["roughness"] <= 0:
            raise ValueError("roughness must be > 0")
        if "exponent" in required and p["exponent"] <= 0:
            raise ValueError("exponent must be > 0")
        if self.model == "cook-torrance" and not (0 <= p["f0"] <= 1):
            raise ValueError("f0 must be in [0, 1]")
        object.__setattr__(self, "params", p)

    def label(self) -> str:
        parts = [self.model] + [f"{k}={v:g}" for k, v in sorted(self.params.items())]
        return " ".join(parts)

    def evaluate(self, n, l, v) -> np.ndarray:
        """Model reflectance for broadcastable unit direction arrays.

        The diffuse term is defined for every configuration; specular terms
        whose formulas divide by n.l or n.v evaluate to 0 where the
        configuration is not front-facing.  Output is clamped at 0.
        """
        n = np.asarray(n, dtype=np.float64)
        l = np.asarray(l, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        n, l, v = np.broadcast_arrays(n, l, v)
        nl = np.sum(n * l, axis=-1)
        nv = np.sum(n * v, axis=-1)
        front = (nl > 0) & (nv > 0)
        # grazing denominators are clamped so tables stay bounded near the
        # shadow boundary (the physical radiance there is negligible anyway)
        nl_s = np.where(front, np.maximum(nl, _GRAZING_CLAMP), 1.0)
        nv_s = np.where(front, np.maximum(nv, _GRAZING_CLAMP), 1.0)
        h = l + v
        h = h / np.maximum(np.linalg.norm(h, axis=-1, keepdims=True), 1e-300)
        nh = np.clip(np.sum(n * h, axis=-1), -1.0, 1.0)
        lh = np.clip(np.sum(l * h, axis=-1), -1.0, 1.0)
        p = self.params

        if self.model == "lambertian":
            out = np.full(nl.shape, p["albedo"] / np.pi)
        elif self.model == "blinn-phong":
            e = p["exponent"]
            spec = p["specular"] * (e + 2.0) / (2.0 * np.pi) * np.maximum(nh, 0.0) ** e
            out = p["diffuse"] / np.pi + spec
        elif self.model == "ward-isotropic":
            a2 = p["roughness"] ** 2
            nh_s = np.maximum(nh, 1e-12)
            tan2 = (1.0 - nh_s**2) / nh_s**2
            spec = (
                p["specular"]
                * np.exp(-tan2 / a2)
                / (4.0 * np.pi * a2 * np.sqrt(nl_s * nv_s))
            )
            out = p["diffuse"] / np.pi + np.where(front, spec, 0.0)
        else:  # cook-torrance with a Beckmann lobe and Schlick fresnel
            m2 = p["roughness"] ** 2
            nh_s = np.maximum(nh, 1e-12)
            tan2 = (1.0 - nh_s**2) / nh_s**2
            d = np.exp(-tan2 / m2) / (np.pi * m2 * nh_s**4)
            f = p["f0"] + (1.0 - p["f0"]) * (1.0 - np.maximum(lh, 0.0)) ** 5
            vh = np.maximum(lh, 1e-12)  # v.h == l.h for the half vector
            g = np.minimum(1.0, np.minimum(2 * nh_s * nv_s / vh, 2 * nh_s * nl_s / vh))
            spec = p["specular"] * d * f * g / (4.0 * np.pi * nl_s * nv_s)
            out = p["diffuse"] / np.pi + np.where(front, spec, 0.0)

        return np.maximum(out, 0.0)


def lambertian(albedo: float) -> ParametricBrdfSpec:
    return ParametricBrdfSpec("lambertian", {"albedo": albedo})


def blinn_phong(diffuse: float, specular: float, exponent: float) -> ParametricBrdfSpec:
    return ParametricBrdfSpec(
        "blinn-phong", {"diffuse": diffuse, "specular": specular, "exponent": exponent}
    )


def ward(diffuse: float, specular: float, roughness: float) -> ParametricBrdfSpec:
    return ParametricBrdfSpec(
        "ward-isotropic", {"diffuse": diffuse, "specular": specular, "roughness": roughness}
    )


def cook_torrance(diffuse: float, specular: float, roughness: float, f0: float) -> ParametricBrdfSpec:
    return ParametricBrdfSpec(
        "cook-torrance",
        {"diffuse": diffuse, "specular": specular, "roughness": roughness, "f0": f0},
    )


def tabulate(spec: ParametricBrdfSpec, grid: HalfDiffGrid) -> TabulatedBrdf:
    """Sample an analytic model onto a grid.

    Each node is realized as a representative (n, l, v) configuration with
    n = +z; nodes whose representative light or view falls below the horizon
    are physically unobservable and stored as 0.
    """
    coords = grid.node_coords()
    n, l, v = half_diff_to_directions(coords[:, 0], coords[:, 1], coords[:, 2])
    vals = spec.evaluate(n, l, v)
    return TabulatedBrdf(grid, vals[None, :])


# ---------------------------------------------------------------------------
# Error metric and dictionary fitting
# ---------------------------------------------------------------------------


def relative_brdf_error(est: TabulatedBrdf, truth: TabulatedBrdf) -> float:
    """Root-mean-square table difference, each sample damped by cos(theta_h).

    Symmetric in its arguments; channels are averaged.  The per-sample
    weight uses the sample's theta_h, clamped cosine (always positive on
    the open [0, 90) range).
    """
    if est.grid != truth.grid:
        raise ValueError("BRDFs must share a grid")
    if est.channels != truth.channels:
        raise ValueError("BRDFs must share a channel count")
    coords = est.grid.node_coords()
    w = np.maximum(0.0, np.cos(np.radians(coords[:, 0])))
    diff = (est.values - truth.values) * w
    per_channel = np.sqrt(np.mean(diff**2, axis=1))
    return float(np.mean(per_channel))


def fit_to_dictionary(
    rho: TabulatedBrdf, dictionary: BrdfDictionary, lam: float = 0.0,
    rel_tol: float = 1e-12, max_iters: int = 20000,
) -> np.ndarray:
    """Non-negative sparse coding of a whole table against a dictionary.

    Minimizes ||rho - D c||^2 + lam * ||c||_1 subject to c >= 0, one fit per
    channel.  Returns (M,) for single-channel inputs, (channels, M) otherwise.
    """
    if rho.grid != dictionary.grid:
        raise ValueError("BRDF and dictionary must share a grid")
    if rho.channels != dictionary.channels:
        raise ValueError("BRDF and dictionary must share a channel count")
    if lam < 0:
        raise ValueError("lam must be >= 0")
    out = []
    for c in range(rho.channels):
        d = dictionary.matrix(c).T  # (T, M)
        out.append(nonneg_lasso(d, rho.values[c], lam, rel_tol=rel_tol, max_iters=max_iters))
    coeffs = np.stack(out)
    return coeffs[0] if rho.channels == 1 else coeffs


def resample(brdf: TabulatedBrdf, grid: HalfDiffGrid) -> TabulatedBrdf:
    """Re-tabulate a BRDF onto another grid by trilinear sampling."""
    if grid == brdf.grid:
        return brdf
    vals = brdf.sample(grid.node_coords())
    return TabulatedBrdf(grid, np.maximum(vals, 0.0))
