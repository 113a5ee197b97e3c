"""Desk-scale defaults: parametric dictionaries, lighting rigs, and pyramids.

The default dictionary sweeps roughness (and mixes diffuse/specular levels
non-proportionally, so no two atoms are collinear) across four analytic
model families.  Sweeps are geometric so that any single left-out atom is
well approximated by its neighbors.
"""

from __future__ import annotations

import numpy as np

from .brdf import (
    BrdfDictionary,
    ParametricBrdfSpec,
    blinn_phong,
    cook_torrance,
    lambertian,
    tabulate,
    ward,
)
from .geometry import CandidatePyramid, DEFAULT_SCHEDULE, equiangular_hemisphere, spacing_for_count
from .halfdiff import HalfDiffGrid
from .render import LightingRig

DEFAULT_GRID_DIVISOR = 6
DEFAULT_LIGHT_COUNT = 253


def desk_grid(divisor: int = DEFAULT_GRID_DIVISOR) -> HalfDiffGrid:
    return HalfDiffGrid.with_divisor(divisor)


def desk_specs(n_atoms: int = 20) -> list[ParametricBrdfSpec]:
    """Default sweep: glossy lobes over a geometric roughness ladder, two
    fresnel levels per rung, with diffuse/specular weights varied so no two
    atoms are proportional.  Dense single-family rungs keep every atom well
    approximated by the rest, which the leave-one-out protocols rely on.
    """
    n_rungs = max(1, (n_atoms + 1) // 2)
    rough = np.exp(np.linspace(np.log(0.50), np.log(0.08), n_rungs))
    specs = []
    for i, r in enumerate(rough):
        kd = 0.44 - 0.02 * i
        ks = 0.30 + 0.025 * (i % 4)
        specs.append(cook_torrance(kd, ks, float(r), 0.10 + 0.025 * i))
        specs.append(cook_torrance(kd, ks, float(r), 0.55 + 0.035 * i))
    return specs[:n_atoms]


def mixed_specs() -> list[ParametricBrdfSpec]:
    """A four-family sampler used by demos and model-coverage tests."""
    return [
        lambertian(0.55),
        blinn_phong(0.42, 0.25, 15.0),
        blinn_phong(0.28, 0.52, 45.0),
        blinn_phong(0.19, 0.52, 135.0),
        blinn_phong(0.13, 0.34, 410.0),
        ward(0.40, 0.28, 0.42),
        ward(0.27, 0.46, 0.19),
        ward(0.17, 0.40, 0.088),
        cook_torrance(0.36, 0.34, 0.50, 0.10),
        cook_torrance(0.23, 0.52, 0.22, 0.35),
        cook_torrance(0.14, 0.44, 0.10, 0.75),
    ]


def desk_dictionary(grid: HalfDiffGrid | None = None, n_atoms: int = 20) -> BrdfDictionary:
    grid = grid or desk_grid()
    specs = desk_specs(n_atoms)
    atoms = tuple(tabulate(s, grid) for s in specs)
    return BrdfDictionary(grid, atoms, tuple(s.label() for s in specs))


def hemisphere_rig(q: int = DEFAULT_LIGHT_COUNT) -> LightingRig:
    """Deterministic q-light hemisphere rig (unit intensities, view = +z)."""
    pts = equiangular_hemisphere(spacing_for_count(q))
    if len(pts) != q:
        raise RuntimeError(f"rig construction produced {len(pts)} lights for q={q}")
    return LightingRig(pts.normals)


def default_pyramid(schedule=DEFAULT_SCHEDULE) -> CandidatePyramid:
    return CandidatePyramid.build(schedule)
