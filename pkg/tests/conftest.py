import numpy as np
import pytest

from psbrdf.brdf import BrdfDictionary, tabulate
from psbrdf.geometry import CandidatePyramid
from psbrdf.halfdiff import HalfDiffGrid
from psbrdf.presets import desk_dictionary, hemisphere_rig, mixed_specs
from psbrdf.render import build_bank


@pytest.fixture(scope="session")
def grid():
    return HalfDiffGrid.with_divisor(6)


@pytest.fixture(scope="session")
def desk_dict(grid):
    return desk_dictionary(grid)


@pytest.fixture(scope="session")
def mixed_dict(grid):
    specs = mixed_specs()
    return BrdfDictionary(
        grid, tuple(tabulate(s, grid) for s in specs), tuple(s.label() for s in specs)
    )


@pytest.fixture(scope="session")
def small_rig():
    return hemisphere_rig(64)


@pytest.fixture(scope="session")
def coarse_pyramid():
    return CandidatePyramid.build((10.0, 5.0, 3.0))


@pytest.fixture(scope="session")
def small_bank(desk_dict, coarse_pyramid, small_rig):
    """Desk dictionary rendered over a coarse 3-level pyramid and 64 lights."""
    return build_bank(desk_dict, coarse_pyramid, small_rig)


def rand_unit(rng, n=None):
    shape = (3,) if n is None else (n, 3)
    v = rng.normal(size=shape)
    return v / np.linalg.norm(v, axis=-1, keepdims=True)
