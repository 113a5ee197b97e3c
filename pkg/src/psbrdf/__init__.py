"""Photometric stereo with tabulated-BRDF dictionaries.

Per-pixel surface normals are recovered by matching observed intensity
profiles against pre-rendered responses of candidate normals to a BRDF
dictionary (coarse-to-fine search plus gradient refinement); per-pixel
reflectance follows as sparse non-negative abundances, optionally
regularized jointly by a low-rank prior.
"""

from .halfdiff import (
    HalfDiffGrid,
    SampleWeights,
    half_diff_coords,
    half_diff_to_directions,
    sample_weights,
    to_half_diff,
)
from .brdf import (
    BrdfDictionary,
    ParametricBrdfSpec,
    TabulatedBrdf,
    blinn_phong,
    cook_torrance,
    eval_brdf,
    fit_to_dictionary,
    lambertian,
    relative_brdf_error,
    resample,
    tabulate,
    ward,
)
from .merl import decode_merl, encode_merl, load_merl, load_merl_file
from .geometry import (
    CandidatePyramid,
    CandidateSet,
    angular_error,
    cone_filter,
    equiangular_hemisphere,
    euler_to_normal,
    normal_to_euler,
)
from .render import (
    ExemplarBank,
    ExemplarMatrix,
    ImageStack,
    LightingRig,
    NormalMap,
    SceneSpec,
    build_bank,
    mixture_weights,
    render_exemplar,
    render_pixel,
    render_scene,
    shading,
    sphere_normals,
)
from .normals import (
    GradientPair,
    NormalEstimate,
    estimate_gradients,
    estimate_normal_map,
    match_normal_bruteforce,
    match_normal_c2f,
    nnls,
    refine_normal,
)
from .reflectance import (
    AbundanceMatrix,
    BetaSelection,
    LowRankParams,
    SolverTrace,
    fit_pixel_sparse,
    fit_svbrdf_lowrank,
    numeric_rank,
    reconstruct_brdf,
    select_beta,
    soft_threshold,
    svt,
)
from .integrate import integrate_normals
from .presets import desk_dictionary, desk_grid, default_pyramid, hemisphere_rig
from .errors import ConfigError, FormatError, GradientUnavailableError, NumericError

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
