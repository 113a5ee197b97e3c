"""End-to-end pipeline stages: ingestion, solving, relighting, synthesis.

Each stage validates its inputs, runs the corresponding solver module, and
writes re-ingestable artifacts (PFM/PNG images, binary containers, CSV
summaries).  All stochastic choices derive from the config seed.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .brdf import BrdfDictionary
from .config import PipelineConfig
from .containers import (
    load_dictionary,
    load_or_build_bank,
    save_abundances,
    save_dictionary,
)
from .errors import ConfigError, FormatError
from .fileio import (
    read_stack_dir,
    write_falsecolor_png,
    write_pfm,
    write_stack_dir,
)
from .geometry import CandidatePyramid
from .halfdiff import HalfDiffGrid
from .merl import load_merl_file
from .normals import estimate_normal_map
from .presets import desk_dictionary, hemisphere_rig
from .brdf import resample
from .reflectance import (
    AbundanceMatrix,
    LowRankParams,
    fit_pixel_sparse,
    pixel_response_matrices,
    select_beta,
)
from .render import (
    ImageStack,
    LightingRig,
    NormalMap,
    SceneSpec,
    mixture_weights,
    render_pixel,
    render_scene,
    sphere_normals,
)


def build_dictionary(cfg: PipelineConfig) -> BrdfDictionary:
    grid = HalfDiffGrid.with_divisor(cfg.grid_divisor)
    if cfg.dict_source == "desk":
        return desk_dictionary(grid, cfg.n_atoms)
    p = Path(cfg.dict_source)
    if p.is_file():
        return load_dictionary(p)
    if p.is_dir():
        files = sorted(p.glob("*.binary"))
        if not files:
            raise ConfigError(f"no .binary measured-BRDF files in {p}")
        atoms, labels = [], []
        for f in files[: cfg.n_atoms]:
            brdf = load_merl_file(f)
            atoms.append(resample(brdf.channel(1), grid))  # green channel
            labels.append(f.stem)
        return BrdfDictionary(grid, tuple(atoms), tuple(labels))
    raise ConfigError(f"unreadable dictionary source {p}")


def ingest(directory) -> ImageStack:
    """Load a stack directory into a validated, linear ImageStack."""
    images, mask, lights, intens = read_stack_dir(directory)
    rig = LightingRig(lights, intens)
    return ImageStack(images, mask, rig)


def synth(cfg: PipelineConfig, out_dir) -> Path:
    """Generate a synthetic scene and write it as an ingestable stack."""
    out_dir = Path(out_dir)
    d = build_dictionary(cfg)
    rig = hemisphere_rig(cfg.lights)
    rng = np.random.default_rng(cfg.seed)
    n_mix = min(cfg.scene_atoms, len(d))
    chosen = rng.choice(len(d), size=n_mix, replace=False)
    w = mixture_weights(cfg.scene_size, cfg.scene_size)
    abund = np.zeros((len(d), cfg.scene_size, cfg.scene_size))
    for k in range(n_mix):
        abund[chosen[k]] = w[k % 3] if n_mix >= 3 else w[k] / max(1, n_mix)
    geometry = "sphere" if cfg.scene == "sphere" else NormalMap(
        np.broadcast_to(np.array([0.0, 0.0, 1.0]), (cfg.scene_size, cfg.scene_size, 3)).copy(),
        np.ones((cfg.scene_size, cfg.scene_size), bool),
    )
    spec = SceneSpec(
        cfg.scene_size, cfg.scene_size, geometry=geometry,
        dictionary=d, abundances=abund, noise_sigma=cfg.noise_sigma,
    )
    stack, nmap, truth_c = render_scene(spec, rig, seed=cfg.seed)
    write_stack_dir(out_dir, stack.images, stack.mask, rig.lights, rig.intensities)
    write_pfm(out_dir / "truth_normals.pfm", nmap.normals.astype(np.float32))
    if truth_c is not None:
        ys, xs = np.nonzero(stack.mask)
        save_abundances(out_dir / "truth_abundances.abdc",
                        AbundanceMatrix(truth_c, np.stack([ys, xs], axis=1)))
    save_dictionary(out_dir / "dictionary.bdct", d)
    return out_dir


def run_normals(cfg: PipelineConfig, stack: ImageStack, out_dir, cache_dir=None):
    """Estimate a normal map and write PFM, false-color PNG, and residual CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = build_dictionary(cfg)
    pyramid = CandidatePyramid.build(cfg.pyramid)
    if cache_dir is not None:
        bank = load_or_build_bank(cache_dir, d, stack.rig, pyramid, cfg.grid_divisor)
    else:
        from .render import build_bank

        bank = build_bank(d, pyramid, stack.rig)
    nmap, estimates = estimate_normal_map(stack, bank, refine=cfg.refine, threads=cfg.threads)
    write_pfm(out_dir / "normals.pfm", nmap.normals.astype(np.float32))
    write_falsecolor_png(out_dir / "normals.png", nmap.normals, nmap.mask)
    pixels, _ = stack.profiles()
    with open(out_dir / "residuals.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["y", "x", "residual", "evaluated", "refined"])
        for (y, x), e in zip(pixels, estimates):
            wr.writerow([y, x, repr(e.residual), e.evaluated_count, int(e.refined)])
    return nmap, estimates


def run_reflectance(cfg: PipelineConfig, stack: ImageStack, nmap: NormalMap, out_dir):
    """Fit per-pixel abundances (optionally low-rank) and write artifacts."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if nmap.normals.shape[:2] != (stack.height, stack.width):
        raise FormatError("normal map does not match the stack dimensions")
    d = build_dictionary(cfg)
    pixels, profiles = stack.profiles()
    normals = nmap.normals[pixels[:, 0], pixels[:, 1]]
    B = pixel_response_matrices(normals, d, stack.rig)
    per_pixel = np.stack(
        [fit_pixel_sparse(profiles[i], B[i], cfg.lam) for i in range(len(pixels))], axis=1
    )
    abund = AbundanceMatrix(per_pixel, pixels)
    beta_used = 0.0
    if cfg.lowrank:
        params = LowRankParams(
            lam=cfg.lam, beta=cfg.beta if cfg.beta > 0 else 0.0,
            max_iters=cfg.solver_max_iters, rel_tol=cfg.solver_rel_tol,
        )
        if cfg.target_rank > 0:
            sel = select_beta(stack, nmap, d, stack.rig, cfg.target_rank, params)
            abund, beta_used = sel.abundances, sel.beta
        else:
            from .reflectance import fit_svbrdf_lowrank

            abund, _ = fit_svbrdf_lowrank(stack, nmap, d, stack.rig, params, B=B, init=per_pixel)
            beta_used = cfg.beta
    save_abundances(out_dir / "abundances.abdc", abund)
    with open(out_dir / "reflectance_summary.csv", "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["pixels", "atoms", "lambda", "lowrank", "beta"])
        wr.writerow([abund.n_pixels, len(d), repr(cfg.lam), int(cfg.lowrank), repr(float(beta_used))])
    return abund


def relight(
    nmap: NormalMap,
    abund: AbundanceMatrix,
    dictionary: BrdfDictionary,
    light,
    intensity: float = 1.0,
    view=(0.0, 0.0, 1.0),
) -> np.ndarray:
    """Render one image of the reconstructed scene under a new point light.

    The intensity is linear in the abundances, so each pixel is the dot of
    its coefficient column with the per-atom responses at its normal.
    """
    light = np.asarray(light, dtype=np.float64)
    light = light / np.linalg.norm(light)
    rig = LightingRig(
        np.broadcast_to(light, (3, 3)).copy(),
        np.full(3, float(intensity)),
        np.asarray(view, dtype=np.float64),
    )
    normals = nmap.normals[abund.pixel_index[:, 0], abund.pixel_index[:, 1]]
    responses = pixel_response_matrices(normals, dictionary, rig)[:, 0, :]  # (N, M)
    vals = np.einsum("nm,mn->n", responses, abund.values)
    img = np.zeros(nmap.mask.shape)
    img[abund.pixel_index[:, 0], abund.pixel_index[:, 1]] = vals
    return img
