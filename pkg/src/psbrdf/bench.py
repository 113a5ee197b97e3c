"""Experiment harness: desk-scale protocols with CSV emission.

Protocols:
  table1  brute-force vs coarse-to-fine cost/accuracy per pyramid level
  table2  gradient refinement gains from both initializations
  fig4    error versus the number of input images
  fig5    per-material error aggregation (leave-one-out)
  fig8    low-rank reflectance: solution rank versus error on a mixture sphere

Results CSVs contain only deterministic columns (errors, counts, ranks);
wall-clock measurements go to a separate timing CSV so repeated runs with
one seed are byte-identical.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .brdf import relative_brdf_error
from .config import PipelineConfig
from .geometry import CandidatePyramid, angular_error, euler_to_normal
from .normals import match_normal_bruteforce, match_normal_c2f, refine_normal
from .pipeline import build_dictionary
from .presets import hemisphere_rig
from .reflectance import (
    LowRankParams,
    fit_pixel_sparse,
    fit_svbrdf_lowrank,
    numeric_rank,
    pixel_response_matrices,
    reconstruct_brdf,
)
from .render import (
    NormalMap,
    SceneSpec,
    build_bank,
    mixture_weights,
    render_pixel,
    render_scene,
    sphere_normals,
)

# random-normal elevation cap for synthetic trials; near-grazing normals are
# unobservable under a top-view rig and excluded from the protocols
THETA_MAX_DEG = 80.0


@dataclass
class ExperimentReport:
    """Per-trial rows plus aggregates; aggregates recompute from the rows."""

    protocol: str
    columns: list[str]
    rows: list[list] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    timings: list[tuple[str, float]] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(self.columns)
            for row in self.rows:
                wr.writerow([_fmt(v) for v in row])
            wr.writerow([])
            wr.writerow(["aggregate", "value"])
            for k in sorted(self.aggregates):
                wr.writerow([k, _fmt(self.aggregates[k])])

    def write_timing_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            wr = csv.writer(f)
            wr.writerow(["step", "seconds"])
            for step, sec in self.timings:
                wr.writerow([step, f"{sec:.3f}"])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def make_trials(n_atoms: int, rng: np.random.Generator, count: int,
                theta_max: float = THETA_MAX_DEG) -> list[tuple[int, np.ndarray]]:
    """Deterministic trial list: (left-out atom index, true unit normal).

    Atoms cycle so every material appears equally often; normals are uniform
    over the spherical cap theta <= theta_max.
    """
    trials = []
    cos_cap = np.cos(np.radians(theta_max))
    for t in range(count):
        j = t % n_atoms
        theta = float(np.degrees(np.arccos(rng.uniform(cos_cap, 1.0))))
        phi = float(rng.uniform(0.0, 360.0))
        trials.append((j, euler_to_normal(theta, phi)))
    return trials


def _loo_mask(m: int, j: int) -> np.ndarray:
    mask = np.ones(m, dtype=bool)
    mask[j] = False
    return mask


def bench_table1(cfg: PipelineConfig, trials: int = 25) -> ExperimentReport:
    """Brute force and coarse-to-fine at every level prefix of the schedule."""
    rep = ExperimentReport("table1", ["method", "level", "spacing_deg", "mean_error_deg", "max_samples"])
    d = build_dictionary(cfg)
    rig = hemisphere_rig(cfg.lights)
    pyramid = CandidatePyramid.build(cfg.pyramid)
    t0 = time.perf_counter()
    bank = build_bank(d, pyramid, rig)
    rep.timings.append(("bank_build", time.perf_counter() - t0))
    rng = np.random.default_rng(cfg.seed)
    trial_list = make_trials(len(d), rng, trials)
    profiles = [
        (j, n, render_pixel(d.atoms[j], n, rig)) for j, n in trial_list
    ]
    for level in range(len(pyramid)):
        spacing = pyramid.spacings[level]
        for method in ("bruteforce", "coarse2fine"):
            t0 = time.perf_counter()
            errs, samples = [], 0
            for j, n_true, profile in profiles:
                mask = _loo_mask(len(d), j)
                if method == "bruteforce":
                    est = match_normal_bruteforce(profile, bank, level, atom_mask=mask)
                else:
                    est = _c2f_prefix(profile, bank, level, mask)
                errs.append(angular_error(est.normal, n_true))
                samples = max(samples, est.evaluated_count)
            rep.timings.append((f"{method}_L{level}", time.perf_counter() - t0))
            rep.rows.append([method, level, spacing, float(np.mean(errs)), samples])
    rep.aggregates["trials"] = trials
    return rep


def _c2f_prefix(profile, bank, last_level, mask):
    """Coarse-to-fine truncated after `last_level` (prefix of the schedule)."""
    from .render import ExemplarBank

    sub = ExemplarBank(
        CandidatePyramid(bank.pyramid.levels[: last_level + 1]),
        bank.rig,
        bank.dictionary,
        bank.level_values[: last_level + 1],
        bank.dictionary_id,
    )
    return match_normal_c2f(profile, sub, atom_mask=mask)


def bench_table2(cfg: PipelineConfig, trials: int = 25) -> ExperimentReport:
    """Refinement gains from brute-force and coarse-to-fine initializations."""
    rep = ExperimentReport(
        "table2", ["method", "level", "spacing_deg", "mean_error_deg", "mean_refined_error_deg"]
    )
    d = build_dictionary(cfg)
    rig = hemisphere_rig(cfg.lights)
    pyramid = CandidatePyramid.build(cfg.pyramid)
    bank = build_bank(d, pyramid, rig)
    rng = np.random.default_rng(cfg.seed)
    trial_list = make_trials(len(d), rng, trials)
    level = len(pyramid) - 1
    for method in ("bruteforce", "coarse2fine"):
        t0 = time.perf_counter()
        errs, errs_ref = [], []
        for j, n_true in trial_list:
            mask = _loo_mask(len(d), j)
            profile = render_pixel(d.atoms[j], n_true, rig)
            if method == "bruteforce":
                est = match_normal_bruteforce(profile, bank, level, atom_mask=mask)
            else:
                est = match_normal_c2f(profile, bank, atom_mask=mask)
            ref = refine_normal(profile, est, bank, atom_mask=mask)
            errs.append(angular_error(est.normal, n_true))
            errs_ref.append(angular_error(ref.normal, n_true))
        rep.timings.append((method, time.perf_counter() - t0))
        rep.rows.append(
            [method, level, pyramid.spacings[level], float(np.mean(errs)), float(np.mean(errs_ref))]
        )
    rep.aggregates["trials"] = trials
    return rep


def bench_fig4(cfg: PipelineConfig, trials: int = 60, q_values=(20, 50, 100, 250)) -> ExperimentReport:
    """Normal error versus image count on shared trials.

    Each rig is a deterministic evenly-strided subset of a base rig, so the
    trials are rendered consistently across Q.
    """
    rep = ExperimentReport("fig4", ["q", "mean_error_deg", "mean_refined_error_deg"])
    d = build_dictionary(cfg)
    q_base = max(max(q_values), cfg.lights)
    base = hemisphere_rig(q_base)
    pyramid = CandidatePyramid.build(cfg.pyramid)
    rng = np.random.default_rng(cfg.seed)
    trial_list = make_trials(len(d), rng, trials)
    for q in q_values:
        idx = np.unique(np.linspace(0, q_base - 1, q).round().astype(int))
        rig = base.subset(idx)
        t0 = time.perf_counter()
        bank = build_bank(d, pyramid, rig)
        rep.timings.append((f"bank_q{q}", time.perf_counter() - t0))
        errs, errs_ref = [], []
        t0 = time.perf_counter()
        for j, n_true in trial_list:
            mask = _loo_mask(len(d), j)
            profile = render_pixel(d.atoms[j], n_true, rig)
            est = match_normal_c2f(profile, bank, atom_mask=mask)
            ref = refine_normal(profile, est, bank, atom_mask=mask)
            errs.append(angular_error(est.normal, n_true))
            errs_ref.append(angular_error(ref.normal, n_true))
        rep.timings.append((f"solve_q{q}", time.perf_counter() - t0))
        rep.rows.append([int(len(idx)), float(np.mean(errs)), float(np.mean(errs_ref))])
    rep.aggregates["trials"] = trials
    return rep


def bench_fig5(cfg: PipelineConfig, trials_per_atom: int = 10) -> ExperimentReport:
    """Leave-one-out error aggregated per material."""
    rep = ExperimentReport(
        "fig5", ["atom", "label", "mean_error_deg", "mean_refined_error_deg", "trials"]
    )
    d = build_dictionary(cfg)
    rig = hemisphere_rig(cfg.lights)
    pyramid = CandidatePyramid.build(cfg.pyramid)
    bank = build_bank(d, pyramid, rig)
    rng = np.random.default_rng(cfg.seed)
    cos_cap = np.cos(np.radians(THETA_MAX_DEG))
    t0 = time.perf_counter()
    for j in range(len(d)):
        mask = _loo_mask(len(d), j)
        errs, errs_ref = [], []
        for _ in range(trials_per_atom):
            theta = float(np.degrees(np.arccos(rng.uniform(cos_cap, 1.0))))
            n_true = euler_to_normal(theta, float(rng.uniform(0.0, 360.0)))
            profile = render_pixel(d.atoms[j], n_true, rig)
            est = match_normal_c2f(profile, bank, atom_mask=mask)
            ref = refine_normal(profile, est, bank, atom_mask=mask)
            errs.append(angular_error(est.normal, n_true))
            errs_ref.append(angular_error(ref.normal, n_true))
        rep.rows.append([j, d.labels[j], float(np.mean(errs)), float(np.mean(errs_ref)), trials_per_atom])
    rep.timings.append(("all_materials", time.perf_counter() - t0))
    rep.aggregates["mean_error_deg"] = float(np.mean([r[2] for r in rep.rows]))
    rep.aggregates["mean_refined_error_deg"] = float(np.mean([r[3] for r in rep.rows]))
    return rep


def fig8_scene(cfg: PipelineConfig, d, rig, size: int = 64, noise_sigma: float = 0.01,
               cap_deg: float = 60.0, atom_triplet=(2, 8, 14)):
    """Rank-3 mixture sphere used by the fig8 protocol and its tests."""
    nm_full = sphere_normals(size, size, 0.95)
    cap = nm_full.mask & (nm_full.normals[..., 2] >= np.cos(np.radians(cap_deg)))
    nmap = NormalMap(nm_full.normals, cap)
    w = mixture_weights(size, size)
    abund = np.zeros((len(d), size, size))
    for k, atom in enumerate(atom_triplet):
        abund[atom] = w[k]
    spec = SceneSpec(size, size, geometry=nmap, dictionary=d, abundances=abund,
                     noise_sigma=noise_sigma)
    return render_scene(spec, rig, seed=cfg.seed)


def bench_fig8(cfg: PipelineConfig, size: int = 64, sweep_points: int = 10) -> ExperimentReport:
    """Low-rank solution rank versus reflectance error on a mixture sphere."""
    rep = ExperimentReport("fig8", ["beta", "rank", "mean_rel_brdf_error", "iters"])
    d = build_dictionary(cfg)
    rig = hemisphere_rig(cfg.lights)
    stack, nmap, truth_c = fig8_scene(cfg, d, rig, size=size,
                                      noise_sigma=cfg.noise_sigma if cfg.noise_sigma > 0 else 0.01)
    pixels, profiles = stack.profiles()
    t0 = time.perf_counter()
    B = pixel_response_matrices(nmap.normals[pixels[:, 0], pixels[:, 1]], d, rig)
    init = np.stack(
        [fit_pixel_sparse(profiles[i], B[i], cfg.lam) for i in range(len(pixels))], axis=1
    )
    rep.timings.append(("per_pixel_init", time.perf_counter() - t0))

    truths = [reconstruct_brdf(truth_c[:, i], d) for i in range(len(pixels))]

    def mean_err(C):
        errs = [relative_brdf_error(reconstruct_brdf(np.maximum(C[:, i], 0.0), d), truths[i])
                for i in range(len(pixels))]
        return float(np.mean(errs))

    rep.aggregates["per_pixel_error"] = mean_err(init)
    sigma0 = float(np.linalg.svd(init, compute_uv=False)[0])
    betas = sigma0 * np.logspace(-2.0, 1.8, sweep_points)
    warm = init
    for beta in betas:
        params = LowRankParams(lam=cfg.lam, beta=float(beta),
                               max_iters=cfg.solver_max_iters, rel_tol=cfg.solver_rel_tol)
        t0 = time.perf_counter()
        abund, trace = fit_svbrdf_lowrank(stack, nmap, d, rig, params, B=B, init=warm)
        rep.timings.append((f"beta_{beta:.4g}", time.perf_counter() - t0))
        warm = abund.values  # ascending-beta warm start
        rep.rows.append([float(beta), numeric_rank(abund.values), mean_err(abund.values), len(trace)])
    return rep


PROTOCOLS = {
    "table1": bench_table1,
    "table2": bench_table2,
    "fig4": bench_fig4,
    "fig5": bench_fig5,
    "fig8": bench_fig8,
}


def run_bench(protocol: str, cfg: PipelineConfig, out_dir) -> ExperimentReport:
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {sorted(PROTOCOLS)}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rep = PROTOCOLS[protocol](cfg)
    rep.write_csv(out_dir / f"{protocol}_results.csv")
    rep.write_timing_csv(out_dir / f"{protocol}_timing.csv")
    return rep
