"""Reflectance recovery given surface normals.

Per pixel, abundances over the dictionary are fit by an accelerated
proximal-gradient solve of a non-negative sparse regression.  Jointly, the
abundance matrix is refined by forward-backward splitting with three steps
per iteration: a gradient step on the data term, a non-negative soft
threshold for the l1 penalty, and singular value thresholding for the
nuclear-norm (low-rank) penalty.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._fista import nonneg_lasso
from .brdf import BrdfDictionary, TabulatedBrdf
from .errors import NumericError
from .render import ImageStack, LightingRig, NormalMap, render_exemplar

RANK_REL_THRESHOLD = 1e-8


def soft_threshold(x, tau: float):
    """Elementwise sgn(x) * max(|x| - tau, 0)."""
    if tau < 0:
        raise ValueError("tau must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def svt(X: np.ndarray, beta: float) -> np.ndarray:
    """Singular value thresholding: shrink every singular value by beta."""
    if beta < 0:
        raise ValueError("beta must be >= 0")
    X = np.asarray(X, dtype=np.float64)
    try:
        u, s, vt = np.linalg.svd(X, full_matrices=False)
    except np.linalg.LinAlgError as e:
        raise NumericError(f"SVD failed: {e}") from e
    s = np.maximum(s - beta, 0.0)
    return (u * s) @ vt


def numeric_rank(X: np.ndarray, rel: float = RANK_REL_THRESHOLD) -> int:
    """Count of singular values above rel * sigma_max."""
    s = np.linalg.svd(np.asarray(X, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rel * s[0]))


def fit_pixel_sparse(
    I_p: np.ndarray, B: np.ndarray, lam: float,
    rel_tol: float = 1e-10, max_iters: int = 20000,
) -> np.ndarray:
    """Sparse non-negative abundance fit for one pixel.

    Minimizes ||I_p - B c||^2 + lam ||c||_1 over c >= 0 by accelerated
    proximal gradient with a non-negative soft-threshold prox; converges on
    a relative objective change below rel_tol.
    """
    return nonneg_lasso(B, I_p, lam, rel_tol=rel_tol, max_iters=max_iters)


@dataclass(frozen=True, eq=False)
class AbundanceMatrix:
    """Per-pixel abundance columns (M, N) with the column -> pixel mapping."""

    values: np.ndarray
    pixel_index: np.ndarray  # (N, 2) as (y, x)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        p = np.asarray(self.pixel_index, dtype=np.int64)
        if v.ndim != 2 or p.shape != (v.shape[1], 2):
            raise ValueError("values must be (M, N) with one pixel per column")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("abundances must be finite and non-negative")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "pixel_index", p)

    @property
    def n_pixels(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class LowRankParams:
    """Weights and schedule of the joint solver.

    step is the gradient step t; None selects 0.9 / L with
    L = 2 max_p sigma_max(B_p)^2, and any explicit value above 1 / L is
    rejected when the solver is set up.
    """

    lam: float = 0.0
    beta: float = 0.0
    step: float | None = None
    max_iters: int = 500
    rel_tol: float = 1e-7

    def __post_init__(self):
        if self.lam < 0 or self.beta < 0:
            raise ValueError("lam and beta must be >= 0")
        if self.step is not None and self.step <= 0:
            raise ValueError("step must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class SolverTrace:
    """Per-iteration objective, numeric rank, and max column change."""

    objective: list[float] = field(default_factory=list)
    rank: list[int] = field(default_factory=list)
    max_col_change: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.objective)


def pixel_response_matrices(
    normals: np.ndarray, dictionary: BrdfDictionary, rig: LightingRig
) -> np.ndarray:
    """Response matrix B(n_p) for each pixel normal: (N, Q, M) float64."""
    normals = np.asarray(normals, dtype=np.float64)
    out = np.empty((len(normals), rig.q, len(dictionary)))
    # identical normals share one render
    uniq, inverse = np.unique(normals.round(12), axis=0, return_inverse=True)
    for i, n in enumerate(uniq):
        nn = n / np.linalg.norm(n)
        out[inverse == i] = render_exemplar(dictionary, nn, rig).values
    return out


def fit_svbrdf_lowrank(
    stack: ImageStack,
    normals: NormalMap,
    dictionary: BrdfDictionary,
    rig: LightingRig,
    params: LowRankParams,
    B: np.ndarray | None = None,
    init: np.ndarray | None = None,
) -> tuple[AbundanceMatrix, SolverTrace]:
    """Joint abundance recovery with sparsity and low-rank penalties.

    Iterates, from the per-pixel sparse initialization: (1) a per-pixel
    gradient step a_p = c_p + 2 t B_p^T (I_p - B_p c_p); (2) the backward
    step max(S_{lam t}(a_p), 0); (3) singular value thresholding of the
    stacked matrix with threshold beta.  Stops when the largest column
    change drops below rel_tol or after max_iters.  The returned matrix is
    re-projected onto the non-negative orthant.

    B (precomputed response matrices) and init (starting columns) are
    optional; they make parameter sweeps cheap.
    """
    pixels, profiles = stack.profiles()
    if not np.array_equal(stack.mask, normals.mask):
        raise ValueError("stack and normal-map masks differ")
    n_pix = len(pixels)
    m = len(dictionary)
    if B is None:
        B = pixel_response_matrices(normals.normals[pixels[:, 0], pixels[:, 1]], dictionary, rig)
    if B.shape != (n_pix, rig.q, m):
        raise ValueError("precomputed B has the wrong shape")

    lip = 2.0 * float(max(np.linalg.norm(B[i], 2) for i in range(n_pix))) ** 2
    if params.step is not None:
        if lip > 0 and params.step > 1.0 / lip:
            raise ValueError(f"step {params.step} exceeds 1/L = {1.0 / lip:.3e}")
        t = params.step
    else:
        t = 0.9 / lip if lip > 0 else 1.0

    if init is None:
        C = np.stack(
            [fit_pixel_sparse(profiles[i], B[i], params.lam) for i in range(n_pix)],
            axis=1,
        )
    else:
        C = np.maximum(np.asarray(init, dtype=np.float64), 0.0).copy()
        if C.shape != (m, n_pix):
            raise ValueError("init must be (M, N)")

    trace = SolverTrace()
    thresh = params.lam * t
    # both backward operators are proximal steps of t-scaled penalties
    svt_thresh = params.beta * t
    for _ in range(params.max_iters):
        pred = np.einsum("nqm,mn->nq", B, C)
        grad_step = C + 2.0 * t * np.einsum("nqm,nq->mn", B, profiles - pred)
        Cb = np.maximum(grad_step - thresh, 0.0)  # soft threshold + orthant on >= 0 data
        C_new = svt(Cb, svt_thresh) if params.beta > 0 else Cb
        change = float(np.abs(C_new - C).max(initial=0.0))
        C = C_new
        resid = profiles - np.einsum("nqm,mn->nq", B, C)
        obj = float(
            np.sum(resid * resid)
            + params.lam * np.abs(C).sum()
            + params.beta * np.linalg.svd(C, compute_uv=False).sum()
        )
        trace.objective.append(obj)
        trace.rank.append(numeric_rank(C))
        trace.max_col_change.append(change)
        if change < params.rel_tol:
            break

    C = np.maximum(C, 0.0)
    return AbundanceMatrix(C, pixels), trace


@dataclass(frozen=True, eq=False)
class BetaSelection:
    """Result of a rank-targeted beta sweep."""

    beta: float
    abundances: AbundanceMatrix
    trace: SolverTrace
    rank: int
    target_met: bool


def select_beta(
    stack: ImageStack,
    normals: NormalMap,
    dictionary: BrdfDictionary,
    rig: LightingRig,
    target_rank: int,
    params: LowRankParams,
) -> BetaSelection:
    """Choose the smallest beta on a geometric grid that reaches the rank target.

    The grid is beta_0 * 2^k with beta_0 = 1e-3 * sigma_max of the per-pixel
    initialization; candidates are tried in ascending order and the first
    solution with rank <= target wins.  If no grid point reaches the target
    the closest-rank solution is returned with target_met = False.
    """
    if target_rank < 1:
        raise ValueError("target rank must be >= 1")
    pixels, profiles = stack.profiles()
    B = pixel_response_matrices(normals.normals[pixels[:, 0], pixels[:, 1]], dictionary, rig)
    init = np.stack(
        [fit_pixel_sparse(profiles[i], B[i], params.lam) for i in range(len(pixels))],
        axis=1,
    )
    sigma_max = float(np.linalg.svd(init, compute_uv=False)[0]) if init.size else 0.0
    if sigma_max == 0.0:
        abund, trace = fit_svbrdf_lowrank(
            stack, normals, dictionary, rig, params, B=B, init=init
        )
        return BetaSelection(0.0, abund, trace, numeric_rank(abund.values), True)

    beta0 = 1e-3 * sigma_max
    # a safe collapse-to-zero bound: beta at the dual norm of the data
    # gradient at C = 0 forces the zero matrix, hence rank 0 <= target
    H = np.einsum("nqm,nq->mn", B, profiles)
    beta_zero = 2.0 * float(np.linalg.svd(H, compute_uv=False)[0])
    k_max = int(np.ceil(np.log2(max(2.0 * beta_zero / beta0, 2.0))))
    best = None
    for k in range(k_max + 1):
        beta = beta0 * 2.0**k
        p = LowRankParams(
            lam=params.lam, beta=beta, step=params.step,
            max_iters=params.max_iters, rel_tol=params.rel_tol,
        )
        abund, trace = fit_svbrdf_lowrank(stack, normals, dictionary, rig, p, B=B, init=init)
        rank = numeric_rank(abund.values)
        if rank <= target_rank:
            return BetaSelection(beta, abund, trace, rank, True)
        if best is None or abs(rank - target_rank) < abs(best.rank - target_rank):
            best = BetaSelection(beta, abund, trace, rank, False)
    return best


def reconstruct_brdf(c_p: np.ndarray, dictionary: BrdfDictionary) -> TabulatedBrdf:
    """Non-negative combination D c_p as a tabulated BRDF.

    c_p is (M,) for shared coefficients or (channels, M) for per-channel
    fits.
    """
    c = np.asarray(c_p, dtype=np.float64)
    if np.any(c < 0):
        raise ValueError("coefficients must be non-negative")
    return dictionary.combine(c)
