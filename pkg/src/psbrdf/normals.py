"""Per-pixel surface-normal estimation against an exemplar bank.

Matching scores each candidate normal by the non-negative least-squares
misfit between the observed intensity profile and the candidate's response
matrix.  A full scan of one pyramid level is the brute-force path; the
coarse-to-fine path scans the top level fully and then only the cone of
each finer level around the running winner.  A gradient-descent refinement
moves the estimate off the candidate lattice.

The NNLS solves run as a batched active-set iteration over precomputed
per-candidate Gram matrices; Grams and their inverses are cached per bank
level, and leave-one-atom-out variants are derived by a Schur-complement
downdate.
"""

from __future__ import annotations

import weakref
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GradientUnavailableError
from .geometry import angular_error, cone_mask, euler_to_normal, normal_to_euler
from .render import ExemplarBank, ImageStack, NormalMap, render_exemplar

KKT_TOL_SCALE = 1e-8
GRADIENT_NEIGHBORHOOD_DEG = 2.0
GRADIENT_MAX_COND = 1e6
REFINE_MAX_ITERS = 50
REFINE_REL_DECREASE = 1e-9
# keep candidates whose least-squares lower bound is within this slack of the
# incumbent when pruning a brute-force scan; survivors are scored exactly
_PRUNE_SLACK = 1e-6


@dataclass(frozen=True, eq=False)
class NormalEstimate:
    """One pixel's solution: normal, abundances, misfit, and search effort."""

    normal: np.ndarray
    abundances: np.ndarray
    residual: float
    evaluated_count: int
    refined: bool = False
    gradient_available: bool = True


@dataclass(frozen=True, eq=False)
class GradientPair:
    """Entrywise d/d(theta) and d/d(phi) of a response matrix, degrees^-1."""

    d_theta: np.ndarray
    d_phi: np.ndarray


# ---------------------------------------------------------------------------
# Batched non-negative least squares (active set on the Gram system)
# ---------------------------------------------------------------------------


def _masked_solve(G, h, passive):
    """Solve G z = h restricted to the passive set of each instance."""
    m = h.shape[1]
    A = np.where(passive[:, :, None] & passive[:, None, :], G, 0.0)
    d = np.arange(m)
    A[:, d, d] = np.where(passive, A[:, d, d], 1.0)
    b = np.where(passive, h, 0.0)
    try:
        z = np.linalg.solve(A, b[..., None])[..., 0]
    except np.linalg.LinAlgError:
        z = (np.linalg.pinv(A) @ b[..., None])[..., 0]
    if not np.all(np.isfinite(z)):
        z = np.where(np.isfinite(z), z, 0.0)
    return np.where(passive, z, 0.0)


def nnls_gram(G: np.ndarray, h: np.ndarray, tol: np.ndarray | None = None) -> np.ndarray:
    """Batched NNLS solutions from normal-equation data.

    G is (K, M, M) with G_k = B_k^T B_k, h is (K, M) with h_k = B_k^T I.
    Terminates each instance when its dual vector satisfies the first-order
    conditions to within tol_k (default KKT_TOL_SCALE * max|h_k|).
    """
    G = np.asarray(G, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    k, m = h.shape
    if tol is None:
        tol = KKT_TOL_SCALE * np.maximum(np.abs(h).max(axis=1), 1e-300)
    c = np.zeros((k, m))
    passive = np.zeros((k, m), dtype=bool)
    act = np.arange(k)
    for _ in range(3 * m + 10):
        if act.size == 0:
            break
        w = h[act] - np.einsum("kij,kj->ki", G[act], c[act])
        w[passive[act]] = -np.inf
        j = w.argmax(axis=1)
        wbest = w[np.arange(act.size), j]
        live = wbest > tol[act]
        act = act[live]
        if act.size == 0:
            break
        passive[act, j[live]] = True
        idx = act
        for _ in range(m + 1):
            z = _masked_solve(G[idx], h[idx], passive[idx])
            neg = passive[idx] & (z <= 0.0)
            bad = neg.any(axis=1)
            ok = idx[~bad]
            c[ok] = z[~bad]
            idx = idx[bad]
            if idx.size == 0:
                break
            zb, cb, nb = z[bad], c[idx], neg[bad]
            ratio = np.where(nb, cb / np.maximum(cb - zb, 1e-300), np.inf)
            alpha = np.minimum(ratio.min(axis=1), 1.0)
            cn = cb + alpha[:, None] * (zb - cb)
            cn[nb & (ratio <= alpha[:, None] * (1.0 + 1e-12))] = 0.0
            np.maximum(cn, 0.0, out=cn)
            c[idx] = cn
            passive[idx] &= cn > 0.0
    return c


def nnls(B: np.ndarray, I: np.ndarray, tol: float | None = None) -> tuple[np.ndarray, float]:
    """Single-instance NNLS: min ||I - B c|| s.t. c >= 0.

    Classic active-set iteration with orthogonal (lstsq) subproblem solves,
    so the result is stable even for nearly collinear columns.  Returns
    (c, residual); the termination tolerance on the dual vector is
    KKT_TOL_SCALE * ||B^T I||_inf unless overridden.
    """
    B = np.asarray(B, dtype=np.float64)
    I = np.asarray(I, dtype=np.float64)
    if B.ndim != 2 or I.shape != (B.shape[0],):
        raise ValueError("B must be (Q, M) and I (Q,)")
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(I))):
        raise ValueError("inputs must be finite")
    m = B.shape[1]
    if tol is None:
        tol = KKT_TOL_SCALE * max(float(np.abs(B.T @ I).max(initial=0.0)), 1e-300)
    c = np.zeros(m)
    passive = np.zeros(m, dtype=bool)
    for _ in range(3 * m + 10):
        w = B.T @ (I - B @ c)
        w[passive] = -np.inf
        j = int(np.argmax(w))
        if w[j] <= tol or passive.all():
            break
        passive[j] = True
        for _ in range(m + 1):
            z = np.zeros(m)
            z[passive] = np.linalg.lstsq(B[:, passive], I, rcond=None)[0]
            neg = passive & (z <= 0.0)
            if not neg.any():
                c = z
                break
            ratio = np.where(neg, c / np.maximum(c - z, 1e-300), np.inf)
            alpha = min(float(ratio.min()), 1.0)
            c = c + alpha * (z - c)
            c[neg & (ratio <= alpha * (1.0 + 1e-12))] = 0.0
            np.maximum(c, 0.0, out=c)
            passive &= c > 0.0
        else:
            c = np.maximum(z, 0.0)
    return c, float(np.linalg.norm(I - B @ c))


# ---------------------------------------------------------------------------
# Per-bank caches: Grams, inverses, and leave-one-out variants
# ---------------------------------------------------------------------------


class _BankCache:
    def __init__(self):
        self.gram: dict[int, np.ndarray] = {}
        self.inv: dict[int, np.ndarray] = {}
        self.masked: dict[tuple, tuple[np.ndarray, np.ndarray]] = {}

    def level_gram(self, bank: ExemplarBank, level: int) -> np.ndarray:
        g = self.gram.get(level)
        if g is None:
            vals = bank.values(level)
            k = vals.shape[0]
            g = np.empty((k, vals.shape[2], vals.shape[2]))
            step = max(1, 2_000_000 // max(1, vals.shape[1] * vals.shape[2]))
            for s in range(0, k, step):
                blk = vals[s : s + step].astype(np.float64)
                g[s : s + step] = np.einsum("kqi,kqj->kij", blk, blk)
            self.gram[level] = g
        return g

    def level_inv(self, bank: ExemplarBank, level: int) -> np.ndarray:
        inv = self.inv.get(level)
        if inv is None:
            g = self.level_gram(bank, level)
            inv = _safe_inv(g)
            self.inv[level] = inv
        return inv

    def masked_pair(self, bank: ExemplarBank, level: int, mask: np.ndarray):
        """(gram, inverse) for an atom subset, keeping only the latest few."""
        key = (level, mask.tobytes())
        pair = self.masked.get(key)
        if pair is None:
            g_full = self.level_gram(bank, level)
            g = np.ascontiguousarray(g_full[:, mask][:, :, mask])
            dropped = np.flatnonzero(~mask)
            if dropped.size == 1:
                inv = _downdate_inv(self.level_inv(bank, level), mask, dropped[0])
                if not np.all(np.isfinite(inv)):
                    inv = _safe_inv(g)
            else:
                inv = _safe_inv(g)
            if len(self.masked) > 2:
                self.masked.clear()
            self.masked[key] = pair = (g, inv)
        return pair


def _safe_inv(g: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.inv(g)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(g)


def _downdate_inv(inv_full: np.ndarray, mask: np.ndarray, j: int) -> np.ndarray:
    """Inverse of the Gram with column/row j removed, from the full inverse."""
    a = inv_full[:, mask][:, :, mask]
    u = inv_full[:, mask, j]
    d = inv_full[:, j, j][:, None, None]
    return a - u[:, :, None] * u[:, None, :] / d


_CACHES: "weakref.WeakKeyDictionary[ExemplarBank, _BankCache]" = weakref.WeakKeyDictionary()


def _bank_cache(bank: ExemplarBank) -> _BankCache:
    cache = _CACHES.get(bank)
    if cache is None:
        cache = _CACHES[bank] = _BankCache()
    return cache


def _atom_mask(bank: ExemplarBank, atom_mask) -> np.ndarray:
    m = len(bank.dictionary)
    if atom_mask is None:
        return np.ones(m, dtype=bool)
    mask = np.asarray(atom_mask, dtype=bool)
    if mask.shape != (m,):
        raise ValueError(f"atom mask must have length {m}")
    if not mask.any():
        raise ValueError("atom mask must keep at least one atom")
    return mask


# ---------------------------------------------------------------------------
# Candidate matching
# ---------------------------------------------------------------------------


def _final_solve(bank, level, index, mask, I) -> tuple[np.ndarray, float]:
    """Stable re-solve of the winning candidate's NNLS from its raw matrix."""
    B = bank.values(level)[index].astype(np.float64)[:, mask]
    return nnls(B, I)


def _score_subset(bank, level, indices, mask, I) -> tuple[np.ndarray, np.ndarray]:
    """Exact NNLS coefficients and squared residuals for chosen candidates."""
    cache = _bank_cache(bank)
    g = cache.level_gram(bank, level)[indices]
    if not mask.all():
        g = g[:, mask][:, :, mask]
    vals = bank.values(level)
    sub = vals[indices].astype(np.float64)[:, :, mask]
    h = np.einsum("kqm,q->km", sub, I)
    c = nnls_gram(g, h)
    ii = float(I @ I)
    r2 = ii - 2.0 * np.einsum("km,km->k", h, c) + np.einsum("ki,kij,kj->k", c, g, c)
    return c, np.maximum(r2, 0.0)


def match_normal_bruteforce(
    I_p: np.ndarray, bank: ExemplarBank, level: int, atom_mask=None, prune: bool = True
) -> NormalEstimate:
    """Scan every candidate at one pyramid level; return the global minimizer.

    Every candidate is scored by its NNLS misfit.  With pruning enabled the
    scan first ranks candidates by their unconstrained least-squares misfit
    (a lower bound on the NNLS misfit) and solves the constrained problem
    only where that bound can still beat the incumbent; the minimizer is
    identical to the exhaustive scan.  Ties break toward the lowest
    candidate index.
    """
    I = np.asarray(I_p, dtype=np.float64)
    mask = _atom_mask(bank, atom_mask)
    vals = bank.values(level)
    k = vals.shape[0]
    if k == 0:
        raise ValueError("empty candidate level")
    cache = _bank_cache(bank)
    if mask.all():
        gram, inv = cache.level_gram(bank, level), cache.level_inv(bank, level)
    else:
        gram, inv = cache.masked_pair(bank, level, mask)

    # one pass computes h for all candidates (cast blockwise to keep memory flat)
    h = np.empty((k, int(mask.sum())))
    step = max(1, 4_000_000 // max(1, vals.shape[1] * vals.shape[2]))
    for s in range(0, k, step):
        blk = vals[s : s + step].astype(np.float64)[:, :, mask]
        h[s : s + step] = np.einsum("kqm,q->km", blk, I)

    ii = float(I @ I)
    if prune:
        c_ls = np.einsum("kij,kj->ki", inv, h)
        bound = np.maximum(ii - np.einsum("km,km->k", h, c_ls), 0.0)
        order = np.argsort(bound, kind="stable")
        slack = _PRUNE_SLACK * max(ii, 1e-300)
        best_r2 = np.inf
        kept: list[int] = []
        chunk = 2048
        for s in range(0, k, chunk):
            block = order[s : s + chunk]
            block = block[bound[block] <= best_r2 + slack]
            if block.size == 0:
                break
            c_blk = nnls_gram(gram[block], h[block])
            r2_blk = ii - 2.0 * np.einsum("km,km->k", h[block], c_blk) + np.einsum(
                "ki,kij,kj->k", c_blk, gram[block], c_blk
            )
            r2_blk = np.maximum(r2_blk, 0.0)
            kept.append((block, c_blk, r2_blk))
            best_r2 = min(best_r2, float(r2_blk.min()))
        idx = np.concatenate([b for b, _, _ in kept])
        cs = np.concatenate([c for _, c, _ in kept])
        r2 = np.concatenate([r for _, _, r in kept])
    else:
        cs = nnls_gram(gram, h)
        r2 = ii - 2.0 * np.einsum("km,km->k", h, cs) + np.einsum("ki,kij,kj->k", cs, gram, cs)
        r2 = np.maximum(r2, 0.0)
        idx = np.arange(k)

    # lowest candidate index wins ties
    best_pos = np.lexsort((idx, r2))[0]
    best = int(idx[best_pos])
    c_best, residual = _final_solve(bank, level, best, mask, I)
    return NormalEstimate(
        normal=bank.candidates(level).normals[best].copy(),
        abundances=c_best,
        residual=residual,
        evaluated_count=k,
    )


def match_normal_c2f(
    I_p: np.ndarray, bank: ExemplarBank, atom_mask=None
) -> NormalEstimate:
    """Coarse-to-fine search: full scan of the top level, then cone-restricted
    scans of each finer level around the running winner."""
    I = np.asarray(I_p, dtype=np.float64)
    mask = _atom_mask(bank, atom_mask)
    evaluated = 0
    winner_normal = None
    winner_c = None
    winner_level = 0
    winner_index = 0
    for level in range(bank.n_levels):
        cs = bank.candidates(level)
        if level == 0:
            indices = np.arange(len(cs))
        else:
            prev_spacing = bank.pyramid.spacings[level - 1]
            sel = cone_mask(cs, winner_normal, prev_spacing)
            indices = np.flatnonzero(sel)
            if indices.size == 0:
                continue  # carry the coarser winner
        c, r2 = _score_subset(bank, level, indices, mask, I)
        evaluated += indices.size
        pos = np.lexsort((indices, r2))[0]
        winner_index = int(indices[pos])
        winner_normal = cs.normals[winner_index].copy()
        winner_c = c[pos]
        winner_level = level
    winner_c, residual = _final_solve(bank, winner_level, winner_index, mask, I)
    return NormalEstimate(
        normal=winner_normal,
        abundances=winner_c,
        residual=residual,
        evaluated_count=evaluated,
    )


# ---------------------------------------------------------------------------
# Gradient-descent refinement
# ---------------------------------------------------------------------------


def _response_at(bank: ExemplarBank, n: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Response matrix at an arbitrary normal, restricted to unmasked atoms."""
    finest = bank.candidates(bank.n_levels - 1)
    d = angular_error(finest.normals, n)
    hit = int(np.argmin(d))
    if d[hit] < 1e-9:
        return bank.values(bank.n_levels - 1)[hit].astype(np.float64)[:, mask]
    full = render_exemplar(bank.dictionary, n, bank.rig).values
    return full[:, mask]


def estimate_gradients(
    bank: ExemplarBank, n_hat: np.ndarray, atom_mask=None,
    neighborhood_deg: float = GRADIENT_NEIGHBORHOOD_DEG,
) -> GradientPair:
    """Entrywise response gradients at n_hat from its finest-level neighbors.

    Stacks B(n~) - B(n_hat) = dtheta * dB/dtheta + dphi * dB/dphi over all
    finest-level candidates within the neighborhood and solves the
    over-determined system by least squares.  Raises
    GradientUnavailableError when fewer than two usable neighbors exist or
    the (dtheta, dphi) design is ill-conditioned.
    """
    n_hat = np.asarray(n_hat, dtype=np.float64)
    mask = _atom_mask(bank, atom_mask)
    level = bank.n_levels - 1
    finest = bank.candidates(level)
    dist = angular_error(finest.normals, n_hat)
    near = np.flatnonzero((dist <= neighborhood_deg) & (dist > 1e-9))
    if near.size < 2:
        raise GradientUnavailableError(
            f"{near.size} neighbor(s) within {neighborhood_deg} degrees"
        )
    theta0, phi0 = normal_to_euler(n_hat)
    theta_n, phi_n = normal_to_euler(finest.normals[near])
    d_theta = theta_n - theta0
    d_phi = (phi_n - phi0 + 180.0) % 360.0 - 180.0
    X = np.stack([d_theta, d_phi], axis=1)
    sv = np.linalg.svd(X, compute_uv=False)
    if sv[-1] <= 0 or sv[0] / sv[-1] > GRADIENT_MAX_COND:
        raise GradientUnavailableError("degenerate neighbor offsets")
    B0 = _response_at(bank, n_hat, mask)
    Y = bank.values(level)[near].astype(np.float64)[:, :, mask] - B0
    q, m = B0.shape
    sol = np.linalg.lstsq(X, Y.reshape(near.size, q * m), rcond=None)[0]
    return GradientPair(d_theta=sol[0].reshape(q, m), d_phi=sol[1].reshape(q, m))


def refine_normal(
    I_p: np.ndarray,
    est: NormalEstimate,
    bank: ExemplarBank,
    atom_mask=None,
    max_iters: int = REFINE_MAX_ITERS,
    rel_decrease: float = REFINE_REL_DECREASE,
) -> NormalEstimate:
    """Move an estimate off the candidate lattice by linearized descent.

    Each iteration linearizes the response around the current normal using
    lattice-neighborhood gradients, alternates a 2-variable least squares
    for (dtheta, dphi) with a projected least-squares update of the
    abundances, applies the Euler-angle update, and keeps the step only if
    the true misfit decreases.  Stops on a sub-tolerance decrease of the
    squared misfit, a rejected step, or max_iters.
    """
    I = np.asarray(I_p, dtype=np.float64)
    mask = _atom_mask(bank, atom_mask)
    theta, phi = normal_to_euler(est.normal)
    n_cur = est.normal.copy()
    B_cur = _response_at(bank, n_cur, mask)
    c_cur = np.asarray(est.abundances, dtype=np.float64).copy()
    r_cur = float(np.linalg.norm(I - B_cur @ c_cur))
    f_init = max(r_cur * r_cur, 1e-300)
    gradient_ok = True
    improved = False

    for _ in range(max_iters):
        try:
            grads = estimate_gradients(bank, n_cur, atom_mask)
        except GradientUnavailableError:
            if not improved:
                gradient_ok = False
            break
        # (a) two-variable least squares with abundances fixed
        design = np.stack([grads.d_theta @ c_cur, grads.d_phi @ c_cur], axis=1)
        resid = I - B_cur @ c_cur
        try:
            step = np.linalg.lstsq(design, resid, rcond=None)[0]
        except np.linalg.LinAlgError:
            break
        d_th, d_ph = float(step[0]), float(step[1])
        # keep the proposal inside the neighborhood where the linearization holds
        mag = float(np.hypot(d_th, d_ph))
        if mag > GRADIENT_NEIGHBORHOOD_DEG:
            scale = GRADIENT_NEIGHBORHOOD_DEG / mag
            d_th *= scale
            d_ph *= scale

        accepted = False
        for _ in range(4):  # backtrack a rejected step before giving up
            # (b) least squares for the abundance increment, projected to >= 0
            # (minimum-norm increment keeps the update near the current c)
            B_lin = B_cur + d_th * grads.d_theta + d_ph * grads.d_phi
            dc = np.linalg.lstsq(B_lin, I - B_lin @ c_cur, rcond=None)[0]
            c_new = np.maximum(c_cur + dc, 0.0)

            theta_new = theta + d_th
            phi_new = phi + d_ph
            if theta_new < 0.0:
                theta_new, phi_new = -theta_new, phi_new + 180.0
            theta_new = min(theta_new, 90.0 - 1e-9)
            phi_new %= 360.0
            n_new = euler_to_normal(theta_new, phi_new)
            B_new = render_exemplar(bank.dictionary, n_new, bank.rig).values[:, mask]
            r_new = float(np.linalg.norm(I - B_new @ c_new))
            if r_new >= r_cur:
                # retry with the abundances held fixed before shrinking the step
                r_keep = float(np.linalg.norm(I - B_new @ c_cur))
                if r_keep < r_cur:
                    c_new, r_new = c_cur.copy(), r_keep
            if r_new < r_cur:
                accepted = True
                break
            d_th *= 0.5
            d_ph *= 0.5
        if not accepted:
            break  # reject the step, keep the previous iterate
        decrease = r_cur * r_cur - r_new * r_new
        theta, phi, n_cur, B_cur, c_cur, r_cur = (
            theta_new, phi_new, n_new, B_new, c_new, r_new,
        )
        improved = True
        if decrease < rel_decrease * f_init:
            break

    if not improved or r_cur >= est.residual:
        return NormalEstimate(
            normal=est.normal,
            abundances=est.abundances,
            residual=est.residual,
            evaluated_count=est.evaluated_count,
            refined=False,
            gradient_available=gradient_ok,
        )
    return NormalEstimate(
        normal=n_cur,
        abundances=c_cur,
        residual=r_cur,
        evaluated_count=est.evaluated_count,
        refined=True,
        gradient_available=True,
    )


# ---------------------------------------------------------------------------
# Whole-image driver
# ---------------------------------------------------------------------------


def estimate_normal_map(
    stack: ImageStack,
    bank: ExemplarBank,
    refine: bool = True,
    atom_mask=None,
    threads: int = 1,
) -> tuple[NormalMap, list[NormalEstimate]]:
    """Independently estimate every masked-in pixel of a stack.

    Output is deterministic and identical for any thread count: pixels are
    pure functions of their profiles and results are assembled in pixel
    order.
    """
    if stack.rig is not bank.rig and stack.rig.content_hash() != bank.rig.content_hash():
        raise ValueError("stack and bank were built for different lighting rigs")
    pixels, profiles = stack.profiles()

    def solve(i: int) -> NormalEstimate:
        e = match_normal_c2f(profiles[i], bank, atom_mask)
        if refine:
            e = refine_normal(profiles[i], e, bank, atom_mask)
        return e

    n = len(pixels)
    if threads <= 1:
        estimates = [solve(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            estimates = list(pool.map(solve, range(n)))

    normals = np.zeros((stack.height, stack.width, 3))
    normals[..., 2] = 1.0
    for (y, x), e in zip(pixels, estimates):
        normals[y, x] = e.normal
    return NormalMap(normals, stack.mask.copy()), estimates
