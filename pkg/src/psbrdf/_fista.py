"""Shared solver for non-negative lasso problems.

Solves min_x ||A x - y||^2 + lam * sum(x) subject to x >= 0 (on the
non-negative orthant the l1 norm is the plain sum).  The workhorse is a
monotone accelerated proximal-gradient iteration whose proximal step is a
soft threshold composed with clamping at zero; it stops once the relative
objective change falls below tolerance and the first-order (KKT)
conditions hold.

On badly conditioned instances the first-order tail can be arbitrarily
slow, so when the iteration plateaus before reaching the KKT target an
exact active-set finish takes over: warm-started on the current support,
it solves the shifted least-squares subproblems with orthogonal
factorizations and terminates with machine-accurate optimality.  The
finish never increases the objective.
"""

from __future__ import annotations

import numpy as np

KKT_TOL_SCALE = 1e-9


def _objective(G, b, yy, lam, x):
    return float(x @ (G @ x) - 2.0 * (b @ x) + yy + lam * x.sum())


def _kkt(G, b, lam, x):
    g = 2.0 * (G @ x - b) + lam
    return max(
        float(np.maximum(-g, 0.0).max(initial=0.0)),
        float(np.abs(g[x > 0]).max(initial=0.0)),
    )


def _active_set_finish(A, y, lam, x0, tol, max_outer):
    """Exact lasso-on-orthant solve warm-started from an approximate support.

    The shifted problem min ||A x - y||^2 + lam * sum(x) over x >= 0 has the
    same active-set structure as non-negative least squares; subproblems on
    the passive set are solved by lstsq on the raw columns (the lam shift
    enters through a least-norm correction), so near-collinear columns stay
    harmless.
    """
    m = A.shape[1]
    x = np.maximum(np.asarray(x0, dtype=np.float64), 0.0).copy()
    passive = x > 0
    # re-solve on the warm support first, then run plain active-set outer steps
    for _ in range(max_outer):
        for _ in range(m + 1):
            if not passive.any():
                x = np.zeros(m)
                break
            z = np.zeros(m)
            cols = A[:, passive]
            z_p = np.linalg.lstsq(cols, y, rcond=None)[0]
            if lam > 0:
                # correction for the linear term: solve (A_p^T A_p) u = 1
                u = np.linalg.lstsq(cols.T @ cols, np.ones(int(passive.sum())), rcond=None)[0]
                z_p = z_p - 0.5 * lam * u
            z[passive] = z_p
            neg = passive & (z <= 0.0)
            if not neg.any():
                x = z
                break
            ratio = np.where(neg, x / np.maximum(x - z, 1e-300), np.inf)
            alpha = min(float(ratio.min()), 1.0)
            x = x + alpha * (z - x)
            x[neg & (ratio <= alpha * (1.0 + 1e-12))] = 0.0
            np.maximum(x, 0.0, out=x)
            passive &= x > 0.0
        w = A.T @ (y - A @ x) - 0.5 * lam
        w[passive] = -np.inf
        j = int(np.argmax(w))
        if w[j] <= 0.5 * tol or passive.all():
            break
        passive[j] = True
    return x


def nonneg_lasso(
    A: np.ndarray,
    y: np.ndarray,
    lam: float,
    rel_tol: float = 1e-10,
    max_iters: int = 5000,
    x0: np.ndarray | None = None,
) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if A.ndim != 2 or y.shape != (A.shape[0],):
        raise ValueError("A must be (Q, M) and y (Q,)")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise ValueError("inputs must be finite")
    if lam < 0:
        raise ValueError("lam must be >= 0")

    m = A.shape[1]
    if m == 0:
        return np.zeros(0)
    G = A.T @ A
    b = A.T @ y
    yy = float(y @ y)
    scale = max(float(np.abs(b).max(initial=0.0)), 1e-300)
    kkt_target = KKT_TOL_SCALE * scale
    lip = 2.0 * float(np.linalg.eigvalsh(G)[-1])
    if lip <= 0.0:
        return np.zeros(m)
    step = 1.0 / lip
    thresh = lam * step

    x = np.zeros(m) if x0 is None else np.maximum(np.asarray(x0, dtype=np.float64), 0.0)
    z = x
    f_x = _objective(G, b, yy, lam, x)
    t = 1.0
    plateaued = False
    for _ in range(max_iters):
        grad = 2.0 * (G @ z - b)
        z_new = np.maximum(z - step * grad - thresh, 0.0)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        f_new = _objective(G, b, yy, lam, z_new)
        if f_new <= f_x:
            x_new, f_x_new = z_new, f_new
        else:
            x_new, f_x_new = x, f_x  # monotone: keep the incumbent
        z = x_new + (t / t_new) * (z_new - x_new) + ((t - 1.0) / t_new) * (x_new - x)
        delta = f_x - f_x_new
        x, f_x, t = x_new, f_x_new, t_new
        if delta <= rel_tol * max(abs(f_x), 1e-300):
            if _kkt(G, b, lam, x) <= kkt_target:
                return x
            plateaued = True
            break
    if not plateaued and _kkt(G, b, lam, x) <= kkt_target:
        return x
    x_fin = _active_set_finish(A, y, lam, x, kkt_target, max_outer=3 * m + 10)
    if _objective(G, b, yy, lam, x_fin) <= f_x:
        return x_fin
    return x


def kkt_residual(A: np.ndarray, y: np.ndarray, lam: float, x: np.ndarray) -> float:
    """Max violation of the first-order conditions of the non-negative lasso.

    g = 2 A^T (A x - y) + lam must satisfy g >= 0, with g == 0 on the
    support; returns max(max(-g), max(|g| on support)).
    """
    g = 2.0 * (A.T @ (A @ x - y)) + lam
    viol = float(np.maximum(-g, 0.0).max(initial=0.0))
    on_support = float(np.abs(g[x > 0]).max(initial=0.0))
    return max(viol, on_support)
