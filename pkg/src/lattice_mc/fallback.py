"""Approximate moment matching by constrained least squares on a lattice window.

When a transition row fails the exact constructions' preconditions (grid too
coarse for the covariance floor, near-singular covariance, d >= 3 with drift),
the builder still needs a row.  This module enumerates every lattice point in
a box around the target, then finds simplex weights minimizing the squared
moment mismatch

    || sum_j w_j l_j - a ||^2  +  || sum_j w_j l_j l_j^T - (a a^T + B) ||_F^2

subject to w >= 0, sum w = 1.  The optimum of this convex QP is computed by a
deterministic active-set iteration (nonnegative least squares with one equality
constraint); the result is then reduced to at most h+1 atoms with its achieved
moments — and therefore its residual — unchanged.

The residual is reported, never hidden: callers decide whether a row counts as
approximate by comparing the *squared* residual against
``FallbackConfig.residual_tolerance``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import DiscreteMeasure, LatticeSpec, MomentTarget
from .recombine import MomentMap, caratheodory_reduce

__all__ = ["FallbackConfig", "approx_match_qp"]

# Reduced-cost threshold for KKT stationarity, scaled by max(1, ||b||^2);
# guarantees the returned objective is within ~1e-10 of the QP optimum.
_STATIONARITY_TOL = 1e-10

# Hard cap on enumerated grid cells, guarding pathological window sizes.
_ENUM_CELL_CAP = 4_000_000

# Integer boxes reused across rows of one build (keyed by dim and half-width).
_GRID_CACHE: dict[tuple[int, int], np.ndarray] = {}


def _integer_box(d: int, zmax: int) -> np.ndarray:
    """All integer vectors with ||z||_inf <= zmax, lexicographic, cached."""
    Z = _GRID_CACHE.get((d, zmax))
    if Z is None:
        axis = np.arange(-zmax, zmax + 1)
        Z = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        if len(_GRID_CACHE) >= 16:
            _GRID_CACHE.pop(next(iter(_GRID_CACHE)))
        _GRID_CACHE[(d, zmax)] = Z
    return Z


def _solve_kkt(K: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """KKT solve; LU first, least-squares only when LU is unusable.

    Near-collinear candidate columns can make the Gram block singular, which
    LU reports either by raising or by returning a solution with a large
    backward error — both routed to lstsq.
    """
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(K, rhs, rcond=None)[0]
    scale = max(1.0, float(np.max(np.abs(rhs))), float(np.max(np.abs(K))))
    if not np.all(np.isfinite(sol)) or float(np.max(np.abs(K @ sol - rhs))) > 1e-7 * scale:
        return np.linalg.lstsq(K, rhs, rcond=None)[0]
    return sol


@dataclass(frozen=True)
class FallbackConfig:
    """Tuning for the approximate matcher.

    radius_multiplier scales the candidate window out from the natural support
    size ||a||_inf + sqrt(2 tr B) + gamma.  residual_tolerance applies to the
    squared residual norm: rows whose squared residual exceeds it should be
    tagged approximate by the caller.  max_candidates caps the QP size, keeping
    the points nearest the target mean.
    """

    radius_multiplier: float = 1.5
    residual_tolerance: float = 1e-6
    max_candidates: int = 512

    def __post_init__(self) -> None:
        if not (self.radius_multiplier >= 1.0 and math.isfinite(self.radius_multiplier)):
            raise ValueError(f"radius_multiplier must be >= 1, got {self.radius_multiplier!r}")
        if not (self.residual_tolerance > 0.0):
            raise ValueError(f"residual_tolerance must be positive, got {self.residual_tolerance!r}")
        if self.max_candidates < 1:
            raise ValueError(f"max_candidates must be >= 1, got {self.max_candidates}")


def _candidate_points(target: MomentTarget, lat: LatticeSpec, cfg: FallbackConfig) -> tuple[np.ndarray, int]:
    """Lattice points with ||l||_inf inside the window, at most max_candidates.

    Returns the points ordered lexicographically by integer coordinates (a
    deterministic design-matrix order) plus the index of the point nearest the
    target mean, which seeds the active set.
    """
    d = lat.dim
    a = target.a
    radius = cfg.radius_multiplier * (
        float(np.max(np.abs(a))) + math.sqrt(max(0.0, 2.0 * float(np.trace(target.B)))) + lat.gamma
    )
    # |z_i| = |(Q^T (l - offset))_i / gamma| <= (sqrt(d) * radius + ||offset||) / gamma
    span = (math.sqrt(d) * radius + float(np.linalg.norm(lat.offset))) / lat.gamma
    zmax = int(math.floor(span + 1e-9))
    cap_per_axis = int(_ENUM_CELL_CAP ** (1.0 / d) - 1.0) // 2
    zmax = min(zmax, max(cap_per_axis, 1))
    Z = _integer_box(d, zmax)
    pts = lat.offset + lat.gamma * (Z @ lat.frame_Q.T)
    keep = np.max(np.abs(pts), axis=1) <= radius + 1e-12
    Z, pts = Z[keep], pts[keep]
    if Z.shape[0] == 0:
        raise ValueError("candidate window is empty; the lattice offset lies outside the window")

    def _dist_order(zz: np.ndarray, pp: np.ndarray) -> np.ndarray:
        dist = np.sum((pp - a) ** 2, axis=1)
        keys = tuple(zz[:, k] for k in reversed(range(d))) + (dist,)
        return np.lexsort(keys)

    if Z.shape[0] > cfg.max_candidates:
        sel = _dist_order(Z, pts)[: cfg.max_candidates]
        Z, pts = Z[sel], pts[sel]
    lex = np.lexsort(tuple(Z[:, k] for k in reversed(range(d))))
    Z, pts = Z[lex], pts[lex]
    nearest = int(_dist_order(Z, pts)[0])
    return pts, nearest


def _nnls_on_simplex(A: np.ndarray, b: np.ndarray, start: int) -> np.ndarray:
    """min ||A w - b||^2 over the probability simplex, by active sets.

    Entering variable: most negative reduced cost, lowest index on ties.
    A blocked inner step shrinks toward the constrained minimizer until the
    first positive weight hits zero.  KKT systems are solved by LU with a
    verified least-squares fallback, so rank deficiency (duplicate moment
    columns cannot occur, but near-collinearity can) degrades gracefully.
    """
    m, r = A.shape
    w = np.zeros(r)
    w[start] = 1.0
    if r == 1:
        return w
    passive = [start]
    tol = _STATIONARITY_TOL * max(1.0, float(b @ b))
    best_w = w.copy()
    best_f = float(np.sum((A @ w - b) ** 2))
    lam = 0.0
    for _ in range(3 * r + 60):
        for _ in range(r + 30):
            P = np.array(passive, dtype=int)
            Ap = A[:, P]
            p = P.size
            K = np.zeros((p + 1, p + 1))
            K[:p, :p] = 2.0 * (Ap.T @ Ap)
            K[:p, p] = 1.0
            K[p, :p] = 1.0
            rhs = np.concatenate([2.0 * (Ap.T @ b), [1.0]])
            sol = _solve_kkt(K, rhs)
            wp, lam = sol[:p], float(sol[p])
            if float(np.min(wp)) >= -1e-12:
                w = np.zeros(r)
                w[P] = np.clip(wp, 0.0, None)
                w /= float(np.sum(w))
                break
            cur = w[P]
            neg = wp < -1e-12
            ratios = cur[neg] / (cur[neg] - wp[neg])
            alpha = float(np.min(ratios))
            alpha = min(1.0, max(0.0, alpha))
            stepped = cur + alpha * (wp - cur)
            blocked = int(np.flatnonzero(neg)[int(np.argmin(ratios))])
            stepped[blocked] = 0.0
            w = np.zeros(r)
            w[P] = np.clip(stepped, 0.0, None)
            passive = [int(j) for j, v in zip(P, stepped) if v > 1e-14]
            if not passive:  # defensive; mass is conserved so this cannot trip
                passive = [start]
                w[:] = 0.0
                w[start] = 1.0
        f = float(np.sum((A @ w - b) ** 2))
        if f < best_f:
            best_f, best_w = f, w.copy()
        rc = 2.0 * (A.T @ (A @ w - b)) + lam
        rc[np.array(passive, dtype=int)] = 0.0
        enter = int(np.argmin(rc))
        if rc[enter] >= -tol:
            return w
        passive.append(enter)
    return best_w


def _frobenius_weights(mm: MomentMap) -> np.ndarray:
    """Row weights making the stacked residual norm match mean + Frobenius.

    Off-diagonal second-moment components appear once in the upper-triangle
    stacking but twice in the symmetric matrix, hence the sqrt(2).
    """
    d = mm.dim_in
    wt = [1.0] * d if mm.include_mean else []
    for i in range(d):
        for j in range(i, d):
            wt.append(1.0 if i == j else math.sqrt(2.0))
    return np.asarray(wt)


def approx_match_qp(
    target: MomentTarget, lat: LatticeSpec, cfg: FallbackConfig | None = None
) -> tuple[DiscreteMeasure, float]:
    """Best-effort lattice law for a (mean, covariance) target.

    Returns the measure together with the residual norm
    sqrt(||mean error||^2 + ||second-moment error||_F^2); zero (up to
    round-off) whenever the target is exactly representable inside the window.
    """
    if cfg is None:
        cfg = FallbackConfig()
    if target.dim != lat.dim:
        raise ValueError(f"target dim {target.dim} != lattice dim {lat.dim}")
    pts, nearest = _candidate_points(target, lat, cfg)
    mm = MomentMap(lat.dim)
    wt = _frobenius_weights(mm)
    A = (mm.apply(pts) * wt).T
    b = mm.target_vector(target) * wt
    w = _nnls_on_simplex(A, b, nearest)
    sel = w > 1e-16
    meas = DiscreteMeasure(pts[sel], w[sel])
    meas = caratheodory_reduce(meas, mm)
    achieved = mm.apply(meas.points).T @ meas.weights
    residual = float(np.linalg.norm((achieved - mm.target_vector(target)) * wt))
    return meas, residual
