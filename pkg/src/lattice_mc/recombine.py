"""Moment systems on point sets: feasibility and support reduction.

The two workhorses here are solve_simplex_weights, which finds nonnegative
weights reproducing a moment vector over a given point set (a small dense
Phase-I simplex — no external LP solver, so results are bit-reproducible),
and caratheodory_reduce, which prunes any feasible weighting down to at
most h+1 atoms without moving the moments, h being the number of matched
moment components.  Both are fully deterministic: Bland's rule and
lowest-index tie-breaks throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import DiscreteMeasure, MomentTarget, _as_points, merge_atoms

__all__ = ["MomentMap", "solve_simplex_weights", "caratheodory_reduce"]

FEASIBILITY_TOL = 1e-9
MOMENT_TOL = 1e-10


@dataclass(frozen=True)
class MomentMap:
    """The polynomial map whose expectations we pin down.

    include_mean=True maps l to (l, upper triangle of l l^T); otherwise only
    the upper triangle.  Upper-triangle entries are ordered row-major:
    (0,0), (0,1), ..., (0,d-1), (1,1), ...
    """

    dim_in: int
    include_mean: bool = True

    @property
    def dim_out(self) -> int:
        d = self.dim_in
        second = d * (d + 1) // 2
        return d + second if self.include_mean else second

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the map at each point; (r, d) -> (r, dim_out)."""
        pts = _as_points(points, self.dim_in)
        return self._design(pts).T

    def _design(self, pts: np.ndarray) -> np.ndarray:
        d = self.dim_in
        out = np.empty((self.dim_out, len(pts)))
        k = 0
        if self.include_mean:
            for i in range(d):
                out[k] = pts[:, i]
                k += 1
        for i in range(d):
            for j in range(i, d):
                np.multiply(pts[:, i], pts[:, j], out=out[k])
                k += 1
        return out

    def design_matrix(self, pts: np.ndarray) -> np.ndarray:
        """Map values as rows plus a trailing row of ones (the mass row)."""
        d_out = self.dim_out
        out = np.empty((d_out + 1, len(pts)))
        out[:d_out] = self._design(pts)
        out[d_out] = 1.0
        return out

    def target_vector(self, target: MomentTarget) -> np.ndarray:
        """Moment vector corresponding to mean a and covariance B."""
        if target.dim != self.dim_in:
            raise ValueError(f"target dim {target.dim} != map dim {self.dim_in}")
        M = target.second_moment()
        ut = [M[i, j] for i in range(self.dim_in) for j in range(i, self.dim_in)]
        if self.include_mean:
            return np.concatenate([target.a, ut])
        return np.asarray(ut)


def _phase1_simplex(A: np.ndarray, b: np.ndarray, tol: float = FEASIBILITY_TOL) -> np.ndarray | None:
    """Find p >= 0 with A p = b, or None if no such p exists.

    Dense Phase-I simplex with an artificial identity basis.  Entering
    column: lowest index with negative reduced cost (Bland).  Leaving row:
    min-ratio, ties broken by smallest basis index.  Reduced costs are
    recomputed from the cost vector each iteration, which avoids drift in
    long pivots at these tiny sizes.

    Bland's rule makes column order part of the contract: earlier columns are
    preferred, so callers can bias the chosen basis (e.g. toward lattice
    points close to the target mean) by ordering their candidates.
    """
    m, r = A.shape
    sgn = np.where(b < 0.0, -1.0, 1.0)
    T = np.hstack([A * sgn[:, None], np.eye(m), (b * sgn)[:, None]])
    basis = list(range(r, r + m))
    cost = np.concatenate([np.zeros(r), np.ones(m)])
    for _ in range(50 * (r + m + 1)):
        red = cost[: r + m] - cost[basis] @ T[:, : r + m]
        enter = -1
        for j in range(r + m):
            if red[j] < -tol:
                enter = j
                break
        if enter < 0:
            break
        col = T[:, enter]
        leave = -1
        best = np.inf
        for i in range(m):
            if col[i] > tol:
                ratio = T[i, -1] / col[i]
                if ratio < best - 1e-15 or (abs(ratio - best) <= 1e-15 and (leave < 0 or basis[i] < basis[leave])):
                    best = ratio
                    leave = i
        if leave < 0:
            return None  # cannot happen for a bounded phase-I objective; defensive
        piv = T[leave] / col[leave]
        T -= np.outer(col, piv)  # outer() materializes before the subtraction
        T[leave] = piv
        basis[leave] = enter
    residual_mass = float(cost[basis] @ np.maximum(T[:, -1], 0.0))
    if residual_mass > tol:
        return None
    p = np.zeros(r)
    for i, bi in enumerate(basis):
        if bi < r:
            p[bi] = max(T[i, -1], 0.0)
    return p


def _refine_on_support(A: np.ndarray, b: np.ndarray, p: np.ndarray) -> np.ndarray:
    """Least-squares polish of the weights on their support.

    Accepted only if it stays (numerically) nonnegative and does not worsen
    the residual; otherwise the simplex solution is kept as-is.
    """
    support = np.flatnonzero(p > 1e-14)
    if len(support) == 0:
        return p
    As = A[:, support]
    w, *_ = np.linalg.lstsq(As, b, rcond=None)
    if np.min(w) < -1e-12:
        return p
    old = float(np.max(np.abs(A @ p - b)))
    ws = np.maximum(w, 0.0)
    new = float(np.max(np.abs(As @ ws - b)))
    if new > old + 1e-15:
        return p
    cand = np.zeros_like(p)
    cand[support] = ws
    return cand


def solve_simplex_weights(
    points: np.ndarray,
    target: np.ndarray,
    moment_map: MomentMap,
) -> DiscreteMeasure | None:
    """Nonnegative weights on `points` matching the given moment vector.

    Returns a measure whose map expectations equal `target` componentwise
    within 1e-10, already trimmed to the atoms that carry weight (a basic
    solution, so at most dim_out + 1 of them); returns None when the target
    is outside the convex hull of the mapped points.  Duplicate input points
    are merged onto their first occurrence.
    """
    pts = _as_points(points, moment_map.dim_in)
    t = np.asarray(target, dtype=float).reshape(-1)
    if len(t) != moment_map.dim_out:
        raise ValueError(f"target has {len(t)} components, map has {moment_map.dim_out}")
    A = moment_map.design_matrix(pts)
    b = np.concatenate([t, [1.0]])
    scale = max(1.0, float(np.max(np.abs(b))))
    p = _phase1_simplex(A / scale, b / scale)
    if p is None:
        return None
    p = _refine_on_support(A, b, p)
    if np.max(np.abs(A @ p - b)) > MOMENT_TOL * scale:
        return None  # hull boundary at solver precision: treat as infeasible
    sel = np.flatnonzero(p > 0.0)
    live = pts[sel] + 0.0  # -0.0 -> +0.0 so byte keys mean value equality
    stride = live.shape[1] * live.itemsize
    raw = live.tobytes()
    if len({raw[i : i + stride] for i in range(0, len(raw), stride)}) == len(live):
        return DiscreteMeasure(live, p[sel])
    mpts, mw = merge_atoms(live, p[sel])
    return DiscreteMeasure(mpts, mw)


def caratheodory_reduce(measure: DiscreteMeasure, moment_map: MomentMap) -> DiscreteMeasure:
    """Shrink the support to at most dim_out + 1 atoms, preserving moments.

    Caratheodory exchange, batched: one SVD of the moment matrix (with a row
    of ones appended, so total mass is preserved too) yields a whole null-space
    basis; each basis vector funds one elimination — walk the weights along it
    until the first one hits zero, drop that atom, and restore the remaining
    basis vectors' validity by zeroing their component on the dropped atom.
    Equivalent to the classic one-kernel-per-step loop but with a single
    factorization.  The output support is a subset of the input support and
    the map expectations match the input's within 1e-10.
    """
    if measure.dim != moment_map.dim_in:
        raise ValueError(f"measure dim {measure.dim} != map dim {moment_map.dim_in}")
    m = measure.trimmed()
    limit = moment_map.dim_out + 1
    pts = m.points
    w = m.weights.copy()
    A = moment_map.design_matrix(pts)
    b = A @ w  # moments to preserve, including the mass row
    for _ in range(4):  # one batch normally suffices; repeat only on rank drift
        if len(w) <= limit:
            break
        _, S, Vh = np.linalg.svd(A, full_matrices=True)
        rank = int(np.sum(S > 1e-12 * max(1.0, float(S[0]))))
        N = Vh[rank:].copy()
        if len(N) == 0:
            break  # full column rank; nothing further to remove
        dead = np.zeros(len(w), dtype=bool)
        for k in range(len(N)):
            c = N[k]
            top = float(np.max(np.abs(c)))
            if top <= 1e-13:
                continue  # vector consumed by earlier eliminations
            c = c / top
            if np.max(c) <= 0.0:
                c = -c
            pos = c > 1e-14
            if not np.any(pos):
                continue
            ratios = np.full(len(w), np.inf)
            ratios[pos] = w[pos] / c[pos]
            j = int(np.argmin(ratios))
            w = w - ratios[j] * c
            np.clip(w, 0.0, None, out=w)
            w[j] = 0.0
            dead[j] = True
            # later basis vectors stay null vectors of the shrunk support once
            # their j-component is eliminated against c
            if k + 1 < len(N):
                N[k + 1 :] -= np.outer(N[k + 1 :, j] / c[j], c)
                N[k + 1 :, j] = 0.0
        keep = (w > 1e-16) & ~dead
        pts = pts[keep]
        w = w[keep]
        A = A[:, keep]
    # polish: re-solve on the final support to undo float drift
    fit, *_ = np.linalg.lstsq(A, b, rcond=None)
    if np.min(fit) >= -1e-12 and np.max(np.abs(A @ fit - b)) <= np.max(np.abs(A @ w - b)) + 1e-15:
        w = np.maximum(fit, 0.0)
    return DiscreteMeasure(pts, w / np.sum(w))
