"""Second-moment (and full two-moment) matching in dimension two and up.

The zero-mean 2-D construction is the delicate part.  Writing the target
covariance as B = Q diag(l1, l2) Q^T and abbreviating phi =
sqrt(1-q11^2)/q11, matching E[Y Y^T] = B for a +-symmetric measure is
equivalent to pinning the expectations of three quadratics

    g1(l) = (l1 + phi l2)(phi l1 - l2)      -> 0
    g2(l) = (l1 + phi l2)^2                 -> l1 / q11^2
    g3(l) = (phi l1 - l2)^2                 -> l2 / q11^2

and for every sign pattern of (g1 - 0, g2 - t2, g3 - t3) there is a nearby
lattice point realizing it, which puts the target inside the convex hull of
eight explicit candidates.  Means are handled separately by spreading mass
over the corners of the lattice cell containing a, whose (diagonal)
covariance is then subtracted from B before the zero-mean solve.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import DiscreteMeasure, LatticeCoord, ceil_index, floor_index, measure_moments
from .recombine import MomentMap, caratheodory_reduce, solve_simplex_weights

_MM2_FULL = MomentMap(2, include_mean=True)

__all__ = [
    "EigenSystem",
    "jacobi_eigh",
    "sign_case_point",
    "match_second_moment_2d_zero_mean",
    "match_moments_2d",
    "match_second_moment_nd_eigenlattice",
    "eigen_axis_measure",
    "SIGN_CASES",
]

# sign patterns over (g1, g2, g3); "g" = the moment inequality >=, "l" = <=
SIGN_CASES = ("ggg", "ggl", "glg", "gll", "lgg", "lgl", "llg", "lll")


@dataclass(frozen=True)
class EigenSystem:
    """Descending eigenvalues, orthonormal column eigenvectors, multiplicities."""

    lambdas: np.ndarray
    Q: np.ndarray
    multiplicities: tuple[int, ...]


def jacobi_eigh(B: np.ndarray, sym_tol: float = 1e-10) -> EigenSystem:
    """Cyclic Jacobi diagonalization of a symmetric matrix.

    Deterministic (fixed sweep order, fixed sign normalization), which is
    why it is used instead of a LAPACK call: chain construction must be
    bit-reproducible across runs.  Converges quadratically; for 2x2 a
    single rotation is already exact.
    """
    A = np.asarray(B, dtype=float)
    d = A.shape[0]
    if A.shape != (d, d):
        raise ValueError(f"matrix must be square, got {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > sym_tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    A = (A + A.T) / 2.0
    V = np.eye(d)
    if d == 2:
        # one rotation is exact; write it out to skip the sweep machinery
        apq = A[0, 1]
        if abs(apq) > 1e-18 * scale:
            theta = (A[1, 1] - A[0, 0]) / (2.0 * apq)
            t = (1.0 if theta >= 0.0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            A = np.array([[A[0, 0] - t * apq, 0.0], [0.0, A[1, 1] + t * apq]])
            V = np.array([[c, s], [-s, c]])
    else:
        for _ in range(60):
            off = math.sqrt(float(np.sum(np.tril(A, -1) ** 2)))
            if off <= 1e-15 * scale:
                break
            for p in range(d - 1):
                for q in range(p + 1, d):
                    apq = A[p, q]
                    if abs(apq) <= 1e-18 * scale:
                        continue
                    theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                    t = (1.0 if theta >= 0.0 else -1.0) / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    c = 1.0 / math.sqrt(t * t + 1.0)
                    s = t * c
                    rot = np.eye(d)
                    rot[p, p] = rot[q, q] = c
                    rot[p, q] = s
                    rot[q, p] = -s
                    A = rot.T @ A @ rot
                    V = V @ rot
    evals = np.diag(A).copy()
    order = np.argsort(-evals, kind="stable")
    lambdas = evals[order]
    Q = V[:, order]
    for j in range(d):  # sign convention: largest-magnitude component positive
        i = int(np.argmax(np.abs(Q[:, j])))
        if Q[i, j] < 0.0:
            Q[:, j] = -Q[:, j]
    mults: list[int] = []
    tol = 1e-9 * max(1.0, abs(float(lambdas[0])) if d else 1.0)
    for lam in lambdas:
        if mults and abs(lam - prev) <= tol:  # noqa: F821 - prev set on previous iteration
            mults[-1] += 1
        else:
            mults.append(1)
        prev = lam
    return EigenSystem(lambdas, Q, tuple(mults))


def _int_floor(x: float) -> int:
    k = math.floor(x)
    while k > x:
        k -= 1
    while k + 1 <= x:
        k += 1
    return k


def _int_ceil(x: float) -> int:
    return -_int_floor(-x)


def sign_case_point(
    case: str, lambda1: float, lambda2: float, q11: float, gamma: float
) -> LatticeCoord:
    """Lattice point realizing one of the eight sign patterns of (g1, g2, g3).

    Requires lambda1 >= lambda2 > 0, gamma <= sqrt(lambda2), and the
    canonical frame normalization q11 in [1/sqrt(2), 1).  The returned point
    satisfies its three inequalities with slack >= -1e-10 (relative) and
    |l|_inf <= sqrt(2 lambda1) + sqrt(2 lambda2) + 2 gamma.
    """
    if case not in SIGN_CASES:
        raise ValueError(f"case must be one of {SIGN_CASES}, got {case!r}")
    if not (lambda1 >= lambda2 > 0.0):
        raise ValueError(f"need lambda1 >= lambda2 > 0, got {lambda1!r}, {lambda2!r}")
    if not (0.0 < gamma <= math.sqrt(lambda2) * (1.0 + 1e-12)):
        raise ValueError(f"need 0 < gamma <= sqrt(lambda2), got gamma={gamma!r}")
    if not (1.0 / math.sqrt(2.0) - 1e-12 <= q11 < 1.0):
        raise ValueError(f"q11 must lie in [1/sqrt(2), 1), got {q11!r}")
    phi = math.sqrt(max(0.0, 1.0 - q11 * q11)) / q11
    s1 = math.sqrt(lambda1)
    s2 = math.sqrt(lambda2)

    if case == "ggg":
        z2 = floor_index(-s2 / q11, gamma)
        z1 = ceil_index(s1 / q11 - phi * (gamma * z2), gamma)
    elif case == "glg":
        z2 = floor_index(-s2 / q11, gamma)
        z1 = ceil_index(-phi * (gamma * z2), gamma)
    elif case == "llg":
        z2 = ceil_index(s2 / q11, gamma)
        z1 = ceil_index(-phi * (gamma * z2), gamma)
    elif case == "lgg":
        # ceil, not floor: l1 > sqrt(l1)/q11 makes u = l1 + phi*l2 clear the
        # g2 threshold outright, with no phi in the denominator of the slack
        z1 = ceil_index(s1 / q11, gamma)
        z2 = ceil_index(s2 / q11 + phi * (gamma * z1), gamma)
    elif case in ("ggl", "lgl"):
        n = _int_ceil(math.sqrt(2.0 * lambda1) / gamma)  # weak: gamma*n >= sqrt(2 l1)
        while gamma * n < math.sqrt(2.0 * lambda1):
            n += 1
        while gamma * (n - 1) >= math.sqrt(2.0 * lambda1):
            n -= 1
        z1 = n
        z2 = _int_floor(n * phi) if case == "ggl" else _int_ceil(n * phi)
    else:  # "gll", "lll": the origin satisfies any pattern with g2, g3 below target
        z1 = z2 = 0

    coord = LatticeCoord((z1, z2))
    _check_sign_case(coord, case, lambda1, lambda2, q11, gamma, phi)
    return coord


def _check_sign_case(
    coord: LatticeCoord, case: str, lambda1: float, lambda2: float, q11: float, gamma: float, phi: float
) -> None:
    l1p, l2p = coord.z[0] * gamma, coord.z[1] * gamma
    u = l1p + phi * l2p
    w = phi * l1p - l2p
    vals = (u * w, u * u, w * w)
    targets = (0.0, lambda1 / (q11 * q11), lambda2 / (q11 * q11))
    slack_tol = 1e-10 * max(1.0, lambda1 / (q11 * q11))
    for v, t, sgn in zip(vals, targets, case):
        ok = v >= t - slack_tol if sgn == "g" else v <= t + slack_tol
        if not ok:
            raise RuntimeError(
                f"sign-case point {coord.z} violates pattern {case!r}: value {v!r} vs target {t!r}"
            )
    bound = math.sqrt(2 * lambda1) + math.sqrt(2 * lambda2) + 2 * gamma
    if max(abs(l1p), abs(l2p)) > bound * (1.0 + 1e-12):
        raise RuntimeError(f"sign-case point {coord.z} escapes the radius bound {bound!r}")


_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])
_FLIP2 = np.array([[1.0, 0.0], [0.0, -1.0]])


def _eigvals_2x2(B: np.ndarray) -> tuple[float, float]:
    """Descending eigenvalues of a symmetric 2x2, closed form."""
    t = 0.5 * (B[0, 0] + B[1, 1])
    disc = math.sqrt(max(0.0, 0.25 * (B[0, 0] - B[1, 1]) ** 2 + B[0, 1] * B[1, 0]))
    return t + disc, t - disc


def _ut(B: np.ndarray) -> np.ndarray:
    d = B.shape[0]
    return np.array([B[i, j] for i in range(d) for j in range(i, d)])


def match_second_moment_2d_zero_mean(B: np.ndarray, gamma: float) -> DiscreteMeasure:
    """Zero-mean measure on gamma * Z^2 with E[Y Y^T] = B, at most 6 atoms.

    Needs B positive definite with gamma <= sqrt(lambda_min).  Axis-aligned
    targets go through the eigenlattice shortcut; genuinely rotated ones are
    first mapped to a canonical frame (leading eigenvector in the first
    octant with q11 >= 1/sqrt(2)) by symmetries of the integer lattice, so
    the sign-case table applies verbatim, then mapped back.
    """
    B = np.asarray(B, dtype=float)
    eig = jacobi_eigh(B)
    lam1, lam2 = float(eig.lambdas[0]), float(eig.lambdas[1])
    if lam2 <= 0.0:
        raise ValueError(f"B must be positive definite, got eigenvalues {eig.lambdas}")
    if gamma > math.sqrt(lam2) * (1.0 + 1e-12):
        raise ValueError(f"pitch {gamma!r} too coarse: needs gamma <= sqrt(lambda_min) = {math.sqrt(lam2)!r}")
    scale = max(1.0, lam1)
    if abs(B[0, 1]) <= 1e-13 * scale:
        meas, _ = match_second_moment_nd_eigenlattice(np.diag(np.diag(B)), gamma)
        return meas

    T, q11 = _canonical_frame(eig)
    coords = _canonical_sign_coords(lam1, lam2, q11, gamma)
    pts = gamma * (np.array(coords, dtype=float) @ T)  # back to the original frame
    # a basic LP solution is its own Caratheodory reduction: <= 6 atoms out
    target = np.concatenate([np.zeros(2), _ut(B)])
    meas = solve_simplex_weights(pts, target, _MM2_FULL)
    if meas is None:
        raise RuntimeError(f"sign-case hull unexpectedly misses the target covariance {B!r}")

    order = np.lexsort((meas.points[:, 1], meas.points[:, 0]))
    out = DiscreteMeasure(meas.points[order], meas.weights[order])
    _verify_nd(out, np.zeros(2), B, gamma, bound=math.sqrt(2 * lam1) + math.sqrt(2 * lam2) + 2 * gamma)
    return out


def _canonical_frame(eig: EigenSystem) -> tuple[np.ndarray, float]:
    """Signed permutation T putting the leading eigenvector in sign-case position.

    After the map, q11 = (T q)_1 >= 1/sqrt(2) and both components are
    nonnegative, which is exactly the octant the sign-case table covers.
    """
    v = eig.Q[:, 0].copy()
    T = np.eye(2)
    if abs(v[0]) < abs(v[1]):
        T = _SWAP @ T
        v = _SWAP @ v
    if v[0] < 0.0:
        v = -v
    if v[1] < 0.0:
        T = _FLIP2 @ T
        v = _FLIP2 @ v
    return T, float(v[0])


def _zero_mean_support(B: np.ndarray, gamma: float) -> tuple[list[tuple[int, int]], bool]:
    """Integer lattice coordinates known to support a zero-mean match of B.

    The same support the full zero-mean solve would use -- eigen-axis points
    for diagonal targets, mapped-back sign-case candidates otherwise -- but
    without solving for weights, so a caller can fold these into a larger
    program.  Everything is closed form; a borderline-wrong point here can
    only shrink the hull the caller's LP sees, never corrupt a result.  The
    flag says which branch fired: True for the rotated sign-case support.
    """
    b00, b01, b11 = float(B[0, 0]), float(B[0, 1]), float(B[1, 1])
    if abs(b01) <= 1e-13 * max(1.0, b00, b11):
        k = ceil_index(math.sqrt(b00 + b11), gamma)
        return [(0, 0), (k, 0), (-k, 0), (0, k), (0, -k)], False
    t = 0.5 * (b00 + b11)
    disc = math.sqrt(max(0.0, 0.25 * (b00 - b11) ** 2 + b01 * b01))
    lam1, lam2 = t + disc, t - disc
    # leading eigenvector, the better-conditioned of the two closed forms
    v0, v1 = (b01, lam1 - b00) if b00 <= b11 else (lam1 - b11, b01)
    swap = abs(v0) < abs(v1)
    if swap:
        v0, v1 = v1, v0
    if v0 < 0.0:
        v0, v1 = -v0, -v1
    flip = v1 < 0.0
    if flip:
        v1 = -v1
    q11 = v0 / math.hypot(v0, v1)
    coords = _canonical_sign_coords(lam1, lam2, q11, gamma)
    if swap and flip:  # z (FLIP SWAP): (z1, z2) -> (-z2, z1)
        return [(-z2, z1) for z1, z2 in coords], True
    if swap:
        return [(z2, z1) for z1, z2 in coords], True
    if flip:
        return [(z1, -z2) for z1, z2 in coords], True
    return coords, True


def _canonical_sign_coords(lam1: float, lam2: float, q11: float, gamma: float) -> list[tuple[int, int]]:
    """The eight sign-case lattice coordinates and their mirrors, deduplicated.

    Same formulas as sign_case_point in the same case order, with the shared
    subexpressions hoisted and the per-case slack re-checks skipped -- this
    sits on the hot path, and a borderline point only shrinks the caller's
    hull.
    """
    phi = math.sqrt(max(0.0, 1.0 - q11 * q11)) / q11
    s1, s2 = math.sqrt(lam1) / q11, math.sqrt(lam2) / q11
    z2_lo = floor_index(-s2, gamma)
    z2_hi = ceil_index(s2, gamma)
    z1_hi = ceil_index(s1, gamma)
    r = math.sqrt(2.0 * lam1)
    n = _int_ceil(r / gamma)  # weak: gamma*n >= sqrt(2 lam1)
    while gamma * n < r:
        n += 1
    while gamma * (n - 1) >= r:
        n -= 1
    cases = (
        (ceil_index(s1 - phi * (gamma * z2_lo), gamma), z2_lo),  # ggg
        (n, _int_floor(n * phi)),  # ggl
        (ceil_index(-phi * (gamma * z2_lo), gamma), z2_lo),  # glg
        (0, 0),  # gll (and lll)
        (z1_hi, ceil_index(s2 + phi * (gamma * z1_hi), gamma)),  # lgg
        (n, _int_ceil(n * phi)),  # lgl
        (ceil_index(-phi * (gamma * z2_hi), gamma), z2_hi),  # llg
    )
    coords: list[tuple[int, int]] = []
    for z in cases:
        if z not in coords:
            coords.append(z)
    for z in list(coords):  # mirror so the mean constraint is satisfiable
        neg = (-z[0], -z[1])
        if neg not in coords:
            coords.append(neg)
    return coords


def _verify_nd(meas: DiscreteMeasure, a: np.ndarray, second: np.ndarray, gamma: float, bound: float | None) -> None:
    mean, sec = measure_moments(meas)
    scale = max(1.0, float(np.max(np.abs(second))))
    if np.max(np.abs(mean - a)) > 1e-9 * max(1.0, float(np.max(np.abs(a))), scale):
        raise RuntimeError(f"matcher failed the mean: {mean!r} vs {a!r}")
    if np.max(np.abs(sec - second)) > 1e-9 * scale:
        raise RuntimeError(f"matcher failed the second moment by {np.max(np.abs(sec - second)):.3e}")
    if bound is not None and float(np.max(np.abs(meas.points))) > bound * (1.0 + 1e-9) + 1e-12:
        raise RuntimeError(f"support radius {np.max(np.abs(meas.points))!r} exceeds bound {bound!r}")


def _corner_lift(a: np.ndarray, gamma: float) -> tuple[list[tuple[int, ...]], np.ndarray, np.ndarray]:
    """Bilinear spread of a mean over its lattice cell corners.

    Returns integer corner coordinates, their weights, and the (diagonal)
    covariance of the resulting measure; each t_i(1-t_i) gamma^2 term is at
    most gamma^2/4.
    """
    d = len(a)
    base = [floor_index(float(a[i]), gamma) for i in range(d)]
    t = [float(a[i]) / gamma - base[i] for i in range(d)]
    corners: list[tuple[int, ...]] = [()]
    weights: list[float] = [1.0]
    for i in range(d):
        new_corners: list[tuple[int, ...]] = []
        new_w: list[float] = []
        for corner, wv in zip(corners, weights):
            if t[i] < 1.0:
                new_corners.append(corner + (base[i],))
                new_w.append(wv * (1.0 - t[i]))
            if t[i] > 0.0:
                new_corners.append(corner + (base[i] + 1,))
                new_w.append(wv * t[i])
        corners = new_corners
        weights = new_w
    cov = np.diag([ti * (1.0 - ti) * gamma * gamma for ti in t])
    return corners, np.array(weights), cov


def match_moments_2d(a: np.ndarray, B: np.ndarray, gamma: float) -> DiscreteMeasure:
    """Measure on gamma * Z^2 with mean a and covariance B, at most 6 atoms.

    Requires gamma <= sqrt(lambda_min(B) / 3): a third of the smallest
    variance direction is reserved for the cell-corner spread of the mean,
    whose own covariance (diagonal, entries <= gamma^2/4) is removed from B
    before the zero-mean construction, and the remainder must still clear
    the zero-mean pitch condition.
    """
    a = np.asarray(a, dtype=float).reshape(2)
    B = np.asarray(B, dtype=float)
    lam1, lam2 = _eigvals_2x2(B)
    if lam2 <= 0.0:
        raise ValueError("B must be positive definite")
    # The slack mirrors the chain builder's eligibility gate (1 - 1e-9 on
    # lambda_min) so a target that passes the gate cannot be rejected here.
    if gamma > math.sqrt(lam2 / 3.0) * (1.0 + 1e-9):
        raise ValueError(
            f"pitch {gamma!r} too coarse for exact matching: needs gamma <= sqrt(lambda_min / 3) = "
            f"{math.sqrt(lam2 / 3.0)!r}"
        )

    corners, cw, cov = _corner_lift(a, gamma)
    B_star = B - cov
    if _eigvals_2x2(B_star)[1] < gamma * gamma * (1.0 - 1e-9):
        raise RuntimeError("mean-spread covariance ate the pitch margin; target barely feasible")

    # candidate support: every corner translate of a known zero-mean support
    # for B_star.  The product measure corner x (zero-mean match) lives on it,
    # so one LP over the translates is feasible and its basic solution needs
    # no separate reduction step.
    zm_coords, rotated = _zero_mean_support(B_star, gamma)
    seen: dict[tuple[int, int], None] = {}
    for corner in corners:
        for z0, z1 in zm_coords:
            seen[(corner[0] + z0, corner[1] + z1)] = None
    cands: list[tuple[int, int]] | dict[tuple[int, int], None] = seen
    if rotated:
        # Rotated supports scatter wide, and the simplex (Bland) keeps the
        # earliest feasible columns: listing candidates nearest the mean
        # first makes the returned atom set -- hence a chain built from many
        # of these rows -- markedly more compact.  Axis-aligned supports are
        # already tight, and there the sort only burns pivots.
        c0, c1 = float(a[0]) / gamma, float(a[1]) / gamma
        cands = sorted(seen, key=lambda z: ((z[0] - c0) ** 2 + (z[1] - c1) ** 2, z))
    pts = gamma * np.array(list(cands), dtype=float)
    second = np.outer(a, a) + B
    target = np.concatenate([a, _ut(second)])
    meas = solve_simplex_weights(pts, target, _MM2_FULL)
    if meas is None:
        # hull-boundary float fuzz: fall back to the explicit product measure
        y_star = match_second_moment_2d_zero_mean(B_star, gamma)
        y_coords = np.rint(y_star.points / gamma).astype(int)
        prod_w: dict[tuple[int, int], float] = {}
        for corner, wc in zip(corners, cw):
            for zc, wy in zip(y_coords, y_star.weights):
                key = (corner[0] + int(zc[0]), corner[1] + int(zc[1]))
                prod_w[key] = prod_w.get(key, 0.0) + float(wc) * float(wy)
        meas = DiscreteMeasure(gamma * np.array(list(prod_w), dtype=float), np.array(list(prod_w.values())))
        meas = caratheodory_reduce(meas, _MM2_FULL).trimmed()

    bound = float(np.max(np.abs(a))) + math.sqrt(2 * lam1) + math.sqrt(2 * lam2) + 6 * gamma
    _verify_nd(meas, a, second, gamma, bound=bound)
    return meas


def match_second_moment_nd_eigenlattice(B: np.ndarray, gamma: float) -> tuple[DiscreteMeasure, np.ndarray]:
    """Zero-mean match of a PSD second moment on the eigenlattice gamma * Q * Z^d.

    One radius G = min{gamma z > sqrt(trace)} serves every eigendirection:
    atoms +-G Q e_j with weight lambda_j / (2 G^2) reproduce B exactly and
    the origin absorbs the leftover 1 - trace/G^2 > 0.  Rank-deficient B is
    fine (flat directions simply get no atoms); B = 0 gives a point mass.
    """
    B = np.asarray(B, dtype=float)
    d = B.shape[0]
    eig = jacobi_eigh(B)
    lambdas = eig.lambdas.copy()
    top = max(1.0, float(lambdas[0]) if d else 1.0)
    if float(lambdas[-1]) < -1e-10 * top:
        raise ValueError(f"B must be PSD, got eigenvalue {lambdas[-1]!r}")
    lambdas = np.where(lambdas < 1e-12 * top, 0.0, lambdas)
    meas = eigen_axis_measure(lambdas, eig.Q, gamma)
    _verify_nd(meas, np.zeros(d), B, gamma, bound=None)
    return meas, eig.Q


def eigen_axis_measure(lambdas: np.ndarray, Q: np.ndarray, gamma: float) -> DiscreteMeasure:
    """The closed-form zero-mean law for per-axis variances in a given frame.

    One radius G = min{gamma z > sqrt(sum lambdas)} serves every direction:
    atoms +-G Q e_j with weight lambda_j / (2 G^2), the origin absorbing the
    leftover 1 - sum/G^2 > 0.  Callers guarantee lambdas >= 0 and Q orthogonal;
    zero entries simply get no atoms, and all-zero variances give a point mass.
    """
    lambdas = np.asarray(lambdas, dtype=float)
    d = lambdas.shape[0]
    s = float(np.sum(lambdas))
    if s == 0.0:
        return DiscreteMeasure(np.zeros((1, d)), np.array([1.0]))
    G = ceil_index(math.sqrt(s), gamma) * gamma  # strict, so G^2 > s and the origin weight is positive
    pts: list[np.ndarray] = [np.zeros(d)]
    wts: list[float] = [1.0 - s / (G * G)]
    for j in range(d):
        if lambdas[j] == 0.0:
            continue
        direction = G * Q[:, j]
        side = float(lambdas[j]) / (2.0 * G * G)
        pts.append(direction)
        wts.append(side)
        pts.append(-direction)
        wts.append(side)
    return DiscreteMeasure(np.array(pts), np.array(wts))
