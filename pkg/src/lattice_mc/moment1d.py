"""Mean/variance matching on a one-dimensional lattice.

Given a target mean a and variance b^2, produce a measure on gamma * Z with
at most three atoms whose first two moments hit the target — exactly when
the geometry allows it, and with a second-moment error of at most gamma^2/4
otherwise.  Exactness is a convexity question: among lattice measures with
mean a, the smallest achievable second moment is the chord of the parabola
y -> y^2 between the two lattice neighbours of a, so a target below that
chord can only be approximated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import DiscreteMeasure, ceil_index, floor_index, measure_moments
from .recombine import MomentMap, caratheodory_reduce, solve_simplex_weights

__all__ = [
    "Match1DOptions",
    "InexactOnlyError",
    "ConstrainedInfeasibleError",
    "variance_condition_holds",
    "match_moments_1d",
    "match_zero_mean_1d",
]

# hard cap on how far out the constrained construction may place an atom
SUPPORT_CAP = 1e6


class InexactOnlyError(ValueError):
    """Exact matching was required but only an approximation exists."""


class ConstrainedInfeasibleError(ValueError):
    """No measure on the admissible lattice points can hit the target."""


@dataclass(frozen=True)
class Match1DOptions:
    exact_required: bool = False
    allow_offgrid_mean_point: bool = False
    support_lower_bound: float | None = None


def variance_condition_holds(a: float, b: float, gamma: float) -> bool:
    """True iff (a, a^2+b^2) is exactly reachable on gamma * Z.

    The threshold is the chord of y^2 between floor(a) and ceil(a):
    a^2 + b^2 >= (ceil^2 - floor^2)(a - floor)/gamma + floor^2.
    Equality counts as reachable.
    """
    _check_inputs(a, b, gamma)
    f = floor_index(a, gamma) * gamma
    c = f + gamma
    return a * a + b * b >= (c + f) * (a - f) + f * f


def _check_inputs(a: float, b: float, gamma: float) -> None:
    if not (math.isfinite(a) and math.isfinite(b)):
        raise ValueError("target moments must be finite")
    if b < 0.0:
        raise ValueError(f"b must be nonnegative, got {b!r}")
    if not (gamma > 0.0) or not math.isfinite(gamma):
        raise ValueError(f"gamma must be positive and finite, got {gamma!r}")


def match_zero_mean_1d(b: float, gamma: float) -> DiscreteMeasure:
    """Zero-mean, variance-b^2 measure on {0, +-a} with a the first lattice
    point whose square exceeds b^2.  Always exact; the origin keeps the
    leftover mass, so at most three atoms."""
    _check_inputs(0.0, b, gamma)
    if b == 0.0:
        return DiscreteMeasure(np.array([0.0]), np.array([1.0]))
    app = ceil_index(b, gamma) * gamma  # strict: app > b, so the weights below are < 1
    side = b * b / (2.0 * app * app)
    return DiscreteMeasure(
        np.array([-app, 0.0, app]),
        np.array([side, 1.0 - 2.0 * side, side]),
    )


def _solve_on(candidates: list[float], a: float, m2: float) -> DiscreteMeasure | None:
    """Exact two-moment solve over a candidate set, reduced to <= 3 atoms."""
    pts = np.array(sorted(set(candidates)))
    mm = MomentMap(1)
    meas = solve_simplex_weights(pts, np.array([a, m2]), mm)
    if meas is None:
        return None
    return caratheodory_reduce(meas, mm)


def _verify(meas: DiscreteMeasure, a: float, m2: float, exact: bool, gamma: float) -> None:
    mean, second = measure_moments(meas)
    mean_err = abs(mean[0] - a)
    m2_err = abs(second[0, 0] - m2)
    scale = max(1.0, abs(a))
    if mean_err > 1e-12 * scale:
        raise RuntimeError(f"matcher failed the mean: |{mean[0]!r} - {a!r}| = {mean_err:.3e}")
    tol = 1e-10 * max(1.0, m2) if exact else gamma * gamma / 4.0 + 1e-12 * max(1.0, m2)
    if m2_err > tol:
        raise RuntimeError(f"matcher failed the second moment by {m2_err:.3e} (tol {tol:.3e})")


def _negated(meas: DiscreteMeasure) -> DiscreteMeasure:
    order = np.argsort(-meas.points[:, 0], kind="stable")
    return DiscreteMeasure(-meas.points[order], meas.weights[order])


def match_moments_1d(
    a: float,
    b: float,
    gamma: float,
    options: Match1DOptions | None = None,
) -> tuple[DiscreteMeasure, str]:
    """Match mean a and variance b^2 on gamma * Z with at most three atoms.

    Returns (measure, mode) with mode "exact" or "approx".  The mean is always
    exact; in approx mode the second moment overshoots by at most gamma^2/4.
    Support is contained in [-(sqrt(a^2+b^2)+gamma), sqrt(a^2+b^2)+gamma],
    plus the point a itself when allow_offgrid_mean_point is set.

    With a support_lower_bound the problem changes character: the solution is
    built from the bounded-below hull and is exact or raises
    ConstrainedInfeasibleError (approximation is still available when the
    plain variance condition fails, since the two nearest neighbours of a are
    always admissible).
    """
    opts = options or Match1DOptions()
    _check_inputs(a, b, gamma)
    if opts.support_lower_bound is not None:
        return _match_bounded_below(a, b, gamma, opts)
    if a < 0.0:
        meas, mode = match_moments_1d(-a, b, gamma, opts)
        return _negated(meas), mode
    if a == 0.0:
        return match_zero_mean_1d(b, gamma), "exact"

    f = floor_index(a, gamma) * gamma
    c = f + gamma
    m2 = a * a + b * b
    chord = (c + f) * (a - f) + f * f

    if m2 < chord:
        # unreachable exactly on the lattice
        if opts.allow_offgrid_mean_point:
            meas = _solve_on([-c, -a, -f, f, a, c], a, m2)
            if meas is None:  # only possible through float fuzz at the boundary
                meas = _solve_on([-c, -a, -f, f, a, c, c + gamma], a, m2)
            if meas is None:
                raise RuntimeError("off-grid hull unexpectedly infeasible")
            _verify(meas, a, m2, exact=True, gamma=gamma)
            return meas, "exact"
        if opts.exact_required:
            raise InexactOnlyError(
                f"target (a={a!r}, b={b!r}) on pitch {gamma!r} is inexact-only: "
                f"a^2+b^2 = {m2!r} < {chord!r}"
            )
        theta = (a - f) / gamma
        meas = DiscreteMeasure(np.array([f, c]), np.array([1.0 - theta, theta]))
        _verify(meas, a, m2, exact=False, gamma=gamma)
        return meas, "approx"

    if b == 0.0:
        # condition holds with b = 0 only when a is itself a lattice point
        meas = DiscreteMeasure(np.array([a]), np.array([1.0]))
        _verify(meas, a, m2, exact=True, gamma=gamma)
        return meas, "exact"

    if m2 <= c * c:
        candidates = [-c, -f, f, c]
    else:
        top = ceil_index(math.sqrt(m2), gamma) * gamma
        candidates = [-top, -c, c, top]
    meas = _solve_on(candidates, a, m2)
    if meas is None:
        # boundary float fuzz: widen with both inner points and one more ring
        top = ceil_index(math.sqrt(m2), gamma) * gamma
        meas = _solve_on([-top - gamma, -top, -c, -f, f, c, top, top + gamma], a, m2)
    if meas is None:
        raise RuntimeError(f"exact hull unexpectedly infeasible for (a={a!r}, b={b!r}, gamma={gamma!r})")
    _verify(meas, a, m2, exact=True, gamma=gamma)
    return meas, "exact"


def _match_bounded_below(
    a: float, b: float, gamma: float, opts: Match1DOptions
) -> tuple[DiscreteMeasure, str]:
    lower = float(opts.support_lower_bound)  # type: ignore[arg-type]
    if not math.isfinite(lower):
        raise ValueError("support_lower_bound must be finite")
    if lower > a:
        raise ValueError(f"support_lower_bound {lower!r} exceeds the target mean {a!r}")

    fl = floor_index(lower, gamma)
    l0 = fl * gamma if fl * gamma == lower else (fl + 1) * gamma  # smallest admissible lattice point
    m2 = a * a + b * b

    if l0 >= a:
        # mean pinned at (or below) the smallest admissible point
        if b == 0.0 and (l0 == a or opts.allow_offgrid_mean_point):
            meas = DiscreteMeasure(np.array([a]), np.array([1.0]))
            return meas, "exact"
        raise ConstrainedInfeasibleError(
            f"no lattice point below the mean: smallest admissible point {l0!r} >= a = {a!r}"
        )

    f = floor_index(a, gamma) * gamma
    c = f + gamma
    chord = (c + f) * (a - f) + f * f

    if m2 < chord and not opts.allow_offgrid_mean_point:
        if opts.exact_required:
            raise InexactOnlyError(
                f"constrained target (a={a!r}, b={b!r}) on pitch {gamma!r} is inexact-only"
            )
        theta = (a - f) / gamma
        pts, w = (np.array([f, c]), np.array([1.0 - theta, theta]))
        if theta == 0.0:
            pts, w = pts[:1], w[:1]
        meas = DiscreteMeasure(pts, w)
        _verify(meas, a, m2, exact=False, gamma=gamma)
        return meas, "approx"

    # smallest top point making the (l0, top) chord reach the target second moment
    need = (m2 - a * l0) / (a - l0)
    ki = floor_index(need, gamma)
    top = ki * gamma if ki * gamma == need else (ki + 1) * gamma
    top = max(top, c)
    if top > SUPPORT_CAP:
        raise ConstrainedInfeasibleError(
            f"constrained match needs an atom at {top!r}, beyond the {SUPPORT_CAP:g} cap"
        )
    meas = None
    for bump in range(9):  # a few extra rings cover float fuzz at the chord boundary
        candidates = [l0, f, c, top + bump * gamma]
        if opts.allow_offgrid_mean_point:
            candidates.append(a)
        meas = _solve_on(candidates, a, m2)
        if meas is not None:
            break
    if meas is None:
        raise ConstrainedInfeasibleError(
            f"constrained hull infeasible for (a={a!r}, b={b!r}, gamma={gamma!r}, lower={lower!r})"
        )
    _verify(meas, a, m2, exact=True, gamma=gamma)
    return meas, "exact"
