"""Chain construction: pitch selection and breadth-first tree building.

A chain is grown outward from the start state, one time layer per step.
Every state is solved exactly once — transition laws are time-homogeneous,
so a state reappearing in a later layer reuses its row — and each row is a
small measure on neighbouring lattice points matching the local increment
moments mean = drift * dt and covariance = sigma sigma^T * dt.  Which matcher
runs per row depends on dimension and traits:

  d = 1                 closed-form three-point rows (exact, or bounded
                        second-moment error when the pitch condition fails)
  d = 2, elliptic       exact six-point rows while lambda_min(Sigma dt) clears
                        3 gamma^2, else the least-squares fallback
  any d, fixed frame    zero-drift closed form on the rotated lattice
  anything else         least-squares fallback

An off-lattice start gets a sentinel state whose single row matches the
moments of x0 + increment on the absolute lattice, so every later state has
integer coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .fallback import FallbackConfig, approx_match_qp
from .lattice import (
    DiscreteMeasure,
    LatticeCoord,
    LatticeSpec,
    MomentTarget,
    ceil_index,
    coord_to_point,
    point_to_coord,
)
from .moment1d import match_moments_1d
from .moment_nd import eigen_axis_measure, match_moments_2d

__all__ = [
    "SDEModel",
    "ChainModel",
    "RowMeta",
    "BuildOptions",
    "ConfigurationError",
    "BuildError",
    "select_lattice",
    "build_chain",
    "local_consistency_report",
    "ConsistencyReport",
    "transformed_model",
]

ROW_SUM_TOL = 1e-10

# Eligibility slack for the exact 2-D matcher: lambda_min may sit exactly on
# 3 gamma^2 (heston-style boundary states), so the gate leans slightly exact.
_EXACT_GATE_SLACK = 1e-9


class ConfigurationError(ValueError):
    """Model/option combination that cannot be built as requested."""


class BuildError(RuntimeError):
    """Construction failed; carries partial diagnostics where available."""

    def __init__(self, message: str, *, states_so_far: int | None = None, step: int | None = None):
        super().__init__(message)
        self.states_so_far = states_so_far
        self.step = step


DriftFn = Callable[[np.ndarray], np.ndarray]
DiffusionFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class SDEModel:
    """Coefficients and traits of dX = mu(X) dt + sigma(X) dW.

    drift maps (..., d) -> (..., d); diffusion maps (..., d) -> (..., d, h).
    Traits feed lattice selection: sigma_min is the 1-D ellipticity floor
    (0 declares a non-elliptic model), epsilon = inf lambda_min(sigma sigma^T)
    for d = 2, and fixed_frame is the state-independent orthogonal frame of a
    zero-drift model in d >= 2.  state_map, when set, carries lattice states
    into the coordinates that functionals expect (e.g. exp for a log-price
    model); the builder itself never uses it.
    """

    dim: int
    drift: DriftFn
    diffusion: DiffusionFn
    brownian_dim: int | None = None
    growth: str = "linear_growth"
    sigma_min: float | None = None
    epsilon: float | None = None
    fixed_frame: np.ndarray | None = None
    horizon: float = 1.0
    state_map: Callable[[np.ndarray], np.ndarray] | None = None
    label: str = "sde"

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ConfigurationError(f"dim must be >= 1, got {self.dim}")
        if self.growth not in ("bounded", "linear_growth"):
            raise ConfigurationError(f"growth must be 'bounded' or 'linear_growth', got {self.growth!r}")
        if self.sigma_min is not None and self.sigma_min < 0.0:
            raise ConfigurationError(f"sigma_min must be >= 0, got {self.sigma_min!r}")
        if self.epsilon is not None and self.epsilon < 0.0:
            raise ConfigurationError(f"epsilon must be >= 0, got {self.epsilon!r}")
        if not (self.horizon > 0.0 and math.isfinite(self.horizon)):
            raise ConfigurationError(f"horizon must be positive, got {self.horizon!r}")
        if self.fixed_frame is not None:
            Q = np.asarray(self.fixed_frame, dtype=float)
            if Q.shape != (self.dim, self.dim):
                raise ConfigurationError(f"fixed_frame must be {self.dim}x{self.dim}")
            if np.max(np.abs(Q.T @ Q - np.eye(self.dim))) > 1e-10:
                raise ConfigurationError("fixed_frame is not orthogonal")
            object.__setattr__(self, "fixed_frame", Q)

    def sigma_sq(self, x: np.ndarray) -> np.ndarray:
        """Sigma(x) = sigma(x) sigma(x)^T, batched over leading axes."""
        s = np.asarray(self.diffusion(x), dtype=float)
        return np.einsum("...ik,...jk->...ij", s, s)


@dataclass(frozen=True)
class RowMeta:
    """How one transition row was obtained."""

    mode: str  # "exact" | "approx" | "terminal"
    residual: float
    step: int  # time step at which the state is first occupied


@dataclass(frozen=True, eq=False)
class ChainModel:
    """A sparse lattice-supported Markov chain.

    states[i] is the integer coordinate of state i, or None for the sentinel
    start of an off-lattice x0 (whose real position is start_point).  rows[i]
    lists (state id, probability) pairs sorted by id, empty for terminal
    states (first occupied at the final step, never left).
    """

    lattice: LatticeSpec
    n: int
    states: tuple[LatticeCoord | None, ...]
    rows: tuple[tuple[tuple[int, float], ...], ...]
    row_meta: tuple[RowMeta, ...]
    start_id: int
    start_point: np.ndarray
    horizon: float = 1.0

    def __post_init__(self) -> None:
        N = len(self.states)
        if not (len(self.rows) == len(self.row_meta) == N):
            raise ValueError("states, rows and row_meta must have equal length")
        if not (0 <= self.start_id < N):
            raise ValueError(f"start_id {self.start_id} out of range")
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        d = self.lattice.dim
        cap = d + d * (d + 1) // 2 + 1
        for sid, (row, meta) in enumerate(zip(self.rows, self.row_meta)):
            if meta.mode == "terminal":
                if row:
                    raise ValueError(f"terminal state {sid} has transitions")
                continue
            if not row:
                raise ValueError(f"state {sid} has an empty transition row but mode {meta.mode!r}")
            if len(row) > cap:
                raise ValueError(f"row {sid} has {len(row)} entries, cap is {cap}")
            total = 0.0
            prev = -1
            for dst, p in row:
                if not (0 <= dst < N):
                    raise ValueError(f"row {sid} references undefined state {dst}")
                if dst <= prev:
                    raise ValueError(f"row {sid} entries must be sorted by destination id")
                if p < 0.0:
                    raise ValueError(f"row {sid} has negative probability {p!r}")
                prev = dst
                total += p
            if abs(total - 1.0) > ROW_SUM_TOL:
                raise ValueError(f"row {sid} sums to {total!r}")
        object.__setattr__(self, "start_point", np.asarray(self.start_point, dtype=float).reshape(d))

    @property
    def num_states(self) -> int:
        return len(self.states)

    @cached_property
    def points(self) -> np.ndarray:
        """Real-space position of every state, (num_states, d)."""
        d = self.lattice.dim
        out = np.empty((len(self.states), d))
        for i, st in enumerate(self.states):
            out[i] = self.start_point if st is None else coord_to_point(st, self.lattice)
        return out

    @cached_property
    def flat_transitions(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(src ids, dst ids, probabilities) over all rows, row-major order."""
        src: list[int] = []
        dst: list[int] = []
        prob: list[float] = []
        for sid, row in enumerate(self.rows):
            for d_, p_ in row:
                src.append(sid)
                dst.append(d_)
                prob.append(p_)
        return (
            np.asarray(src, dtype=np.int64),
            np.asarray(dst, dtype=np.int64),
            np.asarray(prob, dtype=float),
        )

    @cached_property
    def terminal_mask(self) -> np.ndarray:
        return np.array([m.mode == "terminal" for m in self.row_meta], dtype=bool)

    def mode_counts(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for m in self.row_meta:
            counts[m.mode] = counts.get(m.mode, 0) + 1
        return counts


@dataclass(frozen=True)
class BuildOptions:
    """Build-time knobs; defaults suit the elliptic cases."""

    beta: float = 0.5
    max_states: int = 2_000_000
    fallback: FallbackConfig = field(default_factory=FallbackConfig)
    mode: str = "auto"

    def __post_init__(self) -> None:
        if not (self.beta > 0.0):
            raise ConfigurationError(f"beta must be positive, got {self.beta!r}")
        if self.max_states < 1:
            raise ConfigurationError(f"max_states must be >= 1, got {self.max_states}")
        mode = self.mode.replace("-", "_")
        if mode not in ("auto", "exact_only", "fallback_only"):
            raise ConfigurationError(f"mode must be auto, exact_only or fallback_only, got {self.mode!r}")
        object.__setattr__(self, "mode", mode)


def select_lattice(model: SDEModel, n: int, opts: BuildOptions | None = None) -> LatticeSpec:
    """Pitch (and frame) for an n-step chain.

    Elliptic d=1: gamma = 2 sigma_min sqrt(dt).  Non-elliptic d=1 (declared
    sigma_min = 0): gamma = dt^((1+beta)/2), trading state count for the
    second-moment gap.  Elliptic d=2: gamma = sqrt(epsilon dt / 3).  Fixed
    frame: gamma = sqrt(dt) on the rotated lattice.
    """
    if opts is None:
        opts = BuildOptions()
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    dt = model.horizon / n
    d = model.dim
    frame = None
    if d == 1:
        if model.sigma_min is None:
            raise ConfigurationError("1-D pitch selection needs the sigma_min trait (0 if non-elliptic)")
        if model.sigma_min > 0.0:
            gamma = 2.0 * model.sigma_min * math.sqrt(dt)
        else:
            gamma = dt ** ((1.0 + opts.beta) / 2.0)
    elif model.fixed_frame is not None:
        gamma = math.sqrt(dt)
        frame = model.fixed_frame
    elif d == 2:
        if model.epsilon is None or model.epsilon <= 0.0:
            raise ConfigurationError("2-D pitch selection needs a positive epsilon trait (or a fixed frame)")
        gamma = math.sqrt(model.epsilon * dt / 3.0)
    else:
        raise ConfigurationError(f"d = {d} models need a fixed diffusion frame")
    if not (gamma > 0.0 and math.isfinite(gamma)) or n * gamma * gamma > 1e6:
        raise ConfigurationError(f"degenerate pitch {gamma!r} for n = {n}")
    return LatticeSpec(gamma, d, frame_Q=frame)


def _lam_min_2x2(B: np.ndarray) -> float:
    t = 0.5 * (B[0, 0] + B[1, 1])
    disc = math.sqrt(max(0.0, 0.25 * (B[0, 0] - B[1, 1]) ** 2 + B[0, 1] * B[1, 0]))
    return t - disc


def _second_moment_gap(meas: DiscreteMeasure, mean: float, b: float) -> float:
    m2 = float(meas.weights @ (meas.scalars() ** 2))
    return abs(m2 - (mean * mean + b * b))


def _solve_row(
    model: SDEModel,
    lat: LatticeSpec,
    dt: float,
    x: np.ndarray,
    base_coord: LatticeCoord | None,
    opts: BuildOptions,
    coeffs: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[list[tuple[int, ...]], np.ndarray, str, float]:
    """One transition law: absolute successor coordinates, probabilities, meta.

    base_coord is the solved state's integer coordinate; None means the
    sentinel start, whose row is matched in absolute position (mean x + a)
    rather than as an increment law around a lattice point.  coeffs, when
    given, carries this state's already-scaled (drift dt, Sigma dt) from a
    whole-frontier evaluation.
    """
    d = model.dim
    if coeffs is None:
        a = np.asarray(model.drift(x), dtype=float).reshape(d) * dt
        B = np.asarray(model.sigma_sq(x), dtype=float).reshape(d, d) * dt
    else:
        a, B = coeffs
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(B))):
        raise BuildError(f"non-finite coefficients at state {x.tolist()}")
    absolute = base_coord is None
    mean = x + a if absolute else a

    def _shift(coords: np.ndarray) -> list[tuple[int, ...]]:
        if absolute:
            return [tuple(int(v) for v in row) for row in coords]
        return [tuple(int(v) + bz for v, bz in zip(row, base_coord.z)) for row in coords]

    if d == 1:
        if opts.mode != "fallback_only":
            b = math.sqrt(max(0.0, float(B[0, 0])))
            meas, mode = match_moments_1d(float(mean[0]), b, lat.gamma)
            meas = meas.trimmed()
            coords = np.rint(meas.points / lat.gamma).astype(int)
            residual = 0.0 if mode == "exact" else _second_moment_gap(meas, float(mean[0]), b)
            return _shift(coords), meas.weights, mode, residual
    elif model.fixed_frame is not None and not absolute:
        scale = max(lat.gamma, float(np.max(np.abs(B))))
        if float(np.max(np.abs(a))) > 1e-12 * scale:
            raise BuildError(f"fixed-frame construction requires zero drift, got {a.tolist()} at {x.tolist()}")
        Q = model.fixed_frame
        L = Q.T @ B @ Q
        off = L - np.diag(np.diag(L))
        if float(np.max(np.abs(off))) > 1e-8 * max(1e-300, float(np.trace(np.abs(L)))):
            raise BuildError(f"diffusion at {x.tolist()} does not diagonalize in the declared frame")
        lam = np.clip(np.diag(L), 0.0, None)
        meas = eigen_axis_measure(lam, Q, lat.gamma).trimmed()
        coords = np.rint((meas.points @ Q) / lat.gamma).astype(int)
        return _shift(coords), meas.weights, "exact", 0.0
    elif d == 2 and lat.is_identity_frame:
        eligible = _lam_min_2x2(B) >= 3.0 * lat.gamma * lat.gamma * (1.0 - _EXACT_GATE_SLACK)
        if opts.mode != "fallback_only" and eligible:
            try:
                meas = match_moments_2d(mean, B, lat.gamma)
                coords = np.rint(meas.points / lat.gamma).astype(int)
                return _shift(coords), meas.weights, "exact", 0.0
            except (ValueError, RuntimeError):
                if opts.mode == "exact_only":
                    raise
        if opts.mode == "exact_only":
            raise BuildError(
                f"exact 2-D matching infeasible at state {x.tolist()} "
                f"(lambda_min(Sigma dt) = {_lam_min_2x2(B):.3e} < 3 gamma^2 = {3 * lat.gamma ** 2:.3e})"
            )
    elif opts.mode == "exact_only":
        raise BuildError(f"no exact construction applies at state {x.tolist()} in d = {d}")

    meas, residual = approx_match_qp(MomentTarget(mean, B), lat, opts.fallback)
    meas = meas.trimmed()
    rel = (meas.points - lat.offset) @ lat.frame_Q / lat.gamma
    coords = np.rint(rel).astype(int)
    mode = "approx" if residual * residual > opts.fallback.residual_tolerance else "exact"
    return _shift(coords), meas.weights, mode, residual


def build_chain(
    model: SDEModel,
    n: int,
    x0: Sequence[float] | np.ndarray,
    opts: BuildOptions | None = None,
    *,
    lattice: LatticeSpec | None = None,
) -> ChainModel:
    """Grow the n-step chain started at x0.

    The lattice keyword overrides pitch selection (used by tests and worked
    examples that pin gamma); its dimension must match the model.
    """
    if opts is None:
        opts = BuildOptions()
    if n < 1:
        raise ConfigurationError(f"n must be >= 1, got {n}")
    d = model.dim
    x0 = np.asarray(x0, dtype=float).reshape(d)
    lat = lattice if lattice is not None else select_lattice(model, n, opts)
    if lat.dim != d:
        raise ConfigurationError(f"lattice dim {lat.dim} != model dim {d}")
    dt = model.horizon / n

    try:
        z0: LatticeCoord | None = point_to_coord(x0, lat)
    except ValueError:
        z0 = None
    if z0 is None and not lat.is_identity_frame:
        raise BuildError("off-lattice starts need an axis-aligned lattice (rotated frames host only lattice starts)")

    states: list[LatticeCoord | None] = [z0]
    index: dict[tuple[int, ...], int] = {} if z0 is None else {z0.z: 0}
    rows: list[tuple[tuple[int, float], ...]] = [()]
    metas: list[RowMeta | None] = [None]
    steps = [0]
    frontier = [0]

    for step in range(1, n + 1):
        next_frontier: list[int] = []
        Z = np.array([states[sid].z if states[sid] is not None else (0,) * d for sid in frontier], dtype=float)
        X = lat.offset + lat.gamma * (Z @ lat.frame_Q.T)
        for i, sid in enumerate(frontier):
            if states[sid] is None:
                X[i] = x0
        A_dt = np.asarray(model.drift(X), dtype=float).reshape(len(frontier), d) * dt
        B_dt = np.asarray(model.sigma_sq(X), dtype=float).reshape(len(frontier), d, d) * dt
        for i, sid in enumerate(frontier):
            coords, probs, mode, residual = _solve_row(
                model, lat, dt, X[i], states[sid], opts, coeffs=(A_dt[i], B_dt[i])
            )
            acc: dict[int, float] = {}
            for z, p in zip(coords, probs):
                dst = index.get(z)
                if dst is None:
                    dst = len(states)
                    index[z] = dst
                    states.append(LatticeCoord(z))
                    rows.append(())
                    metas.append(None)
                    steps.append(step)
                    next_frontier.append(dst)
                acc[dst] = acc.get(dst, 0.0) + float(p)
            rows[sid] = tuple(sorted(acc.items()))
            metas[sid] = RowMeta(mode, residual, steps[sid])
            if len(states) > opts.max_states:
                raise BuildError(
                    f"state budget exhausted: > {opts.max_states} states by step {step}",
                    states_so_far=len(states),
                    step=step,
                )
        frontier = next_frontier

    for sid in frontier:
        metas[sid] = RowMeta("terminal", 0.0, steps[sid])

    return ChainModel(
        lattice=lat,
        n=n,
        states=tuple(states),
        rows=tuple(rows),
        row_meta=tuple(m if m is not None else RowMeta("terminal", 0.0, steps[i]) for i, m in enumerate(metas)),
        start_id=0,
        start_point=x0,
        horizon=model.horizon,
    )


@dataclass(frozen=True, eq=False)
class ConsistencyReport:
    """Per-state one-step moment residuals against a model.

    raw_* compare the row's increment moments with (drift dt, drift dt ^2 +
    Sigma dt); scaled_* divide by dt, i.e. compare per-unit-time rates.  First
    moments use the Euclidean norm, second moments the Frobenius norm.
    """

    state_ids: np.ndarray
    modes: tuple[str, ...]
    raw_first: np.ndarray
    raw_second: np.ndarray
    scaled_first: np.ndarray
    scaled_second: np.ndarray
    stored_residuals: np.ndarray
    max_scaled_first: float
    max_scaled_second: float

    def max_over(self, mode: str) -> tuple[float, float]:
        """(max scaled first, max scaled second) over rows of one mode."""
        sel = np.array([m == mode for m in self.modes], dtype=bool)
        if not np.any(sel):
            return 0.0, 0.0
        return float(np.max(self.scaled_first[sel])), float(np.max(self.scaled_second[sel]))


def local_consistency_report(
    chain: ChainModel,
    model: SDEModel,
    *,
    state_map: Callable[[np.ndarray], np.ndarray] | None = None,
) -> ConsistencyReport:
    """Check every non-terminal row's increment moments against the model.

    state_map, when given, carries states into the model's coordinates first
    (checking an image model against a chain built in transformed coordinates);
    it must be vectorized over (num_states, d) arrays.
    """
    pts = chain.points
    if state_map is not None:
        pts = np.asarray(state_map(pts), dtype=float).reshape(pts.shape[0], -1)
    d = pts.shape[1]
    dt = chain.horizon / chain.n
    src, dst, p = chain.flat_transitions
    N = chain.num_states
    live = ~chain.terminal_mask
    ids = np.flatnonzero(live)

    diffs = pts[dst] - pts[src]  # (nnz, d)
    dmean = np.stack([np.bincount(src, weights=p * diffs[:, k], minlength=N) for k in range(d)], axis=1)
    a_t = np.asarray(model.drift(pts), dtype=float).reshape(N, d) * dt
    S_t = np.asarray(model.sigma_sq(pts), dtype=float).reshape(N, d, d) * dt
    target2 = S_t + np.einsum("ni,nj->nij", a_t, a_t)

    first_sq = np.sum((dmean[ids] - a_t[ids]) ** 2, axis=1)
    second_sq = np.zeros(N)
    for i in range(d):
        for j in range(d):
            m2 = np.bincount(src, weights=p * diffs[:, i] * diffs[:, j], minlength=N)
            second_sq += (m2 - target2[:, i, j]) ** 2
    raw_first = np.sqrt(first_sq)
    raw_second = np.sqrt(second_sq[ids])
    scaled_first = raw_first / dt
    scaled_second = raw_second / dt
    return ConsistencyReport(
        state_ids=ids,
        modes=tuple(chain.row_meta[i].mode for i in ids),
        raw_first=raw_first,
        raw_second=raw_second,
        scaled_first=scaled_first,
        scaled_second=scaled_second,
        stored_residuals=np.array([chain.row_meta[i].residual for i in ids]),
        max_scaled_first=float(np.max(scaled_first)) if ids.size else 0.0,
        max_scaled_second=float(np.max(scaled_second)) if ids.size else 0.0,
    )


def transformed_model(
    base: SDEModel,
    f: Callable[[np.ndarray], np.ndarray],
    f_prime: Callable[[np.ndarray], np.ndarray],
    f_second: Callable[[np.ndarray], np.ndarray],
    inverse: Callable[[np.ndarray], np.ndarray],
    *,
    label: str | None = None,
) -> SDEModel:
    """The image model of Y = f(X) for scalar X, by the chain rule:

        dY = [mu f'(X) + Sigma/2 f''(X)] dt + sigma f'(X) dW,  X = inverse(Y).

    f must be strictly monotone; this is probed on a symmetric grid (so a sign
    change far outside [-50, 50] would go unnoticed).  The returned model
    carries f as its state_map: build the (recombining) X chain, then evaluate
    Y-functionals through the map, rather than discretizing Y directly.
    """
    if base.dim != 1:
        raise ConfigurationError("state-space transformation applies to scalar models only")
    grid = np.linspace(-50.0, 50.0, 2001).reshape(-1, 1)
    fp = np.asarray(f_prime(grid), dtype=float).reshape(-1)
    if not np.all(np.isfinite(fp)) or not (np.all(fp > 0.0) or np.all(fp < 0.0)):
        raise ValueError("f must be strictly monotone (f' keeps one sign on the probe grid)")

    def drift_y(y: np.ndarray) -> np.ndarray:
        x = np.asarray(inverse(y), dtype=float)
        mu = np.asarray(base.drift(x), dtype=float)
        S = np.asarray(base.sigma_sq(x), dtype=float)[..., 0, 0]
        return mu * np.asarray(f_prime(x), dtype=float) + 0.5 * S[..., None] * np.asarray(f_second(x), dtype=float)

    def diffusion_y(y: np.ndarray) -> np.ndarray:
        x = np.asarray(inverse(y), dtype=float)
        return np.asarray(base.diffusion(x), dtype=float) * np.asarray(f_prime(x), dtype=float)[..., None]

    return SDEModel(
        dim=1,
        drift=drift_y,
        diffusion=diffusion_y,
        brownian_dim=base.brownian_dim,
        growth=base.growth,
        horizon=base.horizon,
        state_map=f,
        label=label if label is not None else f"{base.label}-image",
    )
