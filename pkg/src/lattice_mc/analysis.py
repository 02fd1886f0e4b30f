"""Chain evaluation: distributions, expectations, studies, optimal stopping.

Everything here is read-only over a built ChainModel.  Forward propagation is
exact sparse matrix-vector iteration (the only float error is the arithmetic
itself), the Euler-Maruyama estimator is the Monte Carlo reference the studies
compare against, and optimal stopping is finite-horizon backward induction in
the minimization form

    V_n = g,    V_i(x) = min( g(x), k(x)/n + sum_y P[x -> y] V_{i+1}(y) ),

so V_0(start) <= g(start) always holds and option-style payoffs enter negated.
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .builder import BuildOptions, ChainModel, SDEModel, build_chain

logger = logging.getLogger(__name__)

__all__ = [
    "Functional",
    "MCReference",
    "ConvergenceReport",
    "GrowthReport",
    "StoppingResult",
    "chain_distribution",
    "chain_expectation",
    "chain_expectations",
    "euler_mc_estimate",
    "euler_mc_estimates",
    "convergence_study",
    "state_growth_report",
    "optimal_stopping_value",
]

# Paths per Monte Carlo batch; one batch's state block stays well under a
# megabyte so the simulation loop lives in cache.
_MC_BATCH = 50_000

# Below this weight an atom of the propagated distribution is dropped.
_PROB_TRUNC = 1e-15

# Mass drift budget for forward propagation.
_MASS_TOL = 1e-9


@dataclass(frozen=True)
class Functional:
    """A labelled scalar observable of the state.

    fn maps a stacked (..., d) array of states to a (...) array of values --
    the same batched-broadcasting convention the SDE coefficient callables
    use, so one-liners look like ``Functional(lambda x: np.cos(x[..., 0]),
    "cos")``.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    label: str

    def __call__(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return np.asarray(self.fn(pts), dtype=float).reshape(pts.shape[:-1])


def chain_distribution(chain: ChainModel, step: int | None = None) -> np.ndarray:
    """Distribution over state ids after `step` transitions (default: all n).

    Exact sparse push-forward of the start distribution.  Atoms below 1e-15
    are truncated and the vector is renormalized every 100 steps; total mass
    is verified to stay within 1e-9 of one and a RuntimeError is raised if
    it ever drifts out (it should not -- rows sum to one by construction).
    """
    n = chain.n if step is None else int(step)
    if not (0 <= n <= chain.n):
        raise ValueError(f"step must lie in [0, {chain.n}], got {n}")
    N = chain.num_states
    p = np.zeros(N)
    p[chain.start_id] = 1.0
    if n == 0:
        return p
    src, dst, prob = chain.flat_transitions
    parked = chain.terminal_mask  # row-less states hold their mass
    for i in range(1, n + 1):
        p = np.bincount(dst, weights=p[src] * prob, minlength=N) + p * parked
        p[p < _PROB_TRUNC] = 0.0
        total = float(np.sum(p))
        if abs(total - 1.0) > _MASS_TOL:
            raise RuntimeError(f"propagated mass {total!r} drifted past tolerance at step {i}")
        if i % 100 == 0:
            p /= total
    return p


def chain_expectation(chain: ChainModel, f: Functional, step: int | None = None) -> float:
    """E[f(X_step)] under the chain, by exact forward propagation."""
    return chain_expectations(chain, [f], step)[0]


def chain_expectations(
    chain: ChainModel, fs: Sequence[Functional], step: int | None = None
) -> list[float]:
    """Several expectations off one propagation (the chain walk dominates)."""
    p = chain_distribution(chain, step)
    live = np.flatnonzero(p > 0.0)
    pts = chain.points[live]
    w = p[live]
    out: list[float] = []
    for f in fs:
        vals = f(pts)
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"functional {f.label!r} is not finite on occupied chain states")
        out.append(float(np.dot(w, vals)))
    return out


def euler_mc_estimate(
    model: SDEModel,
    f: Functional,
    x0: Sequence[float] | np.ndarray,
    t: float | None = None,
    steps: int = 1000,
    paths: int = 200_000,
    seed: int = 0,
) -> tuple[float, float]:
    """Euler-Maruyama Monte Carlo estimate of E[f(X_t)], with standard error.

    Deterministic for a fixed seed: paths are simulated in fixed-size batches,
    each on its own SeedSequence-spawned substream, and batch results merge in
    batch order regardless of the thread count (set LATTICE_MC_THREADS to use
    more than one; numpy releases the GIL on the large array ops).

    Divergent paths (non-finite state or functional value) are excluded from
    the estimate and logged; more than 1% of them raises RuntimeError.
    """
    return euler_mc_estimates(model, [f], x0, t, steps, paths, seed)[0]


def euler_mc_estimates(
    model: SDEModel,
    fs: Sequence[Functional],
    x0: Sequence[float] | np.ndarray,
    t: float | None = None,
    steps: int = 1000,
    paths: int = 200_000,
    seed: int = 0,
) -> list[tuple[float, float]]:
    """Several (estimate, stderr) pairs off one simulated path set.

    All functionals see the same terminal states, so estimates share their
    sampling noise -- the right setup for comparing relative errors.  A path
    is excluded outright if its state or any functional value is non-finite.
    """
    if steps < 1 or paths < 1:
        raise ValueError(f"steps and paths must be positive, got {steps}, {paths}")
    d = model.dim
    x0 = np.asarray(x0, dtype=float).reshape(d)
    horizon = model.horizon if t is None else float(t)
    if not (horizon > 0.0):
        raise ValueError(f"t must be positive, got {horizon!r}")
    dt = horizon / steps
    root_dt = math.sqrt(dt)
    h = np.asarray(model.diffusion(x0[np.newaxis]), dtype=float).shape[-1]

    def one_batch(child: np.random.SeedSequence, m: int) -> tuple[np.ndarray, int]:
        rng = np.random.default_rng(child)
        x = np.broadcast_to(x0, (m, d)).copy()
        with np.errstate(over="ignore", invalid="ignore"):  # divergent paths may overflow
            for _ in range(steps):
                mu = np.asarray(model.drift(x), dtype=float).reshape(m, d)
                sig = np.asarray(model.diffusion(x), dtype=float).reshape(m, d, h)
                xi = rng.standard_normal((m, h))
                x = x + mu * dt + root_dt * np.einsum("pdh,ph->pd", sig, xi)
            vals = np.stack([f(x) for f in fs])  # (num_functionals, m)
        good = np.all(np.isfinite(vals), axis=0) & np.all(np.isfinite(x), axis=1)
        return vals[:, good], m - int(np.count_nonzero(good))

    sizes = [_MC_BATCH] * (paths // _MC_BATCH)
    if paths % _MC_BATCH:
        sizes.append(paths % _MC_BATCH)
    children = np.random.SeedSequence(seed).spawn(len(sizes))
    workers = int(os.environ.get("LATTICE_MC_THREADS", "1"))
    if workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one_batch, children, sizes))
    else:
        results = [one_batch(c, m) for c, m in zip(children, sizes)]

    values = np.concatenate([r[0] for r in results], axis=1)
    bad = sum(r[1] for r in results)
    if bad > 0.01 * paths:
        raise RuntimeError(f"{bad} of {paths} paths diverged; the model is not simulable at this step size")
    if bad:
        logger.warning("excluded %d non-finite paths out of %d", bad, paths)
    count = values.shape[1]
    out: list[tuple[float, float]] = []
    for row in values:
        estimate = float(np.mean(row))
        stderr = float(np.std(row, ddof=1) / math.sqrt(count)) if count > 1 else 0.0
        out.append((estimate, stderr))
    return out


@dataclass(frozen=True)
class MCReference:
    """Monte Carlo reference configuration for convergence studies."""

    steps: int = 1000
    paths: int = 200_000
    seed: int = 0


@dataclass(frozen=True)
class ConvergenceReport:
    """Per-resolution weak errors against a reference, with a fitted rate.

    slope is the least-squares order of decay of log-error against log-n
    (positive means errors shrink like n**-slope); it is None whenever the
    study is inconclusive, and `reason` says why: a Monte Carlo reference
    whose standard error is too large to resolve the smallest chain error
    (the stderr <= min(error)/5 rule), or errors already at machine
    precision, where a fitted slope would be noise.
    """

    ns: tuple[int, ...]
    estimates: tuple[float, ...]
    errors: tuple[float, ...]
    slope: float | None
    inconclusive: bool
    reason: str | None
    reference_value: float
    reference_stderr: float | None  # None: closed form
    provenance: str

    def __post_init__(self) -> None:
        if any(b <= a for a, b in zip(self.ns, self.ns[1:])):
            raise ValueError(f"ns must be strictly increasing, got {self.ns}")
        if any(e < 0.0 for e in self.errors):
            raise ValueError("errors must be nonnegative")


def convergence_study(
    model: SDEModel,
    f: Functional,
    x0: Sequence[float] | np.ndarray,
    ns: Sequence[int],
    reference: float | MCReference,
    opts: BuildOptions | None = None,
) -> ConvergenceReport:
    """Build a chain per n and fit the weak-error decay |E f(X_n^n) - ref|.

    The reference is a closed-form value when one exists, else an MCReference
    describing the Euler estimate to simulate.  A Monte Carlo reference must
    be sharp enough to trust the fit -- its standard error may not exceed a
    fifth of the smallest chain error -- and errors at machine precision are
    likewise flagged instead of fitted.
    """
    ns = [int(n) for n in ns]
    if len(ns) < 3:
        raise ValueError(f"need at least 3 resolutions, got {len(ns)}")

    if isinstance(reference, MCReference):
        ref_value, ref_stderr = euler_mc_estimate(
            model, f, x0, steps=reference.steps, paths=reference.paths, seed=reference.seed
        )
        provenance = (
            f"euler_mc(steps={reference.steps}, paths={reference.paths}, seed={reference.seed})"
        )
    else:
        ref_value, ref_stderr = float(reference), None
        provenance = "closed_form"

    estimates = [chain_expectation(build_chain(model, n, x0, opts), f) for n in ns]
    errors = [abs(est - ref_value) for est in estimates]

    slope: float | None = None
    inconclusive = False
    reason: str | None = None
    floor = 1e-13 * max(1.0, abs(ref_value))
    if ref_stderr is not None and ref_stderr > min(errors) / 5.0:
        inconclusive = True
        reason = (
            f"reference stderr {ref_stderr:.3e} exceeds a fifth of the smallest "
            f"chain error {min(errors):.3e}; the fit would be noise"
        )
    elif min(errors) <= floor:
        inconclusive = True
        reason = "errors at machine precision; slope undefined"
    else:
        slope = -float(np.polyfit(np.log(ns), np.log(errors), 1)[0])
    return ConvergenceReport(
        ns=tuple(ns),
        estimates=tuple(estimates),
        errors=tuple(errors),
        slope=slope,
        inconclusive=inconclusive,
        reason=reason,
        reference_value=ref_value,
        reference_stderr=ref_stderr,
        provenance=provenance,
    )


@dataclass(frozen=True)
class GrowthReport:
    """State counts per step: newly discovered (frontier) and cumulative."""

    n: int
    frontier: tuple[int, ...]  # index i = states first occupied at step i
    cumulative: tuple[int, ...]
    exponent: float | None  # fitted log-log order of cumulative growth
    fit_range: tuple[int, int] | None


def state_growth_report(chain: ChainModel) -> GrowthReport:
    """Frontier/cumulative state counts and the fitted growth order.

    The exponent is a least-squares slope of log(cumulative) against log(i)
    over i in [ceil(n/4), n] -- the later steps, where the polynomial order
    has settled; None when that window has fewer than two points.
    """
    n = chain.n
    frontier = [0] * (n + 1)
    for meta in chain.row_meta:
        frontier[meta.step] += 1
    cumulative = list(np.cumsum(frontier))
    lo = max(1, math.ceil(n / 4))
    exponent: float | None = None
    fit_range: tuple[int, int] | None = None
    if n - lo + 1 >= 2:
        idx = np.arange(lo, n + 1, dtype=float)
        counts = np.array(cumulative[lo:], dtype=float)
        exponent = float(np.polyfit(np.log(idx), np.log(counts), 1)[0])
        fit_range = (lo, n)
    return GrowthReport(
        n=n,
        frontier=tuple(frontier),
        cumulative=tuple(int(c) for c in cumulative),
        exponent=exponent,
        fit_range=fit_range,
    )


@dataclass(frozen=True)
class StoppingResult:
    """Backward-induction output: optimal value and the stop/continue map."""

    value: float
    stop: np.ndarray  # (n+1, num_states) bool; stop[i, s]: stopping is optimal at step i in s
    state_values: np.ndarray  # V_0 over all states


def optimal_stopping_value(
    chain: ChainModel, running_cost: Functional, terminal: Functional
) -> StoppingResult:
    """Minimal expected cost over stopping times, by backward induction.

    Solves V_n = g and V_i = min(g, k/n + P V_{i+1}) pointwise, where k is
    the running cost (paid per step survived, scaled by 1/n) and g the
    stopping cost.  Terminal rows have no continuation, so stopping there is
    forced.  Maximization problems (e.g. option values) fit by negating both
    functionals and the returned value.
    """
    pts = chain.points
    g_vals = terminal(pts)
    k_vals = running_cost(pts)
    if not (np.all(np.isfinite(g_vals)) and np.all(np.isfinite(k_vals))):
        raise ValueError("running and terminal costs must be finite on all chain states")
    n = chain.n
    N = chain.num_states
    src, dst, prob = chain.flat_transitions
    parked = chain.terminal_mask

    stop = np.empty((n + 1, N), dtype=bool)
    stop[n] = True  # tau is capped at the horizon
    V = g_vals.copy()
    k_step = k_vals / n
    for i in range(n - 1, -1, -1):
        cont = k_step + np.bincount(src, weights=prob * V[dst], minlength=N)
        cont[parked] = np.inf
        stop[i] = g_vals <= cont
        V = np.where(stop[i], g_vals, cont)
    value = float(V[chain.start_id])
    if value > float(g_vals[chain.start_id]) + 1e-12:
        raise RuntimeError("backward induction produced a value above the immediate stop")
    return StoppingResult(value=value, stop=stop, state_values=V)
