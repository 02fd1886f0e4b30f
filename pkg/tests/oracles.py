"""Independent reference computations the tests compare against.

Everything here deliberately avoids the package's own algorithms: hull
membership goes through scipy's LP solver, optimal stopping through brute
enumeration of stopping rules, and the American put through a dense-grid
backward induction with Gauss-Hermite quadrature in continuous space.
"""

from __future__ import annotations

import math
from itertools import product

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import linprog

from lattice_mc import ChainModel


def hull_contains(points: np.ndarray, target: np.ndarray, tol: float = 1e-9) -> bool:
    """Is target a convex combination of the rows of points?  (scipy LP)."""
    pts = np.asarray(points, dtype=float)
    t = np.asarray(target, dtype=float)
    m = pts.shape[0]
    A_eq = np.vstack([pts.T, np.ones(m)])
    b_eq = np.concatenate([t, [1.0]])
    res = linprog(np.zeros(m), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status == 0:
        return True
    if res.status == 2:  # reported infeasible: trust it beyond tol
        return False
    raise RuntimeError(f"LP solver failed: status {res.status}")


def norm_cdf(x: float) -> float:
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def norm_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def gauss_put_value(strike: float) -> float:
    """E[(K - Z)^+] for Z standard normal: K Phi(K) + phi(K)."""
    return strike * norm_cdf(strike) + norm_pdf(strike)


def dense_grid_american_put(
    strike: float,
    n_steps: int = 64,
    x_lo: float = -4.0,
    x_hi: float = 4.25,
    dx: float = 0.005,
    quad_nodes: int = 41,
) -> float:
    """American put value at 0 for driftless unit BM over [0, 1].

    Continuous-space backward induction on a dense grid: at each of n_steps
    times, the continuation value is a Gauss-Hermite expectation of the
    next value function (linear interpolation, clamped at the grid edges --
    beyond the high edge the value is ~0, beyond the low edge immediate
    stopping dominates, so clamping does not bias the comparison region).
    """
    grid = np.arange(x_lo, x_hi + dx / 2, dx)
    z, w = hermegauss(quad_nodes)  # integrates against e^{-z^2/2}
    w = w / math.sqrt(2.0 * math.pi)
    dt = 1.0 / n_steps
    shifted = grid[None, :] + math.sqrt(dt) * z[:, None]  # (quad, grid)
    payoff = np.maximum(strike - grid, 0.0)
    V = payoff.copy()
    for _ in range(n_steps):
        cont = w @ np.stack([np.interp(shifted[k], grid, V) for k in range(len(z))])
        V = np.maximum(payoff, cont)
    return float(np.interp(0.0, grid, V))


def enumerate_stopping_value(
    chain: ChainModel,
    k_vals: np.ndarray,
    g_vals: np.ndarray,
    cap: int = 1_000_000,
) -> float:
    """Minimal expected cost over ALL stopping rules, by brute force.

    Cost of a rule: E[ sum_{i < tau} k(X_i)/n + g(X_tau) ], tau capped at n,
    stopping forced on states without transitions.  Enumerates every
    assignment of stop/continue to the reachable (step, state) pairs and
    evaluates each by a forward pass -- exponential, so only for tiny chains.
    """
    n = chain.n
    rows = chain.rows
    parked = chain.terminal_mask
    reachable: list[set[int]] = [{chain.start_id}]
    for i in range(n):
        nxt: set[int] = set()
        for s in reachable[i]:
            if not parked[s]:
                nxt.update(j for j, _ in rows[s])
        reachable.append(nxt)

    decisions = [(i, s) for i in range(n) for s in sorted(reachable[i]) if not parked[s]]
    if 2 ** len(decisions) > cap:
        raise ValueError(f"{len(decisions)} decision pairs exceed the enumeration cap")

    best = math.inf
    for bits in product((True, False), repeat=len(decisions)):
        rule = dict(zip(decisions, bits))
        cost = 0.0
        dist = {chain.start_id: 1.0}
        for i in range(n + 1):
            nxt_dist: dict[int, float] = {}
            for s, wgt in dist.items():
                if i == n or parked[s] or rule[(i, s)]:
                    cost += wgt * g_vals[s]
                else:
                    cost += wgt * k_vals[s] / n
                    for j, p in rows[s]:
                        nxt_dist[j] = nxt_dist.get(j, 0.0) + wgt * p
            dist = nxt_dist
        best = min(best, cost)
    return best
