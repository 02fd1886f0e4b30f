"""Lattice geometry and discrete measures.

Everything downstream works on scaled integer lattices gamma * Q * Z^d:
states are integer coordinate tuples, geometry lives in a LatticeSpec,
and local transition laws are DiscreteMeasure objects whose atoms sit on
lattice points.  Keeping coordinates integral is what makes state keys
exact; floats only appear when a coordinate is mapped back to R^d.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple

import numpy as np

__all__ = [
    "LatticeCoord",
    "LatticeSpec",
    "DiscreteMeasure",
    "MomentTarget",
    "lattice_round",
    "floor_index",
    "ceil_index",
    "coord_to_point",
    "point_to_coord",
    "measure_moments",
]

# Below this (pre-clamp) weight, a negative entry is treated as solver noise
# and clamped to zero; anything more negative is rejected as a genuine bug.
WEIGHT_NOISE = 1e-12
WEIGHT_SUM_TOL = 1e-12


class LatticeCoord(NamedTuple):
    """Integer coordinates of a lattice point (the z in gamma * Q * z)."""

    z: tuple[int, ...]

    @property
    def dim(self) -> int:
        return len(self.z)

    def __add__(self, other: "LatticeCoord") -> "LatticeCoord":  # type: ignore[override]
        return LatticeCoord(tuple(a + b for a, b in zip(self.z, other.z)))


def floor_index(x: float, gamma: float) -> int:
    """Largest integer k with k * gamma <= x.

    float division can land on the wrong side of an exact multiple, so the
    candidate from math.floor is nudged until k*gamma <= x < (k+1)*gamma
    holds with the actual float products.
    """
    if not math.isfinite(x):
        raise ValueError(f"cannot round non-finite value {x!r}")
    if not (gamma > 0.0) or not math.isfinite(gamma):
        raise ValueError(f"lattice pitch must be positive and finite, got {gamma!r}")
    k = math.floor(x / gamma)
    while k * gamma > x:
        k -= 1
    while (k + 1) * gamma <= x:
        k += 1
    return k


def ceil_index(x: float, gamma: float) -> int:
    """Smallest integer k with k * gamma > x (strict: exact multiples move up)."""
    return floor_index(x, gamma) + 1


def lattice_round(x: float, gamma: float, mode: str) -> float:
    """Round x onto gamma * Z.

    mode "floor" gives max{gamma*z <= x}; mode "ceil" gives min{gamma*z > x},
    which is strict — lattice_round(1.0, 1.0, "ceil") == 2.0.
    """
    if mode == "floor":
        return floor_index(x, gamma) * gamma
    if mode == "ceil":
        return ceil_index(x, gamma) * gamma
    raise ValueError(f"mode must be 'floor' or 'ceil', got {mode!r}")


@dataclass(frozen=True)
class LatticeSpec:
    """A scaled, rotated integer lattice offset + gamma * Q * Z^d."""

    gamma: float
    dim: int
    frame_Q: np.ndarray = field(default=None)  # type: ignore[assignment]
    offset: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if not (self.gamma > 0.0) or not math.isfinite(self.gamma):
            raise ValueError(f"gamma must be positive and finite, got {self.gamma!r}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        Q = self.frame_Q
        if Q is None:
            Q = np.eye(self.dim)
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (self.dim, self.dim):
            raise ValueError(f"frame_Q must be {self.dim}x{self.dim}, got {Q.shape}")
        if np.max(np.abs(Q.T @ Q - np.eye(self.dim))) > 1e-10:
            raise ValueError("frame_Q is not orthogonal (||Q^T Q - I||_inf > 1e-10)")
        off = self.offset
        if off is None:
            off = np.zeros(self.dim)
        off = np.asarray(off, dtype=float).reshape(self.dim)
        if not np.all(np.isfinite(off)):
            raise ValueError("offset must be finite")
        object.__setattr__(self, "frame_Q", Q)
        object.__setattr__(self, "offset", off)

    @property
    def is_identity_frame(self) -> bool:
        return bool(np.all(self.frame_Q == np.eye(self.dim)))


def coord_to_point(coord: LatticeCoord | tuple[int, ...], lat: LatticeSpec) -> np.ndarray:
    """Real-space position of integer coordinates: offset + gamma * Q @ z."""
    z = coord.z if isinstance(coord, LatticeCoord) else tuple(coord)
    if len(z) != lat.dim:
        raise ValueError(f"coordinate has dim {len(z)}, lattice has dim {lat.dim}")
    return lat.offset + lat.gamma * (lat.frame_Q @ np.asarray(z, dtype=float))

def point_to_coord(point: np.ndarray, lat: LatticeSpec, tol: float = 1e-6) -> LatticeCoord:
    """Invert coord_to_point for points that lie on the lattice.

    tol is measured in lattice units; a point further than that from every
    lattice point is an error rather than a silent snap.
    """
    p = np.asarray(point, dtype=float).reshape(lat.dim)
    y = lat.frame_Q.T @ (p - lat.offset) / lat.gamma
    z = np.rint(y)
    if np.max(np.abs(y - z)) > tol:
        raise ValueError(f"point {p!r} is not on the lattice (offset {np.max(np.abs(y - z)):.3e} units)")
    return LatticeCoord(tuple(int(v) for v in z))


def _as_points(points, dim: int | None = None) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError(f"points must be (r,) or (r, d), got shape {pts.shape}")
    if dim is not None and pts.shape[1] != dim:
        raise ValueError(f"points have dim {pts.shape[1]}, expected {dim}")
    return pts


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure on R^d.

    points has shape (r, d) with pairwise-distinct rows; weights are
    nonnegative and sum to one.  Entries in [-1e-12, 0) are treated as
    numerical noise, clamped to zero, and the total is renormalized; more
    negative input is rejected.  Zero-weight atoms are allowed (solvers
    return them to keep the support aligned with their input).
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self) -> None:
        pts = _as_points(self.points) + 0.0  # -0.0 -> +0.0 so byte keys mean value equality
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(pts):
            raise ValueError(f"{len(pts)} points but {len(w)} weights")
        if len(w) == 0:
            raise ValueError("measure needs at least one atom")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if np.min(w) < -WEIGHT_NOISE:
            raise ValueError(f"weight {np.min(w):.3e} below the -1e-12 noise floor")
        w = np.where(w < 0.0, 0.0, w)
        total = float(np.sum(w))
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        if total != 1.0:
            w = w / total
        row_bytes = pts.tobytes()
        stride = pts.shape[1] * pts.itemsize
        if len({row_bytes[i : i + stride] for i in range(0, len(row_bytes), stride)}) != len(pts):
            raise ValueError("points must be pairwise distinct")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.weights))

    def atoms(self) -> Iterator[tuple[np.ndarray, float]]:
        for i in range(len(self.weights)):
            yield self.points[i], float(self.weights[i])

    def trimmed(self) -> "DiscreteMeasure":
        """Copy without zero-weight atoms."""
        keep = self.weights > 0.0
        if np.all(keep):
            return self
        return DiscreteMeasure(self.points[keep], self.weights[keep])

    def scalars(self) -> np.ndarray:
        """Points as a flat array; only meaningful for dim == 1."""
        if self.dim != 1:
            raise ValueError("scalars() requires a one-dimensional measure")
        return self.points[:, 0]


def merge_atoms(points: np.ndarray, weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sum weights of exactly-equal points, keeping first-occurrence order."""
    pts = _as_points(points) + 0.0  # collapse -0.0 onto +0.0 so byte keys agree
    seen: dict[bytes, int] = {}
    out_pts: list[np.ndarray] = []
    out_w: list[float] = []
    for row, wv in zip(pts, np.asarray(weights, dtype=float).reshape(-1)):
        key = row.tobytes()
        if key in seen:
            out_w[seen[key]] += float(wv)
        else:
            seen[key] = len(out_pts)
            out_pts.append(row)
            out_w.append(float(wv))
    return np.array(out_pts), np.array(out_w)


def measure_moments(m: DiscreteMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Mean vector and raw second-moment matrix (sum of w * l * l^T)."""
    mean = m.weights @ m.points
    second = (m.points * m.weights[:, None]).T @ m.points
    return mean, second


@dataclass(frozen=True)
class MomentTarget:
    """A mean vector a and covariance B (so the raw second moment is a a^T + B)."""

    a: np.ndarray
    B: np.ndarray

    def __post_init__(self) -> None:
        a = np.asarray(self.a, dtype=float).reshape(-1)
        B = np.asarray(self.B, dtype=float)
        d = len(a)
        if B.shape != (d, d):
            raise ValueError(f"B must be {d}x{d}, got {B.shape}")
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(B)):
            raise ValueError("moment target must be finite")
        scale = max(1.0, float(np.max(np.abs(B))))
        if np.max(np.abs(B - B.T)) > 1e-10 * scale:
            raise ValueError("B is not symmetric within 1e-10")
        B = (B + B.T) / 2.0
        evals = np.linalg.eigvalsh(B)
        if evals[0] < -1e-10 * scale:
            raise ValueError(f"B has eigenvalue {evals[0]:.3e}; not PSD within tolerance")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "B", B)

    @property
    def dim(self) -> int:
        return len(self.a)

    def second_moment(self) -> np.ndarray:
        return np.outer(self.a, self.a) + self.B
