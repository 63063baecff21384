"""Functional LIL geometry on C[0, 1]: rescaling, energy, distance to the
Strassen ball K_beta = {x : x(0) = 0, int |x'|^2 <= beta^2}, lattice nets and
cluster diagnostics.

Paths live on uniform grids over [0, 1] and are treated as piecewise linear, so
the energy of a path with m intervals is m * sum (x_i - x_{i-1})^2 and sup-norm
distances are taken over grid nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import SamplePath, loglog_scale
from .errors import ConvergenceError, CoverageError, DomainError, GridError, SizeError

__all__ = [
    "RescaledPath",
    "StrassenBall",
    "ClusterReport",
    "rescale",
    "rescale_many",
    "interpolate_nodes",
    "path_energy",
    "min_energy_in_tube",
    "dist_to_strassen_ball",
    "ball_net",
    "net_radius",
    "sup_distance",
    "cluster_report",
]


@dataclass(frozen=True, eq=False)
class RescaledPath:
    """Values of a path on the uniform grid i/m, i = 0..m, with x(0) = 0."""

    values: np.ndarray
    source: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or len(v) < 2:
            raise GridError("a rescaled path needs at least two grid values")
        if v[0] != 0.0:
            raise DomainError("rescaled paths start at 0")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return len(self.values) - 1

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.m + 1)

    def resample(self, points: int) -> "RescaledPath":
        """Values of the piecewise-linear path on ``points`` intervals (a multiple of m)."""
        if points % self.m:
            raise GridError(f"cannot resample {self.m} intervals onto {points}")
        return RescaledPath(np.interp(np.linspace(0, 1, points + 1), self.times, self.values), self.source)

    @classmethod
    def line(cls, slope: float, m: int) -> "RescaledPath":
        return cls(slope * np.linspace(0.0, 1.0, m + 1))


@dataclass(frozen=True)
class StrassenBall:
    beta: float
    m: int | None = None

    def __post_init__(self):
        if not self.beta >= 0:
            raise DomainError(f"beta must be nonnegative, got {self.beta}")

    def contains(self, x: RescaledPath, tol: float = 0.0) -> bool:
        return path_energy(x) <= self.beta**2 + tol

    def distance(self, x: RescaledPath, tol: float = 1e-4) -> float:
        return dist_to_strassen_ball(x, self.beta, tol)


def rescale(path: SamplePath, u: float, out_grid_points: int) -> RescaledPath:
    """zeta_u(t) = B(u t) / sqrt(2 u log log u) on ``out_grid_points`` intervals."""
    if not u > math.e:
        raise DomainError(f"rescaling needs u > e, got {u}")
    if path.horizon < u * (1 - 1e-12):
        raise CoverageError(f"path horizon {path.horizon:g} does not cover u = {u:g}")
    if out_grid_points < 1:
        raise GridError("need at least one output interval")
    t = np.linspace(0.0, 1.0, out_grid_points + 1)
    vals = path.at(u * t) / loglog_scale(u)
    vals[0] = 0.0
    return RescaledPath(vals, float(u))


def rescale_many(path: SamplePath, us, out_grid_points: int) -> list[RescaledPath]:
    return [rescale(path, u, out_grid_points) for u in us]


def interpolate_nodes(zeta: RescaledPath, m: int) -> RescaledPath:
    """Piecewise-linear interpolant of ``zeta`` through its values at i/m, on zeta's grid."""
    if m < 1 or zeta.m % m:
        raise GridError(f"m={m} must be a positive divisor of the grid size {zeta.m}")
    nodes = np.arange(0, zeta.m + 1, zeta.m // m)
    return RescaledPath(np.interp(zeta.times, zeta.times[nodes], zeta.values[nodes]), zeta.source)


def path_energy(x) -> float:
    v = x.values if isinstance(x, RescaledPath) else np.asarray(x, dtype=float)
    m = len(v) - 1
    return float(m * np.sum(np.diff(v) ** 2))


def sup_distance(a: RescaledPath, b: RescaledPath) -> float:
    if a.m != b.m:
        raise GridError(f"grids differ: {a.m} vs {b.m} intervals")
    return float(np.max(np.abs(a.values - b.values)))


# ---------------------------------------------------------------------------
# minimum energy inside a tube


def _taut_string(lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Taut string through the tube [lower_i, upper_i] with both ends pinned.

    The taut string minimises sum h(y_i - y_{i-1}) for every convex h, in
    particular the discrete energy. Greedy construction: from the current
    anchor, extend a straight segment while some slope still clears every node;
    when the window of admissible slopes closes, the string bends at the node
    that last bounded the window on the other side.
    """
    n = len(lower) - 1
    y = np.empty(n + 1)
    i0, y0 = 0, float(lower[0])
    y[0] = y0
    while i0 < n:
        d = np.arange(1, n - i0 + 1, dtype=float)
        hi = (upper[i0 + 1 :] - y0) / d
        lo = (lower[i0 + 1 :] - y0) / d
        chi = np.minimum.accumulate(hi)
        clo = np.maximum.accumulate(lo)
        closed = np.flatnonzero(clo > chi)
        if closed.size == 0:
            slope = (lower[n] - y0) / (n - i0)
            y[i0 + 1 :] = y0 + slope * d
            break
        b = closed[0]
        if lo[b] > chi[b - 1]:
            # a floor ahead rises above every admissible slope: bend at the ceiling
            k = b - 1 - int(np.argmin(hi[b - 1 :: -1]))
            slope, y_new = hi[k], upper[i0 + 1 + k]
        else:
            k = b - 1 - int(np.argmax(lo[b - 1 :: -1]))
            slope, y_new = lo[k], lower[i0 + 1 + k]
        y[i0 + 1 : i0 + 2 + k] = y0 + slope * d[: k + 1]
        i0, y0 = i0 + 1 + k, float(y_new)
        y[i0] = y0
    return y


def _projected_coordinate_descent(lower, upper, tol, max_sweeps=200000):
    """Projected Gauss-Seidel on the energy with y_0 = 0 pinned and a free right end."""
    y = np.clip(np.zeros_like(lower), lower, upper)
    m = len(y) - 1
    e_old = path_energy(y)
    for _ in range(max_sweeps):
        for i in range(1, m):
            y[i] = min(max(0.5 * (y[i - 1] + y[i + 1]), lower[i]), upper[i])
        y[m] = min(max(y[m - 1], lower[m]), upper[m])
        e = path_energy(y)
        if abs(e_old - e) < tol * tol / m:
            return y
        e_old = e
    raise ConvergenceError(f"coordinate descent did not settle after {max_sweeps} sweeps")


def min_energy_in_tube(x, eps: float, method: str = "taut", tol: float = 1e-4) -> tuple[float, np.ndarray]:
    """Minimum discrete energy over y with y_0 = 0 and |y_i - x_i| <= eps for i >= 1.

    Returns (energy, minimiser). ``method`` is "taut" (exact) or "pcd"
    (projected coordinate descent, for cross-checking).
    """
    v = x.values if isinstance(x, RescaledPath) else np.asarray(x, dtype=float)
    lower, upper = v - eps, v + eps
    lower[0] = upper[0] = 0.0
    if method == "pcd":
        y = _projected_coordinate_descent(lower, upper, tol)
    elif method == "taut":
        # mirror the tube so the free right end becomes a pinned symmetric one
        lo2 = np.concatenate([lower, lower[-2::-1]])
        up2 = np.concatenate([upper, upper[-2::-1]])
        y = _taut_string(lo2, up2)[: len(v)]
    else:
        raise DomainError(f"unknown method {method!r}")
    return path_energy(y), y


def dist_to_strassen_ball(x: RescaledPath, beta: float, tol: float = 1e-4, method: str = "taut") -> float:
    """Sup-norm distance from ``x`` to K_beta (over piecewise-linear paths on x's grid).

    Bisection on eps over [0, ||x||_inf]: eps is feasible iff the minimum energy
    inside the eps-tube around x is at most beta^2.
    """
    if not beta >= 0:
        raise DomainError(f"beta must be nonnegative, got {beta}")
    if not tol > 0:
        raise DomainError("tol must be positive")
    v = x.values if isinstance(x, RescaledPath) else np.asarray(x, dtype=float)
    sup = float(np.max(np.abs(v)))
    if beta == 0 or sup == 0:
        return sup
    target = beta * beta
    if path_energy(v) <= target:
        return 0.0
    lo, hi = 0.0, sup
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if min_energy_in_tube(v, mid, method, tol)[0] <= target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# nets


def _lattice_vectors(m: int, radius2: int, cap: int):
    out = []
    cur = [0] * m

    def rec(i, left):
        if i == m:
            out.append(tuple(cur))
            if len(out) > cap:
                raise SizeError(f"net exceeds the cap of {cap} paths")
            return
        j = math.isqrt(left)
        for v in range(-j, j + 1):
            cur[i] = v
            rec(i + 1, left - v * v)
        cur[i] = 0

    rec(0, radius2)
    return out


def ball_net(beta: float, m: int, levels: int = 1, cap: int = 200_000) -> list[RescaledPath]:
    """Piecewise-linear members of K_beta on m intervals with lattice increments.

    Increments are integer multiples of h = beta / (2**(levels-1) m), so the
    lines +-beta t are always included and each level's net contains the
    previous one.
    """
    if m < 1 or levels < 1:
        raise DomainError("need m >= 1 and levels >= 1")
    if not beta >= 0:
        raise DomainError(f"beta must be nonnegative, got {beta}")
    if beta == 0:
        return [RescaledPath(np.zeros(m + 1))]
    scale = 2 ** (levels - 1)
    h = beta / (scale * m)
    paths = []
    for inc in _lattice_vectors(m, scale * scale * m, cap):
        paths.append(RescaledPath(np.concatenate([[0.0], np.cumsum(np.asarray(inc, dtype=float) * h)])))
    return paths


def _random_ball_members(beta, resolution, n, rng):
    g = rng.standard_normal((n, resolution))
    paths = np.concatenate([np.zeros((n, 1)), np.cumsum(g, axis=1)], axis=1)
    energy = resolution * np.sum(g * g, axis=1)
    target = beta * beta * rng.random(n)
    return paths * np.sqrt(target / energy)[:, None]


def _nearest(samples: np.ndarray, targets: np.ndarray, chunk: int = 256) -> np.ndarray:
    """For each sample row, min over target rows of the sup-norm distance."""
    best = np.full(len(samples), np.inf)
    for s in range(0, len(targets), chunk):
        d = np.max(np.abs(samples[:, None, :] - targets[None, s : s + chunk, :]), axis=2)
        best = np.minimum(best, d.min(axis=1))
    return best


def net_radius(net: list[RescaledPath], beta: float, n_samples: int = 200, seed: int = 0, resolution: int | None = None) -> float:
    """Max over random members of K_beta of the sup-distance to the nearest net path."""
    m = net[0].m
    resolution = resolution or 8 * m
    rng = np.random.default_rng(seed)
    samples = _random_ball_members(beta, resolution, n_samples, rng)
    targets = np.stack([p.resample(resolution).values for p in net])
    return float(np.max(_nearest(samples, targets)))


# ---------------------------------------------------------------------------
# cluster diagnostics


@dataclass(frozen=True)
class ClusterReport:
    """Outer distances to K_{beta_out} and coverage of a K_{beta_in} net.

    ``coverage_running[j, k]`` is min over the first k+1 paths of the distance to
    net target j; ``coverage`` is its last column.
    """

    outer: float
    outer_index: int
    outer_by_k: np.ndarray
    coverage: np.ndarray
    coverage_index: np.ndarray
    coverage_running: np.ndarray
    beta_out: float
    beta_in: float
    n_targets: int


def cluster_report(
    zetas: list[RescaledPath],
    beta_out: float,
    beta_in: float,
    net_m: int = 4,
    net_levels: int = 1,
    tol: float = 1e-3,
) -> ClusterReport:
    if not zetas:
        raise DomainError("cluster_report needs at least one path")
    points = zetas[0].m
    outer_by_k = np.array([dist_to_strassen_ball(z, beta_out, tol) for z in zetas])
    net = ball_net(beta_in, net_m, net_levels)
    targets = np.stack([p.resample(points).values for p in net])
    Z = np.stack([z.values for z in zetas])
    dist = np.max(np.abs(targets[:, None, :] - Z[None, :, :]), axis=2)  # targets x k
    running = np.minimum.accumulate(dist, axis=1)
    k_out = int(np.argmax(outer_by_k))
    return ClusterReport(
        outer=float(outer_by_k[k_out]),
        outer_index=k_out,
        outer_by_k=outer_by_k,
        coverage=running[:, -1].copy(),
        coverage_index=np.argmin(dist, axis=1),
        coverage_running=running,
        beta_out=beta_out,
        beta_in=beta_in,
        n_targets=len(net),
    )
