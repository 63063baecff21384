"""G-expectations of functions of B_t via the G-heat equation.

The value ``E[phi(x + B_t)]`` is ``u(t, x)`` where ``u`` solves

    du/dt = G(d2u/dx2),  u(0, .) = phi,  G(a) = (sigma_high^2 a^+ - sigma_low^2 a^-) / 2.

We use an explicit monotone finite-difference scheme on ``[-L, L]`` with linear
extrapolation at both ends. The G-operator acts pointwise on the discrete second
difference, so the update is a convex combination of neighbouring values as long
as ``dt <= dx^2 / sigma_high^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import TestFunction, VolatilityInterval
from .errors import DomainError, GrowthError, ShapeError, StabilityError

__all__ = [
    "g_function",
    "PdeSolverParams",
    "GHeatSolution",
    "SandwichPair",
    "TailCheck",
    "tol_pde",
    "solve_g_heat",
    "g_expectation",
    "conjugate_expectation",
    "upper_distribution_bounds",
    "abs_tail_bounds",
    "check_shift_inequality",
    "shift_inequality_margins",
    "check_tail_monotonicity",
]

DEFAULT_POINTS = 2001
DEFAULT_HALFWIDTH_SIGMAS = 8.0
MIN_HALFWIDTH_SIGMAS = 6.0
DEFAULT_CFL = 0.45


def g_function(alpha, interval: VolatilityInterval):
    """G(alpha) = (sigma_high^2 alpha^+ - sigma_low^2 alpha^-) / 2; scalar or array."""
    a = np.asarray(alpha, dtype=float)
    out = 0.5 * (interval.var_high * np.maximum(a, 0.0) + interval.var_low * np.minimum(a, 0.0))
    return float(out) if out.ndim == 0 else out


def tol_pde(value: float) -> float:
    """Default absolute tolerance attached to a solver output."""
    return max(1e-3 * abs(value), 1e-4)


@dataclass(frozen=True)
class PdeSolverParams:
    """Discretisation knobs. ``None`` fields are filled from ``t`` and the interval.

    halfwidth: spatial half-width L (default 8 sigma_high sqrt(t), must be >= 6 sigma_high sqrt(t))
    points:    number of spatial nodes M (odd puts x = 0 on a node)
    steps:     number of time steps N (default from the CFL factor)
    cfl:       dt = cfl * dx^2 / sigma_high^2 when ``steps`` is not given
    """

    halfwidth: float | None = None
    points: int = DEFAULT_POINTS
    steps: int | None = None
    cfl: float = DEFAULT_CFL

    def resolve(self, t: float, interval: VolatilityInterval):
        scale = interval.sigma_high * math.sqrt(t)
        L = self.halfwidth if self.halfwidth is not None else DEFAULT_HALFWIDTH_SIGMAS * scale
        if L < MIN_HALFWIDTH_SIGMAS * scale * (1 - 1e-12):
            raise DomainError(
                f"truncated domain half-width {L:g} is below 6*sigma_high*sqrt(t) = {MIN_HALFWIDTH_SIGMAS * scale:g}"
            )
        if self.points < 5:
            raise DomainError("need at least 5 spatial points")
        dx = 2.0 * L / (self.points - 1)
        limit = dx * dx / interval.var_high
        if self.steps is None:
            if not 0 < self.cfl <= 1:
                raise StabilityError(f"cfl factor must lie in (0, 1], got {self.cfl}")
            steps = max(1, math.ceil(t / (self.cfl * limit)))
        else:
            steps = int(self.steps)
            if steps < 1:
                raise DomainError("need at least one time step")
        dt = t / steps
        if dt > limit * (1 + 1e-12):
            raise StabilityError(
                f"dt={dt:.3g} exceeds the monotonicity bound dx^2/sigma_high^2={limit:.3g}; "
                "increase steps or reduce points"
            )
        return L, int(self.points), steps, dx, dt


@dataclass(frozen=True, eq=False)
class GHeatSolution:
    """Solution of the G-heat equation at time ``t`` on the grid ``x``.

    When snapshots were requested, ``convex[j]`` flags the nodes where the discrete
    second difference of ``u(snapshot_taus[j], .)`` is positive.
    """

    t: float
    x: np.ndarray
    u: np.ndarray
    steps: int
    snapshot_taus: np.ndarray | None = None
    convex: np.ndarray | None = None

    def at(self, x):
        return np.interp(x, self.x, self.u)

    def value(self) -> float:
        return float(self.at(0.0))


def _second_difference_sign(u):
    d2 = u[2:] - 2.0 * u[1:-1] + u[:-2]
    s = np.empty(u.shape, dtype=bool)
    s[1:-1] = d2 > 0
    s[0], s[-1] = s[1], s[-2]
    return s


def solve_g_heat(
    phi: TestFunction,
    t: float,
    interval: VolatilityInterval,
    params: PdeSolverParams | None = None,
    snapshot_taus=None,
) -> GHeatSolution:
    """March ``u(0,.) = phi`` forward to time ``t``."""
    if not t > 0:
        raise DomainError(f"t must be positive, got {t}")
    params = params or PdeSolverParams()
    L, M, N, dx, dt = params.resolve(t, interval)
    x = np.linspace(-L, L, M)
    with np.errstate(over="ignore", invalid="ignore"):
        u = np.array(phi(x), dtype=float)
    if not np.all(np.isfinite(u)):
        raise GrowthError(f"{phi.describe()} is not finite on [-{L:g}, {L:g}]")

    snap_steps = None
    convex = None
    if snapshot_taus is not None:
        taus = np.asarray(snapshot_taus, dtype=float)
        if np.any(taus < 0) or np.any(taus > t * (1 + 1e-12)):
            raise DomainError("snapshot times must lie in [0, t]")
        snap_steps = np.clip(np.rint(taus / dt).astype(np.int64), 0, N)
        convex = np.zeros((len(taus), M), dtype=bool)
        order = np.argsort(snap_steps, kind="stable")
        pending = 0

    hi = 0.5 * interval.var_high * dt / (dx * dx)
    lo = 0.5 * interval.var_low * dt / (dx * dx)
    inner = u[1:-1]
    for n in range(N + 1):
        if snap_steps is not None:
            while pending < len(order) and snap_steps[order[pending]] == n:
                convex[order[pending]] = _second_difference_sign(u)
                pending += 1
        if n == N:
            break
        d2 = u[2:] - 2.0 * inner + u[:-2]
        inner += np.where(d2 > 0.0, hi * d2, lo * d2)
        u[0] = 2.0 * u[1] - u[2]
        u[-1] = 2.0 * u[-2] - u[-3]

    if not np.all(np.isfinite(u)):
        raise GrowthError(f"solution of {phi.describe()} overflowed")
    u.setflags(write=False)
    return GHeatSolution(
        t=t,
        x=x,
        u=u,
        steps=N,
        snapshot_taus=None if snapshot_taus is None else np.asarray(snapshot_taus, dtype=float),
        convex=convex,
    )


def g_expectation(phi: TestFunction, t: float, interval: VolatilityInterval, params: PdeSolverParams | None = None) -> float:
    """E[phi(B_t)] under the G-expectation."""
    return solve_g_heat(phi, t, interval, params).value()


def conjugate_expectation(phi, t, interval, params=None) -> float:
    """The lower expectation -E[-phi(B_t)]."""
    return -g_expectation(-phi, t, interval, params)


@dataclass(frozen=True)
class SandwichPair:
    """Piecewise-linear f <= 1{x <= y} <= g with ramps of width ``delta``."""

    y: float
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise DomainError(f"sandwich width must be positive, got {self.delta}")

    @property
    def lower(self) -> TestFunction:
        return TestFunction.sandwich("leq", self.y, self.delta, "lower")

    @property
    def upper(self) -> TestFunction:
        return TestFunction.sandwich("leq", self.y, self.delta, "upper")


def upper_distribution_bounds(y, t, interval, delta, params=None) -> tuple[float, float]:
    """Bounds (E[f(B_t)], E[g(B_t)]) on the upper capacity V(B_t <= y)."""
    pair = SandwichPair(y, delta)
    return g_expectation(pair.lower, t, interval, params), g_expectation(pair.upper, t, interval, params)


def abs_tail_bounds(y, t, interval, delta, params=None) -> tuple[float, float]:
    """Bounds on V(|B_t| >= y) from the lower/upper ramps of 1{|x| >= y}."""
    lo = TestFunction.sandwich("abs_geq", y, delta, "lower")
    hi = TestFunction.sandwich("abs_geq", y, delta, "upper")
    return g_expectation(lo, t, interval, params), g_expectation(hi, t, interval, params)


def check_shift_inequality(phi: TestFunction, b: float, interval, t: float = 1.0, params=None, _base=None) -> float:
    """Margin lower_E[phi(xi - b)] - exp(-b^2 / (2 t sigma_low^2)) lower_E[phi(xi)], xi = B_t.

    Nonnegative (up to solver tolerance) for even, bounded, nonnegative ``phi``.
    """
    if not (phi.is_even and phi.is_bounded and phi.is_positive):
        raise ShapeError(f"{phi.describe()} must be even, bounded and nonnegative")
    base = _base if _base is not None else conjugate_expectation(phi, t, interval, params)
    if b == 0:
        return base - base
    p = _widened(params or PdeSolverParams(), interval, t, abs(b))
    shifted = conjugate_expectation(phi.shifted(b), t, interval, p)
    return shifted - math.exp(-b * b / (2.0 * t * interval.var_low)) * base


def _widened(params: PdeSolverParams, interval, t, margin):
    """Same spacing as ``params`` on a domain widened by ``margin`` on each side."""
    if params.halfwidth is not None or margin == 0:
        return params
    L0 = DEFAULT_HALFWIDTH_SIGMAS * interval.sigma_high * math.sqrt(t)
    dx = 2.0 * L0 / (params.points - 1)
    half = int(math.ceil((L0 + margin) / dx))
    return PdeSolverParams(halfwidth=half * dx, points=2 * half + 1, steps=params.steps, cfl=params.cfl)


def shift_inequality_margins(phi, bs, interval, t=1.0, params=None) -> dict[float, float]:
    base = conjugate_expectation(phi, t, interval, params)
    return {float(b): check_shift_inequality(phi, b, interval, t, params, _base=base) for b in bs}


@dataclass(frozen=True)
class TailCheck:
    """One row of the tail-monotonicity check at level ``y``.

    ``v_s`` and ``v_t`` are sandwich midpoints; ``holds`` uses the conservative
    comparison upper(s) <= lower(t) + tol.
    """

    y: float
    v_s: float
    v_t: float
    bounds_s: tuple[float, float]
    bounds_t: tuple[float, float]
    continuous: bool
    holds: bool

    def __iter__(self):
        return iter((self.y, self.v_s, self.v_t))


def check_tail_monotonicity(s, t, ys, interval, delta=0.01, params=None, tol=1e-4, gap_tol=0.02) -> list[TailCheck]:
    """Compare sandwich estimates of V(|B_s| >= y) and V(|B_t| >= y) for s <= t.

    A level is flagged ``continuous`` when both sandwich gaps are below ``gap_tol``.
    """
    if not 0 < s <= t:
        raise DomainError(f"need 0 < s <= t, got s={s}, t={t}")
    rows = []
    for y in ys:
        if not y > 0:
            raise DomainError(f"levels must be positive, got {y}")
        bs = abs_tail_bounds(y, s, interval, delta, params)
        bt = bs if s == t else abs_tail_bounds(y, t, interval, delta, params)
        vs, vt = 0.5 * (bs[0] + bs[1]), 0.5 * (bt[0] + bt[1])
        continuous = (bs[1] - bs[0]) <= gap_tol and (bt[1] - bt[0]) <= gap_tol
        holds = s == t or bs[1] <= bt[0] + tol
        rows.append(TailCheck(float(y), vs, vt, bs, bt, continuous, holds))
    return rows
