"""Controlled-volatility simulation of G-Brownian motion.

Each adapted volatility process theta with values in [sigma_low, sigma_high]
induces one law of X_t = int_0^t theta dW. Upper/lower expectations and
capacities are sup/inf over those laws; with a finite policy family we can only
bound them (from below for sup, from above for inf).

Noise streams: path ``i`` of experiment ``seed`` draws its driver increments
from a Philox generator keyed by ``(seed, i, 0)`` and any policy randomness from
``(seed, i, 1, stream)``, so results do not depend on batching.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import SamplePath, TestFunction, TimeGrid, VolatilityInterval
from .errors import BudgetError, DomainError
from .gheat import PdeSolverParams, solve_g_heat

__all__ = [
    "VolatilityPolicy",
    "ConstantPolicy",
    "PiecewiseDeterministicPolicy",
    "SignFeedbackPolicy",
    "ConvexityFeedbackPolicy",
    "RegimeSwitchingPolicy",
    "PolicyFamily",
    "ParameterizedFamily",
    "PathEvent",
    "CapacityBounds",
    "McEstimate",
    "driver_rng",
    "policy_rng",
    "driver_noise",
    "simulate_path",
    "simulate_paths",
    "audit_adaptedness",
    "realized_quadratic_variation",
    "mc_upper_expectation",
    "mc_lower_expectation",
    "estimate_capacity_bounds",
    "optimize_policy",
    "policy_from_dict",
]


def _generator(seed: int, *key: int) -> np.random.Generator:
    if int(seed) != seed or seed < 0:
        raise DomainError(f"seeds must be non-negative integers, got {seed}")
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed), spawn_key=key)))


def driver_rng(seed: int, path_index: int) -> np.random.Generator:
    return _generator(seed, path_index, 0)


def policy_rng(seed: int, path_index: int, stream: int = 0) -> np.random.Generator:
    return _generator(seed, path_index, 1, stream)


def driver_noise(grid: TimeGrid, seed: int, n_paths: int, first_index: int = 0) -> np.ndarray:
    """Standard normal driver draws, shape (n_paths, steps)."""
    return np.stack([driver_rng(seed, first_index + i).standard_normal(grid.steps) for i in range(n_paths)])


# ---------------------------------------------------------------------------
# policies


class VolatilityPolicy:
    """Base class. Subclasses are either open-loop (controls independent of the
    path, possibly random through the policy's own stream) or feedback policies
    whose control at step k depends on (t_k, X_0..X_k) only."""

    open_loop = True
    stream = 0

    @property
    def name(self) -> str:
        raise NotImplementedError

    def levels(self) -> Sequence[float]:
        raise NotImplementedError

    def validate(self, interval: VolatilityInterval, slack: float = 1e-12):
        bad = [s for s in self.levels() if not interval.contains(s, slack)]
        if bad:
            raise DomainError(f"policy {self.name} uses volatilities {bad} outside {interval.as_list()}")
        return self

    def prepare(self, grid: TimeGrid):
        """Hook for policies that precompute tables for a grid."""
        return self

    def open_loop_controls(self, grid: TimeGrid, rng: np.random.Generator):
        raise NotImplementedError

    def feedback(self, k: int, t: float, x):
        raise NotImplementedError

    def control_at(self, k: int, grid: TimeGrid, history, rng: np.random.Generator | None = None) -> float:
        """Control at step ``k`` recomputed from ``history = X_0..X_k`` alone."""
        if len(history) != k + 1:
            raise DomainError("history must hold exactly X_0..X_k")
        if self.open_loop:
            ctl = np.broadcast_to(self.open_loop_controls(grid, rng), (grid.steps,))
            return float(ctl[k])
        return float(self.feedback(k, k * grid.dt, history[-1]))

    def to_dict(self) -> dict:
        raise NotImplementedError


@dataclass(frozen=True)
class ConstantPolicy(VolatilityPolicy):
    sigma: float

    @property
    def name(self):
        return f"constant({self.sigma:g})"

    def levels(self):
        return [self.sigma]

    def open_loop_controls(self, grid, rng=None):
        return self.sigma

    def to_dict(self):
        return {"kind": "constant", "sigma": self.sigma}


@dataclass(frozen=True)
class PiecewiseDeterministicPolicy(VolatilityPolicy):
    """theta(t) = values[j] on [breakpoints[j-1], breakpoints[j])."""

    breakpoints: tuple
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(float(b) for b in self.breakpoints))
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if len(self.values) != len(self.breakpoints) + 1:
            raise DomainError("piecewise policy needs len(values) == len(breakpoints) + 1")
        if any(b <= a for a, b in zip(self.breakpoints, self.breakpoints[1:])):
            raise DomainError("breakpoints must be strictly increasing")

    @property
    def name(self):
        return f"piecewise({list(self.breakpoints)}, {list(self.values)})"

    def levels(self):
        return list(self.values)

    def open_loop_controls(self, grid, rng=None):
        idx = np.searchsorted(self.breakpoints, grid.times[:-1], side="right")
        return np.asarray(self.values)[idx]

    def to_dict(self):
        return {"kind": "piecewise", "breakpoints": list(self.breakpoints), "values": list(self.values)}


@dataclass(frozen=True)
class SignFeedbackPolicy(VolatilityPolicy):
    sigma_pos: float
    sigma_neg: float
    open_loop = False

    @property
    def name(self):
        return f"sign_feedback({self.sigma_pos:g}, {self.sigma_neg:g})"

    def levels(self):
        return [self.sigma_pos, self.sigma_neg]

    def feedback(self, k, t, x):
        if np.ndim(x) == 0:
            return self.sigma_pos if x > 0 else self.sigma_neg
        return np.where(x > 0, self.sigma_pos, self.sigma_neg)

    def to_dict(self):
        return {"kind": "sign_feedback", "sigma_pos": self.sigma_pos, "sigma_neg": self.sigma_neg}


@dataclass(frozen=True, eq=False)
class ConvexityFeedbackPolicy(VolatilityPolicy):
    """Bang-bang control targeting E[phi(X_T)].

    The G-heat value function v(t, x) = u(T - t, x) is solved once per grid; the
    control is sigma_high where v is locally convex in x and sigma_low elsewhere.
    """

    target: TestFunction
    interval: VolatilityInterval
    params: PdeSolverParams | None = None
    _tables: dict = field(default_factory=dict, repr=False)
    open_loop = False

    @property
    def name(self):
        return f"convexity_feedback({self.target.describe()})"

    def levels(self):
        return self.interval.as_list()

    def prepare(self, grid):
        if grid not in self._tables:
            if grid.steps == 0:
                self._tables[grid] = None
                return self
            taus = grid.horizon - grid.times[:-1]
            sol = solve_g_heat(self.target, grid.horizon, self.interval, self.params, snapshot_taus=taus)
            self._tables[grid] = (sol.x[0], sol.x[1] - sol.x[0], sol.convex)
        self._tables["active"] = grid
        return self

    def feedback(self, k, t, x):
        x0, dx, convex = self._tables[self._tables["active"]]
        row = convex[k]
        idx = np.clip(np.rint((np.asarray(x) - x0) / dx).astype(np.int64), 0, len(row) - 1)
        out = np.where(row[idx], self.interval.sigma_high, self.interval.sigma_low)
        return float(out) if out.ndim == 0 else out

    def control_at(self, k, grid, history, rng=None):
        self.prepare(grid)
        return super().control_at(k, grid, history, rng)

    def to_dict(self):
        return {"kind": "convexity_feedback", "target": self.target.describe()}


@dataclass(frozen=True)
class RegimeSwitchingPolicy(VolatilityPolicy):
    """Continuous-time Markov chain on ``values`` with total jump rate ``rate``.

    The initial regime is uniform; at each step the chain jumps with probability
    1 - exp(-rate dt) to a uniformly chosen other regime. Randomness comes from
    the policy's own stream, independent of the driver noise.
    """

    rate: float
    values: tuple
    stream: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if not self.values:
            raise DomainError("regime switching needs at least one level")
        if not self.rate >= 0:
            raise DomainError(f"switching rate must be nonnegative, got {self.rate}")

    @property
    def name(self):
        return f"regime_switching({self.rate:g}, {list(self.values)})"

    def levels(self):
        return list(self.values)

    def open_loop_controls(self, grid, rng):
        K = len(self.values)
        r0 = int(rng.integers(K))
        if K == 1 or grid.steps == 0:
            return np.full(grid.steps, self.values[0])
        p = -math.expm1(-self.rate * grid.dt)
        u = rng.random(grid.steps)
        jumps = rng.integers(1, K, size=grid.steps)
        # the first step uses the initial regime; jumps act from the next step on
        moves = np.where(u[:-1] < p, jumps[:-1], 0)
        regime = (r0 + np.concatenate([[0], np.cumsum(moves)])) % K
        return np.asarray(self.values)[regime]

    def to_dict(self):
        return {"kind": "regime_switching", "rate": self.rate, "values": list(self.values), "stream": self.stream}


def policy_from_dict(d: dict, interval: VolatilityInterval | None = None) -> VolatilityPolicy:
    """Inverse of ``to_dict`` for the serialisable policy kinds."""
    kind = d.get("kind")
    if kind == "constant":
        return ConstantPolicy(float(d["sigma"]))
    if kind == "piecewise":
        return PiecewiseDeterministicPolicy(tuple(d["breakpoints"]), tuple(d["values"]))
    if kind == "sign_feedback":
        return SignFeedbackPolicy(float(d["sigma_pos"]), float(d["sigma_neg"]))
    if kind == "regime_switching":
        return RegimeSwitchingPolicy(float(d["rate"]), tuple(d["values"]), int(d.get("stream", 0)))
    raise DomainError(f"unknown or non-serialisable policy kind {kind!r}")


@dataclass(frozen=True)
class PolicyFamily:
    policies: tuple

    def __post_init__(self):
        object.__setattr__(self, "policies", tuple(self.policies))
        if not self.policies:
            raise DomainError("policy family must be non-empty")

    def validate(self, interval):
        for p in self.policies:
            p.validate(interval)
        return self

    def __iter__(self):
        return iter(self.policies)

    def __len__(self):
        return len(self.policies)


@dataclass(frozen=True)
class ParameterizedFamily:
    """A policy family indexed by a parameter box.

    kind "constant": one parameter sigma; "sign_feedback": (sigma_pos, sigma_neg);
    "piecewise": one level per interval between the fixed ``breakpoints``.
    """

    kind: str
    bounds: tuple
    breakpoints: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "bounds", tuple((float(a), float(b)) for a, b in self.bounds))
        want = {"constant": 1, "sign_feedback": 2, "piecewise": len(self.breakpoints) + 1}
        if self.kind not in want:
            raise DomainError(f"unknown parameterized family {self.kind!r}")
        if len(self.bounds) != want[self.kind]:
            raise DomainError(f"{self.kind} family needs {want[self.kind]} parameter bounds")
        if any(not (math.isfinite(a) and math.isfinite(b) and a <= b) for a, b in self.bounds):
            raise DomainError("search bounds must be finite with low <= high")

    @classmethod
    def over(cls, kind: str, interval: VolatilityInterval, breakpoints=()):
        n = {"constant": 1, "sign_feedback": 2}.get(kind, len(breakpoints) + 1)
        return cls(kind, ((interval.sigma_low, interval.sigma_high),) * n, tuple(breakpoints))

    def build(self, params) -> VolatilityPolicy:
        params = [float(p) for p in params]
        if self.kind == "constant":
            return ConstantPolicy(params[0])
        if self.kind == "sign_feedback":
            return SignFeedbackPolicy(*params)
        return PiecewiseDeterministicPolicy(self.breakpoints, tuple(params))

    def initial(self) -> list[tuple]:
        """Corner points of the box (deduplicated) plus its centre."""
        corners = {()}
        for a, b in self.bounds:
            corners = {c + (v,) for c in corners for v in (a, b)}
        pts = sorted(corners)
        centre = tuple(0.5 * (a + b) for a, b in self.bounds)
        if centre not in corners:
            pts.append(centre)
        return pts


# ---------------------------------------------------------------------------
# simulation


def simulate_paths(
    policy: VolatilityPolicy,
    grid: TimeGrid,
    seed: int,
    n_paths: int = 1,
    first_index: int = 0,
    noise: np.ndarray | None = None,
    keep_controls: bool = False,
):
    """Euler scheme X_{k+1} = X_k + theta_k sqrt(dt) Z_k for a batch of paths.

    Returns ``X`` with shape (n_paths, steps+1), plus the controls (n_paths, steps)
    when ``keep_controls`` is set.
    """
    steps = grid.steps
    if noise is None:
        noise = driver_noise(grid, seed, n_paths, first_index)
    elif noise.shape != (n_paths, steps):
        raise DomainError(f"noise must have shape {(n_paths, steps)}, got {noise.shape}")
    X = np.zeros((n_paths, steps + 1))
    if steps == 0:
        return (X, np.zeros((n_paths, 0))) if keep_controls else X
    sq = math.sqrt(grid.dt)
    policy.prepare(grid)
    if policy.open_loop:
        theta = [policy.open_loop_controls(grid, policy_rng(seed, first_index + i, policy.stream)) for i in range(n_paths)]
        theta = np.broadcast_to(np.stack([np.broadcast_to(np.asarray(th, dtype=float), (steps,)) for th in theta]), noise.shape)
        np.cumsum(theta * sq * noise, axis=1, out=X[:, 1:])
    elif n_paths == 1:
        theta = np.empty((1, steps))
        z = noise[0]
        row = theta[0]
        x = 0.0
        out = X[0]
        dt = grid.dt
        fb = policy.feedback
        for k in range(steps):
            th = fb(k, k * dt, x)
            row[k] = th
            x = x + th * sq * z[k]
            out[k + 1] = x
    else:
        theta = np.empty((n_paths, steps))
        for k in range(steps):
            th = policy.feedback(k, k * grid.dt, X[:, k])
            theta[:, k] = th
            X[:, k + 1] = X[:, k] + th * sq * noise[:, k]
    if keep_controls:
        return X, np.array(theta)
    return X


def simulate_path(policy: VolatilityPolicy, grid: TimeGrid, seed: int, path_index: int = 0) -> SamplePath:
    X, theta = simulate_paths(policy, grid, seed, 1, first_index=path_index, keep_controls=True)
    return SamplePath(grid, X[0], theta[0])


def audit_adaptedness(policy: VolatilityPolicy, path: SamplePath, seed: int, path_index: int = 0) -> bool:
    """Recompute every recorded control from the truncated history; True iff bit-identical."""
    if path.controls is None:
        raise DomainError("path carries no recorded controls")
    for k in range(path.grid.steps):
        rng = policy_rng(seed, path_index, policy.stream) if policy.open_loop else None
        if policy.control_at(k, path.grid, path.values[: k + 1], rng) != path.controls[k]:
            return False
    return True


def realized_quadratic_variation(path: SamplePath, s: float, t: float) -> float:
    """Sum of squared increments of ``path`` over the grid nodes in [s, t]."""
    i, j = path.grid.index_of(s), path.grid.index_of(t)
    if not i < j:
        raise DomainError(f"need s < t, got s={s}, t={t}")
    return float(np.sum(np.diff(path.values[i : j + 1]) ** 2))


# ---------------------------------------------------------------------------
# Monte Carlo bounds


@dataclass(frozen=True)
class McEstimate:
    estimate: float
    stderr: float
    policy: str
    per_policy: tuple  # (name, mean, stderr) for every member, in family order
    n_paths: int


def _as_functional(obj) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(obj, TestFunction):
        return lambda X: obj(X[:, -1])
    if isinstance(obj, PathEvent):
        return lambda X: obj.indicator(X).astype(float)
    if callable(obj):
        return obj
    raise DomainError(f"cannot use {obj!r} as a path functional")


def _family_means(functional, family, grid, n_paths, seed, interval=None):
    if n_paths < 100:
        raise DomainError(f"need at least 100 paths, got {n_paths}")
    if interval is not None:
        family.validate(interval)
    f = _as_functional(functional)
    noise = driver_noise(grid, seed, n_paths)
    rows = []
    for p in family:
        vals = np.asarray(f(simulate_paths(p, grid, seed, n_paths, noise=noise)), dtype=float)
        rows.append((p.name, float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(n_paths))))
    return rows


def mc_upper_expectation(functional, family: PolicyFamily, grid: TimeGrid, n_paths: int, seed: int, interval=None) -> McEstimate:
    """max over the family of Monte Carlo means; a lower bound on the upper expectation.

    ``functional`` is a TestFunction (applied to X_T), a PathEvent, or a callable
    mapping an (n_paths, steps+1) array to per-path values. All members share the
    same driver noise.
    """
    rows = _family_means(functional, family, grid, n_paths, seed, interval)
    best = max(range(len(rows)), key=lambda i: rows[i][1])
    return McEstimate(rows[best][1], rows[best][2], rows[best][0], tuple(rows), n_paths)


def mc_lower_expectation(functional, family, grid, n_paths, seed, interval=None) -> McEstimate:
    """min over the family; an upper bound on the lower expectation."""
    rows = _family_means(functional, family, grid, n_paths, seed, interval)
    best = min(range(len(rows)), key=lambda i: rows[i][1])
    return McEstimate(rows[best][1], rows[best][2], rows[best][0], tuple(rows), n_paths)


@dataclass(frozen=True)
class PathEvent:
    """An event defined by a path: kinds ``terminal_abs_geq``, ``terminal_leq``,
    ``sup_norm_geq`` (level ``y``) or ``custom`` (functional(X) >= y)."""

    kind: str
    y: float
    functional: Callable | None = None
    negated: bool = False

    def __post_init__(self):
        if self.kind not in ("terminal_abs_geq", "terminal_leq", "sup_norm_geq", "custom"):
            raise DomainError(f"unknown event kind {self.kind!r}")
        if self.kind == "custom" and self.functional is None:
            raise DomainError("custom events need a functional")

    def indicator(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.kind == "terminal_abs_geq":
            hit = np.abs(X[:, -1]) >= self.y
        elif self.kind == "terminal_leq":
            hit = X[:, -1] <= self.y
        elif self.kind == "sup_norm_geq":
            hit = np.max(np.abs(X), axis=1) >= self.y
        else:
            hit = np.asarray(self.functional(X)) >= self.y
        return ~hit if self.negated else hit

    def complement(self) -> "PathEvent":
        return PathEvent(self.kind, self.y, self.functional, not self.negated)

    def describe(self) -> str:
        s = f"{self.kind}({self.y:g})"
        return f"not {s}" if self.negated else s


@dataclass(frozen=True)
class CapacityBounds:
    """Finite-family bounds: ``V_lower <= V(A)`` and ``v(A) <= v_upper``."""

    event: str
    V_lower: float
    v_upper: float
    V_stderr: float
    v_stderr: float
    V_policy: str
    v_policy: str
    counts: tuple  # (policy name, hits) in family order
    n_paths: int
    label: str = "finite-family bounds (not the capacities themselves)"


def estimate_capacity_bounds(event: PathEvent, family: PolicyFamily, grid, n_paths, seed, interval=None) -> CapacityBounds:
    if n_paths < 100:
        raise DomainError(f"need at least 100 paths, got {n_paths}")
    if interval is not None:
        family.validate(interval)
    noise = driver_noise(grid, seed, n_paths)
    counts = []
    for p in family:
        X = simulate_paths(p, grid, seed, n_paths, noise=noise)
        counts.append((p.name, int(np.count_nonzero(event.indicator(X)))))
    hi = max(range(len(counts)), key=lambda i: counts[i][1])
    lo = min(range(len(counts)), key=lambda i: counts[i][1])
    pV, pv = counts[hi][1] / n_paths, counts[lo][1] / n_paths

    def se(p):
        return math.sqrt(p * (1 - p) / n_paths)

    return CapacityBounds(event.describe(), pV, pv, se(pV), se(pv), counts[hi][0], counts[lo][0], tuple(counts), n_paths)


def optimize_policy(
    family: ParameterizedFamily,
    objective,
    budget: int,
    grid: TimeGrid,
    n_paths: int,
    seed: int,
    sense: str = "max",
    axis_points: int = 5,
    interval: VolatilityInterval | None = None,
):
    """Search the parameter box for the best Monte Carlo objective value.

    Starts from ``family.initial()``, then coordinate-wise grid sweeps, then
    shrinking local steps, until ``budget`` evaluations are spent. All
    candidates share the same driver noise. Returns (policy, value, n_evaluations).
    """
    if sense not in ("max", "min"):
        raise DomainError("sense must be 'max' or 'min'")
    initial = family.initial()
    if budget < len(initial):
        raise BudgetError(f"budget {budget} is below the {len(initial)} initial family members")
    if n_paths < 100:
        raise DomainError(f"need at least 100 paths, got {n_paths}")
    f = _as_functional(objective)
    noise = driver_noise(grid, seed, n_paths)
    sign = 1.0 if sense == "max" else -1.0
    cache: dict[tuple, float] = {}

    def evaluate(params):
        params = tuple(float(np.clip(p, a, b)) for p, (a, b) in zip(params, family.bounds))
        if params in cache:
            return params, cache[params]
        if len(cache) >= budget:
            return params, None
        pol = family.build(params)
        if interval is not None:
            pol.validate(interval)
        cache[params] = float(np.mean(f(simulate_paths(pol, grid, seed, n_paths, noise=noise))))
        return params, cache[params]

    best, best_val = None, None

    def consider(params):
        nonlocal best, best_val
        params, val = evaluate(params)
        if val is not None and (best_val is None or sign * val > sign * best_val):
            best, best_val = params, val

    for p in initial:
        consider(p)
    for d, (a, b) in enumerate(family.bounds):
        for v in np.linspace(a, b, axis_points):
            if len(cache) >= budget:
                break
            consider(best[:d] + (v,) + best[d + 1 :])
    step = [(b - a) / (2 * max(axis_points - 1, 1)) for a, b in family.bounds]
    while len(cache) < budget and max(step, default=0) > 1e-9:
        before = len(cache)
        for d in range(len(step)):
            for s in (-step[d], step[d]):
                consider(best[:d] + (best[d] + s,) + best[d + 1 :])
        step = [s / 2 for s in step]
        if len(cache) == before and all(s <= 1e-9 for s in step):
            break
    return family.build(best), best_val, len(cache)
