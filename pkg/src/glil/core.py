"""Shared domain types: volatility interval, time grids, sample paths, test functions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, OffGridError

__all__ = [
    "VolatilityInterval",
    "TimeGrid",
    "SamplePath",
    "TestFunction",
    "validate_volatility_interval",
    "loglog_scale",
]


@dataclass(frozen=True)
class VolatilityInterval:
    sigma_low: float
    sigma_high: float

    def __post_init__(self):
        lo, hi = self.sigma_low, self.sigma_high
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise DomainError(f"volatility bounds must be finite, got ({lo}, {hi})")
        if not 0.0 < lo <= hi:
            raise DomainError(f"need 0 < sigma_low <= sigma_high, got ({lo}, {hi})")

    @property
    def var_low(self) -> float:
        return self.sigma_low**2

    @property
    def var_high(self) -> float:
        return self.sigma_high**2

    @property
    def degenerate(self) -> bool:
        return self.sigma_low == self.sigma_high

    def contains(self, sigma: float, slack: float = 0.0) -> bool:
        return self.sigma_low - slack <= sigma <= self.sigma_high + slack

    def as_list(self) -> list[float]:
        return [self.sigma_low, self.sigma_high]


def validate_volatility_interval(sigma_low: float, sigma_high: float) -> VolatilityInterval:
    """Return the interval ``[sigma_low, sigma_high]`` or raise ``DomainError``.

    Strict positivity of the lower bound is required; ``sigma_low == sigma_high``
    is the classical (linear expectation) case.
    """
    if isinstance(sigma_low, VolatilityInterval):
        return sigma_low
    return VolatilityInterval(float(sigma_low), float(sigma_high))


def loglog_scale(n):
    """sqrt(2 n log log n), the LIL normaliser. Accepts scalars or arrays, n > e.

    The value is positive for all n > e but only increasing once n >= e**e;
    on (e, e**e) it first decreases.
    """
    arr = np.asarray(n, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= math.e):
        raise DomainError(f"loglog_scale needs n > e, got {n}")
    out = np.sqrt(2.0 * arr * np.log(np.log(arr)))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0 and math.isfinite(self.horizon)):
            raise DomainError(f"horizon must be positive and finite, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise DomainError(f"steps must be a non-negative integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps if self.steps else 0.0

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt if self.steps else np.zeros(1)

    def index_of(self, t: float, rtol: float = 1e-9) -> int:
        """Grid index of time ``t``; raises ``OffGridError`` if ``t`` is not a node."""
        if self.steps == 0:
            if t == 0:
                return 0
            raise OffGridError(f"t={t} is not on an empty grid")
        pos = t / self.dt
        k = int(round(pos))
        if abs(pos - k) > rtol * max(1.0, abs(pos)) or not 0 <= k <= self.steps:
            raise OffGridError(f"t={t} is not a node of grid(horizon={self.horizon}, steps={self.steps})")
        return k

    @classmethod
    def unit_steps(cls, horizon: int) -> "TimeGrid":
        """dt = 1, so every integer time up to ``horizon`` is a node."""
        return cls(float(horizon), int(horizon))


@dataclass(frozen=True, eq=False)
class SamplePath:
    grid: TimeGrid
    values: np.ndarray
    controls: np.ndarray | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.steps + 1,):
            raise DomainError(f"expected {self.grid.steps + 1} values, got shape {vals.shape}")
        if vals[0] != 0.0:
            raise DomainError("sample paths start at 0")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.controls is not None:
            ctl = np.asarray(self.controls, dtype=float)
            ctl.setflags(write=False)
            object.__setattr__(self, "controls", ctl)

    @property
    def horizon(self) -> float:
        return self.grid.horizon

    def at(self, t):
        """Linear interpolation of the path at time(s) ``t``."""
        return np.interp(t, self.grid.times, self.values)


_EVEN_BASE = {"quadratic", "abs", "power", "constant"}
_CONVEX_BASE = {"quadratic", "abs", "exp", "identity", "constant"}
_CONCAVE_BASE = {"identity", "constant"}
_NONNEG_BASE = {"quadratic", "abs", "power", "bump", "exp", "sandwich"}
_BOUNDED_BASE = {"bump", "constant", "tabulated", "sandwich"}


@dataclass(frozen=True)
class TestFunction:
    """A tagged scalar test function ``coeff * base(x - shift)``.

    Kinds and their ``params``:

    ``quadratic`` (), ``identity`` (), ``abs`` (), ``power`` (a,),
    ``bump`` (width, center) -- triangular, 1 at ``center``, 0 beyond ``width``,
    ``exp`` (clip,) -- exp(min(x, clip)),
    ``constant`` (c,),
    ``sandwich`` (event, y, delta, side) -- the piecewise-linear lower/upper
    envelopes of 1{x <= y} (event "leq") or 1{|x| >= y} (event "abs_geq"),
    ``tabulated`` (knots, values) -- piecewise linear, constant outside the knots.
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str
    params: tuple = ()
    coeff: float = 1.0
    shift: float = 0.0

    # constructors -------------------------------------------------------
    @classmethod
    def quadratic(cls):
        return cls("quadratic")

    @classmethod
    def neg_quadratic(cls):
        return cls("quadratic", coeff=-1.0)

    @classmethod
    def identity(cls):
        return cls("identity")

    @classmethod
    def absolute(cls):
        return cls("abs")

    @classmethod
    def power(cls, a: float):
        if a <= 0:
            raise DomainError(f"power exponent must be positive, got {a}")
        return cls("power", (float(a),))

    @classmethod
    def bump(cls, width: float, center: float = 0.0):
        if width <= 0:
            raise DomainError(f"bump width must be positive, got {width}")
        return cls("bump", (float(width), float(center)))

    @classmethod
    def exp(cls, clip: float = 50.0):
        return cls("exp", (float(clip),))

    @classmethod
    def constant(cls, c: float):
        return cls("constant", (float(c),))

    @classmethod
    def sandwich(cls, event: str, y: float, delta: float, side: str):
        if event not in ("leq", "abs_geq"):
            raise DomainError(f"unknown sandwich event {event!r}")
        if side not in ("lower", "upper"):
            raise DomainError(f"side must be 'lower' or 'upper', got {side!r}")
        if not delta > 0:
            raise DomainError(f"sandwich width must be positive, got {delta}")
        return cls("sandwich", (event, float(y), float(delta), side))

    @classmethod
    def tabulated(cls, knots, values):
        knots = tuple(float(k) for k in knots)
        values = tuple(float(v) for v in values)
        if len(knots) != len(values) or len(knots) < 2:
            raise DomainError("tabulated function needs >= 2 matching knots and values")
        if any(b <= a for a, b in zip(knots, knots[1:])):
            raise DomainError("tabulated knots must be strictly increasing")
        return cls("tabulated", (knots, values))

    # transformations ----------------------------------------------------
    def __neg__(self):
        return TestFunction(self.kind, self.params, -self.coeff, self.shift)

    def scaled(self, lam: float):
        return TestFunction(self.kind, self.params, self.coeff * lam, self.shift)

    def shifted(self, b: float):
        """x -> phi(x - b)."""
        return TestFunction(self.kind, self.params, self.coeff, self.shift + b)

    def __add__(self, other: "TestFunction"):
        """Sum of two piecewise-linear functions (tabulated/constant only)."""
        a, b = self._as_tabulated(), other._as_tabulated()
        if a is None or b is None:
            raise DomainError("only tabulated/constant test functions can be added")
        knots = sorted(set(a[0]) | set(b[0]))
        vals = np.interp(knots, a[0], a[1]) + np.interp(knots, b[0], b[1])
        return TestFunction.tabulated(knots, vals)

    def _as_tabulated(self):
        if self.kind == "tabulated":
            k, v = self.params
            return [x + self.shift for x in k], [self.coeff * y for y in v]
        if self.kind == "constant":
            c = self.coeff * self.params[0]
            return [-1.0, 1.0], [c, c]
        return None

    # evaluation ---------------------------------------------------------
    def __call__(self, x):
        x = np.asarray(x, dtype=float) - self.shift
        k, p = self.kind, self.params
        if k == "quadratic":
            out = x * x
        elif k == "identity":
            out = x.copy()
        elif k == "abs":
            out = np.abs(x)
        elif k == "power":
            out = np.abs(x) ** p[0]
        elif k == "bump":
            out = np.clip(1.0 - np.abs(x - p[1]) / p[0], 0.0, 1.0)
        elif k == "exp":
            out = np.exp(np.minimum(x, p[0]))
        elif k == "constant":
            out = np.full_like(x, p[0])
        elif k == "sandwich":
            event, y, d, side = p
            # the upper ramp is written as 1 + r so it equals 1 exactly at the threshold
            r = (y - x) / d if event == "leq" else (np.abs(x) - y) / d
            out = np.clip(r if side == "lower" else 1.0 + r, 0.0, 1.0)
        elif k == "tabulated":
            out = np.interp(x, p[0], p[1])
        else:
            raise DomainError(f"unknown test function kind {k!r}")
        return self.coeff * out

    # shape tags ---------------------------------------------------------
    @property
    def is_even(self) -> bool:
        if self.shift != 0.0:
            return self.kind == "constant"
        if self.kind in _EVEN_BASE:
            return True
        if self.kind == "bump":
            return self.params[1] == 0.0
        if self.kind == "sandwich":
            return self.params[0] == "abs_geq"
        if self.kind == "tabulated":
            k, v = self.params
            return np.allclose(k, [-x for x in reversed(k)]) and np.allclose(v, v[::-1])
        return False

    @property
    def is_bounded(self) -> bool:
        return self.kind in _BOUNDED_BASE

    @property
    def is_positive(self) -> bool:
        """Nonnegative everywhere."""
        if self.coeff < 0:
            return False
        if self.kind in _NONNEG_BASE:
            return True
        if self.kind == "constant":
            return self.params[0] >= 0
        if self.kind == "tabulated":
            return min(self.params[1]) >= 0
        return False

    @property
    def convexity(self) -> str | None:
        """'convex', 'concave', 'linear' or None (neither / unknown)."""
        k = self.kind
        base_convex = k in _CONVEX_BASE or (k == "power" and self.params[0] >= 1)
        base_concave = k in _CONCAVE_BASE
        if k == "tabulated":
            kn, v = np.asarray(self.params[0]), np.asarray(self.params[1])
            slopes = np.diff(v) / np.diff(kn)
            # constant extrapolation adds slope-0 pieces on both ends
            slopes = np.concatenate([[0.0], slopes, [0.0]])
            base_convex = bool(np.all(np.diff(slopes) >= 0))
            base_concave = bool(np.all(np.diff(slopes) <= 0))
        if self.coeff == 0 or (base_convex and base_concave):
            return "linear"
        if self.coeff < 0:
            base_convex, base_concave = base_concave, base_convex
        if base_convex:
            return "convex"
        if base_concave:
            return "concave"
        return None

    def describe(self) -> str:
        s = f"{self.kind}{list(self.params) if self.params else ''}"
        if self.coeff != 1.0:
            s = f"{self.coeff:g}*{s}"
        if self.shift:
            s += f"(x-{self.shift:g})"
        return s
