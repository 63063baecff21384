"""Long-path LIL experiments: schedules, cluster diagnostics, Examples of
weighted sums and absolute powers, and functional images."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .config import ExperimentConfig
from .core import SamplePath, TestFunction, TimeGrid, VolatilityInterval
from .errors import CoverageError, DomainError, QuadratureError
from .paths import ConstantPolicy, simulate_paths
from .strassen import RescaledPath, ball_net, dist_to_strassen_ball, rescale

__all__ = [
    "SubsequenceSchedule",
    "subsequence_schedule",
    "schedule_from_config",
    "ExperimentReport",
    "weighted_sum_statistic",
    "abs_power_statistic",
    "weighted_sum_series",
    "abs_power_series",
    "example_bounds",
    "image_bounds",
    "apply_map",
    "run_invariance_experiment",
    "functional_image_experiment",
]

DEFAULT_HORIZON_CAP = 10_000_000


@dataclass(frozen=True)
class SubsequenceSchedule:
    """Strictly increasing times n_k > e. ``truncated`` flags entries dropped by the cap."""

    kind: str
    values: tuple
    truncated: bool = False
    params: dict = field(default_factory=dict, compare=False)

    def __len__(self):
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def up_to(self, horizon: float) -> "SubsequenceSchedule":
        kept = tuple(v for v in self.values if v <= horizon)
        return SubsequenceSchedule(self.kind, kept, self.truncated or len(kept) < len(self.values), self.params)


def subsequence_schedule(kind: str, params: dict | None = None, count: int | None = None,
                         horizon_cap: float = DEFAULT_HORIZON_CAP, m: int | None = None) -> SubsequenceSchedule:
    """Build a schedule.

    geometric: n_k = floor(c^k) + 1 for k >= ``start``; needs c > 1.
    superpow:  n_k = k^(k^alpha) as a real number; needs 0 < alpha < 1/(2m) (m = 1 if unset).
    explicit:  ``values`` as given.

    Entries <= e and repeats are skipped. With ``count`` unset the schedule runs
    up to ``horizon_cap``; with ``count`` set, hitting the cap sets ``truncated``.
    """
    params = dict(params or {})
    if count is not None and count < 1:
        raise DomainError(f"count must be at least 1, got {count}")
    if kind == "explicit":
        vals = [float(v) for v in params.get("values", ())]
        if not vals or any(v <= math.e for v in vals) or any(b <= a for a, b in zip(vals, vals[1:])):
            raise DomainError("explicit schedules must be strictly increasing with entries > e")
        vals = vals[:count] if count is not None else vals
        kept = tuple(int(v) if v.is_integer() else v for v in vals if v <= horizon_cap)
        return SubsequenceSchedule(kind, kept, len(kept) < len(vals), params)

    if kind == "geometric":
        c = float(params.get("c", 0))
        if not c > 1:
            raise DomainError(f"geometric schedules need c > 1, got {c}")
        term = lambda k: math.floor(c**k) + 1
    elif kind == "superpow":
        alpha = float(params.get("alpha", 0))
        bound = 1.0 / (2 * (m or 1))
        if not 0 < alpha < bound:
            raise DomainError(f"superpow schedules need 0 < alpha < 1/(2m) = {bound:g}, got {alpha}")
        term = lambda k: float(k) ** (float(k) ** alpha)
    else:
        raise DomainError(f"unknown schedule kind {kind!r}")

    k = int(params.get("start", 1))
    out, truncated = [], False
    while count is None or len(out) < count:
        n = term(k)
        k += 1
        if n > horizon_cap:
            truncated = count is not None
            break
        if n > math.e and (not out or n > out[-1]):
            out.append(n)
    return SubsequenceSchedule(kind, tuple(out), truncated, params)


def schedule_from_config(cfg: ExperimentConfig) -> SubsequenceSchedule:
    s = dict(cfg["schedule"])
    kind, count = s.pop("kind"), s.pop("count", None)
    sched = subsequence_schedule(kind, s, count, cfg["horizon_cap"], cfg["m"] if kind == "superpow" else None)
    return sched.up_to(cfg["horizon"])


# ---------------------------------------------------------------------------
# statistics at integer times


def _integer_values(path: SamplePath, n: int) -> np.ndarray:
    if path.horizon < n:
        raise CoverageError(f"path horizon {path.horizon:g} does not reach n = {n}")
    if path.grid.dt == 1.0:
        return np.asarray(path.values[1 : n + 1])
    return path.at(np.arange(1, n + 1, dtype=float))


def _check_n(n):
    if int(n) != n or not n > math.e:
        raise DomainError(f"n must be an integer > e, got {n}")
    return int(n)


def weighted_sum_statistic(f, n: int, path: SamplePath) -> float:
    """S_n = sum_{i<=n} f(i/n) B_i / sqrt(2 n^3 log log n).

    ``f`` is a callable on [0, 1] (e.g. a TestFunction) or a real alpha > -1
    meaning f(t) = t^alpha.
    """
    n = _check_n(n)
    B = _integer_values(path, n)
    s = np.arange(1, n + 1) / n
    if isinstance(f, (int, float)):
        if not f > -1:
            raise DomainError(f"power must exceed -1, got {f}")
        w = s ** float(f)
    else:
        w = np.asarray(f(s), dtype=float)
    return float(np.dot(w, B) / math.sqrt(2.0 * n**3 * math.log(math.log(n))))


def abs_power_statistic(a: float, n: int, path: SamplePath) -> float:
    """T_n = n^(-1-a/2) (2 log log n)^(-a/2) sum_{i<=n} |B_i|^a."""
    if not a >= 1:
        raise DomainError(f"need a >= 1, got {a}")
    n = _check_n(n)
    B = _integer_values(path, n)
    return float(np.sum(np.abs(B) ** a) * n ** (-1 - a / 2) * (2 * math.log(math.log(n))) ** (-a / 2))


def weighted_sum_series(alpha: float, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(n, S_n) for every integer 3 <= n <= len(B), f(t) = t^alpha; B[i-1] = B_i."""
    if not alpha > -1:
        raise DomainError(f"power must exceed -1, got {alpha}")
    n = np.arange(1, len(B) + 1, dtype=float)
    acc = np.cumsum(n**alpha * B)
    n, acc = n[2:], acc[2:]
    return n, acc * n**-alpha / np.sqrt(2.0 * n**3 * np.log(np.log(n)))


def abs_power_series(a: float, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(n, T_n) for every integer 3 <= n <= len(B)."""
    if not a >= 1:
        raise DomainError(f"need a >= 1, got {a}")
    acc = np.cumsum(np.abs(B) ** a)
    n = np.arange(3, len(B) + 1, dtype=float)
    return n, acc[2:] * n ** (-1 - a / 2) * (2 * np.log(np.log(n))) ** (-a / 2)


# ---------------------------------------------------------------------------
# closed-form bounds


def _quad(fn, a, b, rtol=1e-6, **kw):
    """scipy quad that raises QuadratureError on warnings or a large error estimate."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(fn, a, b, limit=200, **kw)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(f"quadrature did not converge: {exc}") from exc
    if not math.isfinite(val) or err > rtol * max(1.0, abs(val)):
        raise QuadratureError(f"quadrature did not converge (value {val}, error estimate {err:g})")
    return val


def _arc_integral(a: float) -> float:
    """int_0^1 dt / sqrt(1 - t^a), with the endpoint singularity handled by QAWS."""

    def smooth(t):
        # (1 - t^a)^(-1/2) = (1 - t)^(-1/2) * sqrt((1 - t) / (1 - t^a))
        if t >= 1.0:
            return 1.0 / math.sqrt(a)
        if t <= 0.0:
            return 1.0
        return math.sqrt((1.0 - t) / -math.expm1(a * math.log(t)))

    return _quad(smooth, 0.0, 1.0, weight="alg", wvar=(0.0, -0.5))


def abs_power_constant(a: float, sigma: float) -> float:
    """2 (a+2)^(a/2-1) / (a^(a/2) (int_0^1 dt / (sigma sqrt(1-t^a)))^a)."""
    if not a >= 1 or not math.isfinite(a):
        raise DomainError(f"need finite a >= 1, got {a}")
    J = _arc_integral(a) / sigma
    return 2.0 * (a + 2) ** (a / 2 - 1) / (a ** (a / 2) * J**a)


def weighted_sum_constant(f) -> float:
    """(int_0^1 F(t)^2 dt)^(1/2), F(t) = int_t^1 f. ``f`` is alpha (f = t^alpha) or a callable."""
    if isinstance(f, (int, float)):
        alpha = float(f)
        if not alpha > -1:
            raise DomainError(f"power must exceed -1, got {alpha}")
        return 1.0 / math.sqrt((alpha + 1.5) * (alpha + 2.0))
    F = lambda t: _quad(lambda s: float(f(s)), t, 1.0, epsabs=1e-13, epsrel=1e-12) if t < 1 else 0.0
    return math.sqrt(_quad(lambda t: F(t) ** 2, 0.0, 1.0))


def example_bounds(example: dict, interval: VolatilityInterval) -> tuple[float, float]:
    """(lower, upper) limsup bounds.

    ``{"kind": "weighted_sum", "alpha": a}`` or ``{"kind": "weighted_sum", "f": callable}``
    gives (sigma_low c, sigma_high c); ``{"kind": "abs_power", "a": a}`` gives the
    abs-power constant at sigma_low and sigma_high.
    """
    kind = example.get("kind")
    if kind == "weighted_sum":
        c = weighted_sum_constant(example["f"] if "f" in example else example.get("alpha", 0.0))
        return interval.sigma_low * c, interval.sigma_high * c
    if kind == "abs_power":
        a = float(example.get("a", 2.0))
        return abs_power_constant(a, interval.sigma_low), abs_power_constant(a, interval.sigma_high)
    raise DomainError(f"unknown example {kind!r}")


# ---------------------------------------------------------------------------
# continuous maps on C[0, 1]


def apply_map(name: str, z: RescaledPath) -> float:
    v = z.values
    if name == "evaluate_at_1":
        return float(v[-1])
    if name == "running_max":
        return float(v.max())
    if name == "sup_norm":
        return float(np.abs(v).max())
    if name == "integral":
        return float(np.trapezoid(v, dx=1.0 / z.m))
    if name == "zero":
        return 0.0
    raise DomainError(f"unknown map {name!r}")


def image_bounds(name: str, beta: float) -> tuple[float, float]:
    """Image of K_beta under the map, as an interval."""
    if name == "evaluate_at_1":
        return -beta, beta
    if name in ("running_max", "sup_norm"):
        return 0.0, beta
    if name == "integral":
        return -beta / math.sqrt(3.0), beta / math.sqrt(3.0)
    if name == "zero":
        return 0.0, 0.0
    raise DomainError(f"unknown map {name!r}")


# ---------------------------------------------------------------------------
# experiments


@dataclass
class ExperimentReport:
    config_hash: str
    seed: int
    items: list
    rows: list
    truncated: bool = False
    wallclock_ms: float | None = None

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "items": self.items,
            "truncated": self.truncated,
            "wallclock_ms": self.wallclock_ms,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False, allow_nan=False) + "\n"

    def to_csv(self) -> str:
        head = ["policy", "seed", "n_k"]
        cols = head + sorted({k for r in self.rows for k in r} - set(head))
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k)) for k in cols})
        return buf.getvalue()

    @property
    def passed(self) -> bool:
        return all(it["pass"] for it in self.items)

    def item(self, name: str) -> dict:
        for it in self.items:
            if it["name"] == name:
                return it
        raise KeyError(name)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _ball_for(policy) -> float | None:
    return policy.sigma if isinstance(policy, ConstantPolicy) else None


def _run_one(cfg_data: dict, pi: int, j: int) -> dict:
    """Simulate one long path and evaluate everything the config asks for."""
    cfg = ExperimentConfig(cfg_data)
    interval = cfg.interval
    policy = cfg.policies[pi]
    horizon = cfg["horizon"]
    grid = TimeGrid.unit_steps(horizon)
    X = simulate_paths(policy, grid, cfg["seed"], 1, first_index=j)[0]
    path = SamplePath(grid, X)
    sched = schedule_from_config(cfg)
    burn = cfg.burn_in
    us = [u for u in sched if u >= burn]
    zetas = [rescale(path, u, cfg["out_grid_points"]) for u in us]
    tol = cfg["tol"]
    beta = _ball_for(policy)
    items = set(cfg["items"])

    out = {"n_k": list(us), "series": {}, "scalars": {}}
    ser = out["series"]

    def net_targets(b):
        net = ball_net(b, cfg["m"], cfg["net_levels"])
        return np.stack([p.resample(cfg["out_grid_points"]).values for p in net])

    Z = np.stack([z.values for z in zetas]) if zetas else np.zeros((0, cfg["out_grid_points"] + 1))
    if zetas and items & {"I", "II"}:
        ser["II.outer"] = [dist_to_strassen_ball(z, interval.sigma_high, tol) for z in zetas]
        ser["I.sup_norm"] = np.abs(Z).max(axis=1).tolist()
        diam = 0.0
        for row in Z:
            diam = max(diam, float(np.abs(Z - row).max()))
        out["scalars"]["I.diameter"] = diam
    if zetas and "III" in items:
        T = net_targets(interval.sigma_low)
        d = np.abs(T[:, None, :] - Z[None, :, :]).max(axis=2)
        run = np.minimum.accumulate(d, axis=1)
        ser["III.coverage_median"] = np.median(run, axis=0).tolist()
        ser["III.coverage_max"] = run.max(axis=0).tolist()
    if zetas and "IV" in items and beta is not None:
        ser["IV.outer"] = [dist_to_strassen_ball(z, beta, tol) for z in zetas]
        T = net_targets(beta)
        d = np.abs(T[:, None, :] - Z[None, :, :]).max(axis=2)
        ser["IV.coverage_median"] = np.median(np.minimum.accumulate(d, axis=1), axis=0).tolist()
    for name in cfg["maps"]:
        ser[f"map.{name}"] = [apply_map(name, z) for z in zetas]

    B = X[1:]
    for e in cfg["examples"]:
        key = _example_key(e)
        lo = max(3, int(math.ceil(burn)))
        at = e["at"]
        if e["kind"] == "abs_power":
            n, vals = abs_power_series(e["a"], B[:at])
        else:
            n, vals = weighted_sum_series(e["alpha"], B[:at])
        sel = vals[lo - 3 :]
        out["scalars"][f"{key}.running_max"] = float(sel.max()) if sel.size else None
        out["scalars"][f"{key}.final"] = float(vals[-1])
        ser[key] = [float(vals[int(u) - 3]) if int(u) <= at else None for u in us]
    return out


def _example_key(e):
    if e["kind"] == "abs_power":
        return f"example.abs_power_a{e['a']:g}"
    return f"example.weighted_sum_alpha{e['alpha']:g}"


def _collect(cfg: ExperimentConfig) -> list[list[dict]]:
    jobs = [(pi, j) for pi in range(len(cfg["policies"])) for j in range(cfg["n_seeds"])]
    if cfg["workers"] > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg["workers"]) as ex:
            flat = list(ex.map(_run_one, [cfg.data] * len(jobs), *zip(*jobs)))
    else:
        flat = [_run_one(cfg.data, pi, j) for pi, j in jobs]
    n = cfg["n_seeds"]
    return [flat[i * n : (i + 1) * n] for i in range(len(cfg["policies"]))]


def _fraction_item(name, per_seed, cfg, bounds, extra_tol=None):
    ok = [bool(p) for p in per_seed["pass"]]
    frac = sum(ok) / len(ok) if ok else 0.0
    tols = {"pass_fraction": cfg["pass_fraction"], "tol": cfg["tol"]}
    tols.update(extra_tol or {})
    values = {k: v for k, v in per_seed.items() if k != "pass"}
    values.update({"fraction": frac, "n_seeds": len(ok)})
    return {"name": name, "values": values, "tolerances": tols, "bounds": bounds, "pass": frac >= cfg["pass_fraction"]}


def _nanmax(xs):
    xs = [x for x in xs if x is not None]
    return max(xs) if xs else None


def _le(x, bound):
    return x is not None and x <= bound


def _items_for(cfg: ExperimentConfig, pi: int, runs: list[dict]) -> list[dict]:
    policy = cfg.policies[pi]
    label = policy.name
    interval = cfg.interval
    beta = _ball_for(policy)
    thr = cfg["outer_threshold"]
    items = []
    sel = set(cfg["items"])
    n_k = [len(r["n_k"]) for r in runs]

    if "I" in sel:
        outer = [_nanmax(r["series"].get("II.outer", [])) for r in runs]
        sup = [_nanmax(r["series"].get("I.sup_norm", [])) for r in runs]
        per = {"max_distance": outer, "max_sup_norm": sup, "diameter": [r["scalars"].get("I.diameter") for r in runs],
               "n_k": n_k, "pass": [_le(o, thr) for o in outer]}
        items.append(_fraction_item(f"I.relative_compactness[{label}]", per, cfg,
                                    {"ball": interval.sigma_high, "sup_norm_limit": interval.sigma_high + thr}, {"eps": thr}))
    if "II" in sel:
        outer = [_nanmax(r["series"].get("II.outer", [])) for r in runs]
        per = {"outer": outer, "n_k": n_k, "pass": [_le(o, thr) for o in outer]}
        items.append(_fraction_item(f"II.outer[{label}]", per, cfg, {"ball": interval.sigma_high, "upper": thr}, {"threshold": thr}))
    if "III" in sel:
        med = [(r["series"].get("III.coverage_median") or [None])[-1] for r in runs]
        mono = [bool(np.all(np.diff(r["series"].get("III.coverage_median", [])) <= 0)) for r in runs]
        known = [x for x in med if x is not None]
        overall = float(np.median(known)) if known else None
        items.append({
            "name": f"III.coverage[{label}]",
            "values": {"terminal_median": med, "median_over_seeds": overall, "non_increasing": mono, "n_k": n_k},
            "tolerances": {"threshold": cfg["coverage_threshold"]},
            "bounds": {"ball": interval.sigma_low, "upper": cfg["coverage_threshold"]},
            "pass": bool(all(mono) and _le(overall, cfg["coverage_threshold"])),
        })
    if "IV" in sel and beta is not None:
        # distances scale linearly with beta, so thresholds are expressed for K_1
        outer = [_nanmax(r["series"].get("IV.outer", [])) for r in runs]
        cov = [(r["series"].get("IV.coverage_median") or [None])[-1] for r in runs]
        per = {"outer": outer, "coverage_median": cov, "n_k": n_k,
               "pass": [_le(o, thr * beta) and _le(c, cfg["coverage_threshold"] * beta) for o, c in zip(outer, cov)]}
        items.append(_fraction_item(f"IV.cluster[{label}]", per, cfg,
                                    {"ball": beta, "outer_upper": thr * beta, "coverage_upper": cfg["coverage_threshold"] * beta},
                                    {"threshold": thr}))
    lo_b, hi_b = cfg["band"]
    for name in cfg["maps"]:
        ups = [_nanmax([abs(v) for v in r["series"][f"map.{name}"]]) for r in runs]
        top_lo = image_bounds(name, beta if beta is not None else interval.sigma_low)[1]
        top_hi = image_bounds(name, beta if beta is not None else interval.sigma_high)[1]
        band = (lo_b * top_lo, hi_b * top_hi)
        if top_hi == 0:
            ok = [_le(u, cfg["tol"]) for u in ups]
        else:
            ok = [u is not None and band[0] <= u <= band[1] for u in ups]
        items.append(_fraction_item(f"map.{name}[{label}]", {"running_max_abs": ups, "n_k": n_k, "pass": ok}, cfg,
                                    {"image_upper": [top_lo, top_hi], "band": list(band)}, {"band": [lo_b, hi_b]}))
    for e in cfg["examples"]:
        key = _example_key(e)
        iv = VolatilityInterval(beta, beta) if beta is not None else interval
        lo_c, hi_c = example_bounds(e, iv)
        band = (e["band"][0] * lo_c, e["band"][1] * hi_c)
        rm = [r["scalars"][f"{key}.running_max"] for r in runs]
        ok = [v is not None and band[0] <= v <= band[1] for v in rm]
        items.append(_fraction_item(f"{key}[{label}]", {"running_max": rm, "at": e["at"], "pass": ok}, cfg,
                                    {"constant": [lo_c, hi_c], "band": list(band)}, {"band": e["band"]}))
    return items


def _rows(cfg, grouped) -> list[dict]:
    rows = []
    for pi, runs in enumerate(grouped):
        label = cfg.policies[pi].name
        for j, r in enumerate(runs):
            for k, u in enumerate(r["n_k"]):
                row = {"policy": label, "seed": j, "n_k": u}
                for key, vals in r["series"].items():
                    row[key] = vals[k]
                rows.append(row)
    return rows


def run_invariance_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Simulate one long path per (policy, seed) and report items I-IV plus configured maps and examples.

    Per-seed checks use schedule entries n_k >= burn_in. Aggregated items pass
    when at least ``pass_fraction`` of seeds pass.
    """
    grouped = _collect(config)
    items = []
    for pi, runs in enumerate(grouped):
        items.extend(_items_for(config, pi, runs))
    sched = schedule_from_config(config)
    return ExperimentReport(config.hash, config["seed"], items, _rows(config, grouped), sched.truncated)


def functional_image_experiment(map_name: str, config: ExperimentConfig) -> ExperimentReport:
    """Running extremes of map(zeta_{n_k}) against the image of the relevant Strassen ball."""
    image_bounds(map_name, 1.0)  # validates the name
    cfg = config.with_overrides(items=[], maps=[map_name], examples=[])
    return run_invariance_experiment(cfg)
