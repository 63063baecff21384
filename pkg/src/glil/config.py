"""Experiment configuration: JSON loading, validation, defaults and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .core import VolatilityInterval
from .errors import DomainError, ParseError, ValidationError
from .paths import VolatilityPolicy, policy_from_dict

__all__ = ["ExperimentConfig", "DEFAULTS", "load_config", "config_hash", "canonical_json"]

DEFAULTS = {
    "interval": [1.0, 1.0],
    "policies": [{"kind": "constant", "sigma": 1.0}],
    "schedule": {"kind": "geometric", "c": 1.5, "start": 1, "count": None},
    "horizon": 1_000_000,
    "horizon_cap": 10_000_000,
    "out_grid_points": 256,
    "m": 4,
    "net_levels": 1,
    "tol": 1e-3,
    "outer_threshold": 0.35,
    "coverage_threshold": 0.6,
    "band": [0.75, 1.05],
    "pass_fraction": 0.9,
    "burn_in": None,
    "n_seeds": 20,
    "seed": 42,
    "items": ["I", "II", "III", "IV"],
    "maps": ["evaluate_at_1"],
    "examples": [],
    "workers": 1,
}

SCHEDULE_KEYS = {
    "geometric": {"kind": "geometric", "c": 1.5, "start": 1, "count": None},
    "superpow": {"kind": "superpow", "alpha": 0.1, "start": 2, "count": None},
    "explicit": {"kind": "explicit", "values": []},
}

EXAMPLE_KEYS = {
    "abs_power": {"kind": "abs_power", "a": 2.0, "at": None, "band": [0.5, 1.3]},
    "weighted_sum": {"kind": "weighted_sum", "alpha": 0.0, "at": None, "band": [0.4, 1.3]},
}

ITEMS = ("I", "II", "III", "IV")
MAPS = ("evaluate_at_1", "running_max", "sup_norm", "integral", "zero")

# keys that do not change results and so stay out of the hash
_UNHASHED = ("seed", "workers")


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def config_hash(d: dict) -> str:
    body = {k: v for k, v in d.items() if k not in _UNHASHED}
    return hashlib.sha256(canonical_json(body).encode("utf-8")).hexdigest()


def _line_of(text: str | None, key: str) -> int | None:
    if not text:
        return None
    needle = f'"{key}"'
    for i, line in enumerate(text.splitlines(), 1):
        if needle in line:
            return i
    return None


class _Checker:
    """Collects type problems (raised as ParseError) and range problems (ValidationError)."""

    def __init__(self, text=None):
        self.text = text
        self.violations: list[str] = []

    def type_error(self, field, expected, got):
        leaf = field.split(".")[-1].split("[")[0]
        raise ParseError(f"expected {expected}, got {type(got).__name__} {got!r}", _line_of(self.text, leaf), field)

    def number(self, field, v, integer=False, allow_none=False):
        if v is None and allow_none:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            self.type_error(field, "an integer" if integer else "a number", v)
        if integer:
            if isinstance(v, float) and not v.is_integer():
                self.type_error(field, "an integer", v)
            return int(v)
        if not math.isfinite(v):
            self.type_error(field, "a finite number", v)
        return float(v)

    def listof(self, field, v):
        if not isinstance(v, list):
            self.type_error(field, "a list", v)
        return v

    def mapping(self, field, v):
        if not isinstance(v, dict):
            self.type_error(field, "an object", v)
        return v

    def unknown(self, field, d, allowed):
        for k in sorted(set(d) - set(allowed)):
            self.violations.append(f"{field + '.' if field else ''}{k}: unknown key")

    def require(self, ok, message):
        if not ok:
            self.violations.append(message)


def _fill(user: dict, defaults: dict) -> dict:
    out = copy.deepcopy(defaults)
    out.update(copy.deepcopy(user))
    return out


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment settings; ``data`` is the defaults-filled JSON object."""

    data: dict

    @classmethod
    def from_dict(cls, raw: dict, text: str | None = None) -> "ExperimentConfig":
        ck = _Checker(text)
        ck.mapping("", raw)
        ck.unknown("", raw, DEFAULTS)
        d = _fill({k: v for k, v in raw.items() if k in DEFAULTS}, DEFAULTS)

        iv = ck.listof("interval", d["interval"])
        if len(iv) != 2:
            ck.type_error("interval", "[sigma_low, sigma_high]", iv)
        d["interval"] = [ck.number("interval[0]", iv[0]), ck.number("interval[1]", iv[1])]
        interval = None
        try:
            interval = VolatilityInterval(*d["interval"])
        except DomainError as exc:
            ck.violations.append(f"interval: {exc}")

        for key in ("horizon", "horizon_cap", "out_grid_points", "m", "net_levels", "n_seeds", "seed", "workers"):
            d[key] = ck.number(key, d[key], integer=True)
        d["burn_in"] = ck.number("burn_in", d["burn_in"], allow_none=True)
        for key in ("tol", "outer_threshold", "coverage_threshold", "pass_fraction"):
            d[key] = ck.number(key, d[key])
        band = ck.listof("band", d["band"])
        d["band"] = [ck.number(f"band[{i}]", b) for i, b in enumerate(band)]

        ck.require(d["horizon"] >= 3, "horizon: must be at least 3")
        ck.require(d["horizon"] <= d["horizon_cap"], f"horizon: {d['horizon']} exceeds horizon_cap {d['horizon_cap']}")
        ck.require(d["m"] >= 1, "m: must be at least 1")
        ck.require(d["out_grid_points"] >= 1 and d["m"] >= 1 and d["out_grid_points"] % max(d["m"], 1) == 0,
                   "out_grid_points: must be a positive multiple of m")
        ck.require(d["net_levels"] >= 1, "net_levels: must be at least 1")
        ck.require(d["n_seeds"] >= 1, "n_seeds: must be at least 1")
        ck.require(d["seed"] >= 0, "seed: must be nonnegative")
        ck.require(d["workers"] >= 1, "workers: must be at least 1")
        ck.require(d["tol"] > 0, "tol: must be positive")
        ck.require(0 < d["pass_fraction"] <= 1, "pass_fraction: must lie in (0, 1]")
        ck.require(len(d["band"]) == 2 and 0 <= d["band"][0] <= d["band"][1], "band: need [low, high] with 0 <= low <= high")
        ck.require(d["burn_in"] is None or 0 <= d["burn_in"] <= d["horizon"], "burn_in: must lie in [0, horizon]")

        d["schedule"] = cls._schedule(ck, d["schedule"], d)
        d["policies"] = cls._policies(ck, d["policies"], interval)
        d["examples"] = cls._examples(ck, d["examples"], d)

        for name, allowed in (("items", ITEMS), ("maps", MAPS)):
            vals = ck.listof(name, d[name])
            for v in vals:
                ck.require(v in allowed, f"{name}: unknown entry {v!r} (allowed: {', '.join(allowed)})")

        if ck.violations:
            raise ValidationError(ck.violations)
        return cls(d)

    @staticmethod
    def _schedule(ck, s, d):
        ck.mapping("schedule", s)
        kind = s.get("kind")
        if kind not in SCHEDULE_KEYS:
            ck.violations.append(f"schedule.kind: unknown schedule kind {kind!r}")
            return s
        ck.unknown("schedule", s, SCHEDULE_KEYS[kind])
        s = _fill({k: v for k, v in s.items() if k in SCHEDULE_KEYS[kind]}, SCHEDULE_KEYS[kind])
        if kind == "geometric":
            s["c"] = ck.number("schedule.c", s["c"])
            ck.require(s["c"] > 1, f"schedule.c: geometric ratio must satisfy c > 1, got {s['c']}")
        elif kind == "superpow":
            s["alpha"] = ck.number("schedule.alpha", s["alpha"])
            bound = 1.0 / (2 * max(d["m"], 1))
            ck.require(0 < s["alpha"] < bound, f"schedule.alpha: need 0 < alpha < 1/(2m) = {bound:g}, got {s['alpha']}")
        if kind in ("geometric", "superpow"):
            s["start"] = ck.number("schedule.start", s["start"], integer=True)
            s["count"] = ck.number("schedule.count", s["count"], integer=True, allow_none=True)
            ck.require(s["start"] >= 1, "schedule.start: must be at least 1")
            ck.require(s["count"] is None or s["count"] >= 1, "schedule.count: must be at least 1")
        else:
            vals = ck.listof("schedule.values", s["values"])
            s["values"] = [ck.number(f"schedule.values[{i}]", v) for i, v in enumerate(vals)]
            ck.require(len(vals) >= 1, "schedule.values: need at least one entry")
            ck.require(all(v > math.e for v in s["values"]), "schedule.values: entries must exceed e")
            ck.require(all(b > a for a, b in zip(s["values"], s["values"][1:])), "schedule.values: must be strictly increasing")
            ck.require(all(v <= d["horizon"] for v in s["values"]), "schedule.values: entries must not exceed horizon")
        return s

    @staticmethod
    def _policies(ck, pols, interval):
        ck.listof("policies", pols)
        ck.require(len(pols) >= 1, "policies: need at least one policy")
        out = []
        for i, p in enumerate(pols):
            ck.mapping(f"policies[{i}]", p)
            try:
                pol = policy_from_dict(p)
                if interval is not None:
                    pol.validate(interval)
                out.append(pol.to_dict())
            except DomainError as exc:
                ck.violations.append(f"policies[{i}]: {exc}")
                out.append(p)
            except (KeyError, TypeError) as exc:
                ck.violations.append(f"policies[{i}]: malformed policy ({exc})")
                out.append(p)
        return out

    @staticmethod
    def _examples(ck, exs, d):
        ck.listof("examples", exs)
        out = []
        for i, e in enumerate(exs):
            field = f"examples[{i}]"
            ck.mapping(field, e)
            kind = e.get("kind")
            if kind not in EXAMPLE_KEYS:
                ck.violations.append(f"{field}.kind: unknown example {kind!r}")
                out.append(e)
                continue
            ck.unknown(field, e, EXAMPLE_KEYS[kind])
            e = _fill({k: v for k, v in e.items() if k in EXAMPLE_KEYS[kind]}, EXAMPLE_KEYS[kind])
            if kind == "abs_power":
                e["a"] = ck.number(f"{field}.a", e["a"])
                ck.require(e["a"] >= 1, f"{field}.a: need a >= 1")
            else:
                e["alpha"] = ck.number(f"{field}.alpha", e["alpha"])
                ck.require(e["alpha"] > -1, f"{field}.alpha: need alpha > -1")
            e["at"] = ck.number(f"{field}.at", e["at"], integer=True, allow_none=True)
            if e["at"] is None:
                e["at"] = d["horizon"]
            ck.require(3 <= e["at"] <= d["horizon"], f"{field}.at: must lie in [3, horizon]")
            e["band"] = [ck.number(f"{field}.band", b) for b in ck.listof(f"{field}.band", e["band"])]
            ck.require(len(e["band"]) == 2 and e["band"][0] <= e["band"][1], f"{field}.band: need [low, high]")
            out.append(e)
        return out

    # accessors ------------------------------------------------------------
    def __getitem__(self, key):
        return self.data[key]

    @property
    def interval(self) -> VolatilityInterval:
        return VolatilityInterval(*self.data["interval"])

    @property
    def policies(self) -> list[VolatilityPolicy]:
        return [policy_from_dict(p) for p in self.data["policies"]]

    @property
    def burn_in(self) -> float:
        b = self.data["burn_in"]
        return self.data["horizon"] / 1000 if b is None else b

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def dumps(self) -> str:
        return json.dumps(self.data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    def with_overrides(self, **kw) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(kw)
        return ExperimentConfig.from_dict(d)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ParseError(f"cannot read {p}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from exc
    return ExperimentConfig.from_dict(raw, text)
