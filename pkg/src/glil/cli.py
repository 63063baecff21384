"""Command-line entry point: ``glil <subcommand> [options]``.

Exit codes: 0 success, 1 domain or configuration error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import __version__
from .config import DEFAULTS, ExperimentConfig, config_hash, load_config
from .core import TestFunction, TimeGrid, VolatilityInterval
from .errors import ConfigError, DomainError, GlilError
from .gheat import (
    PdeSolverParams,
    abs_tail_bounds,
    check_tail_monotonicity,
    conjugate_expectation,
    g_expectation,
    shift_inequality_margins,
    tol_pde,
    upper_distribution_bounds,
)
from .lil import example_bounds, run_invariance_experiment
from .paths import (
    ConstantPolicy,
    PathEvent,
    PiecewiseDeterministicPolicy,
    PolicyFamily,
    RegimeSwitchingPolicy,
    SignFeedbackPolicy,
    estimate_capacity_bounds,
    policy_from_dict,
    realized_quadratic_variation,
    simulate_path,
)
from .strassen import RescaledPath, ball_net, dist_to_strassen_ball, net_radius, path_energy

log = logging.getLogger("glil")

SEED_ENV = "GLIL_SEED"


class UsageError(ConfigError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# argument parsing helpers


def parse_interval(text: str) -> VolatilityInterval:
    parts = text.split(",")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise DomainError(f"--sigma expects 'low,high' or a single value, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2:
        raise DomainError(f"--sigma expects 'low,high', got {text!r}")
    return VolatilityInterval(*vals)


def _floats(text, what):
    try:
        return [float(x) for x in text.split(",") if x]
    except ValueError:
        raise DomainError(f"bad {what}: {text!r}") from None


def parse_phi(spec: str) -> TestFunction:
    """x2, negx2, x, abs, negabs, pow:A, negpow:A, bump:W, exp, negexp, const:C."""
    name, _, arg = spec.partition(":")
    neg = name.startswith("neg")
    base = name[3:] if neg else name
    try:
        if base == "x2":
            phi = TestFunction.quadratic()
        elif base == "x":
            phi = TestFunction.identity()
        elif base == "abs":
            phi = TestFunction.absolute()
        elif base == "pow":
            phi = TestFunction.power(float(arg))
        elif base == "bump":
            phi = TestFunction.bump(float(arg or 1.0))
        elif base == "exp":
            phi = TestFunction.exp()
        elif base == "const":
            phi = TestFunction.constant(float(arg))
        else:
            raise DomainError(f"unknown test function {spec!r}")
    except ValueError as exc:
        raise DomainError(f"bad test function {spec!r}: {exc}") from None
    return -phi if neg else phi


def parse_policy(spec: str):
    """constant:S, sign:POS,NEG, regime:RATE:V1,V2,..., piecewise:B1,..:V1,..,VK, or a JSON object."""
    try:
        return _parse_policy(spec)
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, GlilError):
            raise
        raise DomainError(f"bad policy {spec!r}: {exc}") from None


def _parse_policy(spec):
    if spec.lstrip().startswith("{"):
        return policy_from_dict(json.loads(spec))
    kind, _, rest = spec.partition(":")
    if kind == "constant":
        return ConstantPolicy(float(rest))
    if kind == "sign":
        pos, neg = _floats(rest, "sign policy")
        return SignFeedbackPolicy(pos, neg)
    if kind == "regime":
        rate, _, vals = rest.partition(":")
        return RegimeSwitchingPolicy(float(rate), tuple(_floats(vals, "regime levels")))
    if kind == "piecewise":
        bps, _, vals = rest.partition(":")
        return PiecewiseDeterministicPolicy(tuple(_floats(bps, "breakpoints")), tuple(_floats(vals, "levels")))
    raise DomainError(f"unknown policy {spec!r}")


def parse_event(spec: str) -> PathEvent:
    """terminal_abs_geq:Y, terminal_leq:Y, sup_norm_geq:Y."""
    kind, _, y = spec.partition(":")
    try:
        return PathEvent(kind, float(y))
    except ValueError:
        raise DomainError(f"bad event {spec!r}") from None


def resolve_seed(flag: int | None, config_seed: int | None = None) -> int:
    """Flag, then $GLIL_SEED, then the config file, then the default."""
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip() != "":
        try:
            return int(env.strip(), 10)
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be a decimal integer, got {env!r}") from None
    if config_seed is not None:
        return config_seed
    return DEFAULTS["seed"]


def _read_config_json(path):
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        from .errors import ParseError

        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None


# ---------------------------------------------------------------------------
# reports


def _item(name, values, tolerances=None, bounds=None, passed=True):
    return {"name": name, "values": values, "tolerances": tolerances or {}, "bounds": bounds or {}, "pass": bool(passed)}


def _write(out: str | None, stem: str, report: dict, csv_text: str | None = None):
    if out is None:
        return
    d = Path(out)
    try:
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{stem}.json").write_text(json.dumps(report, sort_keys=True, indent=2, allow_nan=False) + "\n", encoding="utf-8")
        if csv_text is not None:
            (d / f"{stem}.csv").write_text(csv_text, encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot write to {d}: {exc.strerror}") from None
    log.info("wrote %s", d / f"{stem}.json")


def _simple_report(args, seed, items):
    settings = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out", "verbose", "seed", "config")}
    return {"config_hash": config_hash(settings), "seed": seed, "items": items, "wallclock_ms": None}


# ---------------------------------------------------------------------------
# subcommands


def cmd_gheat(args) -> int:
    interval = parse_interval(args.sigma)
    params = PdeSolverParams(points=args.points)
    items = []
    if args.mode == "value":
        phi = parse_phi(args.phi)
        v = g_expectation(phi, args.t, interval, params)
        lower = conjugate_expectation(phi, args.t, interval, params)
        print(f"E[{phi.describe()}(B_{args.t:g})] = {v:.6f} ± {tol_pde(v):.1e}")
        print(f"lower expectation = {lower:.6f} ± {tol_pde(lower):.1e}")
        items.append(_item("upper", {"value": v}, {"abs": tol_pde(v)}))
        items.append(_item("lower", {"value": lower}, {"abs": tol_pde(lower)}))
    elif args.mode == "bounds":
        lo, hi = upper_distribution_bounds(args.y, args.t, interval, args.delta, params)
        print(f"V(B_{args.t:g} <= {args.y:g}) in [{lo:.6f}, {hi:.6f}]")
        items.append(_item("cdf_bounds", {"lower": lo, "upper": hi}, {"delta": args.delta}))
        lo, hi = abs_tail_bounds(args.y, args.t, interval, args.delta, params)
        print(f"V(|B_{args.t:g}| >= {args.y:g}) in [{lo:.6f}, {hi:.6f}]")
        items.append(_item("abs_tail_bounds", {"lower": lo, "upper": hi}, {"delta": args.delta}))
    elif args.mode == "shift":
        phi = parse_phi(args.phi)
        margins = shift_inequality_margins(phi, _floats(args.b, "shifts"), interval, args.t, params)
        for b, m in margins.items():
            print(f"b={b:+g}  margin={m:.6g}  {'ok' if m >= -1e-4 else 'VIOLATED'}")
        items.append(_item("shift_margins", {str(b): m for b, m in margins.items()}, {"abs": 1e-4}, {"lower": 0.0},
                           all(m >= -1e-4 for m in margins.values())))
    else:
        rows = check_tail_monotonicity(args.s, args.t, _floats(args.ys, "levels"), interval, args.delta, params)
        for r in rows:
            print(f"y={r.y:g}  V(|B_s|>=y)={r.v_s:.6f}  V(|B_t|>=y)={r.v_t:.6f}  {'ok' if r.holds else 'VIOLATED'}")
        items.append(_item("tail_monotonicity", {str(r.y): [r.v_s, r.v_t] for r in rows}, {"abs": 1e-4}, {}, all(r.holds for r in rows)))
    _write(args.out, "gheat", _simple_report(args, None, items))
    return 0


def cmd_simulate(args) -> int:
    interval = parse_interval(args.sigma)
    policy = parse_policy(args.policy)
    policy.validate(interval)
    seed = resolve_seed(args.seed)
    grid = TimeGrid(args.horizon, args.steps)
    items, lines = [], ["path,terminal,qv_per_unit_time"]
    for i in range(args.paths):
        p = simulate_path(policy, grid, seed, i)
        qv = realized_quadratic_variation(p, 0.0, grid.horizon) / grid.horizon
        inside = interval.var_low - 0.05 <= qv <= interval.var_high + 0.05
        print(f"path {i}: B_T={p.values[-1]:.6f}  QV/T={qv:.6f}  {'in' if inside else 'OUTSIDE'} [{interval.var_low:g}, {interval.var_high:g}]")
        lines.append(f"{i},{p.values[-1]!r},{qv!r}")
        items.append(_item(f"qv[{i}]", {"qv_per_unit_time": qv, "terminal": float(p.values[-1])}, {"abs": 0.05},
                           {"lower": interval.var_low, "upper": interval.var_high}, inside))
    _write(args.out, "simulate", _simple_report(args, seed, items), "\n".join(lines) + "\n")
    return 0


def cmd_capacity(args) -> int:
    interval = parse_interval(args.sigma)
    family = PolicyFamily(tuple(parse_policy(s) for s in args.family.split(";")))
    seed = resolve_seed(args.seed)
    event = parse_event(args.event)
    grid = TimeGrid(args.t, args.steps)
    cb = estimate_capacity_bounds(event, family, grid, args.paths, seed, interval)
    print(f"V({event.describe()}) >= {cb.V_lower:.4f} ± {cb.V_stderr:.4f}  [{cb.V_policy}]")
    print(f"v({event.describe()}) <= {cb.v_upper:.4f} ± {cb.v_stderr:.4f}  [{cb.v_policy}]")
    items = [_item("capacity", {"V_lower": cb.V_lower, "v_upper": cb.v_upper, "V_policy": cb.V_policy, "v_policy": cb.v_policy,
                                "n_paths": cb.n_paths}, {"V_stderr": cb.V_stderr, "v_stderr": cb.v_stderr})]
    _write(args.out, "capacity", _simple_report(args, seed, items))
    return 0


def cmd_strassen(args) -> int:
    items = []
    if args.values is not None or args.line is not None:
        if args.values is not None:
            x = RescaledPath([0.0] + _floats(args.values, "path values"))
        else:
            x = RescaledPath.line(args.line, args.m)
        d = dist_to_strassen_ball(x, args.beta, args.tol)
        digits = max(0, -math.floor(math.log10(args.tol)))
        print(f"energy={path_energy(x):.6f}  dist(x, K_{args.beta:g}) = {d:.{digits}f} ± {args.tol:g}")
        items.append(_item("distance", {"distance": d, "energy": path_energy(x)}, {"abs": args.tol}))
    if args.net is not None:
        m, levels = (int(v) for v in _floats(args.net, "net m,levels"))
        net = ball_net(args.beta, m, levels)
        r = net_radius(net, args.beta, seed=resolve_seed(args.seed))
        print(f"net(beta={args.beta:g}, m={m}, levels={levels}): {len(net)} paths, sampled radius {r:.4f}")
        items.append(_item("net", {"size": len(net), "radius": r}))
    if not items:
        raise DomainError("strassen needs --values, --line or --net")
    _write(args.out, "strassen", _simple_report(args, None, items))
    return 0


def _load_experiment(args) -> ExperimentConfig:
    raw = _read_config_json(args.config)
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig.from_dict(raw)
    seed = resolve_seed(args.seed, raw.get("seed") if isinstance(raw, dict) else None)
    if args.workers is not None:
        cfg = cfg.with_overrides(workers=args.workers)
    return cfg.with_overrides(seed=seed) if seed != cfg["seed"] else cfg


def cmd_lil(args) -> int:
    cfg = _load_experiment(args)
    if args.verify is not None:
        try:
            stored = json.loads(Path(args.verify).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read report {args.verify}: {exc}") from None
        ok = stored.get("config_hash") == cfg.hash and stored.get("seed") == cfg["seed"]
        print(f"report {'matches' if ok else 'does NOT match'} config hash {cfg.hash[:12]} and seed {cfg['seed']}")
        return 0 if ok else 1
    t0 = time.perf_counter()
    report = run_invariance_experiment(cfg)
    ms = (time.perf_counter() - t0) * 1000.0
    log.info("experiment took %.0f ms", ms)
    if args.record_wallclock:
        report.wallclock_ms = ms
    for it in report.items:
        print(f"{'PASS' if it['pass'] else 'FAIL'}  {it['name']}")
    _write(args.out, "lil_report", report.to_dict(), report.to_csv())
    if args.out is not None:
        (Path(args.out) / "config.json").write_text(cfg.dumps(), encoding="utf-8")
    return 0


def cmd_examples(args) -> int:
    interval = parse_interval(args.sigma)
    items = []
    if args.a is not None:
        lo, hi = example_bounds({"kind": "abs_power", "a": args.a}, interval)
        print(f"abs-power a={args.a:g}: limsup T_n in [{lo:.10g}, {hi:.10g}]")
        items.append(_item("abs_power_bounds", {"lower": lo, "upper": hi}, {"quadrature": 1e-9}))
    if args.alpha is not None:
        lo, hi = example_bounds({"kind": "weighted_sum", "alpha": args.alpha}, interval)
        print(f"weighted-sum alpha={args.alpha:g}: limsup S_n in [{lo:.10g}, {hi:.10g}]")
        items.append(_item("weighted_sum_bounds", {"lower": lo, "upper": hi}))
    if args.config is not None:
        cfg = _load_experiment(args)
        report = run_invariance_experiment(cfg.with_overrides(items=[], maps=[]))
        for it in report.items:
            print(f"{'PASS' if it['pass'] else 'FAIL'}  {it['name']}  running max {it['values']['running_max']}")
        items.extend(report.items)
        _write(args.out, "examples", {**report.to_dict(), "items": items}, report.to_csv())
        return 0
    if not items:
        raise DomainError("examples needs --a, --alpha or --config")
    _write(args.out, "examples", _simple_report(args, None, items))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON experiment config")
    common.add_argument("--seed", type=int, help=f"overrides ${SEED_ENV} and the config seed")
    common.add_argument("--out", help="directory for JSON/CSV reports")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="glil", description="G-expectation LIL toolkit")
    p.add_argument("--version", action="version", version=f"glil {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gheat", parents=[common], help="G-heat values, distribution bounds, lemma checks")
    g.add_argument("--mode", choices=["value", "bounds", "shift", "tail"], default="value")
    g.add_argument("--phi", default="x2", help="x2, negx2, x, abs, pow:A, bump:W, exp, const:C (neg prefix negates)")
    g.add_argument("--t", type=float, default=1.0)
    g.add_argument("--sigma", default="1,2", help="low,high")
    g.add_argument("--points", type=int, default=2001)
    g.add_argument("--y", type=float, default=0.0)
    g.add_argument("--delta", type=float, default=0.01)
    g.add_argument("--b", default="-2,-1,-0.5,0,0.5,1,2", help="shifts for --mode shift")
    g.add_argument("--s", type=float, default=0.5, help="earlier time for --mode tail")
    g.add_argument("--ys", default="0.5,1,2", help="levels for --mode tail")
    g.set_defaults(func=cmd_gheat)

    s = sub.add_parser("simulate", parents=[common], help="simulate paths and realized quadratic variation")
    s.add_argument("--policy", default="constant:1")
    s.add_argument("--sigma", default="1,2")
    s.add_argument("--horizon", type=float, default=1.0)
    s.add_argument("--steps", type=int, default=10_000)
    s.add_argument("--paths", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("capacity", parents=[common], help="Monte Carlo capacity bounds over a policy family")
    c.add_argument("--event", default="terminal_abs_geq:1")
    c.add_argument("--family", default="constant:1;constant:2", help="';'-separated policies")
    c.add_argument("--sigma", default="1,2")
    c.add_argument("--t", type=float, default=1.0)
    c.add_argument("--steps", type=int, default=100)
    c.add_argument("--paths", type=int, default=10_000)
    c.set_defaults(func=cmd_capacity)

    k = sub.add_parser("strassen", parents=[common], help="distances to Strassen balls and nets")
    k.add_argument("--beta", type=float, default=1.0)
    k.add_argument("--values", help="path values at 1/m..1 (x(0)=0 implied)")
    k.add_argument("--line", type=float, help="slope of a straight path")
    k.add_argument("--m", type=int, default=16, help="grid intervals for --line")
    k.add_argument("--net", help="m,levels")
    k.add_argument("--tol", type=float, default=1e-4)
    k.set_defaults(func=cmd_strassen)

    l = sub.add_parser("lil", parents=[common], help="long-path invariance experiment")
    l.add_argument("--workers", type=int)
    l.add_argument("--verify", metavar="REPORT", help="check a report's config hash and seed instead of running")
    l.add_argument("--record-wallclock", action="store_true", help="store timing in the report (breaks byte-identity)")
    l.set_defaults(func=cmd_lil)

    e = sub.add_parser("examples", parents=[common], help="weighted-sum and abs-power bounds and statistics")
    e.add_argument("--sigma", default="1,2")
    e.add_argument("--a", type=float)
    e.add_argument("--alpha", type=float)
    e.add_argument("--workers", type=int)
    e.set_defaults(func=cmd_examples)
    return p


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), stream=sys.stderr, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except GlilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("internal error", exc_info=True)
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
