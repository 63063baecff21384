"""Acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that pytest prints in an "acceptance
criteria" section at the end of the run; run this file directly to get the
same lines without pytest's own output.
"""

import json
import math
import time
from pathlib import Path

import numpy as np
import pytest

from glil.cli import run_cli
from glil.config import load_config
from glil.core import TestFunction, TimeGrid, VolatilityInterval
from glil.gheat import (
    PdeSolverParams,
    check_tail_monotonicity,
    conjugate_expectation,
    g_expectation,
    shift_inequality_margins,
    tol_pde,
)
from glil.lil import example_bounds, run_invariance_experiment
from glil.paths import (
    ConstantPolicy,
    PiecewiseDeterministicPolicy,
    RegimeSwitchingPolicy,
    SignFeedbackPolicy,
    driver_noise,
    realized_quadratic_variation,
    simulate_path,
    simulate_paths,
)
from glil.strassen import RescaledPath, dist_to_strassen_ball

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
IV = VolatilityInterval(1.0, 2.0)


def _frac(flags):
    flags = list(flags)
    return sum(flags) / len(flags)


def test_c01_g_normal_second_moments(record_criterion):
    t0 = time.perf_counter()
    upper = g_expectation(TestFunction.quadratic(), 1.0, IV)
    lower = -g_expectation(TestFunction.neg_quadratic(), 1.0, IV)
    elapsed = time.perf_counter() - t0
    ok = abs(upper - 4.0) <= 0.005 * 4.0 and abs(lower - 1.0) <= 0.005 and elapsed < 10
    record_criterion(1, ok, f"E[x^2]={upper:.6f} (4 ±0.5%), -E[-x^2]={lower:.6f} (1 ±0.5%), {elapsed:.2f}s (<10s)")
    assert ok


def test_c02_convex_concave_closed_forms(record_criterion):
    cases = {
        "|x|": (TestFunction.absolute(), 2.0 * math.sqrt(2 / math.pi)),  # sigma_high sqrt(2/pi)
        "x^4": (TestFunction.power(4), 3 * 2.0**4),
        "-x^4": (TestFunction.power(4).scaled(-1), -3 * 1.0**4),
        "exp": (TestFunction.exp(), math.exp(2.0**2 / 2)),
    }
    errs = {k: abs(g_expectation(phi, 1.0, IV) / ref - 1) for k, (phi, ref) in cases.items()}
    ok = all(e <= 0.005 for e in errs.values())
    record_criterion(2, ok, "relative errors " + ", ".join(f"{k}={e:.1e}" for k, e in errs.items()) + " (<=5e-3)")
    assert ok


def test_c03_shift_inequality(record_criterion):
    bs = (-2, -1, -0.5, 0, 0.5, 1, 2)
    margins = shift_inequality_margins(TestFunction.bump(1.0), bs, IV)
    worst = min(margins.values())
    ok = worst >= -1e-4
    record_criterion(3, ok, f"min margin over b in {list(bs)} = {worst:.3e} (>= -1e-4)")
    assert ok


def test_c04_tail_monotonicity(record_criterion):
    rows = []
    for s in (0.25, 0.5, 1.0):
        rows += [(s, r) for r in check_tail_monotonicity(s, 2 * s, (0.5, 1.0, 2.0), IV, delta=0.01)]
    # conservative comparison: upper sandwich at s vs lower sandwich at t
    slack = min(r.bounds_t[0] + 1e-4 - r.bounds_s[1] for _, r in rows)
    ok = all(r.holds for _, r in rows)
    record_criterion(4, ok, f"{sum(r.holds for _, r in rows)}/9 (s, y) pairs hold; min slack {slack:.4f}")
    assert ok


def test_c05_dual_representation_dominance(record_criterion):
    rng = np.random.default_rng(20240605)
    knots = np.linspace(-4, 4, 9)
    phis = [TestFunction.tabulated(knots, rng.uniform(-1, 1, size=9)) for _ in range(200)]
    policies = [ConstantPolicy(1.0), ConstantPolicy(2.0), SignFeedbackPolicy(2.0, 1.0),
                RegimeSwitchingPolicy(5.0, (1.0, 2.0)), PiecewiseDeterministicPolicy((0.5,), (2.0, 1.0))]
    grid, n = TimeGrid(1.0, 100), 4000
    noise = driver_noise(grid, 5, n)
    terminals = [simulate_paths(p, grid, 5, n, noise=noise)[:, -1] for p in policies]
    params = PdeSolverParams(points=401)
    ok_count = total = 0
    for phi in phis:
        pde = g_expectation(phi, 1.0, IV, params)
        for xT in terminals:
            v = phi(xT)
            se = v.std(ddof=1) / math.sqrt(n)
            ok_count += v.mean() <= pde + 3 * se + tol_pde(pde)
            total += 1
    frac = ok_count / total
    ok = frac >= 0.99
    record_criterion(5, ok, f"{ok_count}/{total} MC estimates <= PDE + 3 se + tol ({frac:.1%}, need >= 99%)")
    assert ok


def test_c06_quadratic_variation(record_criterion):
    # horizon 100 at dt = 1e-4; see the ledger for why the horizon is not 1
    grid = TimeGrid(100.0, 1_000_000)
    policies = [ConstantPolicy(1.0), ConstantPolicy(2.0), SignFeedbackPolicy(2.0, 1.0), RegimeSwitchingPolicy(0.5, (1.0, 2.0))]
    lo, hi = IV.var_low - 0.05, IV.var_high + 0.05
    qvs = []
    for pol in policies:
        for seed in range(20):
            p = simulate_path(pol, grid, seed)
            qvs.append(realized_quadratic_variation(p, 0.0, grid.horizon) / grid.horizon)
    ok = all(lo <= q <= hi for q in qvs)
    record_criterion(6, ok, f"QV/T over {len(qvs)} paths in [{min(qvs):.4f}, {max(qvs):.4f}] (need within [{lo:.2f}, {hi:.2f}])")
    assert ok


def test_c07_strassen_distance_oracle(record_criterion):
    cp = pytest.importorskip("cvxpy")

    def oracle(v, beta):
        m = len(v) - 1
        y, t = cp.Variable(m + 1), cp.Variable()
        cp.Problem(cp.Minimize(t), [y[0] == 0, cp.abs(y - v) <= t, m * cp.sum_squares(cp.diff(y)) <= beta**2]).solve()
        return float(t.value)

    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 9))
        v = np.concatenate([[0.0], np.cumsum(rng.normal(size=m) * rng.uniform(0.1, 2.0))])
        for beta in (0.5, 1.0, 2.0):
            worst = max(worst, abs(dist_to_strassen_ball(RescaledPath(v), beta, 1e-5) - oracle(v, beta)))
    line = dist_to_strassen_ball(RescaledPath.line(2.0, 64), 1.0, 1e-4)
    ok = worst <= 1e-3 and abs(line - 1.0) <= 1e-3
    record_criterion(7, ok, f"max |bisection - conic oracle| = {worst:.1e} over 150 cases; d(2t, K_1) = {line:.5f}")
    assert ok


def _seed_fractions(report, label, beta):
    outer = report.item(f"IV.cluster[{label}]")["values"]["outer"]
    rm = report.item(f"map.evaluate_at_1[{label}]")["values"]["running_max_abs"]
    band = [0.75 * beta, 1.05 * beta]
    return (_frac(band[0] <= r <= band[1] for r in rm), _frac(o <= 0.35 * beta for o in outer), rm)


@pytest.fixture(scope="module")
def classical_report():
    t0 = time.perf_counter()
    rep = run_invariance_experiment(load_config(CONFIGS / "classical.json"))
    return rep, time.perf_counter() - t0


@pytest.mark.slow
def test_c08_classical_regression(record_criterion, classical_report):
    rep, elapsed = classical_report
    band_frac, outer_frac, rm = _seed_fractions(rep, "constant(1)", 1.0)
    ok = band_frac >= 0.9 and outer_frac >= 0.9 and elapsed < 300
    record_criterion(8, ok, f"running max |zeta(1)| in [0.75, 1.05] for {band_frac:.0%} of seeds (need 90%), "
                            f"outer <= 0.35 for {outer_frac:.0%}; median running max {np.median(rm):.3f}; {elapsed:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def envelope_report():
    return run_invariance_experiment(load_config(CONFIGS / "g_envelope.json"))


@pytest.mark.slow
def test_c09_g_envelope(record_criterion, envelope_report):
    rep = envelope_report
    parts, ok = [], True
    for sigma in (1.0, 2.0):
        band_frac, outer_frac, _ = _seed_fractions(rep, f"constant({sigma:g})", sigma)
        ok &= band_frac >= 0.9 and outer_frac >= 0.9
        parts.append(f"sigma={sigma:g}: band {band_frac:.0%}, outer {outer_frac:.0%}")
    rs = "regime_switching(0.001, [1.0, 2.0])"
    outer = rep.item(f"II.outer[{rs}]")["values"]["outer"]
    cov = rep.item(f"III.coverage[{rs}]")["values"]
    outer_frac = _frac(o <= 0.35 for o in outer)
    mono = all(cov["non_increasing"])
    ok &= outer_frac >= 0.9 and mono and cov["median_over_seeds"] <= 0.6
    parts.append(f"regime: outer<=0.35 {outer_frac:.0%}, coverage non-increasing={mono}, "
                 f"terminal median {cov['median_over_seeds']:.3f} (<=0.6)")
    record_criterion(9, ok, "; ".join(parts))
    assert ok


@pytest.fixture(scope="module")
def examples_report():
    return run_invariance_experiment(load_config(CONFIGS / "examples.json"))


@pytest.mark.slow
def test_c10_abs_power_example(record_criterion, examples_report):
    fracs = []
    for sigma in (1.0, 2.0):
        item = examples_report.item(f"example.abs_power_a2[constant({sigma:g})]")
        c = 4 * sigma**2 / math.pi**2
        fracs.append(_frac(0.5 * c <= v <= 1.3 * c for v in item["values"]["running_max"]))
    a2 = example_bounds({"kind": "abs_power", "a": 2.0}, IV)
    a1 = example_bounds({"kind": "abs_power", "a": 1.0}, IV)
    quad_err = max(abs(a2[0] - 4 / math.pi**2), abs(a2[1] - 16 / math.pi**2),
                   abs(a1[0] - 1 / math.sqrt(3)), abs(a1[1] - 2 / math.sqrt(3)))
    ok = min(fracs) >= 0.9 and quad_err <= 1e-6
    record_criterion(10, ok, f"T_n running max in band for {fracs[0]:.0%} (sigma=1), {fracs[1]:.0%} (sigma=2) of seeds "
                             f"(need 90%); quadrature error {quad_err:.1e} (<=1e-6)")
    assert ok


@pytest.mark.slow
def test_c11_weighted_sum_example(record_criterion, examples_report):
    c = example_bounds({"kind": "weighted_sum", "alpha": 0.0}, VolatilityInterval(1.0, 1.0))[0]
    const_err = abs(c - 1 / math.sqrt(3))
    fracs = []
    for sigma in (1.0, 2.0):
        item = examples_report.item(f"example.weighted_sum_alpha0[constant({sigma:g})]")
        ref = sigma / math.sqrt(3)
        fracs.append(_frac(0.4 * ref <= v <= 1.3 * ref for v in item["values"]["running_max"]))
    ok = const_err <= 1e-12 and min(fracs) >= 0.9
    record_criterion(11, ok, f"constant error {const_err:.1e} (<=1e-12); S_n running max in band for "
                             f"{fracs[0]:.0%} (sigma=1), {fracs[1]:.0%} (sigma=2) of seeds (need 90%)")
    assert ok


def test_c12_determinism(record_criterion, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"interval": [1, 2], "horizon": 50_000, "n_seeds": 3,
                               "policies": [{"kind": "constant", "sigma": 2},
                                            {"kind": "regime_switching", "rate": 0.01, "values": [1, 2]}],
                               "examples": [{"kind": "abs_power", "a": 2}]}))
    codes = [run_cli(["lil", "--config", str(cfg), "--seed", "7", "--out", str(tmp_path / d)]) for d in ("a", "b")]
    same = all((tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in ("lil_report.json", "lil_report.csv"))
    ok = codes == [0, 0] and same
    record_criterion(12, ok, f"exit codes {codes}; JSON and CSV reports byte-identical: {same}")
    assert ok


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
