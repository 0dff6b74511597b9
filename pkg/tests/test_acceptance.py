"""Exit criteria for the package, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
Run with ``pytest tests/test_acceptance.py``; add ``--full-protocol`` for the
long convergence run.
"""

import math
import time

import numpy as np
import pytest

from aitjump.cli import main
from aitjump.experiment import ExperimentSpec, census_table, moment_probe, strong_error
from aitjump.model import CASE_1, CASE_2, JumpSpec, ModelParams, classify_regime, monotonicity_constant, RegimeCase
from aitjump.noise import GridConfig, coarsen, generate
from aitjump.rootfind import ImplicitStepProblem, residual, solve_many
from aitjump.scheme import SchemeKind

from oracles import bisect_implicit, sup_grid

CASES = {"1": CASE_1, "2": CASE_2}
JUMPS = {"-0.2x": JumpSpec.linear(-0.2), "x": JumpSpec.identity(), "sin(x)": JumpSpec.sine()}
TABLE_LEVELS = (2, 3, 4)  # h = 1/4, 1/8, 1/16


def census_spec(params, jump, scheme, paths, seed):
    return ExperimentSpec(params, jump, GridConfig(1.0, 4), paths, seed, scheme, TABLE_LEVELS, 4, batch_size=5000)


def conv_spec(params, levels, ref, paths, seed=2024):
    return ExperimentSpec(params, JumpSpec.linear(-0.2), GridConfig(1.0, ref), paths, seed, SchemeKind.BEM, levels, ref)


def test_c1_bem_positivity(report_criterion):
    start = time.perf_counter()
    worst = 0
    for case, params in CASES.items():
        for label, jump in JUMPS.items():
            for _, census in census_table(census_spec(params, jump, SchemeKind.BEM, 10_000, 1)):
                worst = max(worst, census.negative)
    elapsed = time.perf_counter() - start
    ok = worst == 0 and elapsed < 60
    report_criterion(1, "BEM zero negative paths", ok, f"max negative={worst} runtime={elapsed:.1f}s (<60s)")
    assert worst == 0
    assert elapsed < 60


def test_c2_em_negativity(report_criterion):
    start = time.perf_counter()
    headline = census_table(
        ExperimentSpec(CASE_1, JUMPS["-0.2x"], GridConfig(1.0, 2), 100_000, 2, SchemeKind.EM, (2,), 2, batch_size=10_000)
    )[0][1]
    rows = {}
    for case, params in CASES.items():
        for label, jump in JUMPS.items():
            table = census_table(census_spec(params, jump, SchemeKind.EM, 10_000, 3))
            rows[(case, label)] = [c.fraction_negative for _, c in table]
    elapsed = time.perf_counter() - start
    in_band = 0.85 <= headline.fraction_negative <= 0.95
    ordered = all(f[0] > f[1] > f[2] for f in rows.values())
    ok = in_band and ordered and elapsed < 120
    report_criterion(
        2,
        "EM negativity",
        ok,
        f"case1 -0.2x h=1/4 fraction={headline.fraction_negative:.4f} in [0.85,0.95]; "
        f"decreasing in h for all rows={ordered}; runtime={elapsed:.1f}s (<120s)",
    )
    assert in_band
    assert ordered, rows
    assert elapsed < 120


def test_c3_convergence_desk(report_criterion):
    start = time.perf_counter()
    results = {}
    for case, params in CASES.items():
        rep = strong_error(conv_spec(params, (4, 5, 6, 7, 8), 11, 2000))
        results[case] = (rep.slope, rep.r_squared)
    elapsed = time.perf_counter() - start
    ok = all(0.35 <= s <= 0.65 and r2 >= 0.98 for s, r2 in results.values()) and elapsed < 600
    detail = "; ".join(f"case {c}: slope={s:.3f} r2={r2:.4f}" for c, (s, r2) in results.items())
    report_criterion(3, "desk convergence order 1/2", ok, f"{detail}; runtime={elapsed:.1f}s (<600s)")
    for slope, r2 in results.values():
        assert 0.35 <= slope <= 0.65
        assert r2 >= 0.98
    assert elapsed < 600


def test_c3_convergence_full_protocol(request, report_criterion):
    if not request.config.getoption("--full-protocol"):
        pytest.skip("full protocol runs only with --full-protocol")
    results = {}
    for case, params in CASES.items():
        rep = strong_error(conv_spec(params, (7, 8, 9, 10, 11), 13, 10_000), workers=4)
        results[case] = rep.slope
    ok = all(abs(s - 0.5) <= 0.1 for s in results.values())
    report_criterion(3, "full-protocol convergence", ok, "; ".join(f"case {c}: slope={s:.3f}" for c, s in results.items()))
    for slope in results.values():
        assert abs(slope - 0.5) <= 0.1


def _random_strict_params(rng):
    while True:
        theta = rng.uniform(1.1, 3.0)
        gamma = 2 * theta - 1 + rng.uniform(0.2, 3.0)
        p = ModelParams(
            a_neg1=rng.uniform(0.1, 5),
            a0=rng.uniform(0.1, 5),
            a1=rng.uniform(0.1, 5),
            a2=rng.uniform(0.5, 10),
            b=rng.uniform(0.1, 2),
            gamma=gamma,
            theta=theta,
            lam=1.0,
            x0=1.0,
        )
        q = rng.uniform(2.1, 6)
        base = (q - 1) * p.b**2 * theta**2 * (theta - 1) / (p.a2 * gamma * (gamma - 1))
        x_star = base ** (1 / (gamma + 1 - 2 * theta))
        # keep the maximiser well inside the oracle's search window
        if 1e-4 < x_star < 1e2:
            return p, q


def test_c4_monotonicity_constant(report_criterion):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        p, q = _random_strict_params(rng)
        assert classify_regime(p).case is RegimeCase.STRICT
        sup, _ = sup_grid(q, p.b, p.theta, p.a2, p.gamma)
        oracle = p.a1 + sup
        worst = max(worst, abs(monotonicity_constant(p, q) - oracle) / oracle)
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-6 and elapsed < 10
    report_criterion(4, "closed-form L vs grid sup", ok, f"max rel err={worst:.2e} (<=1e-6) runtime={elapsed:.1f}s (<10s)")
    assert worst <= 1e-6
    assert elapsed < 10


def test_c5_solver_vs_bisection(report_criterion):
    rng = np.random.default_rng(5)
    worst_diff = worst_res = 0.0
    min_root = math.inf
    for _ in range(1000):
        p = ModelParams(
            a_neg1=rng.uniform(0.1, 5),
            a0=rng.uniform(0.1, 5),
            a1=rng.uniform(0.1, 5),
            a2=rng.uniform(0.1, 10),
            b=1.0,
            gamma=rng.uniform(1.05, 5),
            theta=1.5,
            lam=1.0,
            x0=1.0,
        )
        h = rng.uniform(0.01, 0.99) / p.a1
        rhs = rng.uniform(-10, 10)
        y = float(solve_many(h, p, rhs)[0])
        ImplicitStepProblem(h, p, rhs)  # validates h * a1 < 1
        ref = float(bisect_implicit(h, p.a_neg1, p.a0, p.a1, p.a2, p.gamma, rhs, iterations=200)[0])
        worst_diff = max(worst_diff, abs(y - ref))
        worst_res = max(worst_res, abs(float(residual(y, h, p, rhs))) / (1 + abs(y) + abs(rhs)))
        min_root = min(min_root, y)
    ok = worst_diff <= 1e-10 and worst_res <= 1e-12 and min_root > 0
    report_criterion(
        5, "implicit solver oracle", ok, f"max |y-bisect|={worst_diff:.1e} max scaled residual={worst_res:.1e} min root={min_root:.3g}"
    )
    assert worst_diff <= 1e-10
    assert worst_res <= 1e-12
    assert min_root > 0


def test_c6_coupling_bit_exact(report_criterion):
    rng = np.random.default_rng(6)
    failures = 0
    for _ in range(100):
        fine = int(rng.integers(1, 11))
        g = generate(GridConfig(1.0, fine), float(rng.uniform(0, 5)), int(rng.integers(0, 2**63)), int(rng.integers(0, 10**6)))
        for level in range(fine + 1):
            dW, dN = coarsen(g, level)
            factor = 2 ** (fine - level)
            expected_w = []
            for k in range(dW.size):
                acc = g.dW[k * factor]
                for i in range(1, factor):
                    acc = acc + g.dW[k * factor + i]
                expected_w.append(acc)
            expected_n = [int(sum(int(v) for v in g.dN[k * factor : (k + 1) * factor])) for k in range(dN.size)]
            if np.asarray(expected_w).tobytes() != dW.tobytes() or dN.tolist() != expected_n:
                failures += 1
    report_criterion(6, "coupling bit-exactness", failures == 0, f"mismatching levels={failures} over 100 grids")
    assert failures == 0


def test_c7_determinism(tmp_path, report_criterion):
    configs = {
        "convergence": "experiment = convergence\ncase = 1\nphi = linear:-0.2\nlevels = 3,4,5\nreference_level = 8\npaths = 300",
        "positivity": "experiment = positivity\ncase = 2\nphi = sine\nscheme = em\npaths = 3000",
        "moments": "experiment = moments\ncase = 2\nphi = identity\nlevels = 5\npaths = 200\nformat = json",
    }
    identical = {}
    for name, body in configs.items():
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / f"{name}-{run}.out"
            cfg = tmp_path / f"{name}-{run}.cfg"
            cfg.write_text(f"{body}\nseed = 31337\noutput = {out}\n")
            assert main(["--config", str(cfg), "--quiet"]) == 0
            outputs.append(out.read_bytes())
        identical[name] = outputs[0] == outputs[1]
    ok = all(identical.values())
    report_criterion(7, "byte-identical reruns", ok, ", ".join(f"{k}={v}" for k, v in identical.items()))
    assert ok


def test_c8_moment_boundedness(report_criterion):
    def spec(seed):
        return ExperimentSpec(CASE_2, JumpSpec.linear(-0.2), GridConfig(1.0, 7), 1000, seed, SchemeKind.BEM, (7,), 7)

    pilot_ceiling = float(moment_probe(spec(801), 2.0).max())
    est = moment_probe(spec(802), 2.0)
    inv = moment_probe(spec(802), 2.0, inverse=True)
    bounded = bool(np.all(est <= 10 * pilot_ceiling))
    finite = bool(np.all(np.isfinite(inv)))
    ok = bounded and finite and np.all(np.isfinite(est))
    report_criterion(
        8,
        "moment probes bounded",
        ok,
        f"max E|Y|^2={est.max():.4f} vs 10x pilot ceiling={10 * pilot_ceiling:.4f}; max E|Y|^-2={inv.max():.4f}",
    )
    assert bounded
    assert finite
