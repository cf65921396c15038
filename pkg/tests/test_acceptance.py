"""Acceptance criteria 1-11, one test (and one summary line) each."""

import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from proxsweep.certify import certify_constraint, reverify
from proxsweep.constraint import (
    hausdorff_estimate,
    project_with_info,
    projection_inequality_residual,
    sample_members,
)
from proxsweep.experiments import (
    StudyConfig,
    continuity_study,
    empirical_orders,
    get_benchmark,
    implicit_play_problem,
    lipschitz_study,
    scheme_gap,
)
from proxsweep.library import (
    _star_uncertified,
    make_moving_ball,
    make_scalar_play,
    make_star_set,
    play_oracle,
    star_coercivity_kappa,
)
from proxsweep.paths import sup_distance
from proxsweep.sweep_explicit import annotate, rate_bound_margins, solve, step_scale
from proxsweep.sweep_implicit import solve_picard

from conftest import acceptance_line, star_boundary

SCHEMES = ("catchup", "boundary-ode")
BENCH_N = {"play": 1000, "ball": 1000, "star": 1000}


@pytest.fixture(scope="module")
def benchmark_runs():
    runs = {}
    for name, n in BENCH_N.items():
        prob = get_benchmark(name).problem(n)
        for s in SCHEMES:
            runs[name, s] = (prob, annotate(solve(prob, s), prob))
    return runs


def test_01_play_oracle_equivalence():
    bench = get_benchmark("play")
    errs, hs, ok = {}, {}, True
    for n in (100, 200, 1000, 2000):
        prob = bench.problem(n)
        xi = solve(prob, "catchup").xi
        errs[n] = sup_distance(xi, play_oracle(prob.u, prob.w, 1.0, 0.0))
        hs[n] = prob.grid.h
    bound_ok = all(errs[n] <= 2 * hs[n] for n in (100, 1000))
    orders = [empirical_orders([hs[a], hs[b]], [errs[a], errs[b]])[0]
              for a, b in ((100, 200), (1000, 2000))]
    order_ok = all(0.9 <= o <= 1.5 for o in orders)
    acceptance_line(1, "play oracle", bound_ok and order_ok,
                    f"sup err {errs[100]:.3g} (h=1e-2), {errs[1000]:.3g} (h=1e-3), bound 2h; "
                    f"orders {orders[0]:.3f}, {orders[1]:.3f} in [0.9, 1.5]")
    assert bound_ok and order_ok


def test_02_dragged_ball():
    prob = get_benchmark("ball").problem(1000)
    errs = {s: float(np.linalg.norm(solve(prob, s).xi.values[-1] - [-1.0, 0.0])) for s in SCHEMES}
    tol = 5 * prob.grid.h
    ok = all(e <= tol for e in errs.values())
    acceptance_line(2, "dragged ball", ok,
                    f"|xi(2) - (-1, 0)| catchup {errs['catchup']:.2g}, ode "
                    f"{errs['boundary-ode']:.2g}, tol 5h = {tol:.3g}")
    assert ok


def test_03_star_projection():
    star = make_star_set(1.0, 0.2, 3)
    w = np.zeros(3)
    r = star.constants.r
    rng = np.random.default_rng(3)
    scan = star_boundary(np.linspace(0, 2 * np.pi, 10**6, endpoint=False))
    tree = cKDTree(scan)
    pts = []
    while len(pts) < 1000:
        y = rng.uniform(-1.6, 1.6, size=(4000, 2))
        y = y[star.G(y, w) > 1.0]
        d, _ = tree.query(y)
        pts.extend(y[d < 0.9 * r])
    Y = np.array(pts[:1000])
    scan_d, _ = tree.query(Y)
    worst_res, worst_gap = np.inf, 0.0
    for y, ds in zip(Y, scan_d):
        res = project_with_info(y, w, star, enforce_tube=False)
        z = sample_members(star, w, rng, 1000)
        worst_res = min(worst_res, float(projection_inequality_residual(y, res.x, z, r).min()))
        worst_gap = max(worst_gap, abs(res.distance - ds))
    ok = worst_res >= -1e-8 and worst_gap <= 1e-4
    acceptance_line(3, "star projection", ok,
                    f"1000 points: worst residual {worst_res:.3g} (>= -1e-8), "
                    f"worst |d - scan| {worst_gap:.2g} (<= 1e-4)")
    assert ok


def test_04_rate_bound(benchmark_runs):
    worst = {}
    for (name, s), (prob, traj) in benchmark_runs.items():
        worst[name, s] = float(np.min(rate_bound_margins(traj, prob) / step_scale(prob)))
    w = min(worst.values())
    ok = w >= -1e-6
    acceptance_line(4, "rate bound", ok,
                    f"worst scaled margin {w:.3g} over play/ball/star x both schemes (>= -1e-6)")
    assert ok


def test_05_vi_residual(benchmark_runs):
    worst = {}
    for (name, s), (prob, traj) in benchmark_runs.items():
        worst[name, s] = float(np.min(traj.vi_residual / step_scale(prob)))
    w = min(worst.values())
    ok = w >= -1e-6
    acceptance_line(5, "VI residual", ok,
                    f"worst scaled residual {w:.3g}, 64 points/step, all benchmarks (>= -1e-6)")
    assert ok


def test_06_scheme_consistency():
    bench = get_benchmark("star")
    gaps = [scheme_gap(bench.problem(n)) for n in (500, 1000, 2000)]
    factors = [a / b for a, b in zip(gaps, gaps[1:])]
    ok = all(f >= 1.8 for f in factors)
    acceptance_line(6, "scheme consistency", ok,
                    f"star W11 gaps {', '.join(f'{g:.3g}' for g in gaps)}; factors "
                    f"{', '.join(f'{f:.3f}' for f in factors)} (>= 1.8)")
    assert ok


def test_07_continuity():
    res = continuity_study(StudyConfig("continuity", "star", (1e-1, 1e-2, 1e-3, 1e-4)))
    outs = [r["output_distance"] for r in res.rows]
    floor = res.summary["floor"]
    ok = res.summary["monotone"] and outs[-1] < 10 * floor
    acceptance_line(7, "continuity", ok,
                    f"star outputs {', '.join(f'{o:.3g}' for o in outs)}; monotone "
                    f"{res.summary['monotone']}, last < 10 x floor {floor:.3g}")
    assert ok


def test_08_lipschitz():
    scales = tuple(1e-2 * s for s in (1.0, 0.5, 0.25, 0.125))
    spreads = {b: lipschitz_study(StudyConfig("lipschitz", b, scales)).summary["ratio_spread"]
               for b in ("play", "star")}
    ok = all(s <= 4.0 for s in spreads.values())
    acceptance_line(8, "Lipschitz ratios", ok,
                    f"ratio spread play {spreads['play']:.4f}, star {spreads['star']:.4f} (<= 4)")
    assert ok


def test_09_implicit_contraction():
    prob = implicit_play_problem(200, delta=0.5, epsilon=0.1)
    traj, rep = solve_picard(prob, tol=1e-8)
    exact = (prob.u.values[:, 0] - 1.0) / (1.0 + prob.gmap.gamma)
    oracle_err = float(np.max(np.abs(traj.xi.values[:, 0] - exact)))
    ok = (rep.delta == pytest.approx(0.5) and rep.delta_star == pytest.approx(2 / 3)
          and max(rep.ratios) <= 0.72 and rep.converged and rep.iterations <= rep.budget
          and rep.fixed_point_residual <= 2e-8 and oracle_err <= 1e-7)
    acceptance_line(9, "implicit contraction", ok,
                    f"delta {rep.delta:.3g}, delta* {rep.delta_star:.4f}; max ratio "
                    f"{max(rep.ratios):.4f} (<= 0.72); {rep.iterations} iterations, budget "
                    f"{rep.budget}; fixed-point residual {rep.fixed_point_residual:.2g} "
                    f"(<= 2e-8); closed-form error {oracle_err:.2g}")
    assert ok


def test_10_certifier_sanity():
    ball = make_moving_ball(2, 1.0)
    families = {
        "play": (make_scalar_play(1.0), np.array([[0.0], [0.7]]), None),
        "ball": (ball, np.array([[0.0, 0.0], [1.0, -0.5]]), None),
        "star": (_star_uncertified(1.0, 0.2, 3),
                 np.array([[0.0, 0.0, 0.0], [0.3, -0.2, 0.4], [-0.5, 0.1, -1.0]]),
                 star_coercivity_kappa(1.0, 0.2)),
    }
    c_hat = None
    violations = {}
    r_exact = True
    for name, (cons, W, kappa) in families.items():
        rep = certify_constraint(cons, W, rng=0, coercivity_kappa=kappa)
        if name == "ball":
            c_hat = rep.estimates["c"].raw
        viol = reverify(cons, rep.constants, W, rng=12345)
        violations[name] = sum(viol.values())
        r_exact &= rep.constants.r == rep.constants.c / rep.constants.lam
    delta = 2.0 * 0.4 / 1.0
    ok = (0.95 * 2 <= c_hat <= 1.05 * 2 and not any(violations.values()) and r_exact
          and math.isclose(delta, 0.8))
    acceptance_line(10, "certifier sanity", ok,
                    f"ball c-hat {c_hat:.6g} in [1.9, 2.1]; fresh-sample violations "
                    f"{violations}; r = c/lam exact {r_exact}; K1 gamma / c = {delta:g}")
    assert ok


def test_11_hausdorff_translated_balls():
    ball = make_moving_ball(2, 1.0)
    rng = np.random.default_rng(11)
    worst_err, bound_ok = 0.0, True
    for _ in range(10):
        w1 = rng.uniform(-1, 1, 2)
        w2 = w1 + rng.uniform(-0.2, 0.2, 2)
        est = hausdorff_estimate(w1, w2, ball)
        worst_err = max(worst_err, abs(est.value - np.linalg.norm(w1 - w2)))
        bound_ok &= est.value <= est.bound
    ok = worst_err <= 1e-3 and bound_ok
    acceptance_line(11, "Hausdorff bound", ok,
                    f"10 translated pairs: worst |d_H - |dw|| {worst_err:.2g} (<= 1e-3); "
                    f"never above C_K |dw|: {bound_ok}")
    assert ok
