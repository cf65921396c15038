"""Benchmarks and stability studies.

Every study is deterministic given its seed: perturbation shapes are
piecewise-linear with seeded knot values and only their amplitude changes
across scales.
"""

from __future__ import annotations

import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .constraint import LevelSetConstraint, project_to_set
from .errors import ProxSweepError
from .library import (
    gamma_for_delta,
    make_moving_ball,
    make_scalar_play,
    make_star_set,
    make_state_map,
    play_oracle,
)
from .paths import (
    PLPath,
    TimeGrid,
    offset_grid,
    sup_distance,
    uniform_grid,
    w11_distance,
    w11_seminorm,
)
from .sweep_explicit import SweepProblem, Trajectory, solve
from .sweep_implicit import (
    ImplicitProblem,
    check_contraction,
    solve_picard,
    weight_constants,
    weight_profile,
)

__all__ = [
    "Benchmark",
    "BENCHMARKS",
    "get_benchmark",
    "implicit_play_problem",
    "StudyConfig",
    "StudyResult",
    "perturbation_shape",
    "scheme_gap",
    "continuity_study",
    "lipschitz_study",
    "lipschitz_pointwise_margins",
    "explicit_lipschitz_constant",
    "implicit_lipschitz_study",
    "implicit_lipschitz_constant",
    "convergence_order_study",
    "empirical_orders",
]


FLOOR_ROUNDING = 1e-12


# -- benchmarks --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Benchmark:
    """A named explicit problem that can be discretised on any grid."""

    name: str
    T: float
    constraint: Callable[[], LevelSetConstraint]
    u: Callable[[float], NDArray]
    w: Callable[[float], NDArray]
    x0: tuple
    grid_kind: str = "uniform"
    default_n: int = 1000
    oracle: Optional[Callable[[SweepProblem], PLPath]] = None

    def grid(self, n: int) -> TimeGrid:
        if self.grid_kind == "offset":
            return offset_grid(self.T, n)
        return uniform_grid(self.T, n)

    def problem(self, n: Optional[int] = None, scheme_seed: int = 0) -> SweepProblem:
        g = self.grid(n or self.default_n)
        return SweepProblem(self.constraint(), PLPath.from_function(g, self.u),
                            PLPath.from_function(g, self.w), self.x0, seed=scheme_seed)


def _play_oracle(prob: SweepProblem) -> PLPath:
    return play_oracle(prob.u, prob.w, prob.cons.params["rho"], float(prob.x0[0]))


def _star_x0():
    return (1.2, 0.0)


BENCHMARKS: dict[str, Benchmark] = {
    # ramp through the play: interior until t = 1/2, then sliding on x = 1
    "play": Benchmark("play", 1.0, lambda: make_scalar_play(1.0), lambda t: [2.0 * t],
                      lambda t: [0.0], (0.0,), grid_kind="offset", default_n=1000,
                      oracle=_play_oracle),
    # disc pulled to the right: contact at t = 1, then x = (t - 1, 0)
    "ball": Benchmark("ball", 2.0, lambda: make_moving_ball(2, 1.0), lambda t: [0.0, 0.0],
                      lambda t: [t, 0.0], (0.0, 0.0), default_n=1000),
    # state starts on the tip of a lobe and is pushed along the boundary
    # while the star drifts and rotates
    "star": Benchmark("star", 1.0, lambda: make_star_set(),
                      lambda t: [1.2 + 0.2 * t, 1.0 * t],
                      lambda t: [0.1 * t, 0.0, 0.3 * t], _star_x0(), default_n=1000),
}


def get_benchmark(name: str) -> Benchmark:
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise ValueError(f"unknown benchmark {name!r}; choose from {sorted(BENCHMARKS)}") from None


def implicit_play_problem(n: int = 200, delta: float = 0.5, epsilon: float = 0.1,
                          slope: float = 0.1, T: float = 1.0) -> ImplicitProblem:
    """Play whose center follows the output, ``w = gamma xi``.

    ``u(t) = 1 + slope t`` and ``x0 = 1``: the state starts on the right
    wall and is dragged from the start. ``gamma`` is chosen to give the
    requested ``delta``.
    """
    cons = make_scalar_play(1.0)
    g = uniform_grid(T, n)
    u = PLPath.from_function(g, lambda t: [1.0 + slope * t])
    gmap = make_state_map("linear", {"n": 1, "m": 1, "Gamma": gamma_for_delta(cons, delta)},
                          cons)
    return ImplicitProblem(cons, u, [1.0], gmap, epsilon=epsilon)


# -- perturbations -------------------------------------------------------------


def perturbation_shape(grid: TimeGrid, dim: int, rng: np.random.Generator, n_knots: int = 8,
                       amplitude: float = 1.0, pin_start: bool = False) -> PLPath:
    """Seeded piecewise-linear shape with knot values in ``[-amplitude, amplitude]``."""
    knots = np.linspace(0.0, grid.T, n_knots + 1)
    vals = rng.uniform(-amplitude, amplitude, size=(n_knots + 1, dim))
    if pin_start:
        vals[0] = 0.0
    return PLPath(grid, np.column_stack(
        [np.interp(grid.nodes, knots, vals[:, i]) for i in range(dim)]))


@dataclass
class _Perturbation:
    du: PLPath
    dw: PLPath
    dx0: NDArray


def _shapes(prob: SweepProblem, seed: int, w_amplitude: float) -> _Perturbation:
    rng = np.random.default_rng(seed)
    g = prob.grid
    du = perturbation_shape(g, prob.u.dim, rng, pin_start=True)
    dw = perturbation_shape(g, prob.w.dim, rng, amplitude=w_amplitude)
    dx0 = rng.uniform(-1.0, 1.0, size=prob.u.dim)
    return _Perturbation(du, dw, dx0)


def _perturbed(prob: SweepProblem, p: _Perturbation, s: float) -> SweepProblem:
    u2 = prob.u + p.du * s
    w2 = prob.w + p.dw * s
    x2 = project_to_set(prob.x0 + s * p.dx0, w2.values[0], prob.cons, enforce_tube=False)
    return SweepProblem(prob.cons, u2, w2, x2, prob.activation_tol, prob.gate_fraction,
                        None, prob.seed)


def _input_gap(p1: SweepProblem, p2: SweepProblem) -> dict:
    du = w11_seminorm(p1.u - p2.u)
    dw = w11_seminorm(p1.w - p2.w)
    dw0 = float(np.linalg.norm(p1.w.values[0] - p2.w.values[0]))
    du0 = float(np.linalg.norm(p1.u.values[0] - p2.u.values[0]))
    dx0 = float(np.linalg.norm(p1.x0 - p2.x0))
    return {"int_du": du, "int_dw": dw, "dw0": dw0, "du0": du0, "dx0": dx0,
            "rhs": du + dw + dw0 + dx0 + du0}


# -- results -----------------------------------------------------------------


@dataclass
class StudyConfig:
    """``scales`` must be strictly decreasing and positive."""

    kind: str
    benchmark: str = "play"
    scales: tuple = (1e-1, 1e-2, 1e-3, 1e-4)
    n: Optional[int] = None
    grids: tuple = ()
    scheme: str = "catchup"
    seed: int = 0
    w_amplitude: float = 0.25

    def __post_init__(self):
        s = np.asarray(self.scales, float)
        if s.size and (np.any(s <= 0) or np.any(np.diff(s) >= 0)):
            raise ValueError("scales must be positive and strictly decreasing")


@dataclass
class StudyResult:
    kind: str
    benchmark: str
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    passed: bool = False
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        cols = list(self.rows[0].keys())
        buf = io.StringIO()
        buf.write(",".join(cols) + "\n")
        for r in self.rows:
            buf.write(",".join(_fmt(r.get(c)) for c in cols) + "\n")
        return buf.getvalue()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# -- studies -----------------------------------------------------------------


def scheme_gap(prob: SweepProblem) -> float:
    """W^{1,1} distance between the catching-up and boundary-ODE outputs."""
    a = solve(prob, "catchup")
    b = solve(prob, "boundary-ode")
    return w11_distance(a.xi, b.xi)


def continuity_study(cfg: StudyConfig) -> StudyResult:
    """Output distance against input distance for shrinking perturbations.

    Passes when output distances decrease monotonically and the last one is
    below ten times the scheme-disagreement floor at the working grid.
    """
    bench = get_benchmark(cfg.benchmark)
    prob = bench.problem(cfg.n)
    base = solve(prob, cfg.scheme)
    floor = scheme_gap(prob)
    shapes = _shapes(prob, cfg.seed, cfg.w_amplitude)
    res = StudyResult("continuity", bench.name)
    for s in cfg.scales:
        row = {"scale": s}
        try:
            p2 = _perturbed(prob, shapes, s)
            out = w11_distance(solve(p2, cfg.scheme).xi, base.xi)
            gap = _input_gap(prob, p2)
            row.update(input_distance=gap["rhs"], output_distance=out,
                       ratio=out / gap["rhs"] if gap["rhs"] > 0 else None, error="")
        except ProxSweepError as exc:
            row.update(input_distance=None, output_distance=None, ratio=None, error=str(exc))
        res.rows.append(row)
    outs = [r["output_distance"] for r in res.rows]
    ok = all(o is not None for o in outs)
    monotone = ok and all(b < a for a, b in zip(outs, outs[1:]))
    below = ok and outs[-1] < 10.0 * floor
    ratios = [r["ratio"] for r in res.rows if r.get("ratio")]
    spread = max(ratios) / min(ratios) if ok and ratios else math.inf
    # When both schemes agree to rounding the floor carries no information;
    # outputs must then vanish linearly with the inputs instead.
    exact_floor = floor <= FLOOR_ROUNDING
    res.summary = {"floor": floor, "monotone": monotone, "below_floor": below,
                   "floor_at_rounding": exact_floor, "ratio_spread": spread,
                   "n_steps": prob.grid.n_steps, "scheme": cfg.scheme}
    res.passed = bool(monotone and (below or (exact_floor and spread <= 4.0)))
    return res


def explicit_lipschitz_constant(prob: SweepProblem) -> float:
    """Conservative ``C(R) = (1 + max(K0, K1, L)/c) exp(R (2 C0 + C1 + C0 K1/c) / c)``.

    ``R`` is the larger of the total variations of ``u`` and ``w``.
    """
    k = prob.cons.constants
    R = max(prob.u.total_variation(), prob.w.total_variation())
    M = R * (2 * k.C0 + k.C1 + k.C0 * k.K1 / k.c) / k.c
    return (1.0 + max(k.K0, k.K1, k.L) / k.c) * math.exp(M)


def lipschitz_pointwise_margins(p1: SweepProblem, t1: Trajectory,
                                p2: SweepProblem, t2: Trajectory) -> NDArray:
    """Per-step margin of the local Lipschitz inequality (right minus left side).

    Left: ``|xi1' - xi2'| + (1/c) d/dt |G1 - G2|``. Right:
    ``(K0 |u1' - u2'| + K1 |w1' - w2'|) / c + m(t) (|w1 - w2| + |x1 - x2|)``
    with ``m = (2 C0 |u1'| + (C1 + C0 K1 / c) |w1'|) / c`` and the state gaps
    taken as the larger of the two step endpoints.
    """
    if not p1.grid.same_as(p2.grid):
        raise ValueError("trajectories must share the grid")
    k = p1.cons.constants
    dt = p1.grid.steps

    def rate(a):
        return np.diff(a, axis=0) / dt[:, None]

    dxi = np.linalg.norm(t1.xidot - t2.xidot, axis=1)
    gdiff = np.abs(t1.G - t2.G)
    lhs = dxi + np.diff(gdiff) / dt / k.c
    u1, w1 = rate(p1.u.values), rate(p1.w.values)
    du = np.linalg.norm(u1 - rate(p2.u.values), axis=1)
    dw = np.linalg.norm(w1 - rate(p2.w.values), axis=1)
    m = (2 * k.C0 * np.linalg.norm(u1, axis=1)
         + (k.C1 + k.C0 * k.K1 / k.c) * np.linalg.norm(w1, axis=1)) / k.c
    gap = (np.linalg.norm(p1.w.values - p2.w.values, axis=1)
           + np.linalg.norm(t1.x.values - t2.x.values, axis=1))
    gap = np.maximum(gap[:-1], gap[1:])
    rhs = (k.K0 * du + k.K1 * dw) / k.c + m * gap
    return rhs - lhs


def lipschitz_study(cfg: StudyConfig) -> StudyResult:
    """Ratio of output distance to ``int|du'| + int|dw'| + |dw(0)| + |dx0|`` per scale.

    Passes when the ratios stay within a factor 4 of each other and below the
    assembled constant ``C(R)``.
    """
    bench = get_benchmark(cfg.benchmark)
    prob = bench.problem(cfg.n)
    base = solve(prob, cfg.scheme)
    shapes = _shapes(prob, cfg.seed, cfg.w_amplitude)
    C_R = explicit_lipschitz_constant(prob)
    res = StudyResult("lipschitz", bench.name)
    worst_margin = math.inf
    for s in cfg.scales:
        p2 = _perturbed(prob, shapes, s)
        t2 = solve(p2, cfg.scheme)
        gap = _input_gap(prob, p2)
        out = w11_distance(t2.xi, base.xi)
        margins = lipschitz_pointwise_margins(prob, base, p2, t2)
        worst_margin = min(worst_margin, float(margins.min()))
        res.rows.append({"scale": s, "input_distance": gap["rhs"], "output_distance": out,
                         "ratio": out / gap["rhs"] if gap["rhs"] > 0 else None,
                         "pointwise_margin": float(margins.min())})
    ratios = [r["ratio"] for r in res.rows if r["ratio"] is not None]
    spread = max(ratios) / min(ratios) if ratios and min(ratios) > 0 else math.inf
    res.summary = {"ratio_spread": spread, "C_R": C_R, "max_ratio": max(ratios),
                   "pointwise_worst": worst_margin, "n_steps": prob.grid.n_steps}
    res.passed = bool(spread <= 4.0 and max(ratios) <= C_R)
    return res


def implicit_lipschitz_constant(prob: ImplicitProblem) -> float:
    """Conservative ``K(R) = C exp(R / eps)`` for the implicit problem.

    ``R = 2 m0 int (a + b + |u'|)`` and
    ``C = max(m1 + eps, (K0 + L gamma)/c + eps, L (omega + gamma)/c + 2 eps) / (1 - delta - eps)``.
    """
    k = prob.cons.constants
    gm = prob.gmap
    delta, _ = check_contraction(prob)
    wc = weight_constants(prob)
    eps = prob.epsilon
    if delta + eps >= 1.0:
        raise ValueError("need delta + epsilon < 1")
    R = 2.0 * float(weight_profile(prob).M.values[-1, 0])
    C = max(wc.m1 + eps, (k.K0 + k.L * gm.gamma) / k.c + eps,
            k.L * (gm.omega + gm.gamma) / k.c + 2 * eps) / (1.0 - delta - eps)
    return C * math.exp(R / eps)


def implicit_lipschitz_study(cfg: StudyConfig, prob: Optional[ImplicitProblem] = None,
                             tol: float = 1e-11) -> StudyResult:
    """Implicit solution distance against ``|dx0| + |du(0)| + int |du'|``."""
    prob = prob or implicit_play_problem(cfg.n or 200)
    base, _ = solve_picard(prob, tol=tol)
    rng = np.random.default_rng(cfg.seed)
    shape = perturbation_shape(prob.u.grid, prob.u.dim, rng, pin_start=True)
    K_R = implicit_lipschitz_constant(prob)
    res = StudyResult("implicit", "implicit-play")
    for s in cfg.scales:
        u2 = prob.u + shape * s
        p2 = ImplicitProblem(prob.cons, u2, prob.x0, prob.gmap, prob.epsilon, prob.scheme,
                             prob.seed)
        t2, rep = solve_picard(p2, tol=tol)
        inp = (float(np.linalg.norm(p2.x0 - prob.x0))
               + float(np.linalg.norm(u2.values[0] - prob.u.values[0]))
               + w11_seminorm(u2 - prob.u))
        out = w11_distance(t2.xi, base.xi)
        res.rows.append({"scale": s, "input_distance": inp, "output_distance": out,
                         "ratio": out / inp if inp > 0 else None,
                         "iterations": rep.iterations})
    ratios = [r["ratio"] for r in res.rows if r["ratio"] is not None]
    spread = max(ratios) / min(ratios)
    res.summary = {"ratio_spread": spread, "K_R": K_R, "max_ratio": max(ratios)}
    res.passed = bool(spread <= 4.0 and max(ratios) <= K_R)
    return res


def empirical_orders(hs: Sequence[float], errors: Sequence[float]) -> list:
    """``log(e_i / e_{i+1}) / log(h_i / h_{i+1})`` for consecutive grids."""
    out = []
    for (h1, e1), (h2, e2) in zip(zip(hs, errors), zip(hs[1:], errors[1:])):
        if e1 > 0 and e2 > 0:
            out.append(math.log(e1 / e2) / math.log(h1 / h2))
        else:
            out.append(None)
    return out


def convergence_order_study(benchmark: str | Benchmark, grids: Sequence[int],
                            oracle: Optional[Callable[[SweepProblem], PLPath]] = None,
                            scheme: str = "catchup", reference_n: Optional[int] = None
                            ) -> StudyResult:
    """Sup and W^{1,1} errors against an oracle on successively refined grids.

    Without a closed-form oracle the solution on ``reference_n`` steps serves
    as reference. Passes when every W^{1,1} order is at least 0.9.
    """
    bench = get_benchmark(benchmark) if isinstance(benchmark, str) else benchmark
    oracle = oracle or bench.oracle
    ref = None
    if oracle is None:
        if reference_n is None:
            reference_n = 16 * max(grids)
        ref = solve(bench.problem(reference_n), scheme).xi
    res = StudyResult("order", bench.name)
    hs, sups, w11s = [], [], []
    for n in grids:
        prob = bench.problem(n)
        xi = solve(prob, scheme).xi
        exact = oracle(prob) if oracle is not None else ref
        hs.append(prob.grid.h)
        sups.append(sup_distance(xi, exact))
        w11s.append(w11_distance(xi, exact))
        res.rows.append({"n_steps": n, "h": prob.grid.h, "sup_error": sups[-1],
                         "w11_error": w11s[-1]})
    o_sup = empirical_orders(hs, sups)
    o_w11 = empirical_orders(hs, w11s)
    for row, a, b in zip(res.rows[1:], o_sup, o_w11):
        row["sup_order"] = a
        row["w11_order"] = b
    res.rows[0]["sup_order"] = None
    res.rows[0]["w11_order"] = None
    res.summary = {"sup_orders": o_sup, "w11_orders": o_w11, "scheme": scheme,
                   "reference_n": reference_n}
    res.passed = bool(o_w11 and all(o is not None and o >= 0.9 for o in o_w11))
    return res
