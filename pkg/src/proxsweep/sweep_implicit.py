"""State-dependent sweeping: ``w(t) = g(t, u(t), xi(t))`` solved by Picard iteration.

The iteration map ``S`` sends a candidate output ``eta`` to the solution of
the explicit problem driven by ``w = g(t, u, eta)``. It contracts in the
weighted norm ``int exp(-M/eps) |eta'|`` with rate ``delta* = (delta + eps)
/ (1 - eps)`` where ``delta = K1 gamma / c``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray

from .constraint import LevelSetConstraint
from .errors import MaxIterExceeded, NotAContraction
from .paths import PLPath, WeightProfile, w11_distance, weighted_w11_norm
from .sweep_explicit import SweepProblem, Trajectory, solve

__all__ = [
    "StateMap",
    "ImplicitProblem",
    "IterationReport",
    "WeightConstants",
    "check_contraction",
    "envelope_bound",
    "envelope_bounds",
    "weight_constants",
    "weight_profile",
    "iteration_budget",
    "picard_map",
    "solve_picard",
]

EPSILON = 0.1
RATIO_TOL = 0.05
ENVELOPE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class StateMap:
    """Feedback ``g(t, u, xi)`` with its partial derivatives and bounds.

    ``a(t)`` bounds ``|d_t g|`` and ``b(t)`` the time-Lipschitz modulus of
    the partial derivatives; both are plain callables of ``t``.
    """

    n: int
    m: int
    g: Callable
    dg_dt: Callable
    dg_du: Callable
    dg_dxi: Callable
    gamma: float
    omega: float
    C_xi: float
    C_u: float
    a: Callable[[float], float]
    b: Callable[[float], float]
    kind: str = "custom"

    def along(self, u: PLPath, xi: PLPath) -> PLPath:
        """``t -> g(t, u(t), xi(t))`` sampled on the nodes of ``u``."""
        t = u.nodes
        xv = xi.resample(u.grid).values if not xi.grid.same_as(u.grid) else xi.values
        vals = np.array([np.atleast_1d(self.g(t[j], u.values[j], xv[j])) for j in range(len(t))])
        return PLPath(u.grid, vals.reshape(len(t), self.m))

    def rates_at(self, t: NDArray) -> tuple[NDArray, NDArray]:
        return (np.array([float(self.a(s)) for s in t]),
                np.array([float(self.b(s)) for s in t]))


@dataclass(frozen=True)
class ImplicitProblem:
    cons: LevelSetConstraint
    u: PLPath
    x0: NDArray
    gmap: StateMap
    epsilon: float = EPSILON
    scheme: str = "catchup"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        cons = self.cons
        cons.require_constants()
        if self.u.dim != cons.state_dim or self.gmap.n != cons.state_dim:
            raise ValueError("dimension mismatch between u, state map and constraint")
        if self.gmap.m != cons.param_dim:
            raise ValueError("state map output dimension must equal the parameter dimension")
        x0 = np.array(self.x0, dtype=float).reshape(cons.state_dim)
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        u0 = self.u.values[0]
        w0 = np.atleast_1d(self.gmap.g(0.0, u0, u0 - x0))
        if cons.value(x0, w0) > 1.0 + cons.level_tol:
            raise ValueError("x0 is not in Z(g(0, u(0), u(0) - x0))")

    @property
    def xi0(self) -> NDArray:
        return self.u.values[0] - self.x0


def check_contraction(prob: ImplicitProblem) -> tuple[float, float]:
    """``(delta, delta_star)`` with ``delta = K1 gamma / c``.

    Raises
    ------
    NotAContraction
        If ``delta >= 1`` or ``delta_star >= 1``.
    """
    k = prob.cons.require_constants()
    delta = k.K1 * prob.gmap.gamma / k.c
    eps = prob.epsilon
    if delta >= 1.0:
        raise NotAContraction(f"delta = K1 gamma / c = {delta:.6g} >= 1")
    delta_star = (delta + eps) / (1.0 - eps)
    if delta_star >= 1.0:
        raise NotAContraction(f"delta* = (delta + eps) / (1 - eps) = {delta_star:.6g} >= 1; "
                              "decrease epsilon")
    return delta, delta_star


def envelope_bounds(prob: ImplicitProblem) -> NDArray:
    """Slope bound ``(1/(1-delta)) ((1 + omega K1/c) |u'| + (K1/c) a(t))`` per step.

    ``a`` is evaluated at the step midpoint.
    """
    k = prob.cons.constants
    delta = k.K1 * prob.gmap.gamma / k.c
    if delta >= 1.0:
        raise NotAContraction(f"delta = {delta:.6g} >= 1")
    q = k.K1 / k.c
    udot = prob.u.slope_norms()
    a, _ = prob.gmap.rates_at(prob.u.grid.midpoints)
    return ((1.0 + prob.gmap.omega * q) * udot + q * a) / (1.0 - delta)


def envelope_bound(prob: ImplicitProblem, k: int) -> float:
    return float(envelope_bounds(prob)[k])


@dataclass(frozen=True)
class WeightConstants:
    """Conservative ``m0, m1`` assembled from the constants bundle and state map."""

    m0: float
    m1: float
    terms: dict

    def to_dict(self) -> dict:
        return {"m0": self.m0, "m1": self.m1, **self.terms}


def weight_constants(prob: ImplicitProblem) -> WeightConstants:
    """Assemble ``m0`` and ``m1``.

    With ``q = K1/c``, ``D = C1 + C0 q`` and ``E = max(1 + omega, gamma)``
    the rate of change of the normal direction along an admissible iterate
    is bounded by ``(1/c)(2 C0 + D p_u) E |u'| + ...``; ``m0`` is the largest
    coefficient in front of ``|u'|``, ``a`` and ``b``.
    """
    k = prob.cons.constants
    gm = prob.gmap
    delta = k.K1 * gm.gamma / k.c
    if delta >= 1.0:
        raise NotAContraction(f"delta = {delta:.6g} >= 1")
    q = k.K1 / k.c
    D = k.C1 + k.C0 * q
    E = max(1.0 + gm.omega, gm.gamma)
    p_a = 1.0 / (1.0 - delta)
    p_u = gm.omega + gm.gamma * (1.0 + gm.omega * q) / (1.0 - delta)
    q_u = (1.0 + gm.omega * q) / (1.0 - delta)
    q_a = q / (1.0 - delta)
    coef_u = (2.0 * k.C0 + D * p_u) * E / k.c + q * (gm.C_u + gm.C_xi * q_u)
    coef_a = D * p_a * E / k.c + q * gm.C_xi * q_a
    coef_b = q
    m0 = max(coef_u, coef_a, coef_b)
    m1 = (k.K0 + k.K1 * gm.omega) / k.c
    return WeightConstants(m0, m1, {"coef_u": coef_u, "coef_a": coef_a, "coef_b": coef_b,
                                    "D": D, "E": E, "delta": delta})


def weight_profile(prob: ImplicitProblem, u: Optional[PLPath] = None) -> WeightProfile:
    """``M(t) = int_0^t m0 (a + b + |u'|)`` on the grid of ``u``."""
    u = prob.u if u is None else u
    m0 = weight_constants(prob).m0
    a, b = prob.gmap.rates_at(u.grid.midpoints)
    m = m0 * (a + b + u.slope_norms())
    M = np.concatenate([[0.0], np.cumsum(m * u.grid.steps)])
    return WeightProfile(prob.epsilon, PLPath(u.grid, M))


def iteration_budget(first_distance: float, tol: float, delta_star: float) -> int:
    """``ceil(log(tol / d1) / log(delta*)) + 2`` (at least 2)."""
    if first_distance <= tol:
        return 2
    return int(math.ceil(math.log(tol / first_distance) / math.log(delta_star))) + 2


@dataclass
class IterationReport:
    delta: float
    delta_star: float
    weighted: list = field(default_factory=list)
    plain: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    envelope_margins: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    budget: Optional[int] = None
    fixed_point_residual: Optional[float] = None
    weights: Optional[dict] = None
    flagged: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "delta", "delta_star", "weighted", "plain", "ratios", "envelope_margins",
            "iterations", "converged", "budget", "fixed_point_residual", "weights", "flagged")}


def picard_map(prob: ImplicitProblem, eta: PLPath) -> tuple[Trajectory, PLPath]:
    """One application of ``S``: solve the explicit problem with ``w = g(t, u, eta)``."""
    w = prob.gmap.along(prob.u, eta)
    sp = SweepProblem(prob.cons, prob.u, w, prob.x0, seed=prob.seed)
    traj = solve(sp, prob.scheme)
    return traj, w


def _envelope_margin(prob, bounds, xi: PLPath) -> float:
    return float(np.min(bounds - xi.slope_norms()))


def solve_picard(prob: ImplicitProblem, tol: float = 1e-8, max_iter: int = 200,
                 xi_init: Optional[PLPath] = None,
                 fixed_point_check: bool = True) -> tuple[Trajectory, IterationReport]:
    """Picard iteration from ``xi0 = u(0) - x0`` (or ``xi_init``).

    Stops when the plain W^{1,1} distance between successive iterates is at
    most ``tol``. The iteration count is the number of applications of ``S``.

    Raises
    ------
    NotAContraction
        If the contraction preflight fails.
    MaxIterExceeded
        After ``max_iter`` applications; the partial report is attached.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    delta, delta_star = check_contraction(prob)
    wp = weight_profile(prob)
    bounds = envelope_bounds(prob)
    report = IterationReport(delta, delta_star)
    report.weights = {**weight_constants(prob).to_dict(), "M_T": float(wp.M.values[-1, 0]),
                      "epsilon": prob.epsilon}
    if xi_init is None:
        eta = PLPath.constant(prob.u.grid, prob.xi0)
    else:
        eta = xi_init.resample(prob.u.grid)
        if not np.allclose(eta.values[0], prob.xi0, atol=1e-12, rtol=0):
            raise ValueError("xi_init must start at u(0) - x0")
    report.envelope_margins.append(_envelope_margin(prob, bounds, eta))
    scale = max(1.0, float(bounds.max()))
    traj = None
    for it in range(1, max_iter + 1):
        traj, _ = picard_map(prob, eta)
        new = traj.xi
        diff = new - eta
        report.weighted.append(weighted_w11_norm(diff, wp))
        report.plain.append(w11_distance(new, eta))
        margin = _envelope_margin(prob, bounds, new)
        report.envelope_margins.append(margin)
        if margin < -ENVELOPE_TOL * scale:
            report.flagged.append(f"iterate {it} leaves the envelope by {-margin:.3g}")
        if len(report.weighted) >= 2 and report.weighted[-2] > 0:
            ratio = report.weighted[-1] / report.weighted[-2]
            report.ratios.append(ratio)
            if ratio > delta_star + RATIO_TOL:
                report.flagged.append(f"ratio {ratio:.4g} at iterate {it} exceeds delta* + "
                                      f"{RATIO_TOL}")
        if it == 1:
            report.budget = iteration_budget(report.weighted[0], tol, delta_star)
        report.iterations = it
        eta = new
        if report.plain[-1] <= tol:
            report.converged = True
            break
    if not report.converged:
        raise MaxIterExceeded(
            f"no convergence to tol={tol:g} in {max_iter} iterations; "
            f"observed ratios {report.ratios[-5:]}", report=report,
        )
    if fixed_point_check:
        check, _ = picard_map(prob, eta)
        report.fixed_point_residual = w11_distance(check.xi, eta)
    traj.meta["picard_iterations"] = report.iterations
    return traj, report
