"""Time stepping for the sweeping process with given inputs ``u`` and ``w``.

The unknown is the play output ``xi``; the state is ``x = u - xi`` and must
stay in ``Z(w(t))``. Two schemes are provided: the catching-up projection
scheme and an explicit Euler discretization of the boundary flow
``xi' = B / |grad_x G|^2 grad_x G`` (active when ``B > 0``).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .constraint import (
    LevelSetConstraint,
    distance_to_boundary,
    project_with_info,
    random_directions,
)
from .errors import SweepGateViolated
from .paths import PLPath, TimeGrid, refine_to_common_grid

__all__ = [
    "ACTIVATION_TOL",
    "GATE_FRACTION",
    "SweepProblem",
    "Trajectory",
    "drive_terms",
    "sweep_gate",
    "solve_catching_up",
    "solve_boundary_ode",
    "solve",
    "rate_bound_margins",
    "rate_bound_check",
    "vi_residuals",
    "vi_residual",
    "compensator",
    "compensator_identity",
    "annotate",
    "step_scale",
    "write_trajectory_csv",
]

ACTIVATION_TOL = 1e-8
GATE_FRACTION = 0.5
N_Z = 64


@dataclass(frozen=True)
class SweepProblem:
    """Inputs of the explicit problem.

    ``u`` and ``w`` are refined to a common grid on construction. ``C_K``
    defaults to the Hausdorff constant of the family with ``K = max |w|``.
    """

    cons: LevelSetConstraint
    u: PLPath
    w: PLPath
    x0: NDArray
    activation_tol: float = ACTIVATION_TOL
    gate_fraction: float = GATE_FRACTION
    C_K: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        cons = self.cons
        if self.u.dim != cons.state_dim:
            raise ValueError(f"u has dimension {self.u.dim}, expected {cons.state_dim}")
        if self.w.dim != cons.param_dim:
            raise ValueError(f"w has dimension {self.w.dim}, expected {cons.param_dim}")
        u, w = refine_to_common_grid(self.u, self.w)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "w", w)
        x0 = np.array(self.x0, dtype=float).reshape(cons.state_dim)
        x0.flags.writeable = False
        object.__setattr__(self, "x0", x0)
        g0 = cons.value(x0, w.values[0])
        if g0 > 1.0 + cons.level_tol:
            raise ValueError(f"x0 is not in Z(w(0)): G = {g0!r}")
        if not self.activation_tol > 0 or not self.gate_fraction > 0:
            raise ValueError("activation_tol and gate_fraction must be positive")
        cons.require_constants()

    @property
    def grid(self) -> TimeGrid:
        return self.u.grid

    @property
    def hausdorff_constant(self) -> float:
        if self.C_K is not None:
            return float(self.C_K)
        K = float(np.max(np.linalg.norm(self.w.values, axis=1)))
        return self.cons.constants.hausdorff_constant(K)

    def truncate(self, k: int) -> "SweepProblem":
        """The same problem on ``[0, t_k]``."""
        return SweepProblem(self.cons, self.u.truncate(k), self.w.truncate(k), self.x0,
                            self.activation_tol, self.gate_fraction, self.hausdorff_constant,
                            self.seed)


@dataclass
class Trajectory:
    """Solution and per-step diagnostics.

    Node arrays have length ``N + 1``; step arrays have length ``N`` and refer
    to ``[t_k, t_{k+1}]``. ``xidot`` is the realised slope of ``xi``;
    ``xidot_scheme`` is the velocity the scheme prescribed (identical for
    catching-up, the pre-projection flow for the boundary ODE).
    """

    scheme: str
    xi: PLPath
    x: PLPath
    active: NDArray        # node: G(x_k, w_k) >= 1 - activation_tol
    G: NDArray             # node: G after projection
    G_pre: NDArray         # node: G before projection
    A: NDArray             # step
    B: NDArray             # step
    xidot: NDArray         # step, realised slope vectors (N, n)
    xidot_scheme: NDArray  # step
    eval_node: NDArray     # step: node at which the step's normal is taken
    vi_residual: Optional[NDArray] = None
    compensator: Optional[NDArray] = None
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> TimeGrid:
        return self.xi.grid

    @property
    def xidot_norm(self) -> NDArray:
        return np.linalg.norm(self.xidot, axis=1)


def drive_terms(x, w_val, u_dot, w_dot, cons: LevelSetConstraint, active: bool = True):
    """Return ``(A_proxy, B)`` with ``B = <u', grad_x G> + <w', grad_w G>``.

    ``A_proxy = max(B, 0)`` on the active set and ``0`` otherwise.
    """
    x = np.asarray(x, float)
    w_val = np.asarray(w_val, float)
    B = float(np.dot(u_dot, cons.grad_x(x, w_val)) + np.dot(w_dot, cons.grad_w(x, w_val)))
    return (max(B, 0.0) if active else 0.0), B


def sweep_gate(prob: SweepProblem) -> NDArray:
    """Per-step gate margins ``gate_fraction * r - (|du| + C_K |dw|)``.

    Raises
    ------
    SweepGateViolated
        On the first step with a negative margin; ``refine_factor`` is the
        integer factor by which the grid must be refined.
    """
    r = prob.cons.constants.r
    du = np.linalg.norm(np.diff(prob.u.values, axis=0), axis=1)
    dw = np.linalg.norm(np.diff(prob.w.values, axis=0), axis=1)
    load = du + prob.hausdorff_constant * dw
    cap = prob.gate_fraction * r
    margin = cap - load
    bad = np.flatnonzero(margin < 0)
    if bad.size:
        k = int(bad[0])
        factor = int(math.ceil(float(load.max()) / cap))
        raise SweepGateViolated(
            f"step {k}: |du| + C_K |dw| = {load[k]:.6g} exceeds {prob.gate_fraction} r = "
            f"{cap:.6g}; refine the grid by a factor {factor}",
            step=k, margin=float(margin[k]), refine_factor=factor,
        )
    return margin


def _node_flags(cons, x, w, tol):
    G = np.asarray(cons.G(x, w), float)
    return G, G >= 1.0 - tol


def solve_catching_up(prob: SweepProblem) -> Trajectory:
    """``x_{k+1} = P_{Z(w_{k+1})}(x_k + du_k)``, ``xi = u - x``."""
    margins = sweep_gate(prob)
    cons = prob.cons
    u, w = prob.u.values, prob.w.values
    N = prob.grid.n_steps
    x = np.empty_like(u)
    x[0] = prob.x0
    for k in range(N):
        y = x[k] + (u[k + 1] - u[k])
        x[k + 1] = project_with_info(y, w[k + 1], cons, x_init=x[k]).x
    return _assemble(prob, "catchup", x, None, None, np.arange(1, N + 1), margins)


def solve_boundary_ode(prob: SweepProblem) -> Trajectory:
    """Explicit Euler on the boundary flow with re-projection after each step.

    Inactive when ``G(x_k, w_k) < 1 - activation_tol`` or ``B_k <= 0``.
    """
    margins = sweep_gate(prob)
    cons = prob.cons
    u, w = prob.u.values, prob.w.values
    grid = prob.grid
    dt = grid.steps
    du = np.diff(u, axis=0) / dt[:, None]
    dw = np.diff(w, axis=0) / dt[:, None]
    N = grid.n_steps
    x = np.empty_like(u)
    x[0] = prob.x0
    xi = np.empty_like(u)
    xi[0] = u[0] - prob.x0
    vel = np.zeros_like(du)
    G_pre = np.empty(N + 1)
    G_pre[0] = cons.value(x[0], w[0])
    for k in range(N):
        gk = cons.value(x[k], w[k])
        if gk >= 1.0 - prob.activation_tol:
            _, B = drive_terms(x[k], w[k], du[k], dw[k], cons)
            if B > 0:
                g = cons.grad_x(x[k], w[k])
                vel[k] = B / float(g @ g) * g
        xi_pre = xi[k] + dt[k] * vel[k]
        x_pre = u[k + 1] - xi_pre
        G_pre[k + 1] = cons.value(x_pre, w[k + 1])
        x[k + 1] = project_with_info(x_pre, w[k + 1], cons, x_init=x[k]).x
        xi[k + 1] = u[k + 1] - x[k + 1]
    return _assemble(prob, "boundary-ode", x, vel, G_pre, np.arange(0, N), margins)


def _assemble(prob, scheme, x, vel, G_pre, eval_node, margins) -> Trajectory:
    cons = prob.cons
    grid = prob.grid
    u, w = prob.u.values, prob.w.values
    xi_vals = u - x
    xi = PLPath(grid, xi_vals)
    xp = PLPath(grid, x)
    dt = grid.steps
    realised = np.diff(xi_vals, axis=0) / dt[:, None]
    if vel is None:
        vel = realised
    G, active = _node_flags(cons, x, w, prob.activation_tol)
    if G_pre is None:
        G_pre = G.copy()
    du = np.diff(u, axis=0) / dt[:, None]
    dw = np.diff(w, axis=0) / dt[:, None]
    ev = eval_node
    gx = cons.grad_x(x[ev], w[ev])
    gw = cons.grad_w(x[ev], w[ev])
    B = np.sum(du * gx, axis=1) + np.sum(dw * gw, axis=1)
    A = np.where(active[ev], np.maximum(B, 0.0), 0.0)
    meta = {
        "scheme": scheme,
        "n_steps": grid.n_steps,
        "h": grid.h,
        "gate_min_margin": float(margins.min()),
        "hausdorff_constant": prob.hausdorff_constant,
        "max_G": float(G.max()),
        "max_G_pre": float(G_pre.max()),
    }
    return Trajectory(scheme, xi, xp, active, G, G_pre, A, B, realised, vel, ev, meta=meta)


def solve(prob: SweepProblem, scheme: str = "catchup") -> Trajectory:
    if scheme in ("catchup", "catching-up"):
        return solve_catching_up(prob)
    if scheme in ("boundary-ode", "ode"):
        return solve_boundary_ode(prob)
    raise ValueError(f"unknown scheme {scheme!r}")


# -- diagnostics -------------------------------------------------------------


def step_scale(prob: SweepProblem) -> NDArray:
    """Per-step tolerance scale ``max(1, |u'_k| + |w'_k|)``."""
    dt = prob.grid.steps
    du = np.linalg.norm(np.diff(prob.u.values, axis=0), axis=1) / dt
    dw = np.linalg.norm(np.diff(prob.w.values, axis=0), axis=1) / dt
    return np.maximum(1.0, du + dw)


def rate_bound_margins(traj: Trajectory, prob: SweepProblem) -> NDArray:
    """``|u'_k| + (K1/c) |w'_k| - |xi'_k|`` for every step."""
    k = prob.cons.constants
    dt = prob.grid.steps
    du = np.linalg.norm(np.diff(prob.u.values, axis=0), axis=1) / dt
    dw = np.linalg.norm(np.diff(prob.w.values, axis=0), axis=1) / dt
    return du + (k.K1 / k.c) * dw - traj.xidot_norm


def rate_bound_check(traj: Trajectory, prob: SweepProblem) -> float:
    """Worst rate-bound margin over all steps."""
    return float(rate_bound_margins(traj, prob).min())


def vi_residuals(traj: Trajectory, prob: SweepProblem, n_z: int = N_Z) -> NDArray:
    """Worst ``<x - z, v> + |v|/(2r) |x - z|^2`` per step over ``n_z`` members ``z``.

    ``v`` is the scheme velocity, ``x`` and ``z`` are taken at the step's
    evaluation node. Test points are seeded per step, so truncated problems
    see the same samples. Steps with ``v = 0`` have residual 0.
    """
    cons = prob.cons
    r = cons.constants.r
    x = traj.x.values
    w = prob.w.values
    out = np.zeros(traj.grid.n_steps)
    vn = np.linalg.norm(traj.xidot_scheme, axis=1)
    steps = np.flatnonzero(vn > 0)
    for chunk in np.array_split(steps, max(1, len(steps) // 256)):
        if chunk.size == 0:
            continue
        nodes = traj.eval_node[chunk]
        z = _members_batch(cons, w[nodes], [np.random.default_rng([prob.seed, int(k)])
                                            for k in chunk], n_z)
        diff = x[nodes][:, None, :] - z
        v = traj.xidot_scheme[chunk]
        res = (np.einsum("kzn,kn->kz", diff, v)
               + (vn[chunk] / (2 * r))[:, None] * np.sum(diff * diff, axis=2))
        out[chunk] = res.min(axis=1)
    return out


def _members_batch(cons, W, rngs, n_z):
    """:func:`sample_members` for many parameters at once, same draws per generator."""
    n = cons.state_dim
    K = len(rngs)
    dirs = np.empty((K, n_z, n))
    s = np.empty((K, n_z))
    for i, rng in enumerate(rngs):
        dirs[i] = random_directions(rng, n, n_z)
        s[i] = rng.random(n_z) ** (1.0 / n)
        s[i] = np.where(rng.random(n_z) < 0.5, 1.0, s[i])
    A = np.array([np.asarray(cons.anchor(wk), float) for wk in W])[:, None, :]
    Wb = np.broadcast_to(W[:, None, :], (K, n_z, W.shape[1]))
    hi = np.full((K, n_z), 2.0 * cons.extent)
    for _ in range(60):
        bad = cons.G(A + hi[..., None] * dirs, Wb) <= 1.0
        if not bad.any():
            break
        hi = np.where(bad, 2 * hi, hi)
    lo = np.zeros_like(hi)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        inside = cons.G(A + mid[..., None] * dirs, Wb) <= 1.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return A + (s * lo)[..., None] * dirs


def vi_residual(traj: Trajectory, prob: SweepProblem, n_z: int = N_Z) -> float:
    """Worst VI residual over all steps and test points."""
    return float(vi_residuals(traj, prob, n_z).min())


def compensator(x, w_val, w_dot, cons: LevelSetConstraint) -> NDArray:
    """``s = grad_x G / (dist(x, bd Z) + |grad_x G|^2) * <w', grad_w G>``."""
    x = np.asarray(x, float)
    w_val = np.asarray(w_val, float)
    num = float(np.dot(w_dot, cons.grad_w(x, w_val)))
    if num == 0.0:
        return np.zeros(cons.state_dim)
    g = cons.grad_x(x, w_val)
    d = distance_to_boundary(x, w_val, cons)
    return g / (d + float(g @ g)) * num


def compensator_identity(traj: Trajectory, prob: SweepProblem) -> float:
    """``sum_k <xi'_k, x'_k + s_k> dt_k`` (should vanish as ``h -> 0``)."""
    s = traj.compensator if traj.compensator is not None else _compensators(traj, prob)
    dt = prob.grid.steps
    xdot = np.diff(traj.x.values, axis=0) / dt[:, None]
    return float(np.sum(np.sum(traj.xidot * (xdot + s), axis=1) * dt))


def _compensators(traj, prob):
    cons = prob.cons
    dt = prob.grid.steps
    dw = np.diff(prob.w.values, axis=0) / dt[:, None]
    x = traj.x.values
    w = prob.w.values
    out = np.zeros((traj.grid.n_steps, cons.state_dim))
    for k in range(traj.grid.n_steps):
        if not np.any(traj.xidot[k]):
            continue  # contributes nothing to the identity
        j = int(traj.eval_node[k])
        out[k] = compensator(x[j], w[j], dw[k], cons)
    return out


def annotate(traj: Trajectory, prob: SweepProblem, n_z: int = N_Z,
             with_compensator: bool = False) -> Trajectory:
    """Fill the VI residual (and optionally compensator) columns in place."""
    traj.vi_residual = vi_residuals(traj, prob, n_z)
    traj.meta["vi_worst"] = float(traj.vi_residual.min()) if traj.vi_residual.size else 0.0
    traj.meta["rate_bound_worst"] = rate_bound_check(traj, prob)
    if with_compensator:
        traj.compensator = _compensators(traj, prob)
    return traj


def write_trajectory_csv(traj: Trajectory, fh=None) -> str | None:
    """Columns ``t, x*, xi*, active, G, B, xidot_norm, vi_residual``.

    Step quantities are written on the row of the step's end node; row 0
    carries zeros.
    """
    n = traj.x.dim
    header = (["t"] + [f"x{i}" for i in range(n)] + [f"xi{i}" for i in range(n)]
              + ["active", "G", "B", "xidot_norm", "vi_residual"])
    N = traj.grid.n_steps
    B = np.concatenate([[0.0], traj.B])
    xn = np.concatenate([[0.0], traj.xidot_norm])
    vi = np.zeros(N + 1)
    if traj.vi_residual is not None:
        vi[1:] = traj.vi_residual
    buf = fh if fh is not None else io.StringIO()
    buf.write(",".join(header) + "\n")
    t = traj.grid.nodes
    for k in range(N + 1):
        row = ([t[k]] + list(traj.x.values[k]) + list(traj.xi.values[k])
               + [int(traj.active[k]), traj.G[k], B[k], xn[k], vi[k]])
        buf.write(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in row) + "\n")
    if fh is None:
        return buf.getvalue()
    return None
