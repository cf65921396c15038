"""Built-in constraint families, feedback maps and the exact play operator."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from .constraint import ConstantsBundle, LevelSetConstraint
from .errors import NotAContraction
from .paths import PLPath, TimeGrid, refine_to_common_grid
from .sweep_implicit import StateMap

__all__ = [
    "LAMBDA_FLOOR",
    "FamilySpec",
    "saturate",
    "make_scalar_play",
    "make_moving_ball",
    "make_star_set",
    "make_constraint",
    "play_oracle",
    "make_state_map",
    "gamma_for_delta",
]

LAMBDA_FLOOR = 1e-6


# -- saturation -------------------------------------------------------------
# sigma(s) = s on [0, 2], = 3 on [4, inf), C^2 and nondecreasing in between:
# sigma' = 1 - smoothstep((s - 2) / 2).


def saturate(s):
    """Return ``(sigma(s), sigma'(s), sigma''(s))`` elementwise."""
    s = np.asarray(s, dtype=float)
    if s.size and s.max() <= 2.0:
        return s, np.ones_like(s), np.zeros_like(s)
    t = np.minimum(np.maximum((s - 2.0) / 2.0, 0.0), 1.0)
    blend = 2.0 + 2.0 * (t - t**3 + 0.5 * t**4)
    val = np.where(s <= 2.0, s, np.where(s >= 4.0, 3.0, blend))
    d1 = 1.0 - (3 * t**2 - 2 * t**3)
    d2 = np.where((s > 2.0) & (s < 4.0), -3.0 * t * (1 - t), 0.0)
    return val, d1, d2


def _sat_gradient_peak() -> float:
    """``max_s sigma'(s) * 2 sqrt(s)``: sup of |grad| for a saturated quadratic of unit radius."""
    s = np.linspace(0.0, 4.0, 400001)
    _, d1, _ = saturate(s)
    return float(np.max(d1 * 2.0 * np.sqrt(s)))


@dataclass(frozen=True)
class FamilySpec:
    """Name, numeric parameters and motion parameterisation of a family."""

    family: str
    params: dict = field(default_factory=dict)
    motion: str = "translation"


# -- quadratic families -----------------------------------------------------


def _quadratic_family(n: int, rho: float, name: str, params: dict) -> LevelSetConstraint:
    inv = 1.0 / rho**2

    def parts(x, w):
        d = np.asarray(x, float) - np.asarray(w, float)
        s = inv * np.sum(d * d, axis=-1)
        return d, s

    def G(x, w):
        _, s = parts(x, w)
        return saturate(s)[0]

    def grad_x(x, w):
        d, s = parts(x, w)
        return saturate(s)[1][..., None] * 2.0 * inv * d

    def grad_w(x, w):
        return -grad_x(x, w)

    def hess_x(x, w):
        d, s = parts(x, w)
        _, d1, d2 = saturate(s)
        gs = 2.0 * inv * d
        return d2[..., None, None] * gs[..., :, None] * gs[..., None, :] + (
            d1[..., None, None] * 2.0 * inv * np.eye(n)
        )

    consts = ConstantsBundle(
        c=2.0 / rho, lam=LAMBDA_FLOOR, L=_sat_gradient_peak() / rho,
        K0=2.0 / rho, K1=2.0 / rho, C0=2.0 * inv, C1=2.0 * inv,
        coercivity_kappa=1.0 / rho, source="analytic",
    )
    return LevelSetConstraint(
        state_dim=n, param_dim=n, G=G, grad_x=grad_x, grad_w=grad_w,
        anchor=lambda w: np.asarray(w, float).copy(), extent=rho,
        constants=consts, hess_x=hess_x, name=name, params=params,
    )


def make_scalar_play(rho: float = 1.0) -> LevelSetConstraint:
    """Interval ``Z(w) = [w - rho, w + rho]`` from ``G = sigma(((x - w)/rho)^2)``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    return _quadratic_family(1, float(rho), "scalar_play", {"rho": float(rho)})


def make_moving_ball(n: int = 2, rho: float = 1.0) -> LevelSetConstraint:
    """Translated ball ``|x - w| <= rho`` in R^n, parameter ``w`` in R^n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not rho > 0:
        raise ValueError("rho must be positive")
    return _quadratic_family(int(n), float(rho), "moving_ball", {"n": int(n), "rho": float(rho)})


# -- star set ---------------------------------------------------------------


def _star_raw(R0, a, k):
    def radius(theta):
        return (R0 * (1 + a * np.cos(k * theta)),
                -R0 * a * k * np.sin(k * theta),
                -R0 * a * k * k * np.cos(k * theta))

    def parts(x, w):
        x = np.asarray(x, float)
        w = np.asarray(w, float)
        y = x - w[..., :2]
        rho2 = np.sum(y * y, axis=-1)
        theta = np.arctan2(y[..., 1], y[..., 0]) - w[..., 2]
        R, R1, R2 = radius(theta)
        Jy = np.stack([-y[..., 1], y[..., 0]], axis=-1)
        return y, rho2, Jy, R, R1, R2

    def raw(x, w):
        y, rho2, Jy, R, R1, R2 = parts(x, w)
        s = rho2 / R**2
        gy = (2.0 / R**2)[..., None] * y - (2.0 * R1 / R**3)[..., None] * Jy
        dphi = 2.0 * rho2 * R1 / R**3
        return s, gy, dphi, (y, rho2, Jy, R, R1, R2)

    return raw


def make_star_set(R0: float = 1.0, a: float = 0.2, k: int = 3,
                  constants: ConstantsBundle | None = None, seed: int = 0) -> LevelSetConstraint:
    """Non-convex star ``|x - c| <= R0 (1 + a cos(k (theta - phi)))``; ``w = (c, phi)``.

    Without explicit ``constants`` the bundle is taken from the certifier
    (cached per parameter set).
    """
    if not R0 > 0:
        raise ValueError("R0 must be positive")
    if not 0 <= a < 1:
        raise ValueError("star amplitude must satisfy 0 <= a < 1")
    if int(k) != k or k < 2:
        raise ValueError("lobe count k must be an integer >= 2")
    cons = _star_uncertified(float(R0), float(a), int(k))
    if constants is None:
        constants = _certified_star_constants(float(R0), float(a), int(k), int(seed))
    return cons.with_constants(constants)


def _star_uncertified(R0: float, a: float, k: int) -> LevelSetConstraint:
    raw = _star_raw(R0, a, k)

    def G(x, w):
        return saturate(raw(x, w)[0])[0]

    def grad_x(x, w):
        s, gy, _, _ = raw(x, w)
        return saturate(s)[1][..., None] * gy

    def grad_w(x, w):
        s, gy, dphi, _ = raw(x, w)
        d1 = saturate(s)[1]
        return np.concatenate([-d1[..., None] * gy, (d1 * dphi)[..., None]], axis=-1)

    def hess_x(x, w):
        s, gy, _, (y, rho2, Jy, R, R1, R2) = raw(x, w)
        _, d1, d2 = saturate(s)
        rho2 = np.where(rho2 > 0, rho2, 1.0)
        J = np.array([[0.0, -1.0], [1.0, 0.0]])
        H = (
            (2.0 / R**2)[..., None, None] * np.eye(2)
            - (4.0 * R1 / R**3 / rho2)[..., None, None] * y[..., :, None] * Jy[..., None, :]
            - (2.0 * R1 / R**3)[..., None, None] * J
            - ((2.0 * R2 / R**3 - 6.0 * R1**2 / R**4) / rho2)[..., None, None]
            * Jy[..., :, None] * Jy[..., None, :]
        )
        return d2[..., None, None] * gy[..., :, None] * gy[..., None, :] + d1[..., None, None] * H

    return LevelSetConstraint(
        state_dim=2, param_dim=3, G=G, grad_x=grad_x, grad_w=grad_w,
        anchor=lambda w: np.asarray(w, float)[:2].copy(), extent=R0 * (1 + a),
        constants=None, hess_x=hess_x, name="star",
        params={"R0": R0, "a": a, "k": k},
    )


def star_coercivity_kappa(R0: float, a: float) -> float:
    return 1.0 / (2.0 * R0 * (1.0 + a))


@functools.lru_cache(maxsize=16)
def _certified_star_constants(R0: float, a: float, k: int, seed: int) -> ConstantsBundle:
    from .certify import certify_constraint

    cons = _star_uncertified(R0, a, k)
    # Constants are invariant under the rigid motions parameterised by w,
    # so a few parameter samples suffice.
    w_samples = np.array([[0.0, 0.0, 0.0], [0.3, -0.2, 0.4], [-0.5, 0.1, -1.0]])
    report = certify_constraint(
        cons, w_samples, rng=np.random.default_rng(seed),
        coercivity_kappa=star_coercivity_kappa(R0, a),
    )
    return report.constants


def make_constraint(family: str, params: dict | None = None) -> LevelSetConstraint:
    """Look a family up by name (CLI configuration entry point)."""
    params = dict(params or {})
    if family in ("scalar_play", "play"):
        return make_scalar_play(**params)
    if family in ("moving_ball", "ball"):
        return make_moving_ball(**params)
    if family in ("star", "star_set"):
        return make_star_set(**params)
    raise ValueError(f"unknown constraint family {family!r}")


# -- exact play operator ----------------------------------------------------


def play_oracle(u: PLPath, w: PLPath, rho: float, x0: float) -> PLPath:
    """Exact output ``xi`` of the scalar play with interval ``[w - rho, w + rho]``.

    Inputs are affine on each step of the merged grid, so the relative
    velocity ``u' - w'`` is constant there and the clamp crossing time can be
    inserted as an extra node; the result is exact for piecewise-linear
    inputs.
    """
    if u.dim != 1 or w.dim != 1:
        raise ValueError("play_oracle needs scalar paths")
    u, w = refine_to_common_grid(u, w)
    t = u.nodes
    uu = u.values[:, 0]
    ww = w.values[:, 0]
    p = float(x0) - ww[0]
    if abs(p) > rho * (1 + 1e-12):
        raise ValueError("x0 outside Z(w(0))")
    times, xs = [0.0], [float(x0)]
    for j in range(len(t) - 1):
        dt = t[j + 1] - t[j]
        v = ((uu[j + 1] - uu[j]) - (ww[j + 1] - ww[j])) / dt
        if abs(p + v * dt) > rho:  # the step reaches a wall
            wall = rho if v > 0 else -rho
            tau = (wall - p) / v
            if 0.0 < tau < dt:
                tc = t[j] + tau
                wc = ww[j] + (ww[j + 1] - ww[j]) * tau / dt
                times.append(tc)
                xs.append(wc + wall)
        p = min(max(p + v * dt, -rho), rho)
        times.append(t[j + 1])
        xs.append(ww[j + 1] + p)
    grid = TimeGrid(np.array(times))
    x = PLPath(grid, np.array(xs))
    return u.resample(grid) - x


# -- feedback maps ----------------------------------------------------------


def _as_matrix(v, m, n, name):
    A = np.asarray(v, dtype=float)
    if A.ndim == 0:
        if m != n:
            raise ValueError(f"scalar {name} needs m == n")
        return A * np.eye(n)
    if A.shape != (m, n):
        raise ValueError(f"{name} must have shape ({m}, {n}), got {A.shape}")
    return A


def make_state_map(kind: str, params: dict, cons: LevelSetConstraint | None = None) -> StateMap:
    """Feedback ``w(t) = g(t, u(t), xi(t))``.

    ``kind="linear"``: ``g = w_base(t) + Gamma xi + Omega u``;
    ``kind="tanh"``: ``g = w_base(t) + alpha tanh(xi)`` (needs ``m == n``).
    ``params`` gives ``n``, ``m``, ``w_base`` (a :class:`PLPath`, default
    zero) and the coefficients. With ``cons`` the contraction preflight
    ``K1 gamma / c < 1`` is enforced.
    """
    params = dict(params)
    n = int(params.pop("n"))
    m = int(params.pop("m", n))
    w_base = params.pop("w_base", None)

    if w_base is None:
        def base(t):
            return np.zeros(m)

        def base_dot(t):
            return np.zeros(m)

        def rate_a(t):
            return 0.0
    else:
        if w_base.dim != m:
            raise ValueError("w_base dimension must equal m")
        slopes = w_base.slopes()
        nodes = w_base.nodes

        def base(t):
            return w_base(t)

        def base_dot(t):
            k = int(np.clip(np.searchsorted(nodes, t, side="right") - 1, 0, len(slopes) - 1))
            return slopes[k]

        def rate_a(t):
            return float(np.linalg.norm(base_dot(t)))

    if kind == "linear":
        Gam = _as_matrix(params.pop("Gamma", 0.0), m, n, "Gamma")
        Om = _as_matrix(params.pop("Omega", 0.0), m, n, "Omega")
        gmap = StateMap(
            n=n, m=m,
            g=lambda t, u, xi: base(t) + Gam @ np.asarray(xi, float) + Om @ np.asarray(u, float),
            dg_dt=lambda t, u, xi: base_dot(t),
            dg_du=lambda t, u, xi: Om,
            dg_dxi=lambda t, u, xi: Gam,
            gamma=float(np.linalg.norm(Gam, 2)), omega=float(np.linalg.norm(Om, 2)),
            C_xi=0.0, C_u=0.0, a=rate_a, b=lambda t: 0.0,
            kind="linear",
        )
    elif kind == "tanh":
        if m != n:
            raise ValueError("tanh map needs m == n")
        alpha = float(params.pop("alpha"))
        gmap = StateMap(
            n=n, m=m,
            g=lambda t, u, xi: base(t) + alpha * np.tanh(np.asarray(xi, float)),
            dg_dt=lambda t, u, xi: base_dot(t),
            dg_du=lambda t, u, xi: np.zeros((m, n)),
            dg_dxi=lambda t, u, xi: np.diag(alpha / np.cosh(np.asarray(xi, float)) ** 2),
            gamma=abs(alpha), omega=0.0,
            C_xi=abs(alpha) * 4.0 / (3.0 * math.sqrt(3.0)), C_u=0.0,
            a=rate_a, b=lambda t: 0.0, kind="tanh",
        )
    else:
        raise ValueError(f"unknown state map kind {kind!r}")
    if params:
        raise ValueError(f"unknown state map parameters: {sorted(params)}")
    if cons is not None and cons.constants is not None:
        k = cons.constants
        delta = k.K1 * gmap.gamma / k.c
        if delta >= 1.0:
            raise NotAContraction(f"delta = K1 gamma / c = {delta:.6g} >= 1")
    return gmap


def gamma_for_delta(cons: LevelSetConstraint, delta: float) -> float:
    """Feedback gain ``gamma`` giving contraction constant ``delta`` for ``cons``."""
    k = cons.require_constants()
    return delta * k.c / k.K1
