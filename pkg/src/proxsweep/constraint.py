"""Level-set constraints ``Z(w) = {x : G(x, w) <= 1}`` and their geometry.

Evaluators are vectorised: ``G(x, w)`` takes ``x`` of shape ``(..., n)`` and
``w`` of shape ``(..., m)`` (broadcast against each other) and returns shape
``(...)``; ``grad_x`` returns ``(..., n)``, ``grad_w`` returns ``(..., m)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import NoConvergence, NotOnBoundary, OutsideProxTube

__all__ = [
    "ConstantsBundle",
    "LevelSetConstraint",
    "ProjectionResult",
    "HausdorffEstimate",
    "project_to_set",
    "project_with_info",
    "distance_to_set",
    "distance_to_boundary",
    "normal_ray",
    "prox_inequality_residual",
    "projection_inequality_residual",
    "hausdorff_estimate",
    "boundary_points",
    "sample_members",
    "sphere_directions",
    "random_directions",
    "LEVEL_TOL",
    "PROJECTION_TOL",
]

LEVEL_TOL = 1e-10
PROJECTION_TOL = 1e-9
MAX_ITER = 100
SAFETY_FACTOR = 0.9


@dataclass(frozen=True)
class ConstantsBundle:
    """Constants of the regularity hypotheses for one constraint family.

    ``r`` is derived as ``c / lam`` and never stored separately. The
    coercivity modulus is linear, ``mu2(rho) = coercivity_kappa * rho``.
    """

    c: float
    lam: float
    L: float
    K0: float
    K1: float
    C0: float
    C1: float
    coercivity_kappa: Optional[float] = None
    source: str = "analytic"

    def __post_init__(self):
        for name in ("c", "lam", "L", "K0", "K1", "C0", "C1"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"constant {name} must be positive and finite, got {v!r}")
        if self.coercivity_kappa is not None and not self.coercivity_kappa > 0:
            raise ValueError("coercivity_kappa must be positive")

    @property
    def r(self) -> float:
        return self.c / self.lam

    def mu2(self, rho: float) -> float:
        if self.coercivity_kappa is None:
            raise ValueError("no coercivity modulus declared")
        return self.coercivity_kappa * rho

    def mu2_inv(self, value: float) -> float:
        if self.coercivity_kappa is None:
            raise ValueError("no coercivity modulus declared")
        return value / self.coercivity_kappa

    def hausdorff_constant(self, K: float) -> float:
        """``C_K = max(2L/c, D_K L / mu2(r))`` with ``D_K = mu2^{-1}(2 K L)``.

        Without a declared coercivity modulus only the ``2L/c`` branch is
        available.
        """
        near = 2.0 * self.L / self.c
        if self.coercivity_kappa is None:
            return near
        d_k = self.mu2_inv(2.0 * K * self.L)
        return max(near, d_k * self.L / self.mu2(self.r))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["r"] = self.r
        return d


@dataclass(frozen=True, eq=False)
class LevelSetConstraint:
    """A smooth level-set constraint family.

    ``anchor(w)`` must return a point with ``G < 1`` from which every ray
    crosses the boundary once (all built-in families are star-shaped about
    their anchor); ``extent`` bounds the anchor-to-boundary distance.
    """

    state_dim: int
    param_dim: int
    G: Callable[[NDArray, NDArray], NDArray]
    grad_x: Callable[[NDArray, NDArray], NDArray]
    grad_w: Callable[[NDArray, NDArray], NDArray]
    anchor: Callable[[NDArray], NDArray]
    extent: float
    constants: Optional[ConstantsBundle] = None
    hess_x: Optional[Callable[[NDArray, NDArray], NDArray]] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    level_tol: float = LEVEL_TOL

    def with_constants(self, constants: ConstantsBundle) -> "LevelSetConstraint":
        return replace(self, constants=constants)

    def require_constants(self) -> ConstantsBundle:
        if self.constants is None:
            raise ValueError(f"constraint {self.name!r} has no certified constants")
        return self.constants

    def value(self, x, w) -> float:
        return float(self.G(np.asarray(x, float), np.asarray(w, float)))

    def contains(self, x, w) -> bool:
        return self.value(x, w) <= 1.0 + self.level_tol

    def hessian(self, x: NDArray, w: NDArray) -> NDArray:
        if self.hess_x is not None:
            return self.hess_x(x, w)
        return _fd_hessian(self, x, w)


def _fd_hessian(cons: LevelSetConstraint, x: NDArray, w: NDArray) -> NDArray:
    n = x.size
    h = 1e-6 * max(1.0, float(np.max(np.abs(x))))
    E = np.eye(n) * h
    gp = cons.grad_x(x[None, :] + E, w)
    gm = cons.grad_x(x[None, :] - E, w)
    H = (gp - gm).T / (2 * h)
    return 0.5 * (H + H.T)


# -- sampling helpers -------------------------------------------------------


def sphere_directions(n: int, k: int) -> NDArray:
    """Deterministic, roughly even unit directions in R^n."""
    if n == 1:
        return np.array([[1.0], [-1.0]])
    if n == 2:
        th = 2 * np.pi * (np.arange(k) + 0.5) / k
        return np.column_stack([np.cos(th), np.sin(th)])
    if n == 3:
        i = np.arange(k) + 0.5
        phi = np.arccos(1 - 2 * i / k)
        th = np.pi * (1 + 5**0.5) * i
        return np.column_stack(
            [np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)]
        )
    rng = np.random.default_rng(12345)
    return random_directions(rng, n, k)


def random_directions(rng: np.random.Generator, n: int, k: int) -> NDArray:
    if n == 1:
        return rng.choice([-1.0, 1.0], size=(k, 1))
    v = rng.standard_normal((k, n))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _ray_bisect(cons, origin, dirs, w, t_lo, t_hi, n_iter=60):
    """Bisection for ``G(origin + t v) = 1`` with ``G < 1`` at ``t_lo``."""
    w = np.asarray(w, float)
    lo = np.array(t_lo, dtype=float)
    hi = np.array(t_hi, dtype=float)
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        inside = cons.G(origin + mid[:, None] * dirs, w) <= 1.0
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
        if np.all(hi - lo <= 1e-15 * np.maximum(1.0, hi)):
            break
    return lo, hi


def boundary_points(cons: LevelSetConstraint, w, dirs: NDArray, side: str = "outer"):
    """Boundary points along rays ``anchor(w) + t v``.

    ``side="outer"`` returns the bracket end with ``G >= 1``, ``"inner"`` the
    end with ``G <= 1``. Returns ``(points, t)``.
    """
    w = np.asarray(w, float)
    a = np.asarray(cons.anchor(w), float)
    dirs = np.atleast_2d(np.asarray(dirs, float))
    t_hi = np.full(dirs.shape[0], 2.0 * cons.extent)
    for _ in range(60):
        bad = cons.G(a + t_hi[:, None] * dirs, w) <= 1.0
        if not np.any(bad):
            break
        t_hi = np.where(bad, 2 * t_hi, t_hi)
    else:
        raise NoConvergence("boundary not found along some rays from the anchor")
    lo, hi = _ray_bisect(cons, a, dirs, w, np.zeros(dirs.shape[0]), t_hi)
    t = hi if side == "outer" else lo
    return a + t[:, None] * dirs, t


def sample_members(cons: LevelSetConstraint, w, rng: np.random.Generator, k: int,
                   boundary_fraction: float = 0.5) -> NDArray:
    """Points of ``Z(w)``: a share on the boundary, the rest radially inside."""
    n = cons.state_dim
    dirs = random_directions(rng, n, k)
    pts, t = boundary_points(cons, w, dirs, side="inner")
    a = np.asarray(cons.anchor(np.asarray(w, float)), float)
    s = rng.random(k) ** (1.0 / n)
    on_bd = rng.random(k) < boundary_fraction
    s = np.where(on_bd, 1.0, s)
    return a + (s * t)[:, None] * dirs


# -- projection -------------------------------------------------------------


@dataclass
class ProjectionResult:
    x: NDArray
    distance: float
    multiplier: float
    iterations: int
    method: str


def _level_walk(cons, z, w, n_iter=30):
    """Newton along the gradient towards the level set ``G = 1``."""
    for _ in range(n_iter):
        g = cons.G(z, w)
        if abs(g - 1.0) <= 1e-13:
            break
        gr = cons.grad_x(z, w)
        nn = float(gr @ gr)
        if nn == 0.0:
            return None
        z = z - (g - 1.0) * gr / nn
    return z


def _kkt_newton(cons, y, w, x, tol, level_tol, max_iter):
    """Damped Newton on ``x - y + mu grad G(x) = 0``, ``G(x) = 1``."""
    n = y.size
    g = cons.grad_x(x, w)
    gg = float(g @ g)
    if gg == 0.0:
        return None
    mu = float((y - x) @ g) / gg

    def residual(x, mu):
        gx = cons.grad_x(x, w)
        return np.concatenate([x - y + mu * gx, [cons.G(x, w) - 1.0]]), gx

    F, g = residual(x, mu)
    nF = float(np.linalg.norm(F))
    J = np.zeros((n + 1, n + 1))
    for it in range(1, max_iter + 1):
        if np.linalg.norm(F[:n]) <= tol and abs(F[n]) <= level_tol:
            return x, mu, it - 1
        J[:n, :n] = np.eye(n) + mu * cons.hessian(x, w)
        J[:n, n] = g
        J[n, :n] = g
        try:
            step = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            return None
        alpha = 1.0
        while True:
            xn = x + alpha * step[:n]
            mun = mu + alpha * step[n]
            Fn, gn = residual(xn, mun)
            nFn = float(np.linalg.norm(Fn))
            if nFn < (1 - 1e-4 * alpha) * nF or nFn <= tol * 1e-3:
                break
            alpha *= 0.5
            if alpha < 1e-10:
                return None
        x, mu, F, g, nF = xn, mun, Fn, gn, nFn
    return None


def _manifold_descent(cons, y, w, x, tol, max_iter=2000):
    """Gradient descent of ``|y - x|^2`` along the level set (fallback)."""
    x = _level_walk(cons, x, w)
    if x is None:
        return None
    step = 0.5
    for it in range(max_iter):
        g = cons.grad_x(x, w)
        nrm = g / np.linalg.norm(g)
        d = y - x
        tang = d - (d @ nrm) * nrm
        if np.linalg.norm(tang) <= tol:
            gx = cons.grad_x(x, w)
            mu = float(d @ gx) / float(gx @ gx)
            return x, mu, it
        xn = _level_walk(cons, x + step * tang, w)
        if xn is None or np.linalg.norm(y - xn) > np.linalg.norm(d):
            step *= 0.5
            if step < 1e-12:
                return None
            continue
        x = xn
    return None


def _finalize_feasible(cons, x, w, level_tol):
    for _ in range(5):
        gv = cons.G(x, w)
        if gv <= 1.0 + level_tol:
            return x
        g = cons.grad_x(x, w)
        x = x - (gv - 1.0 + 0.5 * level_tol) * g / float(g @ g)
    return x


def project_with_info(y, w, cons: LevelSetConstraint, tol: float = PROJECTION_TOL, *,
                      x_init=None, safety_factor: float = SAFETY_FACTOR,
                      max_iter: int = MAX_ITER, enforce_tube: bool = True,
                      n_global: int = 0) -> ProjectionResult:
    """Projection onto ``Z(w)`` with diagnostics; see :func:`project_to_set`."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    y = np.asarray(y, dtype=float).reshape(cons.state_dim)
    w = np.asarray(w, dtype=float).reshape(cons.param_dim)
    level_tol = cons.level_tol
    if cons.G(y, w) <= 1.0:
        return ProjectionResult(y.copy(), 0.0, 0.0, 0, "member")
    r = cons.constants.r if cons.constants is not None else math.inf

    a = np.asarray(cons.anchor(w), float)

    def starts():
        # generated lazily: later starts are only built if earlier ones fail
        if x_init is not None:
            yield "hint", np.asarray(x_init, float).reshape(cons.state_dim)
        z = _level_walk(cons, y.copy(), w)
        if z is not None:
            yield "level", z
        v = y - a
        nv = np.linalg.norm(v)
        if nv > 0:
            pt, _ = boundary_points(cons, w, (v / nv)[None, :])
            yield "radial", pt[0]
        if n_global:
            pts, _ = boundary_points(cons, w, sphere_directions(cons.state_dim, n_global))
            order = np.argsort(np.linalg.norm(pts - y, axis=1))
            for i in order[:3]:
                yield "global", pts[i]

    best = None
    tried = []
    for label, x0 in starts():
        tried.append(x0)
        out = _kkt_newton(cons, y, w, x0, tol, level_tol, max_iter)
        if out is None:
            continue
        x, mu, it = out
        if mu < 0:
            continue
        d = float(np.linalg.norm(y - x))
        if best is None or d < best.distance:
            best = ProjectionResult(x, d, mu, it, f"newton:{label}")
        # A stationary point with outward normal closer than r is the projection.
        if d < r and not n_global:
            break
    if best is None:
        x0 = min(tried, key=lambda s: np.linalg.norm(y - s))
        out = _manifold_descent(cons, y, w, x0, tol)
        if out is None:
            raise NoConvergence(
                f"projection of {y.tolist()} onto Z({w.tolist()}) did not converge"
            )
        x, mu, it = out
        best = ProjectionResult(x, float(np.linalg.norm(y - x)), mu, it, "descent")

    if enforce_tube and best.distance >= safety_factor * r:
        raise OutsideProxTube(
            f"distance {best.distance:.6g} >= {safety_factor} * r = {safety_factor * r:.6g}",
            distance=best.distance, limit=safety_factor * r,
        )
    best.x = _finalize_feasible(cons, best.x, w, level_tol)
    return best


def project_to_set(y, w, cons: LevelSetConstraint, tol: float = PROJECTION_TOL, **kw) -> NDArray:
    """Metric projection of ``y`` onto ``Z(w)``.

    Members are returned unchanged. Otherwise the stationarity system
    ``x = y - mu grad_x G(x, w)``, ``G(x, w) = 1`` is solved by damped Newton
    from several starts (a caller hint ``x_init``, a gradient walk from ``y``
    to the level set, the radial boundary point from the anchor), falling back
    to descent along the level set.

    Raises
    ------
    OutsideProxTube
        If the distance found is ``>= safety_factor * r``.
    NoConvergence
        If no start converges.
    """
    return project_with_info(y, w, cons, tol, **kw).x


def distance_to_set(y, w, cons: LevelSetConstraint, **kw) -> float:
    y = np.asarray(y, float)
    if cons.G(y, np.asarray(w, float)) <= 1.0:
        return 0.0
    return project_with_info(y, w, cons, **kw).distance


def _first_crossing(cons, x, w, dirs, t_max, n_march=64):
    ts = np.linspace(0.0, t_max, n_march + 1)[1:]
    pts = x[None, None, :] + ts[None, :, None] * dirs[:, None, :]
    out = cons.G(pts, w) > 1.0
    hit = out.any(axis=1)
    j = np.argmax(out, axis=1)
    dirs, j = dirs[hit], j[hit]
    lo = np.where(j > 0, ts[np.maximum(j - 1, 0)], 0.0)
    hi = ts[j]
    lo, hi = _ray_bisect(cons, x, dirs, w, lo, hi)
    return x + hi[:, None] * dirs


def distance_to_boundary(x, w, cons: LevelSetConstraint, n_dirs: int = 64,
                         tol: float = PROJECTION_TOL) -> float:
    """Distance from a member ``x`` to the level set ``{G(., w) = 1}``.

    Rays from ``x`` give candidate boundary points (the dense-sampling
    fallback); the closest few are polished by Newton on the stationarity
    system.
    """
    x = np.asarray(x, float).reshape(cons.state_dim)
    w = np.asarray(w, float).reshape(cons.param_dim)
    gv = cons.G(x, w)
    if gv > 1.0 + cons.level_tol:
        raise ValueError("distance_to_boundary requires a member point")
    if gv >= 1.0 - cons.level_tol:
        return 0.0
    n = cons.state_dim
    k = 2 if n == 1 else (n_dirs if n == 2 else 2 * n_dirs)
    dirs = sphere_directions(n, k)
    a = np.asarray(cons.anchor(w), float)
    t_max = 2.0 * cons.extent + 2.0 * float(np.linalg.norm(x - a))
    pts = _first_crossing(cons, x, w, dirs, t_max)
    if pts.shape[0] == 0:
        raise NoConvergence("no boundary crossing found from interior point")
    d = np.linalg.norm(pts - x, axis=1)
    best = float(d.min())
    for i in np.argsort(d)[:3]:
        out = _kkt_newton(cons, x, w, pts[i], tol, cons.level_tol, MAX_ITER)
        if out is None:
            continue
        z, mu, _ = out
        best = min(best, float(np.linalg.norm(z - x)))
    return best


def normal_ray(x, w, d: float, cons: LevelSetConstraint) -> NDArray:
    """``x + d grad_x G(x, w) / |grad_x G(x, w)|`` for a boundary point ``x``."""
    x = np.asarray(x, float)
    w = np.asarray(w, float)
    gv = cons.G(x, w)
    if abs(gv - 1.0) > cons.level_tol:
        raise NotOnBoundary(f"|G - 1| = {abs(gv - 1.0):.3g} exceeds level_tol")
    if d < 0 or (cons.constants is not None and d >= cons.constants.r):
        raise ValueError(f"need 0 <= d < r, got d={d!r}")
    g = cons.grad_x(x, w)
    return x + d * g / np.linalg.norm(g)


def prox_inequality_residual(x, z, w, cons: LevelSetConstraint):
    """``<n(x), x - z> + (lam / 2c) |x - z|^2`` for boundary ``x``, member ``z``.

    ``z`` may be a batch of shape ``(k, n)``.
    """
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    w = np.asarray(w, float)
    gv = np.atleast_1d(cons.G(x, w))
    if np.any(np.abs(gv - 1.0) > cons.level_tol):
        raise NotOnBoundary("x is not on the boundary within level_tol")
    if np.any(cons.G(z, w) > 1.0 + cons.level_tol):
        raise ValueError("z must belong to Z(w)")
    k = cons.require_constants()
    g = cons.grad_x(x, w)
    nrm = g / np.linalg.norm(g, axis=-1, keepdims=True)
    diff = x - z
    return np.sum(nrm * diff, axis=-1) + k.lam / (2 * k.c) * np.sum(diff * diff, axis=-1)


def projection_inequality_residual(y, x, z, r: float):
    """``<y - x, x - z> + |y - x| / (2r) |x - z|^2`` (batch over ``z``)."""
    y = np.asarray(y, float)
    x = np.asarray(x, float)
    z = np.asarray(z, float)
    diff = x - z
    return diff @ (y - x) + np.linalg.norm(y - x) / (2 * r) * np.sum(diff * diff, axis=-1)


# -- Hausdorff distance ------------------------------------------------------


@dataclass
class HausdorffEstimate:
    value: float
    forward: float
    backward: float
    bound: float
    hausdorff_constant: float
    n_samples: int
    n_failed: int
    witness: list

    def to_dict(self) -> dict:
        return asdict(self)


def _one_sided(cons, w_from, w_to, n_samples):
    pts, _ = boundary_points(cons, w_from, sphere_directions(cons.state_dim, n_samples))
    outside = cons.G(pts, w_to) > 1.0
    best, arg, failed = 0.0, None, 0
    for p in pts[outside]:
        try:
            d = distance_to_set(p, w_to, cons)
        except (OutsideProxTube, NoConvergence):
            failed += 1
            continue
        if d > best:
            best, arg = d, p
    return best, arg, failed, pts.shape[0]


def hausdorff_estimate(w1, w2, cons: LevelSetConstraint, n_samples: int = 400,
                       K: float | None = None) -> HausdorffEstimate:
    """Two-sided sampled Hausdorff distance between ``Z(w1)`` and ``Z(w2)``.

    Boundary samples of each set are projected onto the other. The reported
    bound is ``C_K |w1 - w2|`` with ``K`` defaulting to ``max(|w1|, |w2|)``.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    w1 = np.asarray(w1, float)
    w2 = np.asarray(w2, float)
    if K is None:
        K = max(np.linalg.norm(w1), np.linalg.norm(w2))
    f, fw, f_fail, m1 = _one_sided(cons, w1, w2, n_samples)
    b, bw, b_fail, m2 = _one_sided(cons, w2, w1, n_samples)
    failed = f_fail + b_fail
    total = m1 + m2
    if failed > 0.01 * total:
        raise NoConvergence(f"{failed} of {total} Hausdorff samples failed to project")
    consts = cons.constants
    c_k = consts.hausdorff_constant(K) if consts is not None else math.nan
    witness = [None if fw is None else fw.tolist(), None if bw is None else bw.tolist()]
    return HausdorffEstimate(
        value=max(f, b), forward=f, backward=b,
        bound=c_k * float(np.linalg.norm(w1 - w2)), hausdorff_constant=c_k,
        n_samples=total, n_failed=failed, witness=witness,
    )
