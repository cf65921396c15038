"""Sampling-based estimates of the regularity constants of a constraint family.

Floors (``c``) are certified as ``0.95 * sampled minimum``; Lipschitz-type
constants as ``1.05 * sampled maximum``. The hypomonotonicity constant is
``max(lam_floor, 1.05 * sampled maximum)`` so convex families get a finite
prox radius ``r = c / lam``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import NDArray

from .constraint import (
    ConstantsBundle,
    LevelSetConstraint,
    boundary_points,
    distance_to_set,
    random_directions,
    sample_members,
)
from .errors import NoConvergence, OutsideProxTube

__all__ = [
    "Estimate",
    "CoercivityCheck",
    "CertificationReport",
    "FLOOR_SAFETY",
    "LIPSCHITZ_SAFETY",
    "LAMBDA_FLOOR",
    "estimate_gradient_floor",
    "estimate_hypomonotonicity",
    "estimate_param_constants",
    "check_coercivity",
    "certify_constraint",
    "reverify",
    "estimate_state_map_bounds",
    "gradient_floor_from_points",
    "hypomonotonicity_from_pairs",
]

FLOOR_SAFETY = 0.95
LIPSCHITZ_SAFETY = 1.05
LAMBDA_FLOOR = 1e-6
CONST_FLOOR = 1e-12


@dataclass
class Estimate:
    """A sampled extreme value, its certified (safety-adjusted) version and witness."""

    name: str
    raw: float
    certified: float
    witness: dict
    n_samples: int

    def to_dict(self):
        return asdict(self)


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _wlist(w_samples) -> NDArray:
    return np.atleast_2d(np.asarray(w_samples, dtype=float))


def _boundary_batch(cons, w_samples, n_per_w, rng):
    """Boundary points (outer side) and their parameters, stacked."""
    xs, ws = [], []
    n = cons.state_dim
    for w in _wlist(w_samples):
        dirs = random_directions(rng, n, n_per_w)
        pts, _ = boundary_points(cons, w, dirs, side="outer")
        xs.append(pts)
        ws.append(np.tile(w, (pts.shape[0], 1)))
    return np.vstack(xs), np.vstack(ws)


# -- (i) gradient floor -----------------------------------------------------


def gradient_floor_from_points(cons, xs, ws) -> Estimate:
    g = np.linalg.norm(cons.grad_x(xs, ws), axis=-1)
    i = int(np.argmin(g))
    return Estimate("c", float(g[i]), FLOOR_SAFETY * float(g[i]),
                    {"x": xs[i].tolist(), "w": ws[i].tolist(), "grad_norm": float(g[i])},
                    int(g.size))


def estimate_gradient_floor(cons: LevelSetConstraint, w_samples, n_boundary: int = 1000,
                            rng=0) -> Estimate:
    """Minimum of ``|grad_x G|`` over boundary points found along random rays.

    ``raw`` is the sampled minimum, ``certified`` is ``0.95 * raw``.
    """
    if n_boundary < 1000 and cons.state_dim > 1:
        raise ValueError("n_boundary must be at least 1000")
    xs, ws = _boundary_batch(cons, w_samples, n_boundary, _rng(rng))
    return gradient_floor_from_points(cons, xs, ws)


# -- (iii) hypomonotonicity -------------------------------------------------


def _pair_samples(cons, w_samples, n_pairs, rng):
    """Boundary ``x`` with member ``z``: half global, half local neighbours."""
    W = _wlist(w_samples)
    n = cons.state_dim
    per_w = max(1, n_pairs // W.shape[0])
    X, Z, WW = [], [], []
    for w in W:
        dirs = random_directions(rng, n, per_w)
        x, _ = boundary_points(cons, w, dirs, side="outer")
        n_loc = per_w // 2
        zg = sample_members(cons, w, rng, per_w - n_loc, boundary_fraction=0.3)
        # local partners: nearby direction, slightly inside
        scale = 10 ** rng.uniform(-3, -0.5, size=(n_loc, 1))
        if n == 1:
            d2 = dirs[:n_loc]
        else:
            d2 = dirs[:n_loc] + scale * rng.standard_normal((n_loc, n))
            d2 /= np.linalg.norm(d2, axis=1, keepdims=True)
        zb, t2 = boundary_points(cons, w, d2, side="inner")
        shrink = 1.0 - np.where(rng.random(n_loc) < 0.5, 0.0, rng.random(n_loc) * scale[:, 0])
        a = np.asarray(cons.anchor(w), float)
        zl = a + (shrink * t2)[:, None] * d2
        X.append(x)
        Z.append(np.vstack([zl, zg]))
        WW.append(np.tile(w, (per_w, 1)))
    return np.vstack(X), np.vstack(Z), np.vstack(WW)


def hypomonotonicity_from_pairs(cons, X, Z, WW, lam_floor=LAMBDA_FLOOR) -> Estimate:
    d = X - Z
    dd = np.sum(d * d, axis=-1)
    ok = dd > 1e-20
    gap = np.sum((cons.grad_x(X, WW) - cons.grad_x(Z, WW)) * d, axis=-1)
    lam = np.full(dd.shape, -np.inf)
    lam[ok] = -gap[ok] / dd[ok]
    i = int(np.argmax(lam))
    raw = float(lam[i])
    return Estimate(
        "lam", raw, max(lam_floor, LIPSCHITZ_SAFETY * raw),
        {"x": X[i].tolist(), "z": Z[i].tolist(), "w": WW[i].tolist(), "ratio": raw},
        int(ok.sum()),
    )


def estimate_hypomonotonicity(cons: LevelSetConstraint, w_samples, n_pairs: int = 10000,
                              rng=0, lam_floor: float = LAMBDA_FLOOR) -> Estimate:
    """Smallest ``lam`` with ``<grad G(x) - grad G(z), x - z> >= -lam |x - z|^2`` on samples."""
    if n_pairs < 10000:
        raise ValueError("n_pairs must be at least 10^4")
    X, Z, WW = _pair_samples(cons, w_samples, n_pairs, _rng(rng))
    return hypomonotonicity_from_pairs(cons, X, Z, WW, lam_floor)


# -- (iv) and gradient bounds ----------------------------------------------


def _working_points(cons, w_samples, n_points, rng, tube=0.0):
    W = _wlist(w_samples)
    per_w = max(1, n_points // W.shape[0])
    X, WW = [], []
    for w in W:
        pts = sample_members(cons, w, rng, per_w, boundary_fraction=0.3)
        if tube > 0:
            a = np.asarray(cons.anchor(w), float)
            v = pts - a
            nv = np.linalg.norm(v, axis=1, keepdims=True)
            nv[nv == 0] = 1.0
            push = rng.random((per_w, 1)) * tube * (rng.random((per_w, 1)) < 0.3)
            pts = pts + push * v / nv
        X.append(pts)
        WW.append(np.tile(w, (per_w, 1)))
    return np.vstack(X), np.vstack(WW)


def _param_pair_samples(cons, w_samples, n_pairs, rng, tube=0.0):
    X, WW = _working_points(cons, w_samples, n_pairs, rng, tube)
    k = X.shape[0]
    n, m = cons.state_dim, cons.param_dim
    scale = cons.extent * 10 ** rng.uniform(-4, -0.5, size=(k, 1))
    mode = rng.integers(0, 3, size=(k, 1))  # 0: x only, 1: w only, 2: both
    dx = random_directions(rng, n, k) * scale * (mode != 1)
    dw = random_directions(rng, m, k) * scale * (mode != 0)
    # a share of far pairs across the sample set
    far = rng.random(k) < 0.2
    perm = rng.permutation(k)
    dx[far] = X[perm][far] - X[far]
    dw[far] = WW[perm][far] - WW[far]
    return X, WW, X + dx, WW + dw


def _max_ratio(name, num, den, meta):
    ok = den > 1e-300
    ratio = np.zeros(num.shape)
    ratio[ok] = num[ok] / den[ok]
    i = int(np.argmax(ratio))
    raw = float(ratio[i])
    return Estimate(name, raw, max(CONST_FLOOR, LIPSCHITZ_SAFETY * raw),
                    {k: (v[i].tolist() if hasattr(v[i], "tolist") else v[i]) for k, v in meta.items()}
                    | {"ratio": raw}, int(ok.sum()))


def param_constants_from_samples(cons, X, WW, X2, WW2) -> dict[str, Estimate]:
    gx1 = cons.grad_x(X, WW)
    gw1 = cons.grad_w(X, WW)
    nx = np.linalg.norm(gx1, axis=-1)
    nw = np.linalg.norm(gw1, axis=-1)
    i0, i1 = int(np.argmax(nx)), int(np.argmax(nw))
    out = {
        "K0": Estimate("K0", float(nx[i0]), max(CONST_FLOOR, LIPSCHITZ_SAFETY * float(nx[i0])),
                       {"x": X[i0].tolist(), "w": WW[i0].tolist()}, int(nx.size)),
        "K1": Estimate("K1", float(nw[i1]), max(CONST_FLOOR, LIPSCHITZ_SAFETY * float(nw[i1])),
                       {"x": X[i1].tolist(), "w": WW[i1].tolist()}, int(nw.size)),
    }
    dwn = np.linalg.norm(WW2 - WW, axis=-1)
    dxn = np.linalg.norm(X2 - X, axis=-1)
    meta = {"x": X, "w": WW, "x2": X2, "w2": WW2}
    out["L"] = _max_ratio("L", np.abs(cons.G(X, WW2) - cons.G(X, WW)), dwn,
                          {"x": X, "w": WW, "w2": WW2})
    out["C0"] = _max_ratio("C0", np.linalg.norm(cons.grad_x(X2, WW2) - gx1, axis=-1),
                           dxn + dwn, meta)
    out["C1"] = _max_ratio("C1", np.linalg.norm(cons.grad_w(X2, WW2) - gw1, axis=-1),
                           dxn + dwn, meta)
    return out


def estimate_param_constants(cons: LevelSetConstraint, samples, n_pairs: int = 10000,
                             rng=0, tube: float = 0.0) -> dict[str, Estimate]:
    """Max-ratio estimates of ``L, K0, K1, C0, C1`` over the working set.

    The working set is ``Z(w)`` for the sampled parameters, widened outward by
    ``tube``.
    """
    X, WW, X2, WW2 = _param_pair_samples(cons, samples, n_pairs, _rng(rng), tube)
    return param_constants_from_samples(cons, X, WW, X2, WW2)


# -- (v) coercivity ---------------------------------------------------------


@dataclass
class CoercivityCheck:
    passed: bool
    kappa: float
    n_checked: int
    violations: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


def check_coercivity(cons: LevelSetConstraint, w_samples, rho_list: Sequence[float],
                     kappa: float | None = None, n_points: int = 200, rng=0) -> CoercivityCheck:
    """Spot-check ``dist(x, Z(w)) >= rho  =>  G(x, w) - 1 >= kappa rho``."""
    rng = _rng(rng)
    if kappa is None:
        kappa = cons.require_constants().coercivity_kappa
    if kappa is None:
        raise ValueError("no coercivity modulus declared")
    n = cons.state_dim
    checked, violations = 0, []
    for w in _wlist(w_samples):
        a = np.asarray(cons.anchor(w), float)
        for rho in rho_list:
            if rho <= 0:
                continue
            dirs = random_directions(rng, n, n_points)
            pts, t = boundary_points(cons, w, dirs, side="outer")
            # step outwards by rho..2 rho along the ray: distance >= rho is then checked
            ext = t + rho * (1.0 + rng.random(n_points))
            cand = a + ext[:, None] * dirs
            for x in cand:
                try:
                    d = distance_to_set(x, w, cons, enforce_tube=False, n_global=64)
                except NoConvergence:
                    continue
                if d < rho:
                    continue
                checked += 1
                excess = float(cons.G(x, w)) - 1.0
                if excess < kappa * rho:
                    violations.append({"x": x.tolist(), "w": w.tolist(), "rho": rho,
                                       "distance": d, "G_minus_1": excess,
                                       "mu2": kappa * rho})
    return CoercivityCheck(not violations, float(kappa), checked, violations)


# -- full report ------------------------------------------------------------


@dataclass
class CertificationReport:
    constants: ConstantsBundle
    estimates: dict
    coercivity: CoercivityCheck | None
    clauses: dict
    sample_counts: dict
    seed: int | None = None

    @property
    def passed(self) -> bool:
        return all(self.clauses.values())

    def to_dict(self) -> dict:
        return {
            "constants": self.constants.to_dict(),
            "estimates": {k: v.to_dict() for k, v in self.estimates.items()},
            "coercivity": None if self.coercivity is None else self.coercivity.to_dict(),
            "clauses": dict(self.clauses),
            "sample_counts": dict(self.sample_counts),
            "safety_factors": {"floor": FLOOR_SAFETY, "lipschitz": LIPSCHITZ_SAFETY,
                               "lambda_floor": LAMBDA_FLOOR},
            "passed": self.passed,
            "seed": self.seed,
        }


def certify_constraint(cons: LevelSetConstraint, w_samples, rng=0, n_boundary: int = 1000,
                       n_pairs: int = 10000, n_param_pairs: int = 10000,
                       coercivity_kappa: float | None = None,
                       rho_list: Sequence[float] = (0.1, 0.2), tube: float = 0.0,
                       lam_floor: float = LAMBDA_FLOOR) -> CertificationReport:
    """Estimate every constant and assemble a :class:`ConstantsBundle`."""
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = _rng(rng)
    W = _wlist(w_samples)
    clauses = {}
    try:
        floor = estimate_gradient_floor(cons, W, n_boundary, rng)
        clauses["boundary_gradient_floor"] = floor.raw > 0
    except NoConvergence:
        raise
    lam = estimate_hypomonotonicity(cons, W, n_pairs, rng, lam_floor)
    clauses["hypomonotonicity"] = bool(np.isfinite(lam.raw))
    params = estimate_param_constants(cons, W, n_param_pairs, rng, tube)
    clauses["gradient_bounds"] = all(np.isfinite(e.raw) for e in params.values())
    if coercivity_kappa is None and cons.constants is not None:
        coercivity_kappa = cons.constants.coercivity_kappa
    bundle = ConstantsBundle(
        c=floor.certified, lam=lam.certified, L=params["L"].certified,
        K0=params["K0"].certified, K1=params["K1"].certified,
        C0=params["C0"].certified, C1=params["C1"].certified,
        coercivity_kappa=coercivity_kappa, source="certified",
    )
    coer = None
    if coercivity_kappa is not None:
        probe = cons.with_constants(bundle)
        coer = check_coercivity(probe, W, rho_list, coercivity_kappa, n_points=50, rng=rng)
        clauses["coercivity"] = coer.passed
    estimates = {"c": floor, "lam": lam, **params}
    counts = {k: v.n_samples for k, v in estimates.items()}
    if coer is not None:
        counts["coercivity"] = coer.n_checked
    return CertificationReport(bundle, estimates, coer, clauses, counts, seed)


def reverify(cons: LevelSetConstraint, constants: ConstantsBundle, w_samples, rng=1,
             n_boundary: int = 1000, n_pairs: int = 10000, n_param_pairs: int = 10000,
             tube: float = 0.0) -> dict[str, int]:
    """Count violations of each defining inequality on a fresh sample set."""
    rng = _rng(rng)
    W = _wlist(w_samples)
    xs, ws = _boundary_batch(cons, W, n_boundary, rng)
    viol = {"c": int(np.sum(np.linalg.norm(cons.grad_x(xs, ws), axis=-1) < constants.c))}
    X, Z, WW = _pair_samples(cons, W, n_pairs, rng)
    d = X - Z
    gap = np.sum((cons.grad_x(X, WW) - cons.grad_x(Z, WW)) * d, axis=-1)
    viol["lam"] = int(np.sum(gap < -constants.lam * np.sum(d * d, axis=-1) - 1e-14))
    X, WW, X2, WW2 = _param_pair_samples(cons, W, n_param_pairs, rng, tube)
    dwn = np.linalg.norm(WW2 - WW, axis=-1)
    dxn = np.linalg.norm(X2 - X, axis=-1)
    viol["K0"] = int(np.sum(np.linalg.norm(cons.grad_x(X, WW), axis=-1) > constants.K0))
    viol["K1"] = int(np.sum(np.linalg.norm(cons.grad_w(X, WW), axis=-1) > constants.K1))
    viol["L"] = int(np.sum(np.abs(cons.G(X, WW2) - cons.G(X, WW)) > constants.L * dwn + 1e-14))
    viol["C0"] = int(np.sum(np.linalg.norm(cons.grad_x(X2, WW2) - cons.grad_x(X, WW), axis=-1)
                            > constants.C0 * (dxn + dwn) + 1e-14))
    viol["C1"] = int(np.sum(np.linalg.norm(cons.grad_w(X2, WW2) - cons.grad_w(X, WW), axis=-1)
                            > constants.C1 * (dxn + dwn) + 1e-14))
    return viol


# -- feedback maps ----------------------------------------------------------


def estimate_state_map_bounds(gmap, T: float, box: float = 2.0, n: int = 2000, rng=0) -> dict:
    """Sampled ``gamma, omega, C_xi, C_u`` and the worst ``|d_t g| - a(t)``."""
    rng = _rng(rng)
    dim = gmap.n
    t = rng.uniform(0, T, n)
    u = rng.uniform(-box, box, (n, dim))
    xi = rng.uniform(-box, box, (n, dim))
    dv = 10 ** rng.uniform(-4, -1, (n, 1)) * random_directions(rng, dim, n)
    de = 10 ** rng.uniform(-4, -1, (n, 1)) * random_directions(rng, dim, n)
    gam = om = cxi = cu = 0.0
    a_excess = -np.inf
    for i in range(n):
        A = np.atleast_2d(gmap.dg_dxi(t[i], u[i], xi[i]))
        B = np.atleast_2d(gmap.dg_du(t[i], u[i], xi[i]))
        gam = max(gam, float(np.linalg.norm(A, 2)))
        om = max(om, float(np.linalg.norm(B, 2)))
        A2 = np.atleast_2d(gmap.dg_dxi(t[i], u[i] + dv[i], xi[i] + de[i]))
        B2 = np.atleast_2d(gmap.dg_du(t[i], u[i] + dv[i], xi[i] + de[i]))
        den = float(np.linalg.norm(dv[i]) + np.linalg.norm(de[i]))
        cxi = max(cxi, float(np.linalg.norm(A2 - A, 2)) / den)
        cu = max(cu, float(np.linalg.norm(B2 - B, 2)) / den)
        a_excess = max(a_excess, float(np.linalg.norm(gmap.dg_dt(t[i], u[i], xi[i]))) - gmap.a(t[i]))
    return {"gamma": gam, "omega": om, "C_xi": cxi, "C_u": cu, "a_excess": a_excess}
