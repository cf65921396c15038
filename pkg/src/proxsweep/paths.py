"""Time grids and piecewise-linear paths.

Absolutely continuous inputs and outputs are represented exactly by their
piecewise-linear interpolants on a grid, so every integral over (0, T) of a
derivative becomes a finite sum over steps.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "TimeGrid",
    "PLPath",
    "WeightProfile",
    "derivative",
    "w11_distance",
    "w11_seminorm",
    "sup_distance",
    "weighted_w11_norm",
    "refine_to_common_grid",
    "uniform_grid",
    "offset_grid",
    "read_path_csv",
    "write_path_csv",
]


def _frozen(a: NDArray) -> NDArray:
    a = np.array(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing nodes ``0 = t_0 < ... < t_N = T``."""

    nodes: NDArray[np.float64]

    def __post_init__(self):
        t = np.asarray(self.nodes, dtype=float).ravel()
        if t.size < 2:
            raise ValueError("a time grid needs at least 2 nodes")
        if t[0] != 0.0:
            raise ValueError(f"first node must be exactly 0, got {t[0]!r}")
        if not np.all(np.isfinite(t)):
            raise ValueError("grid nodes must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        object.__setattr__(self, "nodes", _frozen(t))

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def n_steps(self) -> int:
        return self.nodes.size - 1

    @property
    def steps(self) -> NDArray[np.float64]:
        return np.diff(self.nodes)

    @property
    def h(self) -> float:
        """Largest step."""
        return float(np.max(self.steps))

    @property
    def midpoints(self) -> NDArray[np.float64]:
        return 0.5 * (self.nodes[1:] + self.nodes[:-1])

    def __len__(self):
        return self.nodes.size

    def same_as(self, other: "TimeGrid") -> bool:
        return self is other or (
            self.nodes.shape == other.nodes.shape
            and bool(np.all(self.nodes == other.nodes))
        )

    def union(self, other: "TimeGrid") -> "TimeGrid":
        if self.T != other.T:
            raise ValueError(f"final times differ: {self.T!r} vs {other.T!r}")
        if self.same_as(other):
            return self
        return TimeGrid(np.union1d(self.nodes, other.nodes))

    def truncate(self, k: int) -> "TimeGrid":
        """Grid of the first ``k`` steps."""
        return TimeGrid(self.nodes[: k + 1])


def uniform_grid(T: float, n_steps: int) -> TimeGrid:
    nodes = np.linspace(0.0, T, n_steps + 1)
    nodes[-1] = T
    return TimeGrid(nodes)


def offset_grid(T: float, n_steps: int, offset: float = 1.0 / 3.0) -> TimeGrid:
    """Uniform grid shifted by ``offset * h``; max step is ``h = T / n_steps``.

    Nodes are ``0, (j + offset) h`` for ``j = 0..n_steps-1``, and ``T``.
    Dyadic refinement (``n_steps -> 2 n_steps``) of such a grid never hits a
    dyadic time like ``T/2`` when ``offset`` is not a dyadic fraction.
    """
    if not 0.0 < offset < 1.0:
        raise ValueError("offset must lie in (0, 1)")
    h = T / n_steps
    inner = (np.arange(n_steps) + offset) * h
    return TimeGrid(np.concatenate([[0.0], inner, [T]]))


class PLPath:
    """Piecewise-linear path with one vector of dimension ``d`` per grid node.

    Values are stored as a read-only ``(N + 1, d)`` array. Scalar paths have
    ``d == 1``; use ``p.values[:, 0]`` to get a flat array.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid: TimeGrid | ArrayLike, values: ArrayLike):
        if not isinstance(grid, TimeGrid):
            grid = TimeGrid(grid)
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("values must be a (nodes, dim) array")
        if v.shape[0] != len(grid):
            raise ValueError(
                f"{v.shape[0]} values for a grid of {len(grid)} nodes"
            )
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", _frozen(v))

    def __setattr__(self, name, value):
        raise AttributeError("PLPath is immutable")

    # -- construction -------------------------------------------------
    @classmethod
    def from_function(cls, grid: TimeGrid, f: Callable[[float], ArrayLike]) -> "PLPath":
        return cls(grid, np.array([np.atleast_1d(f(t)) for t in grid.nodes], dtype=float))

    @classmethod
    def constant(cls, grid: TimeGrid, value: ArrayLike) -> "PLPath":
        v = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(grid, np.tile(v, (len(grid), 1)))

    # -- basic properties ---------------------------------------------
    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def nodes(self) -> NDArray[np.float64]:
        return self.grid.nodes

    @property
    def n_steps(self) -> int:
        return self.grid.n_steps

    @property
    def T(self) -> float:
        return self.grid.T

    def __repr__(self):
        return f"PLPath(n_steps={self.n_steps}, dim={self.dim}, T={self.T:g})"

    def __call__(self, t: ArrayLike) -> NDArray[np.float64]:
        """Affine interpolation; ``t`` scalar gives shape ``(d,)``."""
        ts = np.asarray(t, dtype=float)
        flat = np.atleast_1d(ts).ravel()
        if flat.size and (flat.min() < 0.0 or flat.max() > self.T):
            raise ValueError(f"evaluation time outside [0, {self.T}]")
        out = np.empty((flat.size, self.dim))
        for j in range(self.dim):
            out[:, j] = np.interp(flat, self.nodes, self.values[:, j])
        if ts.ndim == 0:
            return out[0]
        return out.reshape(ts.shape + (self.dim,))

    def slopes(self) -> NDArray[np.float64]:
        """Step slopes, shape ``(N, d)``."""
        return np.diff(self.values, axis=0) / self.grid.steps[:, None]

    def slope_norms(self) -> NDArray[np.float64]:
        return np.linalg.norm(self.slopes(), axis=1)

    def total_variation(self) -> float:
        """``int_0^T |p'(t)| dt``."""
        return float(np.sum(np.linalg.norm(np.diff(self.values, axis=0), axis=1)))

    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    # -- algebra ------------------------------------------------------
    def _binary(self, other, op):
        if isinstance(other, PLPath):
            a, b = refine_to_common_grid(self, other)
            if a.dim != b.dim:
                raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
            return PLPath(a.grid, op(a.values, b.values))
        return PLPath(self.grid, op(self.values, np.asarray(other, dtype=float)))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        return PLPath(self.grid, self.values * float(scalar))

    __rmul__ = __mul__

    def __neg__(self):
        return PLPath(self.grid, -self.values)

    def resample(self, grid: TimeGrid) -> "PLPath":
        """Values at the nodes of ``grid`` (exact when grid refines self's grid)."""
        if grid.same_as(self.grid):
            return self
        if grid.T != self.T:
            raise ValueError(f"final times differ: {grid.T!r} vs {self.T!r}")
        return PLPath(grid, self(grid.nodes))

    def truncate(self, k: int) -> "PLPath":
        return PLPath(self.grid.truncate(k), self.values[: k + 1])


def derivative(p: PLPath, k: int) -> NDArray[np.float64]:
    """Slope of ``p`` on step ``k``: ``(p_{k+1} - p_k) / (t_{k+1} - t_k)``."""
    if not 0 <= k < p.n_steps:
        raise IndexError(f"step index {k} out of range [0, {p.n_steps})")
    t = p.nodes
    return (p.values[k + 1] - p.values[k]) / (t[k + 1] - t[k])


def refine_to_common_grid(p: PLPath, q: PLPath) -> tuple[PLPath, PLPath]:
    """Re-express both paths on the union of their node sets.

    Never resamples: pointwise evaluation of each output equals its input.
    """
    if p.T != q.T:
        raise ValueError(f"final times differ: {p.T!r} vs {q.T!r}")
    if p.grid.same_as(q.grid):
        return p, q
    grid = p.grid.union(q.grid)
    return p.resample(grid), q.resample(grid)


def _common(p: PLPath, q: PLPath) -> tuple[PLPath, PLPath]:
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch: {p.dim} vs {q.dim}")
    return refine_to_common_grid(p, q)


def w11_seminorm(p: PLPath) -> float:
    return p.total_variation()


def w11_distance(p: PLPath, q: PLPath) -> float:
    """``|p(0) - q(0)| + int_0^T |p' - q'| dt`` (Euclidean norm of slopes)."""
    a, b = _common(p, q)
    d = a.values - b.values
    return float(np.linalg.norm(d[0]) + np.sum(np.linalg.norm(np.diff(d, axis=0), axis=1)))


def sup_distance(p: PLPath, q: PLPath) -> float:
    """Sup over time of ``|p - q|``; exact since the difference is piecewise linear."""
    a, b = _common(p, q)
    return float(np.max(np.linalg.norm(a.values - b.values, axis=1)))


@dataclass(frozen=True, eq=False)
class WeightProfile:
    """Cumulative rate ``M`` (scalar, nondecreasing, ``M(0) = 0``) and ``epsilon``.

    The weight is ``exp(-M(t) / epsilon)``.
    """

    epsilon: float
    M: PLPath

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon!r}")
        if self.M.dim != 1:
            raise ValueError("M must be a scalar path")
        m = self.M.values[:, 0]
        if m[0] != 0.0:
            raise ValueError("M(0) must be 0")
        if np.any(np.diff(m) < 0):
            raise ValueError("M must be nondecreasing")

    def weights(self, t: ArrayLike) -> NDArray[np.float64]:
        return np.exp(-self.M(t)[..., 0] / self.epsilon)


def weighted_w11_norm(p: PLPath, wp: WeightProfile) -> float:
    """``sum_k exp(-M(tbar_k)/eps) |p'_k| dt_k`` with ``tbar_k`` the step midpoint."""
    if not wp.epsilon > 0:
        raise ValueError("epsilon must be positive")
    grid = p.grid.union(wp.M.grid)
    p = p.resample(grid)
    w = wp.weights(grid.midpoints)
    return float(np.sum(w * np.linalg.norm(np.diff(p.values, axis=0), axis=1)))


# -- CSV ------------------------------------------------------------------


def write_path_csv(p: PLPath, fh=None) -> str | None:
    """Write ``t,v0,...`` rows with 17 significant digits.

    Returns the text when ``fh`` is None.
    """
    out = io.StringIO() if fh is None else fh
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["t"] + [f"v{j}" for j in range(p.dim)])
    for t, row in zip(p.nodes, p.values):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    if fh is None:
        return out.getvalue()
    return None


def read_path_csv(source) -> PLPath:
    """Parse the CSV written by :func:`write_path_csv` (file object or text)."""
    if isinstance(source, str):
        source = io.StringIO(source)
    rows = list(csv.reader(source))
    if not rows:
        raise ValueError("empty path CSV")
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "t" or any(
        h != f"v{j}" for j, h in enumerate(header[1:])
    ) or len(header) < 2:
        raise ValueError(f"bad path CSV header {header!r}; expected t,v0,...")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        data.append([float(x) for x in row])
    arr = np.array(data, dtype=float)
    return PLPath(TimeGrid(arr[:, 0]), arr[:, 1:])


def path_from_nodes(times: Sequence[float], values: Sequence) -> PLPath:
    return PLPath(TimeGrid(np.asarray(times, dtype=float)), values)
