"""Tensor space-time grids on the half space and solution fields on them."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .kernels import SUPPORTED_DIMENSIONS, DomainError


class SliceStatus(str, enum.Enum):
    CONVERGED = "CONVERGED"
    ITERATING = "ITERATING"
    DIVERGED = "DIVERGED"


@dataclass(frozen=True)
class GridSpec:
    """Recipe for a grid; unset fields are derived from T and the data.

    The normal axis is marched from x_N = 0 with spacing
    min(h_max, max(h0, (grading - 1) * distance to the nearest focus)),
    where x_N = 0 is always a focus.  Time nodes are geometric from t_min,
    except the last n_uniform which are uniform on [2T/n_uniform, T]; near
    blow-up the late steps must be short in absolute terms.
    """

    T: float
    t_min: float | None = None
    n_time: int = 48
    n_uniform: int | None = None  # default n_time // 3
    grading: float = 1.12
    h0: float | None = None
    h_max: float | None = None
    normal_extent: float | None = None
    n_tangential: int = 33
    tangential_extent: float | None = None
    max_spatial_nodes: int = 512
    max_time_nodes: int = 64

    def __post_init__(self):
        if not self.T > 0:
            raise DomainError("horizon T must be positive")
        if self.t_min is not None and not 0 < self.t_min < self.T:
            raise DomainError("t_min must lie in (0, T)")
        if self.n_time < 2:
            raise DomainError("need at least two time nodes")
        if self.n_uniform is not None and not 0 <= self.n_uniform < self.n_time:
            raise DomainError("n_uniform must lie in [0, n_time)")
        if not 1 < self.grading < 2:
            raise DomainError("grading factor must lie in (1, 2)")

    def refined(self) -> "GridSpec":
        """Halve t_min and every spacing, double node counts."""
        t_min = self.resolved_t_min / 2
        return replace(self, t_min=t_min, n_time=2 * self.n_time - 1,
                       n_uniform=2 * self.resolved_n_uniform,
                       grading=1 + (self.grading - 1) / 2,
                       h0=None if self.h0 is None else self.h0 / 2,
                       h_max=self.resolved_h_max / 2,
                       n_tangential=2 * self.n_tangential - 1,
                       max_spatial_nodes=2 * self.max_spatial_nodes,
                       max_time_nodes=2 * self.max_time_nodes)

    @property
    def resolved_t_min(self) -> float:
        return self.t_min if self.t_min is not None else 1e-6 * self.T

    @property
    def resolved_n_uniform(self) -> int:
        return self.n_uniform if self.n_uniform is not None else self.n_time // 3

    def time_nodes(self) -> np.ndarray:
        T, t_min, n = self.T, self.resolved_t_min, self.n_time
        nu = self.resolved_n_uniform
        split = 2.0 * T / nu if nu else T
        if nu < 2 or t_min >= split:
            times = np.geomspace(t_min, T, n)
        else:
            times = np.concatenate([np.geomspace(t_min, split, n - nu), np.linspace(split, T, nu + 1)[1:]])
        times[-1] = T
        return times

    @property
    def resolved_h_max(self) -> float:
        return self.h_max if self.h_max is not None else 0.08 * np.sqrt(self.T)


@dataclass(frozen=True)
class Grid:
    N: int
    times: np.ndarray
    normal: np.ndarray
    tangential: tuple = ()

    def __post_init__(self):
        if self.N not in SUPPORTED_DIMENSIONS:
            raise DomainError(f"dimension {self.N} not supported")
        if len(self.tangential) != self.N - 1:
            raise DomainError("need one tangential axis per tangential dimension")
        if not np.all(self.normal > 0) or np.any(np.diff(self.normal) <= 0):
            raise DomainError("normal nodes must be positive and increasing")
        if not self.times[0] > 0 or np.any(np.diff(self.times) <= 0):
            raise DomainError("time nodes must be positive and strictly increasing")

    @property
    def spatial_shape(self) -> tuple:
        return tuple(len(a) for a in self.tangential) + (len(self.normal),)

    @property
    def shape(self) -> tuple:
        return (len(self.times),) + self.spatial_shape

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def points(self) -> np.ndarray:
        """Coordinates of spatial nodes, shape spatial_shape + (N,)."""
        axes = list(self.tangential) + [self.normal]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def cell_weights(self) -> np.ndarray:
        """Trapezoid weights for integrating the piecewise-linear interpolant
        (normal axis includes the implicit zero node at x_N = 0)."""
        xn = np.concatenate([[0.0], self.normal])
        h = np.diff(xn)
        wn = 0.5 * (h + np.append(h[1:], 0.0))
        w = wn
        for ax in reversed(self.tangential):
            ht = np.diff(ax)
            wt = np.zeros(len(ax))
            wt[:-1] += 0.5 * ht
            wt[1:] += 0.5 * ht
            w = np.multiply.outer(wt, w)
        return w


def _normal_nodes(h0, h_max, grading, extent, focus) -> np.ndarray:
    focus = np.unique(np.concatenate([[0.0], np.asarray(focus, float)]))
    nodes = []
    x = h0
    while x < extent:
        nodes.append(x)
        d = np.min(np.abs(focus - x))
        # for grading < 2 a step never jumps across a focus point
        x = x + min(h_max, max(h0, (grading - 1.0) * d))
    if extent - nodes[-1] < 0.5 * min(h_max, extent):
        nodes.pop()
    nodes.append(extent)
    return np.array(nodes)


def build_grid(spec: GridSpec, N: int, focus=(), support_extent: float = 0.0) -> Grid:
    """Build a grid for dimension N.

    focus: points (arrays of length N) near which the normal axis is graded.
    support_extent: radius containing the data (sets the spatial extent).
    """
    if N not in SUPPORTED_DIMENSIONS:
        raise DomainError(f"dimension {N} not supported")
    if spec.n_time > spec.max_time_nodes:
        raise DomainError(f"{spec.n_time} time nodes exceed the limit {spec.max_time_nodes}")
    T, t_min = spec.T, spec.resolved_t_min
    times = spec.time_nodes()
    st = np.sqrt(T)
    h0 = spec.h0 if spec.h0 is not None else 0.05 * np.sqrt(t_min)
    extent = spec.normal_extent if spec.normal_extent is not None else support_extent + 10.0 * st
    focus_n = [float(np.asarray(f)[-1]) for f in focus if 0 < np.asarray(f)[-1] < extent]
    normal = _normal_nodes(h0, spec.resolved_h_max, spec.grading, extent, focus_n)
    tang = ()
    if N > 1:
        ext = spec.tangential_extent if spec.tangential_extent is not None else support_extent + 8.0 * st
        n = spec.n_tangential | 1
        tang = tuple(np.linspace(-ext, ext, n) for _ in range(N - 1))
    if len(normal) > spec.max_spatial_nodes:
        raise DomainError(f"normal axis needs {len(normal)} nodes (> {spec.max_spatial_nodes}); "
                          "raise grading or h0")
    return Grid(N, times, normal, tang)


@dataclass
class SolutionField:
    grid: Grid
    values: np.ndarray
    status: list = field(default_factory=list)
    iteration_count: int = 0
    sup_history: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    @property
    def verdict(self) -> SliceStatus:
        if any(s == SliceStatus.DIVERGED for s in self.status):
            return SliceStatus.DIVERGED
        if all(s == SliceStatus.CONVERGED for s in self.status):
            return SliceStatus.CONVERGED
        return SliceStatus.ITERATING

    def slice_sups(self) -> np.ndarray:
        return self.values.reshape(len(self.grid.times), -1).max(axis=1)

    def interpolate(self, x, t_index: int) -> float:
        """Piecewise-linear interpolant at a point (N = 1) or multilinear (N >= 2)."""
        x = np.asarray(x, float)
        g = self.grid
        vals = self.values[t_index]
        xn = np.concatenate([[0.0], g.normal])
        if g.N == 1:
            v = np.concatenate([[0.0], vals])
            return float(np.interp(x[-1], xn, v, right=0.0))
        from scipy.interpolate import RegularGridInterpolator
        pad = np.concatenate([np.zeros(vals.shape[:-1] + (1,)), vals], axis=-1)
        rgi = RegularGridInterpolator(tuple(g.tangential) + (xn,), pad, bounds_error=False, fill_value=0.0)
        return float(rgi(x[None, :])[0])

    def rows(self):
        """(t, x..., value) rows sorted lexicographically by (t, x)."""
        pts = self.grid.points().reshape(-1, self.grid.N)
        order = np.lexsort(tuple(pts[:, k] for k in reversed(range(self.grid.N))))
        for j, t in enumerate(self.grid.times):
            vals = self.values[j].reshape(-1)
            for i in order:
                yield (float(t), *map(float, pts[i]), float(vals[i]))
