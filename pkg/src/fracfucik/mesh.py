"""Uniform tensor grids with a piecewise-linear nodal basis.

Discrete functions are plain coefficient vectors over the *interior* nodes;
boundary and exterior values are implicitly zero, which is how the
homogeneous exterior condition ``u = 0`` outside the domain is encoded.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

# Degree-4 rule on the reference triangle (Dunavant, 6 points, positive weights).
_TRI_BARY = np.array([
    [0.108103018168070, 0.445948490915965, 0.445948490915965],
    [0.445948490915965, 0.108103018168070, 0.445948490915965],
    [0.445948490915965, 0.445948490915965, 0.108103018168070],
    [0.816847572980459, 0.091576213509771, 0.091576213509771],
    [0.091576213509771, 0.816847572980459, 0.091576213509771],
    [0.091576213509771, 0.091576213509771, 0.816847572980459],
])
_TRI_W = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)

GAUSS_POINTS_1D = 4


@dataclass(frozen=True)
class MeshConfig:
    """Discretization parameters.

    ``extent`` holds one ``(lo, hi)`` pair per axis and ``n_cells`` one count
    per axis; scalars are broadcast.  ``s`` is the fractional order.
    """

    dim: int = 1
    extent: Sequence = ((-1.0, 1.0),)
    n_cells: Sequence | int = 64
    s: float = 0.5

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        ext = np.asarray(self.extent, dtype=float)
        if ext.ndim == 1:
            ext = np.tile(ext, (self.dim, 1))
        if ext.shape != (self.dim, 2):
            raise ValueError(f"extent must give one (lo, hi) pair per axis, got {self.extent!r}")
        if np.any(ext[:, 1] <= ext[:, 0]):
            raise ValueError(f"degenerate extent {self.extent!r}")
        n = np.atleast_1d(np.asarray(self.n_cells, dtype=int))
        if n.size == 1:
            n = np.repeat(n, self.dim)
        if n.shape != (self.dim,):
            raise ValueError(f"n_cells must give one count per axis, got {self.n_cells!r}")
        if np.any(n < 4):
            raise ValueError(f"n_cells must be >= 4 on every axis, got {self.n_cells!r}")
        if not 0.0 < self.s < 1.0:
            raise ValueError(f"s must lie in (0, 1), got {self.s}")
        if not self.dim > 2 * self.s:
            raise ValueError(f"need N > 2s, got N={self.dim}, s={self.s}")
        object.__setattr__(self, "extent", tuple(tuple(map(float, e)) for e in ext))
        object.__setattr__(self, "n_cells", tuple(int(k) for k in n))
        object.__setattr__(self, "s", float(self.s))

    @property
    def N(self) -> int:
        return self.dim

    @property
    def critical_exponent(self) -> float:
        """2*_s = 2N / (N - 2s)."""
        return 2.0 * self.dim / (self.dim - 2.0 * self.s)

    def with_(self, **changes) -> "MeshConfig":
        data = dict(dim=self.dim, extent=self.extent, n_cells=self.n_cells, s=self.s)
        data.update(changes)
        return MeshConfig(**data)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "extent": [list(e) for e in self.extent],
                "n_cells": list(self.n_cells), "s": self.s}


@dataclass
class Mesh:
    cfg: MeshConfig
    h: np.ndarray                 # spacing per axis
    axes: list                    # full nodal coordinates per axis, boundary included
    interior_points: np.ndarray   # (n_dof, dim)
    quad_points: np.ndarray = field(repr=False)    # (n_q, dim)
    quad_weights: np.ndarray = field(repr=False)   # (n_q,)
    basis_at_quad: sparse.csr_matrix = field(repr=False)  # (n_q, n_dof)

    @property
    def dim(self) -> int:
        return self.cfg.dim

    @property
    def n_dof(self) -> int:
        return self.interior_points.shape[0]

    @property
    def interior_shape(self) -> tuple:
        return tuple(k - 1 for k in self.cfg.n_cells)

    @property
    def cell_measure(self) -> float:
        """Measure of the dual cell attached to one interior node."""
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.cfg.extent]))

    @property
    def diameter(self) -> float:
        return float(np.sqrt(sum((hi - lo) ** 2 for lo, hi in self.cfg.extent)))

    def distance_to_boundary(self, x0) -> float:
        x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        return float(min(min(x - lo, hi - x) for x, (lo, hi) in zip(x0, self.cfg.extent)))

    def contains(self, x0) -> bool:
        return self.distance_to_boundary(x0) > 0.0

    def interpolate(self, f) -> np.ndarray:
        """Nodal interpolant of ``f`` (called with an ``(n, dim)`` array)."""
        return np.asarray(f(self.interior_points), dtype=float).reshape(self.n_dof)

    def evaluate(self, u: np.ndarray) -> np.ndarray:
        """Values of the piecewise-linear function at the quadrature points."""
        return self.basis_at_quad @ u

    def full_grid(self, u: np.ndarray) -> np.ndarray:
        """Nodal values on the full grid, zeros on the boundary."""
        out = np.zeros(tuple(k + 1 for k in self.cfg.n_cells))
        out[tuple(slice(1, -1) for _ in range(self.dim))] = np.reshape(u, self.interior_shape)
        return out


def _quadrature_1d(axis: np.ndarray, h: float):
    n = axis.size - 1
    xi, wi = np.polynomial.legendre.leggauss(GAUSS_POINTS_1D)
    t = 0.5 * (xi + 1.0)
    pts = (axis[:-1, None] + h * t[None, :]).ravel()
    wts = np.tile(0.5 * h * wi, n)
    rows, cols, vals = [], [], []
    q = np.arange(n * t.size).reshape(n, t.size)
    for e in range(n):
        # left node e, right node e + 1; interior dof index is node - 1
        for node, phi in ((e, 1.0 - t), (e + 1, t)):
            if 1 <= node <= n - 1:
                rows.extend(q[e])
                cols.extend([node - 1] * t.size)
                vals.extend(phi)
    B = sparse.csr_matrix((vals, (rows, cols)), shape=(pts.size, n - 1))
    return pts[:, None], wts, B


def _quadrature_2d(ax: np.ndarray, ay: np.ndarray, h: np.ndarray):
    nx, ny = ax.size - 1, ay.size - 1
    mx, my = nx - 1, ny - 1
    area = 0.5 * h[0] * h[1]

    def dof(i, j):
        if 1 <= i <= nx - 1 and 1 <= j <= ny - 1:
            return (i - 1) * my + (j - 1)
        return -1

    pts, wts, rows, cols, vals = [], [], [], [], []
    q = 0
    for i in range(nx):
        for j in range(ny):
            lower = ((i, j), (i + 1, j), (i + 1, j + 1))
            upper = ((i, j), (i + 1, j + 1), (i, j + 1))
            for tri in (lower, upper):
                verts = np.array([[ax[a], ay[b]] for a, b in tri])
                xq = _TRI_BARY @ verts
                for k in range(xq.shape[0]):
                    pts.append(xq[k])
                    wts.append(area * _TRI_W[k])
                    for v, (a, b) in enumerate(tri):
                        d = dof(a, b)
                        if d >= 0:
                            rows.append(q)
                            cols.append(d)
                            vals.append(_TRI_BARY[k, v])
                    q += 1
    B = sparse.csr_matrix((vals, (rows, cols)), shape=(q, mx * my))
    return np.array(pts), np.array(wts), B


def build_mesh(cfg: MeshConfig) -> Mesh:
    """Uniform grid over the box ``cfg.extent`` with an interior-node index map.

    In 2D every cell is split along its (1, 1) diagonal.
    """
    if not isinstance(cfg, MeshConfig):
        raise TypeError("build_mesh expects a MeshConfig")
    axes = [np.linspace(lo, hi, n + 1) for (lo, hi), n in zip(cfg.extent, cfg.n_cells)]
    h = np.array([(hi - lo) / n for (lo, hi), n in zip(cfg.extent, cfg.n_cells)])
    inner = [a[1:-1] for a in axes]
    grids = np.meshgrid(*inner, indexing="ij")
    interior = np.stack([g.ravel() for g in grids], axis=1)
    if cfg.dim == 1:
        pts, wts, B = _quadrature_1d(axes[0], h[0])
    else:
        pts, wts, B = _quadrature_2d(axes[0], axes[1], h)
    return Mesh(cfg=cfg, h=h, axes=axes, interior_points=interior,
                quad_points=pts, quad_weights=wts, basis_at_quad=B)
