"""Structured grid on the reference rectangle and finite-difference operators."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Grid:
    """``nx x ny`` cells on ``[x0, x0 + lx] x [y0, y0 + ly]``.

    Edge tags: ``x = x0`` is inflow, ``x = x0 + lx`` outflow, the two
    transverse edges are walls.
    """

    nx: int
    ny: int
    lx: float = 7.0
    ly: float = 0.2
    x0: float = 0.0
    y0: float = -0.1

    def __post_init__(self):
        if self.nx < 4 or self.ny < 4:
            raise ValueError("grid needs at least 4 cells per direction")
        if self.lx <= 0 or self.ly <= 0:
            raise ValueError("grid extents must be positive")

    @classmethod
    def for_vessel(cls, nx: int, ny: int, length: float = 7.0, diameter: float = 0.2) -> "Grid":
        return cls(nx, ny, length, diameter, 0.0, -0.5 * diameter)

    @property
    def hx(self) -> float:
        return self.lx / self.nx

    @property
    def hy(self) -> float:
        return self.ly / self.ny

    def nodes(self, refine: int = 1) -> "NodeGrid":
        """Vertex grid (``refine=1``) or the midpoint-refined grid (``refine=2``)."""
        return NodeGrid(
            np.linspace(self.x0, self.x0 + self.lx, refine * self.nx + 1),
            np.linspace(self.y0, self.y0 + self.ly, refine * self.ny + 1),
        )

    @property
    def boundary_tags(self) -> dict:
        return {"inflow": "x=x0", "outflow": "x=x0+lx", "wall": "y=y0 and y=y0+ly"}


@dataclass(frozen=True)
class NodeGrid:
    x: np.ndarray
    y: np.ndarray

    @property
    def shape(self):
        return (self.x.size, self.y.size)

    @property
    def hx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def hy(self) -> float:
        return float(self.y[1] - self.y[0])

    def mesh(self):
        return np.meshgrid(self.x, self.y, indexing="ij")

    def points(self) -> np.ndarray:
        X, Y = self.mesh()
        return np.column_stack([X.ravel(), Y.ravel()])

    def same_as(self, other: "NodeGrid") -> bool:
        return self.shape == other.shape and np.allclose(self.x, other.x) and np.allclose(self.y, other.y)


@dataclass
class ScalarField:
    values: np.ndarray
    grid: NodeGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"scalar field shape {self.values.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite values in field")


@dataclass
class VectorField:
    values: np.ndarray  # (2, NX, NY)
    grid: NodeGrid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (2,) + self.grid.shape:
            raise ValueError(f"vector field shape {self.values.shape} != (2,) + {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite values in field")


def _grad(values, grid: NodeGrid):
    gx = np.gradient(values, grid.hx, axis=0, edge_order=2)
    gy = np.gradient(values, grid.hy, axis=1, edge_order=2)
    return np.stack([gx, gy])


def apply_operator(kind: str, fld):
    """Second-order finite differences; one-sided second-order stencils on edges.

    ``gradient``: scalar -> vector, ``divergence``: vector -> scalar,
    ``laplacian``: scalar -> scalar (defined as divergence of gradient).
    """
    if kind == "gradient":
        if not isinstance(fld, ScalarField):
            raise TypeError("gradient expects a ScalarField")
        return VectorField(_grad(fld.values, fld.grid), fld.grid)
    if kind == "divergence":
        if not isinstance(fld, VectorField):
            raise TypeError("divergence expects a VectorField")
        g = fld.grid
        d = (np.gradient(fld.values[0], g.hx, axis=0, edge_order=2)
             + np.gradient(fld.values[1], g.hy, axis=1, edge_order=2))
        return ScalarField(d, g)
    if kind == "laplacian":
        if not isinstance(fld, ScalarField):
            raise TypeError("laplacian expects a ScalarField")
        return apply_operator("divergence", apply_operator("gradient", fld))
    raise ValueError(f"unknown operator kind {kind!r}")


# --- wall fields -----------------------------------------------------------

@dataclass
class WallField:
    """Values on the wall nodes.

    ``values`` and ``arclength`` have shape ``(n_walls, n)``; ``x1`` holds the
    reference axial coordinate of the nodes (shared by all walls).
    """

    values: np.ndarray
    arclength: np.ndarray
    x1: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.arclength = np.atleast_2d(np.asarray(self.arclength, dtype=float))
        if self.arclength.shape[0] == 1 and self.values.shape[0] > 1:
            self.arclength = np.repeat(self.arclength, self.values.shape[0], axis=0)
        if self.values.shape != self.arclength.shape:
            raise ValueError("values and arclength shapes differ")
        if np.any(np.diff(self.arclength, axis=1) <= 0.0):
            raise ValueError("arc length must be strictly increasing")
        if self.x1 is None:
            self.x1 = self.arclength[0].copy()

    def with_values(self, values) -> "WallField":
        return WallField(np.asarray(values, dtype=float).reshape(self.values.shape), self.arclength, self.x1)

    def measure(self) -> np.ndarray:
        return wall_measure(self.arclength)

    def mean(self) -> np.ndarray:
        m = self.measure()
        return (m * self.values).sum(axis=1) / m.sum(axis=1)


def wall_measure(s: np.ndarray) -> np.ndarray:
    """Lumped arc-length weight of each wall node (half cells at the ends)."""
    s = np.atleast_2d(s)
    h = np.diff(s, axis=1)
    m = np.zeros_like(s)
    m[:, :-1] += 0.5 * h
    m[:, 1:] += 0.5 * h
    return m


def surface_stiffness_bands(s: np.ndarray):
    """Tridiagonal bands of the Neumann stiffness ``S`` (so ``-lap = S/m``).

    Returns ``(lower, diag, upper)`` with shape ``(n_walls, n)``; ``lower[i]``
    couples node ``i`` to ``i-1`` and ``upper[i]`` couples ``i`` to ``i+1``.
    """
    s = np.atleast_2d(s)
    inv_h = 1.0 / np.diff(s, axis=1)
    diag = np.zeros_like(s)
    diag[:, :-1] += inv_h
    diag[:, 1:] += inv_h
    upper = np.zeros_like(s)
    lower = np.zeros_like(s)
    upper[:, :-1] = -inv_h
    lower[:, 1:] = -inv_h
    return lower, diag, upper


def surface_laplacian(c: WallField) -> WallField:
    """Second arc-length derivative, 3-point stencil, homogeneous Neumann ends."""
    if c.values.shape[1] < 4:
        raise ValueError("wall needs at least 4 nodes")
    lower, diag, upper = surface_stiffness_bands(c.arclength)
    v = c.values
    Sv = diag * v
    Sv[:, 1:] += lower[:, 1:] * v[:, :-1]
    Sv[:, :-1] += upper[:, :-1] * v[:, 1:]
    return c.with_values(-Sv / c.measure())


def arclength(points: np.ndarray) -> np.ndarray:
    """Cumulative polyline length, starting at 0."""
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


# --- csv -------------------------------------------------------------------

def fmt(v: float) -> str:
    return f"{v:.9g}"


def write_field_csv(path, fld) -> None:
    """Node coordinates plus values; vector fields get one column per component."""
    path = Path(path)
    X, Y = fld.grid.mesh()
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        if isinstance(fld, VectorField):
            w.writerow(["x", "y", "v1", "v2"])
            for row in zip(X.ravel(), Y.ravel(), fld.values[0].ravel(), fld.values[1].ravel()):
                w.writerow([fmt(r) for r in row])
        else:
            w.writerow(["x", "y", "value"])
            for row in zip(X.ravel(), Y.ravel(), fld.values.ravel()):
                w.writerow([fmt(r) for r in row])


def write_wall_csv(path, wf: WallField, name: str = "c") -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["wall", "x1", "arclength", name])
        for k in range(wf.values.shape[0]):
            for x1, s, v in zip(wf.x1, wf.arclength[k], wf.values[k]):
                w.writerow([k, fmt(x1), fmt(s), fmt(v)])
