"""Reference vessel and the ALE deformation T = T_geo o T_stenosis o T_stent.

Points are arrays of shape ``(n, dim)`` with ``dim`` 2 or 3; the axial
coordinate is column 0.  In 2D the transverse coordinate is ``x[:, 1]`` in
``[-R, R]`` with ``R = diameter / 2``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

C_MAX = 0.95


class GeometryError(ValueError):
    """Raised for inadmissible growth values or a degenerate mapped geometry."""


@dataclass(frozen=True)
class ReferenceDomain:
    length: float = 7.0
    diameter: float = 0.2
    dimension: int = 2
    stent_start: float = 2.0
    stent_end: float = 5.0
    midpoint: float = 3.5

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise ValueError("dimension must be 2 or 3")
        if not 0.0 < self.stent_start < self.stent_end < self.length:
            raise ValueError("need 0 < stent_start < stent_end < length")
        if self.diameter <= 0.0:
            raise ValueError("diameter must be positive")

    @property
    def radius(self) -> float:
        return 0.5 * self.diameter


@dataclass(frozen=True)
class StentParams:
    rho_stent: float = 0.1
    gamma_stent: float = 50.0

    def __post_init__(self):
        if self.rho_stent < 0.0 or self.gamma_stent <= 0.0:
            raise ValueError("need rho_stent >= 0 and gamma_stent > 0")


@dataclass(frozen=True)
class CenterlineParams:
    coefficient: float = 4e-3
    exponent: float = 4.0

    def __post_init__(self):
        if self.coefficient < 0.0:
            raise ValueError("centerline coefficient must be >= 0")


@dataclass
class AleMap:
    """Mapped points with deformation gradient ``F[n, i, j] = dx_i/dxhat_j``."""

    reference: np.ndarray
    mapped: np.ndarray
    F: np.ndarray
    J: np.ndarray

    def Finv(self) -> np.ndarray:
        return np.linalg.inv(self.F)


def _as_points(x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] not in (2, 3):
        raise ValueError(f"points must have 2 or 3 columns, got {x.shape}")
    return x


# --- stent -----------------------------------------------------------------

def stent_factor(x1, params: StentParams, domain: ReferenceDomain):
    """Radial widening factor and its axial derivative.

    Both tips carry the amplitude ``rho_stent``.
    """
    x1 = np.asarray(x1, dtype=float)
    g = params.gamma_stent
    e0 = np.exp(-g * (x1 - domain.stent_start) ** 2)
    e1 = np.exp(-g * (x1 - domain.stent_end) ** 2)
    a = 1.0 + params.rho_stent * (e0 + e1)
    da = -2.0 * g * params.rho_stent * ((x1 - domain.stent_start) * e0 + (x1 - domain.stent_end) * e1)
    return a, da


def stent_map(x, params: StentParams = StentParams(), domain: ReferenceDomain = ReferenceDomain()) -> np.ndarray:
    x = _as_points(x)
    a, _ = stent_factor(x[:, 0], params, domain)
    y = x.copy()
    y[:, 1:] *= a[:, None]
    return y


# --- stenosis --------------------------------------------------------------

def _check_growth(c):
    c = np.asarray(c, dtype=float)
    if np.any(c >= 1.0):
        raise GeometryError("growth value c >= 1 collapses the lumen")
    if np.any(c < 0.0):
        raise GeometryError("growth value must be non-negative")
    return c


def stenosis_map(x, c_at_x) -> np.ndarray:
    """Scale the transverse coordinates by ``1 - c``."""
    x = _as_points(x)
    c = _check_growth(np.broadcast_to(c_at_x, (x.shape[0],)))
    y = x.copy()
    y[:, 1:] *= (1.0 - c)[:, None]
    return y


# --- centerline ------------------------------------------------------------

def _tau(x1, params: CenterlineParams, domain: ReferenceDomain):
    d = x1 - domain.midpoint
    p = params.exponent
    a = params.coefficient
    t = a * d**p
    t1 = a * p * d ** (p - 1)
    t2 = a * p * (p - 1) * d ** (p - 2)
    return t, t1, t2


def _tube(x1, s, params, domain):
    """Tube map pieces: (axial, lateral, d/dx1 of both, d/ds of both)."""
    t, t1, t2 = _tau(x1, params, domain)
    n = 1.0 / np.sqrt(1.0 + t1**2)
    dn = -t1 * t2 * n**3
    ax = x1 - t1 * n * s
    lat = t + n * s
    dax_dx1 = 1.0 - (t2 * n + t1 * dn) * s
    dlat_dx1 = t1 + dn * s
    return ax, lat, dax_dx1, dlat_dx1, -t1 * n, n


def centerline_map(x, params: CenterlineParams = CenterlineParams(),
                   domain: ReferenceDomain = ReferenceDomain()) -> np.ndarray:
    """Bend the straight pipe onto the centerline ``tau(x1)``.

    In 3D the curve lies in the x/y plane for ``x1 < midpoint`` and in the
    x/z plane beyond.  In 2D only the x/y branch exists; the x/z branch
    projects to the identity there.
    """
    return _centerline(_as_points(x), params, domain)[0]


def _centerline(z, params, domain):
    n_pts, dim = z.shape
    out = z.copy()
    D = np.tile(np.eye(dim), (n_pts, 1, 1))
    left = z[:, 0] < domain.midpoint
    planes = [(left, 1)]
    if dim == 3:
        planes.append((~left, 2))
    for mask, k in planes:
        if not np.any(mask):
            continue
        x1 = z[mask, 0]
        s = z[mask, k]
        ax, lat, dax1, dlat1, daxs, dlats = _tube(x1, s, params, domain)
        out[mask, 0] = ax
        out[mask, k] = lat
        Dm = D[mask]
        Dm[:, 0, 0] = dax1
        Dm[:, 0, k] = daxs
        Dm[:, k, 0] = dlat1
        Dm[:, k, k] = dlats
        D[mask] = Dm
    return out, D


# --- composite -------------------------------------------------------------

class WallProfile:
    """Growth values on the lower and upper wall as functions of ``x1``.

    ``evaluate(x1)`` returns ``(c_lower, c_upper, dc_lower, dc_upper)``.
    """

    def evaluate(self, x1):
        raise NotImplementedError


class ConstantProfile(WallProfile):
    def __init__(self, lower: float = 0.0, upper: Optional[float] = None):
        self.lower = float(lower)
        self.upper = float(lower if upper is None else upper)
        _check_growth([self.lower, self.upper])

    def evaluate(self, x1):
        x1 = np.asarray(x1, dtype=float)
        z = np.zeros_like(x1)
        return z + self.lower, z + self.upper, z, z


class FunctionProfile(WallProfile):
    """Axisymmetric profile from a callable returning ``(c, dc/dx1)``."""

    def __init__(self, func: Callable):
        self.func = func

    def evaluate(self, x1):
        c, dc = self.func(np.asarray(x1, dtype=float))
        return c, c, dc, dc


class WallNodeProfile(WallProfile):
    """Piecewise-quadratic interpolation of wall-node values.

    ``x1`` are equispaced nodes with an odd count (element vertices plus
    midpoints, as on the refined velocity grid); ``values`` has shape
    ``(2, n)`` for the lower and upper wall.
    """

    def __init__(self, x1, values):
        self.x1 = np.asarray(x1, dtype=float)
        self.values = np.atleast_2d(np.asarray(values, dtype=float))
        if self.x1.size % 2 == 0 or self.x1.size < 3:
            raise ValueError("need an odd number (>= 3) of wall nodes")
        if self.values.shape[0] == 1:
            self.values = np.repeat(self.values, 2, axis=0)
        _check_growth(self.values)
        self.H = 2.0 * (self.x1[1] - self.x1[0])
        self.ne = (self.x1.size - 1) // 2

    def evaluate(self, x1):
        x1 = np.asarray(x1, dtype=float)
        e = np.clip(np.floor((x1 - self.x1[0]) / self.H).astype(int), 0, self.ne - 1)
        t = (x1 - self.x1[2 * e]) / self.H
        L = [2 * (t - 0.5) * (t - 1.0), -4 * t * (t - 1.0), 2 * t * (t - 0.5)]
        dL = [4 * t - 3.0, -8 * t + 4.0, 4 * t - 1.0]
        out = []
        for w in range(2):
            v = self.values[w]
            val = sum(L[b] * v[2 * e + b] for b in range(3))
            der = sum(dL[b] * v[2 * e + b] for b in range(3)) / self.H
            out.append((val, der))
        return out[0][0], out[1][0], out[0][1], out[1][1]


@dataclass(frozen=True)
class GeometryParams:
    domain: ReferenceDomain = ReferenceDomain()
    stent: StentParams = StentParams()
    centerline: CenterlineParams = CenterlineParams()


def composite_map(x, profile: Optional[WallProfile] = None,
                  params: GeometryParams = GeometryParams(), check: bool = True) -> AleMap:
    """Evaluate T, F = grad T and J = det F at reference points.

    The stenosis factor reads the growth value at the wall footprint of each
    point.  In 2D the two walls may carry different values ``c_l`` and
    ``c_u``; the transverse stretch is then affine,
    ``a(x1) * ((1 - cbar) x2 - delta R)`` with ``cbar`` the mean and
    ``delta`` the half difference, which reduces to ``(1 - c) a x2`` when
    both walls agree and keeps ``J`` positive whenever ``c < 1``.
    """
    x = _as_points(x)
    domain, stent = params.domain, params.stent
    n, dim = x.shape
    profile = profile or ConstantProfile(0.0)
    x1 = x[:, 0]
    R = domain.radius
    a, da = stent_factor(x1, stent, domain)
    cl, cu, dcl, dcu = profile.evaluate(x1)
    # interpolants may dip marginally below 0 between admissible nodes;
    # only closure of the lumen is fatal here
    if np.any(cl >= 1.0) or np.any(cu >= 1.0):
        raise GeometryError("growth value c >= 1 collapses the lumen")
    cbar, dcbar = 0.5 * (cl + cu), 0.5 * (dcl + dcu)
    delta, ddelta = 0.5 * (cu - cl), 0.5 * (dcu - dcl)
    if dim == 3 and np.any(delta != 0.0):
        raise GeometryError("3D evaluation supports axisymmetric growth profiles only")

    # stent followed by stenosis, in closed form
    z = x.copy()
    D = np.zeros((n, dim, dim))
    D[:, 0, 0] = 1.0
    for k in range(1, dim):
        s = x[:, k]
        inner = (1.0 - cbar) * s - delta * R
        z[:, k] = a * inner
        D[:, k, 0] = da * inner + a * (-dcbar * s - ddelta * R)
        D[:, k, k] = a * (1.0 - cbar)

    mapped, Dg = _centerline(z, params.centerline, domain)
    F = np.einsum("nij,njk->nik", Dg, D)
    J = np.linalg.det(F)
    if check and np.any(J <= 0.0):
        bad = int(np.argmin(J))
        raise GeometryError(f"non-positive Jacobian J={J[bad]:.3e} at x={x[bad].tolist()}")
    return AleMap(reference=x, mapped=mapped, F=F, J=J)


def fd_gradient(x, profile=None, params: GeometryParams = GeometryParams(), h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of the composite map."""
    x = _as_points(x)
    n, dim = x.shape
    F = np.empty((n, dim, dim))
    for j in range(dim):
        e = np.zeros(dim)
        e[j] = h
        plus = composite_map(x + e, profile, params, check=False).mapped
        minus = composite_map(x - e, profile, params, check=False).mapped
        F[:, :, j] = (plus - minus) / (2.0 * h)
    return F


def sample_points(domain: ReferenceDomain, n1: int, n2: int) -> np.ndarray:
    """Tensor sample of the 2D reference rectangle (boundaries included)."""
    x1 = np.linspace(0.0, domain.length, n1)
    x2 = np.linspace(-domain.radius, domain.radius, n2)
    X1, X2 = np.meshgrid(x1, x2, indexing="ij")
    return np.column_stack([X1.ravel(), X2.ravel()])
