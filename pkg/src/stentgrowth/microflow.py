"""Unsteady incompressible flow on a frozen mapped domain.

The momentum and continuity equations are posed on the reference grid in
ALE form (coefficients ``J`` and ``F^{-1}``) and advanced with the
theta scheme.  The viscous term uses the ``rho nu grad v : grad phi`` form so
that the natural boundary condition on inflow/outflow is the do-nothing
condition carrying the prescribed mean pressure.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import geometry as geo
from .fem import Q2Q1Space
from .grid import Grid, ScalarField, VectorField, WallField, apply_operator, arclength

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class FluidParams:
    rho_f: float = 1.06
    nu_f: float = 0.03
    theta: Optional[float] = None  # None -> 0.5 + dt
    mode: str = "stokes"
    div_tol: float = 1e-8
    newton_tol: float = 1e-10
    max_newton: int = 8
    max_picard: int = 50

    def __post_init__(self):
        if self.rho_f <= 0 or self.nu_f <= 0:
            raise ValueError("rho_f and nu_f must be positive")
        if self.theta is not None and not 0.5 <= self.theta <= 1.0:
            raise ValueError("theta must lie in [0.5, 1]")
        if self.mode not in ("stokes", "navier_stokes"):
            raise ValueError(f"unknown flow mode {self.mode!r}")

    def theta_for(self, dt: float) -> float:
        return min(1.0, 0.5 + dt) if self.theta is None else self.theta


@dataclass(frozen=True)
class PressureProfile:
    """Piecewise-linear inflow pressure on one period, extended periodically."""

    times: tuple = (0.0, 0.4, 0.7, 1.0)
    values: tuple = (10.0, 20.0, 0.0, 10.0)

    def __post_init__(self):
        if self.times[0] != 0.0 or self.times[-1] != 1.0:
            raise ValueError("breakpoints must span [0, 1]")
        if abs(self.values[0] - self.values[-1]) > 1e-12:
            raise ValueError("profile must be periodic: P(0) == P(1)")

    def __call__(self, t):
        return pin_eval(t, self)

    @classmethod
    def constant(cls, value: float) -> "PressureProfile":
        return cls((0.0, 1.0), (value, value))


def pin_eval(t, profile: Optional[PressureProfile] = None):
    """Inflow pressure; the default is 10+25t, (140-200t)/3, (100t-70)/3."""
    profile = profile or PressureProfile()
    tau = np.mod(t, 1.0)
    return np.interp(tau, profile.times, profile.values)


def window(s, x):
    """Smooth plateau of half-width 1 centred at ``s``."""
    x = np.asarray(x, dtype=float)
    return 1.0 / ((1.0 + np.exp(2.0 * (s - 1.0 - x))) * (1.0 + np.exp(2.0 * (x - s - 1.0))))


def in_window_region(x, s0, s1):
    """True where the window sum reaches half the single-window peak."""
    x = np.asarray(x, dtype=float)
    return window(s0, x) + window(s1, x) >= 0.5 * window(0.0, 0.0)


@dataclass
class FlowState:
    v: VectorField
    p: ScalarField
    t: float = 0.0

    def copy(self) -> "FlowState":
        return FlowState(VectorField(self.v.values.copy(), self.v.grid),
                         ScalarField(self.p.values.copy(), self.p.grid), self.t)


@dataclass
class FlowProblem:
    """Everything that defines a micro problem apart from the time step.

    ``kind`` is ``"channel"`` (walls no-slip, do-nothing inflow/outflow with
    ``pressure``) or ``"cavity"`` (no-slip everywhere, pressure pinned).
    ``forcing(points, t)`` returns body force per unit mass at physical
    points, shape ``(n, 2)``.
    """

    grid: Grid
    kind: str = "channel"
    geometry: Optional[geo.GeometryParams] = None
    pressure: Optional[PressureProfile] = field(default_factory=PressureProfile)
    forcing: Optional[Callable] = None
    window_mode: str = "axial"

    def __post_init__(self):
        if self.kind not in ("channel", "cavity"):
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.window_mode not in ("axial", "literal"):
            raise ValueError("window_mode must be 'axial' or 'literal'")


def vessel_problem(nx: int, ny: int, geometry: Optional[geo.GeometryParams] = None, **kw) -> FlowProblem:
    geometry = geometry or geo.GeometryParams()
    d = geometry.domain
    return FlowProblem(Grid.for_vessel(nx, ny, d.length, d.diameter), "channel", geometry, **kw)


def cavity_forcing(points, t):
    """2D reduction of the periodic cavity forcing on (-2, 2)^2."""
    s = np.sin(2.0 * np.pi * t) / 6.0
    return s * np.column_stack([3.0 * np.tanh(points[:, 1]), np.tanh(points[:, 0])])


def cavity_problem(n: int = 16) -> FlowProblem:
    return FlowProblem(Grid(n, n, 4.0, 4.0, -2.0, -2.0), "cavity", None, None, cavity_forcing)


class MapCoefficients:
    """ALE data of one frozen map sampled where the solver needs it."""

    def __init__(self, space: Q2Q1Space, problem: FlowProblem, profile: Optional[geo.WallProfile]):
        self.space = space
        ne = space.ne
        if problem.geometry is None:
            self.J = np.ones((ne, 9))
            self.Finv = np.broadcast_to(np.eye(2), (ne, 9, 2, 2)).copy()
            self.qmapped = space.qpoints.copy()
        else:
            m = geo.composite_map(space.qpoints.reshape(-1, 2), profile, problem.geometry)
            self.J = m.J.reshape(ne, 9)
            self.Finv = np.linalg.inv(m.F).reshape(ne, 9, 2, 2)
            self.qmapped = m.mapped.reshape(ne, 9, 2)

        self.edges = {}
        for side in ("inflow", "outflow"):
            pts, _, _, _ = space.edge_points(side)
            if problem.geometry is None:
                Je, Fe = np.ones(len(pts)), np.broadcast_to(np.eye(2), (len(pts), 2, 2)).copy()
            else:
                m = geo.composite_map(pts, profile, problem.geometry)
                Je, Fe = m.J, np.linalg.inv(m.F)
            self.edges[side] = space.edge_functional(side, Je, Fe)

        # wall nodes: mapped position, F^{-1}, unit outward normal
        wn = space.wall_nodes()
        vp = space.vnodes.points()
        self.wall_ref = vp[wn]  # (2, NX, 2)
        if problem.geometry is None:
            self.wall_mapped = self.wall_ref.copy()
            Fw = np.broadcast_to(np.eye(2), wn.shape + (2, 2)).copy()
        else:
            m = geo.composite_map(self.wall_ref.reshape(-1, 2), profile, problem.geometry)
            self.wall_mapped = m.mapped.reshape(wn.shape + (2,))
            Fw = m.F.reshape(wn.shape + (2, 2))
        self.wall_Finv = np.linalg.inv(Fw)
        nhat = np.array([[0.0, -1.0], [0.0, 1.0]])
        n = np.einsum("wkji,wj->wki", self.wall_Finv, nhat)
        self.wall_normal = n / np.linalg.norm(n, axis=-1, keepdims=True)
        self.wall_arclength = np.stack([arclength(self.wall_mapped[k]) for k in range(2)])


class MicroSolver:
    """Theta-scheme integrator for one problem, time step and frozen map."""

    def __init__(self, problem: FlowProblem, params: FluidParams, dt: float,
                 profile: Optional[geo.WallProfile] = None):
        if dt <= 0:
            raise ValueError("dt must be positive")
        m = round(1.0 / dt)
        if abs(m * dt - 1.0) > 1e-9:
            raise ValueError("dt must divide the 1 s period evenly")
        self.problem = problem
        self.params = params
        self.dt = float(dt)
        self.steps_per_cycle = int(m)
        self.theta = params.theta_for(dt)
        self.space = Q2Q1Space(problem.grid)
        sp_ = self.space
        self.nv2 = 2 * sp_.nv
        self.counters = {"steps": 0, "cycles": 0, "factorizations": 0, "stationary_solves": 0}

        if problem.kind == "channel":
            nodes = sp_.wall_nodes().ravel()
        else:
            nodes = sp_.boundary_nodes()
        self.dirichlet = np.concatenate([nodes, nodes + sp_.nv])
        self.pin = 2 * sp_.nv if problem.kind == "cavity" else None
        fixed = np.zeros(sp_.ndof, dtype=bool)
        fixed[self.dirichlet] = True
        if self.pin is not None:
            fixed[self.pin] = True
        self.fixed = fixed
        self._free_diag = sp.diags((~fixed).astype(float))
        self._fixed_diag = sp.diags(fixed.astype(float))
        self.set_profile(profile)

    # --- map-dependent setup -------------------------------------------------

    def set_profile(self, profile: Optional[geo.WallProfile]) -> None:
        """Freeze a new domain map; reassembles and refactorizes."""
        self.profile = profile
        sp_ = self.space
        pr = self.params
        self.coef = MapCoefficients(sp_, self.problem, profile)
        c = self.coef
        Ms = sp_.mass(c.J)
        As = sp_.stiffness(c.J, c.Finv)
        self.M = sp.block_diag([Ms, Ms]).tocsr() * pr.rho_f
        self.A = sp.block_diag([As, As]).tocsr() * (pr.rho_f * pr.nu_f)
        self.B = sp_.divergence(c.J, c.Finv)
        self._absB = abs(self.B)
        # plain J-weighted mass for L2 norms on the physical domain
        self.M_l2 = sp.block_diag([Ms, Ms]).tocsr()
        self.q_in = c.edges["inflow"]
        self.q_out = c.edges["outflow"]
        self._step_lu = None
        self._stat_lu = None
        self._explicit = (self.M / self.dt - (1.0 - self.theta) * self.A).tocsr()

    def _saddle(self, Avv):
        K = sp.bmat([[Avv, -self.B.T], [self.B, None]], format="csr")
        K = self._free_diag @ K + self._fixed_diag
        return K.tocsc()

    def _factor(self, K):
        self.counters["factorizations"] += 1
        try:
            return spla.splu(K)
        except RuntimeError as exc:  # singular factor
            raise SolverError(f"sparse factorization failed: {exc}") from exc

    # --- forcing -------------------------------------------------------------

    def load(self, t: float) -> np.ndarray:
        g = np.zeros(self.nv2)
        pb = self.problem
        if pb.pressure is not None and pb.kind == "channel":
            g -= pin_eval(t, pb.pressure) * self.q_in
        if pb.forcing is not None:
            f = pb.forcing(self.coef.qmapped.reshape(-1, 2), t).reshape(self.space.ne, 9, 2)
            g += self.space.load(f, self.coef.J, self.params.rho_f)
        return g

    # --- states --------------------------------------------------------------

    def rest_state(self, t: float = 0.0) -> FlowState:
        return self.to_state(np.zeros(self.space.ndof), t)

    def to_state(self, x: np.ndarray, t: float) -> FlowState:
        sp_ = self.space
        v = x[: self.nv2].reshape(2, sp_.NX, sp_.NY)
        p = x[self.nv2:].reshape(sp_.npx, sp_.npy)
        return FlowState(VectorField(v.copy(), sp_.vnodes), ScalarField(p.copy(), sp_.pnodes), t)

    def to_vector(self, state: FlowState) -> np.ndarray:
        return np.concatenate([state.v.values.ravel(), state.p.values.ravel()])

    # --- time stepping -------------------------------------------------------

    def divergence_residual(self, v: np.ndarray) -> float:
        r = np.linalg.norm(self.B @ v)
        scale = np.linalg.norm(self._absB @ np.abs(v))
        return 0.0 if scale == 0.0 else float(r / scale)

    def _solve_linear(self, lu, rhs):
        rhs = rhs.copy()
        rhs[self.fixed] = 0.0
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError("linear solve produced non-finite values")
        return x

    def step_vector(self, x: np.ndarray, t: float, g_old=None, g_new=None) -> np.ndarray:
        """Advance the flat state ``x`` from ``t`` to ``t + dt``."""
        dt, th = self.dt, self.theta
        v = x[: self.nv2]
        g_old = self.load(t) if g_old is None else g_old
        g_new = self.load(t + dt) if g_new is None else g_new
        rhs_v = self._explicit @ v + th * g_new + (1.0 - th) * g_old
        if self.params.mode == "stokes":
            rhs = np.concatenate([rhs_v, np.zeros(self.space.npres)])
            xn = self._solve_linear(self._stokes_step_lu(), rhs)
        else:
            Cold = self.space.convection(v, self.coef.J, self.coef.Finv, self.params.rho_f)
            rhs_v = rhs_v - (1.0 - th) * (Cold @ v)
            xn = self._newton(x, rhs_v)
        self.counters["steps"] += 1
        res = self.divergence_residual(xn[: self.nv2])
        if res > self.params.div_tol:
            raise SolverError(f"divergence residual {res:.3e} exceeds {self.params.div_tol:.1e}")
        return xn

    def _newton(self, x, rhs_v):
        """Solve ``(M/dt + th A) v + th C(v) v - B^T p = rhs_v``, ``B v = 0``."""
        dt, th, sp_ = self.dt, self.theta, self.space
        rho, J, Finv = self.params.rho_f, self.coef.J, self.coef.Finv
        base = self.M / dt + th * self.A
        xk = x.copy()
        zeros = np.zeros(sp_.npres)

        def residual(xc):
            v = xc[: self.nv2]
            C = sp_.convection(v, J, Finv, rho)
            r_v = base @ v + th * (C @ v) - self.B.T @ xc[self.nv2:] - rhs_v
            r = np.concatenate([r_v, self.B @ v])
            r[self.fixed] = 0.0
            return r, C

        scale = max(np.linalg.norm(rhs_v), 1e-300)
        for _ in range(self.params.max_newton):
            r, C = residual(xk)
            if np.linalg.norm(r) <= self.params.newton_tol * scale:
                return xk
            D = sp_.convection_derivative(xk[: self.nv2], J, Finv, rho)
            dx = self._jacobian_solve(self._saddle(base + th * (C + D)), -r)
            xk = xk + dx
            if np.linalg.norm(dx[: self.nv2]) <= self.params.newton_tol * max(np.linalg.norm(xk[: self.nv2]), 1e-300):
                return xk
        log.warning("Newton did not converge; falling back to fixed-point iteration")
        for _ in range(self.params.max_picard):
            v = xk[: self.nv2]
            C = sp_.convection(v, J, Finv, rho)
            lu = self._factor(self._saddle(base + th * C))
            xn = self._solve_linear(lu, np.concatenate([rhs_v, zeros]))
            if np.linalg.norm(xn - xk) <= self.params.newton_tol * max(np.linalg.norm(xn), 1e-300):
                return xn
            xk = xn
        r, _ = residual(xk)
        raise SolverError(f"nonlinear solve did not converge, residual {np.linalg.norm(r):.3e}")

    def _stokes_step_lu(self):
        if self._step_lu is None:
            self._step_lu = self._factor(self._saddle(self.M / self.dt + self.theta * self.A))
        return self._step_lu

    def _jacobian_solve(self, K, rhs):
        """GMRES on the Newton system, preconditioned by the Stokes step factor.

        At the moderate Reynolds numbers of the desk problems the convective
        part is a small perturbation, so a handful of iterations suffice; a
        direct factorization is the fallback.
        """
        rhs = rhs.copy()
        rhs[self.fixed] = 0.0
        lu = self._stokes_step_lu()
        pre = spla.LinearOperator(K.shape, matvec=lu.solve)
        x, info = spla.gmres(K, rhs, M=pre, rtol=1e-13, atol=0.0, restart=40, maxiter=10)
        if info != 0 or not np.all(np.isfinite(x)):
            x = self._solve_linear(self._factor(K), rhs)
        return x

    def theta_step(self, state: FlowState) -> FlowState:
        x = self.step_vector(self.to_vector(state), state.t)
        return self.to_state(x, state.t + self.dt)

    # --- stationary correction ----------------------------------------------

    def stationary_solve(self, rhs_v: np.ndarray, about: Optional[np.ndarray] = None) -> np.ndarray:
        """Solve the steady (Stokes or Oseen about ``about``) problem, homogeneous BCs."""
        sp_ = self.space
        rhs = np.concatenate([rhs_v, np.zeros(sp_.npres)])
        self.counters["stationary_solves"] += 1
        if self.params.mode == "stokes" or about is None:
            if self._stat_lu is None:
                self._stat_lu = self._factor(self._saddle(self.A))
            return self._solve_linear(self._stat_lu, rhs)
        rho, J, Finv = self.params.rho_f, self.coef.J, self.coef.Finv
        L = self.A + sp_.convection(about, J, Finv, rho) + sp_.convection_derivative(about, J, Finv, rho)
        return self._solve_linear(self._factor(self._saddle(L)), rhs)

    # --- diagnostics -----------------------------------------------------------

    def l2_norm(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.M_l2 @ v), 0.0)))

    def outflow(self, v: np.ndarray) -> float:
        return float(self.q_out @ v[: self.nv2])

    def wall_normal_stress(self, x: np.ndarray) -> np.ndarray:
        """``sigma(v, p) n . n`` at the wall nodes, shape (2, NX)."""
        sp_ = self.space
        c = self.coef
        pr = self.params
        v = x[: self.nv2].reshape(2, sp_.NX, sp_.NY)
        grads = []
        for i in range(2):
            g = apply_operator("gradient", ScalarField(v[i], sp_.vnodes)).values
            grads.append(np.stack([g[:, :, 0], g[:, :, -1]], axis=1))  # (dir, wall, NX)
        ghat = np.stack(grads)  # (i, a, wall, NX)
        gphys = np.einsum("iawk,wkaj->wkij", ghat, c.wall_Finv)
        sym = pr.rho_f * pr.nu_f * (gphys + np.swapaxes(gphys, -1, -2))
        pw = sp_.pressure_on_vnodes(x[self.nv2:])
        p = np.stack([pw[:, 0], pw[:, -1]])
        n = c.wall_normal
        return np.einsum("wki,wkij,wkj->wk", n, sym, n) - p

    def wall_shear_stress(self, x: np.ndarray, domain: Optional[geo.ReferenceDomain] = None) -> np.ndarray:
        """Windowed ``|sigma n . n|`` at the wall nodes."""
        domain = domain or (self.problem.geometry.domain if self.problem.geometry else geo.ReferenceDomain())
        s = np.abs(self.wall_normal_stress(x))
        x1 = self.coef.wall_ref[..., 0]
        if self.problem.window_mode == "axial":
            w = window(domain.stent_start, x1) + window(domain.stent_end, x1)
        else:
            w = window(domain.stent_start, x1) + window(domain.stent_end, self.coef.wall_mapped[..., 1])
        return s * w

    def wall_field(self, values) -> WallField:
        return WallField(values, self.coef.wall_arclength, self.coef.wall_ref[0, :, 0])


@dataclass
class CycleResult:
    end: np.ndarray
    start: np.ndarray
    mean_v: np.ndarray
    outflow: np.ndarray
    wss: Optional[np.ndarray] = None  # (M+1, 2, NX)

    def mean_outflow(self) -> float:
        q = self.outflow
        return float((q[1:-1].sum() + 0.5 * (q[0] + q[-1])) / (len(q) - 1))


def cycle_integrate(solver: MicroSolver, x0, record_wss: bool = True) -> CycleResult:
    """One period ``[0, 1]``: end state, trapezoidal mean velocity, traces."""
    if isinstance(x0, FlowState):
        x0 = solver.to_vector(x0)
    M, dt = solver.steps_per_cycle, solver.dt
    x = x0.copy()
    mean_v = 0.5 * x[: solver.nv2]
    flows = [solver.outflow(x)]
    wss = [solver.wall_shear_stress(x)] if record_wss else None
    g_old = solver.load(0.0)
    for m in range(M):
        g_new = solver.load((m + 1) * dt)
        x = solver.step_vector(x, m * dt, g_old, g_new)
        g_old = g_new
        mean_v += x[: solver.nv2] if m < M - 1 else 0.5 * x[: solver.nv2]
        flows.append(solver.outflow(x))
        if record_wss:
            wss.append(solver.wall_shear_stress(x))
    solver.counters["cycles"] += 1
    return CycleResult(x, x0, mean_v * dt, np.array(flows), np.array(wss) if record_wss else None)
