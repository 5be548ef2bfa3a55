"""Time-periodic micro solutions: forward cycling and the averaging scheme."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .fem import Q2Q1Space
from .grid import Grid, NodeGrid, VectorField, fmt
from .microflow import CycleResult, FlowState, MicroSolver, cycle_integrate

MODES = ("forward", "averaging")


@dataclass
class PeriodicSolveReport:
    mode: str
    cycles: int = 0
    error_history: list = field(default_factory=list)
    contraction_ratios: list = field(default_factory=list)
    converged: bool = False
    stationary_solves: int = 0
    eps: float = 1e-8

    def to_dict(self) -> dict:
        return asdict(self)

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cycle", "periodicity_error"])
            for i, e in enumerate(self.error_history, start=1):
                w.writerow([i, fmt(e)])

    def geometric_mean_ratio(self) -> float:
        r = np.asarray(self.contraction_ratios)
        return float(np.exp(np.mean(np.log(r)))) if r.size else float("nan")


@dataclass
class AveragingWorkspace:
    mean_v: np.ndarray
    defect: np.ndarray
    w: Optional[np.ndarray] = None
    q: Optional[np.ndarray] = None


@lru_cache(maxsize=8)
def _reference_mass(nx: int, ny: int, lx: float, ly: float, x0: float, y0: float):
    space = Q2Q1Space(Grid(nx, ny, lx, ly, x0, y0))
    Ms = space.mass(np.ones((space.ne, 9)))
    return sp.block_diag([Ms, Ms]).tocsr()


def _mass_for(grid: NodeGrid):
    nx, ny = (grid.x.size - 1) // 2, (grid.y.size - 1) // 2
    return _reference_mass(nx, ny, float(grid.x[-1] - grid.x[0]), float(grid.y[-1] - grid.y[0]),
                           float(grid.x[0]), float(grid.y[0]))


def periodicity_error(v_end, v_start, solver: Optional[MicroSolver] = None) -> float:
    """L2 norm of ``v_end - v_start`` over the (mapped) domain.

    Accepts flow states, vector fields, or flat vectors (the latter need a
    solver, whose J-weighted mass matrix is then used).
    """
    if isinstance(v_end, FlowState):
        v_end, v_start = v_end.v, v_start.v
    if isinstance(v_end, VectorField):
        if not v_end.grid.same_as(v_start.grid):
            raise ValueError("fields live on different grids")
        d = (v_end.values - v_start.values).ravel()
        M = solver.M_l2 if solver is not None else _mass_for(v_end.grid)
    else:
        if solver is None:
            raise ValueError("flat vectors need a solver for the norm")
        n = solver.nv2
        if v_end.shape != v_start.shape:
            raise ValueError("vectors differ in size")
        d = v_end[:n] - v_start[:n]
        M = solver.M_l2
    return float(np.sqrt(max(d @ (M @ d), 0.0)))


def averaging_correction(ws: AveragingWorkspace, solver: MicroSolver):
    """Average correction ``(w, q)`` driven by the cycle defect ``v(1) - v(0)``.

    Solves the steady linear problem with the mass-weighted defect as load and
    homogeneous boundary data; in Navier-Stokes mode the operator is the
    Oseen linearisation about the cycle mean.
    """
    rhs = solver.M @ ws.defect
    about = ws.mean_v if solver.params.mode == "navier_stokes" else None
    x = solver.stationary_solve(rhs, about)
    ws.w, ws.q = x[: solver.nv2], x[solver.nv2:]
    return ws.w, ws.q


def solve_periodic(solver: MicroSolver, initial_guess=None, mode: str = "averaging", eps: float = 1e-8,
                   max_cycles: int = 200, record_wss: bool = True):
    """Iterate cycles until ``||v(1) - v(0)|| < eps``.

    Returns ``(state, cycle, report)``: the initial state of the first cycle
    meeting the threshold, that cycle's traces, and the report.  On
    ``max_cycles`` without convergence the last cycle is returned with
    ``report.converged = False``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown periodic mode {mode!r}")
    if eps <= 0 or max_cycles < 1:
        raise ValueError("need eps > 0 and max_cycles >= 1")
    if initial_guess is None:
        x0 = np.zeros(solver.space.ndof)
    elif isinstance(initial_guess, FlowState):
        x0 = solver.to_vector(initial_guess)
    else:
        x0 = np.asarray(initial_guess, dtype=float).copy()

    report = PeriodicSolveReport(mode=mode, eps=eps)
    stat0 = solver.counters["stationary_solves"]
    cyc: Optional[CycleResult] = None
    for _ in range(max_cycles):
        cyc = cycle_integrate(solver, x0, record_wss)
        report.cycles += 1
        err = periodicity_error(cyc.end, x0, solver)
        if report.error_history:
            prev = report.error_history[-1]
            report.contraction_ratios.append(err / prev if prev > 0 else 0.0)
        report.error_history.append(err)
        if err < eps or not np.isfinite(err):
            report.converged = bool(np.isfinite(err))
            break
        if report.cycles == max_cycles:
            break
        if mode == "averaging":
            ws = AveragingWorkspace(cyc.mean_v, cyc.end[: solver.nv2] - x0[: solver.nv2])
            w, _ = averaging_correction(ws, solver)
            x0 = cyc.end.copy()
            x0[: solver.nv2] += w
        else:
            x0 = cyc.end
    report.stationary_solves = solver.counters["stationary_solves"] - stat0
    return solver.to_state(x0, 0.0), cyc, report
