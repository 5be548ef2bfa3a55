"""Macro driver: explicit/implicit multiscale iteration over ``[0, T]``."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import geometry as geo
from .config import RunConfig
from .growth import GrowthField, averaged_reaction, macro_step
from .microflow import MicroSolver
from .periodic import PeriodicSolveReport, solve_periodic

log = logging.getLogger(__name__)


class NonConvergentSequence(ValueError):
    pass


class PeriodicSolveFailed(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class MacroSchedule:
    T: float
    N: int
    k: float

    def __post_init__(self):
        if self.T <= 0 or self.N < 1 or self.k <= 0:
            raise ValueError("need T > 0, N >= 1, k > 0")
        if abs(round(1.0 / self.k) * self.k - 1.0) > 1e-9:
            raise ValueError("k must divide the 1 s period")
        if self.K < 10 * self.k:
            raise ValueError(f"macro step K={self.K} is not large against k={self.k}")

    @property
    def K(self) -> float:
        return self.T / self.N

    @property
    def M(self) -> int:
        return int(round(1.0 / self.k))

    def macro_times(self) -> np.ndarray:
        return self.K * np.arange(self.N + 1)

    @classmethod
    def from_config(cls, cfg: RunConfig) -> "MacroSchedule":
        s = cfg.data["schedule"]
        return cls(s["T"], s["N"], s["k"])


@dataclass
class StepRecord:
    n: int
    t: float
    jout: float  # on the domain of c_{n-1}
    report: PeriodicSolveReport
    c_max: float
    wall_time: float


@dataclass
class MultiscaleRun:
    schedule: MacroSchedule
    records: list
    c_final: GrowthField
    snapshots: list  # c values at t_0 .. t_N, each (2, n)
    jout_final: float  # on the domain of c_N
    flow_reference: float
    config_hash: str
    physics_hash: str
    wall_time: float
    warm_starts: list = field(default_factory=list, repr=False)
    rbars: list = field(default_factory=list, repr=False)

    @property
    def jout(self) -> np.ndarray:
        """``J_out`` at the macro times ``t_0 .. t_N``."""
        return np.array([r.jout for r in self.records] + [self.jout_final])

    @property
    def final_c(self) -> np.ndarray:
        return self.c_final.c.values

    @property
    def times(self) -> np.ndarray:
        return self.schedule.macro_times()

    def to_dict(self) -> dict:
        return {
            "kind": "multiscale",
            "schedule": {"T": self.schedule.T, "N": self.schedule.N, "K": self.schedule.K, "k": self.schedule.k},
            "macro_times": self.times.tolist(),
            "jout": self.jout.tolist(),
            "cycles": [r.report.cycles for r in self.records],
            "stationary_solves": [r.report.stationary_solves for r in self.records],
            "step_wall_time": [r.wall_time for r in self.records],
            "c_max": [r.c_max for r in self.records],
            "flow_reference": self.flow_reference,
            "wall_time": self.wall_time,
            "config_hash": self.config_hash,
            "physics_hash": self.physics_hash,
            "final_c": self.final_c.tolist(),
            "x1": self.c_final.c.x1.tolist(),
        }


def wall_profile(solver: MicroSolver, values: np.ndarray) -> geo.WallNodeProfile:
    return geo.WallNodeProfile(solver.coef.wall_ref[0, :, 0], values)


def outflow_functional(cycle, reference: Optional[float] = None) -> float:
    """Period-mean outflow rate, divided by ``reference`` when given."""
    q = cycle.mean_outflow()
    return q if reference is None else q / reference


def reference_flow(solver: MicroSolver, mode="averaging", eps=1e-8, max_cycles=200):
    """Periodic solve on the ungrown domain; returns (state vector, mean outflow)."""
    solver.set_profile(wall_profile(solver, np.zeros((2, solver.space.NX))))
    state, cyc, rep = solve_periodic(solver, None, mode, eps, max_cycles)
    if not rep.converged:
        raise PeriodicSolveFailed("reference periodic solve did not converge")
    return solver.to_vector(state), cyc.mean_outflow()


def run_multiscale(cfg: RunConfig, c0: Optional[np.ndarray] = None) -> MultiscaleRun:
    """Macro loop: rebuild map, periodic solve, average reaction, macro step."""
    t_start = time.perf_counter()
    sched = MacroSchedule.from_config(cfg)
    gp = cfg.growth_params()
    per = cfg.data["periodic"]
    scheme = cfg.data["schedule"]["scheme"]
    solver = MicroSolver(cfg.problem(), cfg.fluid_params(), sched.k)

    x, q_ref = reference_flow(solver, per["mode"], per["eps"], per["max_cycles"])
    nw = solver.space.NX
    c_vals = np.zeros((2, nw)) if c0 is None else np.array(c0, dtype=float).reshape(2, nw)

    records, snapshots, warm, rbars = [], [c_vals.copy()], [], []
    c = None
    rbar_prev = None
    for n in range(1, sched.N + 1):
        t0 = time.perf_counter()
        solver.set_profile(wall_profile(solver, c_vals))
        c = GrowthField(solver.wall_field(c_vals), (n - 1) * sched.K)
        warm.append(x.copy())
        state, cyc, rep = solve_periodic(solver, x, per["mode"], per["eps"], per["max_cycles"])
        if not rep.converged:
            partial = dict(records=records, step=n, report=rep.to_dict())
            raise PeriodicSolveFailed(f"periodic solve did not converge at macro step {n}", partial)
        x = solver.to_vector(state)
        rbar = averaged_reaction(c, cyc.wss, sched.k, gp)
        c = macro_step(c, rbar, sched.K, gp, scheme, rbar_prev)
        rbar_prev = rbar
        rbars.append(rbar.values.copy())
        c_vals = c.c.values
        snapshots.append(c_vals.copy())
        records.append(StepRecord(n, (n - 1) * sched.K, outflow_functional(cyc, q_ref), rep,
                                  float(c_vals.max()), time.perf_counter() - t0))
        log.info("macro step %d/%d: cycles=%d jout=%.6f cmax=%.4f", n, sched.N, rep.cycles,
                 records[-1].jout, records[-1].c_max)

    solver.set_profile(wall_profile(solver, c_vals))
    _, cyc, rep = solve_periodic(solver, x, per["mode"], per["eps"], per["max_cycles"])
    if not rep.converged:
        raise PeriodicSolveFailed("final periodic solve did not converge", dict(records=records))
    c_final = GrowthField(solver.wall_field(c_vals), sched.T)
    return MultiscaleRun(sched, records, c_final, snapshots, outflow_functional(cyc, q_ref), q_ref,
                         cfg.hash(), cfg.physics_hash(), time.perf_counter() - t_start, warm, rbars)


def replay_step(cfg: RunConfig, run: MultiscaleRun, n: int) -> np.ndarray:
    """Recompute ``c_n`` from the recorded inputs of step ``n`` (1-based)."""
    sched = run.schedule
    gp = cfg.growth_params()
    per = cfg.data["periodic"]
    solver = MicroSolver(cfg.problem(), cfg.fluid_params(), sched.k)
    c_vals = run.snapshots[n - 1]
    solver.set_profile(wall_profile(solver, c_vals))
    c = GrowthField(solver.wall_field(c_vals), (n - 1) * sched.K)
    _, cyc, _ = solve_periodic(solver, run.warm_starts[n - 1], per["mode"], per["eps"], per["max_cycles"])
    rbar = averaged_reaction(c, cyc.wss, sched.k, gp)
    prev = None
    if n >= 2:
        prev = c.c.with_values(run.rbars[n - 2])
    return macro_step(c, rbar, sched.K, gp, cfg.data["schedule"]["scheme"], prev).c.values


def richardson_rate(J1: float, J2: float, J3: float):
    """Observed order and Aitken limit from values at ``h, h/2, h/4``."""
    d1, d2 = J1 - J2, J2 - J3
    denom = J1 - 2.0 * J2 + J3
    scale = max(abs(J1), abs(J2), abs(J3), 1e-300)
    if d1 == 0.0 or d2 == 0.0 or abs(denom) <= 1e-14 * scale or (d1 > 0) != (d2 > 0):
        raise NonConvergentSequence(f"non-convergent sequence ({J1}, {J2}, {J3})")
    rate = math.log2(d1 / d2)
    extrapolated = (J1 * J3 - J2 * J2) / denom
    return rate, extrapolated
