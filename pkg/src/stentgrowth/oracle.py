"""Resolved reference: flow and growth advanced together at the micro step."""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .growth import GrowthField, macro_step, reaction
from .microflow import MicroSolver
from .multiscale import MacroSchedule, reference_flow, wall_profile


class BudgetExceeded(RuntimeError):
    pass


class ConfigMismatch(ValueError):
    pass


def sample_trace(trace, times) -> np.ndarray:
    """Per-period values at the given times (period starting there; the last
    period stands in for the horizon end)."""
    periods = np.clip(np.rint(np.asarray(times, dtype=float)).astype(int), 0, len(trace) - 1)
    return np.asarray(trace)[periods]


@dataclass
class ResolvedRun:
    final_c: np.ndarray  # (2, n)
    x1: np.ndarray
    snapshot_times: np.ndarray
    snapshots: list
    jout_trace: np.ndarray  # one value per period
    total_steps: int
    wall_time: float
    flow_reference: float
    config_hash: str
    physics_hash: str
    schedule: MacroSchedule

    @property
    def jout(self) -> np.ndarray:
        """``J_out`` at the macro times: mean over the period starting there."""
        return sample_trace(self.jout_trace, self.snapshot_times)

    def to_dict(self) -> dict:
        return {
            "kind": "resolved",
            "snapshot_times": self.snapshot_times.tolist(),
            "jout": self.jout.tolist(),
            "jout_trace": self.jout_trace.tolist(),
            "total_steps": self.total_steps,
            "wall_time": self.wall_time,
            "flow_reference": self.flow_reference,
            "config_hash": self.config_hash,
            "physics_hash": self.physics_hash,
            "final_c": self.final_c.tolist(),
            "x1": self.x1.tolist(),
        }


def run_resolved(cfg: RunConfig) -> ResolvedRun:
    """March flow and growth together over ``[0, T]`` with step ``k``.

    Each micro step evaluates the instantaneous reaction, advances the flow by
    one theta step and the growth by one step with explicit reaction.  The
    domain map is rebuilt every ``oracle.map_refresh`` steps (0 means once
    per period).
    """
    t_start = time.perf_counter()
    sched = MacroSchedule.from_config(cfg)
    gp = cfg.growth_params()
    k, M = sched.k, sched.M
    total = int(round(sched.T / k))
    if total > cfg.data["oracle"]["max_steps"]:
        raise BudgetExceeded(f"{total} micro steps exceed the budget of {cfg.data['oracle']['max_steps']}")
    refresh = cfg.data["oracle"]["map_refresh"] or M
    per = cfg.data["periodic"]

    solver = MicroSolver(cfg.problem(), cfg.fluid_params(), k)
    # the flow has long been pulsing when growth starts: begin on the
    # periodic solution of the ungrown vessel
    x, q_ref = reference_flow(solver, per["mode"], per["eps"], per["max_cycles"])

    c = GrowthField(solver.wall_field(np.zeros((2, solver.space.NX))), 0.0)

    snap_steps = {int(round(t / k)): t for t in sched.macro_times()}
    snapshots, snap_times = [], []
    jout = []
    flow_acc = 0.5 * solver.outflow(x)
    g_old = solver.load(0.0)
    for m in range(total):
        if m in snap_steps:
            snapshots.append(c.c.values.copy())
            snap_times.append(snap_steps[m])
        t = m * k
        rate = c.c.with_values(reaction(c.c.values, solver.wall_shear_stress(x), gp))
        g_new = solver.load(t + k)
        x = solver.step_vector(x, t, g_old, g_new)
        g_old = g_new
        c = macro_step(c, rate, k, gp)
        q = solver.outflow(x)
        if (m + 1) % M == 0:
            jout.append((flow_acc + 0.5 * q) * k / q_ref)
            flow_acc = 0.5 * q
        else:
            flow_acc += q
        if (m + 1) % refresh == 0:
            solver.set_profile(wall_profile(solver, c.c.values))
            c = GrowthField(solver.wall_field(c.c.values), (m + 1) * k)
    snapshots.append(c.c.values.copy())
    snap_times.append(sched.T)
    return ResolvedRun(c.c.values.copy(), c.c.x1.copy(), np.array(snap_times), snapshots, np.array(jout),
                       total, time.perf_counter() - t_start, q_ref, cfg.hash(), cfg.physics_hash(), sched)


def compare(resolved, multiscale) -> dict:
    """Errors of ``multiscale`` against ``resolved`` plus the wall-clock speedup.

    Either argument may be a resolved or multiscale run (or a report dict
    from either); they must share the physics hash.
    """
    r = resolved if isinstance(resolved, dict) else resolved.to_dict()
    m = multiscale if isinstance(multiscale, dict) else multiscale.to_dict()
    if r["physics_hash"] != m["physics_hash"]:
        raise ConfigMismatch("config mismatch: runs were made with different physical configurations")
    cr, cm = np.asarray(r["final_c"]), np.asarray(m["final_c"])
    if cr.shape != cm.shape:
        raise ConfigMismatch("config mismatch: wall discretisations differ")
    diff = cm - cr
    ref_inf = max(np.abs(cr).max(), 1e-300)
    ref_l2 = max(np.linalg.norm(cr), 1e-300)
    if "jout_trace" in r and "macro_times" in m:
        times = np.asarray(m["macro_times"])
        jr = sample_trace(r["jout_trace"], times)
    else:
        jr = np.asarray(r["jout"])
    jm = np.asarray(m["jout"])
    n = min(len(jr), len(jm))
    return {
        "rel_linf": float(np.abs(diff).max() / ref_inf),
        "rel_l2": float(np.linalg.norm(diff) / ref_l2),
        "jout_resolved": jr[:n].tolist(),
        "jout_multiscale": jm[:n].tolist(),
        "jout_max_abs_diff": float(np.abs(jr[:n] - jm[:n]).max()) if n else 0.0,
        "speedup": float(r["wall_time"] / m["wall_time"]),
    }
