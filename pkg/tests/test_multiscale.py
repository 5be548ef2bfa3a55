import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stentgrowth import geometry as geo
from stentgrowth.config import RunConfig
from stentgrowth.microflow import FluidParams, MicroSolver, PressureProfile, vessel_problem
from stentgrowth.multiscale import (MacroSchedule, NonConvergentSequence, outflow_functional, reference_flow,
                                    replay_step, richardson_rate, run_multiscale, wall_profile)
from stentgrowth.periodic import periodicity_error, solve_periodic

SMALL = {"grid.nx": 56, "grid.ny": 8, "schedule.k": 0.05, "schedule.T": 900.0, "schedule.N": 16}
STRAIGHT = geo.GeometryParams(geo.ReferenceDomain(), geo.StentParams(0.0, 50.0), geo.CenterlineParams(0.0, 4.0))


def small(**extra):
    return RunConfig.default().with_overrides(**{**SMALL, **extra})


@pytest.fixture(scope="module")
def small_run():
    cfg = small()
    return cfg, run_multiscale(cfg)


# --- schedule ---------------------------------------------------------------------

def test_schedule_invariants():
    s = MacroSchedule(900.0, 16, 0.02)
    assert s.K == pytest.approx(56.25) and s.M == 50
    assert s.macro_times()[-1] == pytest.approx(900.0)
    with pytest.raises(ValueError):
        MacroSchedule(900.0, 16, 0.03)
    with pytest.raises(ValueError):
        MacroSchedule(1.0, 10, 0.02)


# --- richardson rate -------------------------------------------------------------

def test_richardson_table_rows():
    rate, ext = richardson_rate(0.9359, 0.9138, 0.9043)
    assert rate == pytest.approx(1.22, abs=0.01)
    assert ext == pytest.approx(0.8971, abs=2e-4)
    rate, ext = richardson_rate(0.9132, 0.9138, 0.9140)
    assert rate == pytest.approx(1.58, abs=0.01)
    # the extrapolated value of this row is about 0.914
    assert ext == pytest.approx(0.914, abs=2e-4)


@settings(max_examples=60, deadline=None)
@given(jstar=st.floats(-10, 10), C=st.floats(0.01, 10) | st.floats(-10, -0.01), p=st.floats(0.5, 3.0))
def test_richardson_exact_on_geometric_sequence(jstar, C, p):
    J = [jstar + C * 2.0 ** (-i * p) for i in range(3)]
    rate, ext = richardson_rate(*J)
    assert rate == pytest.approx(p, abs=1e-9)
    assert ext == pytest.approx(jstar, abs=1e-9 * max(1.0, abs(C)))


def test_richardson_rejects_bad_sequences():
    with pytest.raises(NonConvergentSequence, match="non-convergent sequence"):
        richardson_rate(1.0, 0.9, 0.95)
    with pytest.raises(NonConvergentSequence):
        richardson_rate(1.0, 1.0, 0.9)
    with pytest.raises(NonConvergentSequence):
        richardson_rate(1.0, 0.9, 0.8)


# --- outflow functional ---------------------------------------------------------

def test_outflow_reference_is_one():
    s = MicroSolver(vessel_problem(28, 4), FluidParams(), 0.05)
    _, q_ref = reference_flow(s, "forward")
    _, cyc, _ = solve_periodic(s, None, "forward", 1e-8, 50, record_wss=False)
    assert outflow_functional(cyc, q_ref) == pytest.approx(1.0, rel=1e-9)


def test_cubic_law_for_uniform_narrowing():
    # plane channel: flow rate scales with the cube of the width
    s = MicroSolver(vessel_problem(56, 8, STRAIGHT), FluidParams(), 0.05)
    _, q_ref = reference_flow(s, "forward")
    s.set_profile(geo.ConstantProfile(0.1))
    _, cyc, rep = solve_periodic(s, None, "forward", 1e-8, 50, record_wss=False)
    assert rep.converged
    assert outflow_functional(cyc, q_ref) == pytest.approx(0.9**3, rel=0.10)
    assert outflow_functional(cyc, q_ref) == pytest.approx(0.9**3, rel=1e-6)


def test_zero_pressure_gives_zero_outflow():
    s = MicroSolver(vessel_problem(28, 4), FluidParams(), 0.05)
    _, q_ref = reference_flow(s, "forward")
    s0 = MicroSolver(vessel_problem(28, 4, pressure=PressureProfile.constant(0.0)), FluidParams(), 0.05)
    _, cyc, _ = solve_periodic(s0, None, "forward", 1e-8, 5, record_wss=False)
    assert outflow_functional(cyc) == 0.0
    assert outflow_functional(cyc, q_ref) == 0.0


# --- macro runs ------------------------------------------------------------------

def test_frozen_growth_without_reaction():
    cfg = small(**{"growth.alpha": 0.0, "schedule.N": 4, "schedule.T": 40.0})
    run = run_multiscale(cfg)
    for snap in run.snapshots:
        assert np.all(snap == 0.0)
    assert all(r.report.cycles <= 2 for r in run.records)
    assert np.allclose(run.jout, 1.0, rtol=1e-9)


def test_record_shapes(small_run):
    cfg, run = small_run
    assert len(run.records) == 16 and len(run.snapshots) == 17
    assert len(run.jout) == 17 and run.jout[0] == pytest.approx(1.0, rel=1e-9)
    assert all(r.wall_time > 0 for r in run.records)
    d = run.to_dict()
    assert d["physics_hash"] == cfg.physics_hash() and len(d["macro_times"]) == 17


def test_outflow_decreases_as_stenosis_grows(small_run):
    _, run = small_run
    assert np.all(np.diff(run.jout) <= 0.0)
    assert run.final_c.max() > 0.1


def test_growth_mean_is_monotone(small_run):
    _, run = small_run
    means = [s.mean() for s in run.snapshots]
    assert np.all(np.diff(means) >= 0.0)


def test_replay_reproduces_each_step(small_run):
    cfg, run = small_run
    for n in (1, 2, 9, 16):
        assert np.array_equal(replay_step(cfg, run, n), run.snapshots[n])


def test_rerun_is_bit_identical(small_run):
    cfg, run = small_run
    again = run_multiscale(cfg)
    assert np.array_equal(again.final_c, run.final_c)
    assert np.array_equal(again.jout, run.jout)


def test_warm_start_reaches_cold_fixed_point(small_run):
    cfg, run = small_run
    s = MicroSolver(cfg.problem(), cfg.fluid_params(), 0.05)
    s.set_profile(wall_profile(s, run.snapshots[8]))
    warm, _, rw = solve_periodic(s, run.warm_starts[8], "forward", 1e-8, 200, record_wss=False)
    cold, _, rc = solve_periodic(s, None, "forward", 1e-8, 200, record_wss=False)
    assert rw.converged and rc.converged and rw.cycles <= rc.cycles
    assert rw.error_history[0] < rc.error_history[0]
    assert periodicity_error(s.to_vector(warm), s.to_vector(cold), s) < 1e-7


def test_macro_step_halving_first_order(small_run):
    # first-order macro scheme: the final c difference halves with K
    _, r16 = small_run
    r8, r32 = run_multiscale(small(**{"schedule.N": 8})), run_multiscale(small(**{"schedule.N": 32}))
    ratio = np.abs(r8.final_c - r16.final_c).max() / np.abs(r16.final_c - r32.final_c).max()
    assert 1.7 <= ratio <= 2.5


def test_surface_diffusion_is_only_a_stabiliser(small_run):
    _, run = small_run
    half = run_multiscale(small(**{"growth.lambda_c": 0.5 * RunConfig.default().get("growth.lambda_c")}))
    rel = np.abs(half.final_c - run.final_c).max() / np.abs(run.final_c).max()
    assert rel < 5e-3


def test_ab2_variant_runs(small_run):
    _, r16 = small_run
    ab = run_multiscale(small(**{"schedule.scheme": "adams_bashforth2"}))
    assert np.abs(ab.final_c - r16.final_c).max() < 0.1 * r16.final_c.max()
    assert math.isfinite(ab.jout[-1])
