import json

import numpy as np
import pytest
import scipy.sparse.linalg as spla

from stentgrowth.grid import Grid, VectorField
from stentgrowth.microflow import FluidParams, MicroSolver, PressureProfile, cavity_problem, vessel_problem
from stentgrowth.periodic import AveragingWorkspace, averaging_correction, periodicity_error, solve_periodic

EPS = 1e-8


@pytest.fixture(scope="module")
def cavity():
    return MicroSolver(cavity_problem(16), FluidParams(nu_f=0.05), 0.02)


@pytest.fixture(scope="module")
def cavity_runs(cavity):
    out = {}
    for mode in ("averaging", "forward"):
        out[mode] = solve_periodic(cavity, None, mode, EPS, 300, record_wss=False)
    return out


# --- periodicity error --------------------------------------------------------

def test_periodicity_error_of_identical_fields():
    g = Grid(8, 8, 1.0, 1.0, 0.0, 0.0).nodes()
    v = VectorField(np.random.default_rng(0).normal(size=(2,) + g.shape), g)
    assert periodicity_error(v, v) == 0.0


def test_periodicity_error_constant_on_unit_domain():
    g = Grid(8, 8, 1.0, 1.0, 0.0, 0.0).nodes()
    a = VectorField(np.zeros((2,) + g.shape), g)
    b = VectorField(np.stack([np.ones(g.shape), np.zeros(g.shape)]), g)
    assert periodicity_error(b, a) == pytest.approx(1.0, rel=1e-12)


def test_periodicity_error_grid_mismatch():
    g1, g2 = Grid(4, 4).nodes(), Grid(6, 4).nodes()
    with pytest.raises(ValueError):
        periodicity_error(VectorField(np.zeros((2,) + g1.shape), g1), VectorField(np.zeros((2,) + g2.shape), g2))


# --- averaging correction ---------------------------------------------------------

def test_zero_defect_gives_zero_correction(cavity):
    w, q = averaging_correction(AveragingWorkspace(np.zeros(cavity.nv2), np.zeros(cavity.nv2)), cavity)
    assert np.all(w == 0.0) and np.all(q == 0.0)


def test_gradient_defect_is_absorbed_by_pressure(cavity):
    # a defect whose weak form is a discrete gradient leaves the velocity untouched
    phi = np.random.default_rng(1).normal(size=cavity.B.shape[0])
    d = spla.spsolve(cavity.M.tocsc(), cavity.B.T @ phi)
    w, q = averaging_correction(AveragingWorkspace(np.zeros(cavity.nv2), d), cavity)
    assert np.abs(w).max() <= 1e-12 * np.abs(d).max()
    assert np.allclose(q - q.mean(), -(phi - phi.mean()), atol=1e-10)


def test_correction_is_linear_in_defect(cavity):
    d = np.random.default_rng(2).normal(size=cavity.nv2)
    w1, _ = averaging_correction(AveragingWorkspace(np.zeros(cavity.nv2), d), cavity)
    w3, _ = averaging_correction(AveragingWorkspace(np.zeros(cavity.nv2), 3.0 * d), cavity)
    assert np.allclose(w3, 3.0 * w1, rtol=1e-10, atol=1e-14 * np.abs(w3).max())


def test_correction_is_divergence_free(cavity):
    d = np.random.default_rng(3).normal(size=cavity.nv2)
    w, _ = averaging_correction(AveragingWorkspace(np.zeros(cavity.nv2), d), cavity)
    assert cavity.divergence_residual(w) <= 1e-8


# --- periodic solves -------------------------------------------------------------

def test_averaging_contracts(cavity_runs):
    rep = cavity_runs["averaging"][2]
    assert rep.converged
    assert rep.error_history[-1] < EPS
    assert max(rep.contraction_ratios) <= 0.5
    assert rep.geometric_mean_ratio() <= 0.42


def test_averaging_beats_forward(cavity_runs):
    a, f = cavity_runs["averaging"][2], cavity_runs["forward"][2]
    assert f.converged
    assert a.cycles <= 0.5 * f.cycles


def test_forward_error_monotone_after_transient(cavity_runs):
    e = np.asarray(cavity_runs["forward"][2].error_history)
    assert np.all(np.diff(e[3:]) < 0.0)


def test_modes_reach_same_fixed_point(cavity, cavity_runs):
    sa, sf = cavity_runs["averaging"][0], cavity_runs["forward"][0]
    assert periodicity_error(cavity.to_vector(sa), cavity.to_vector(sf), cavity) < 10 * EPS


def test_one_stationary_solve_per_correction(cavity_runs):
    a, f = cavity_runs["averaging"][2], cavity_runs["forward"][2]
    # the converged cycle is not corrected
    assert a.stationary_solves == a.cycles - 1
    assert f.stationary_solves == 0


def test_non_convergence_is_reported(cavity):
    _, cyc, rep = solve_periodic(cavity, None, "forward", EPS, 3, record_wss=False)
    assert not rep.converged and rep.cycles == 3
    assert cyc is not None


def test_invalid_arguments(cavity):
    with pytest.raises(ValueError):
        solve_periodic(cavity, None, "shooting")
    with pytest.raises(ValueError):
        solve_periodic(cavity, None, "forward", eps=0.0)
    with pytest.raises(ValueError):
        solve_periodic(cavity, None, "forward", max_cycles=0)


def test_vessel_periodic_solve_with_wss_traces():
    s = MicroSolver(vessel_problem(28, 4), FluidParams(), 0.05)
    state, cyc, rep = solve_periodic(s, None, "forward", EPS, 50)
    assert rep.converged
    assert cyc.wss.shape == (21, 2, s.space.NX)
    # the threshold is met by the returned initial state
    again = cyc.end
    assert periodicity_error(again, s.to_vector(state), s) < EPS


def test_rest_problem_converges_in_one_cycle():
    s = MicroSolver(vessel_problem(16, 4, pressure=PressureProfile.constant(0.0)), FluidParams(), 0.1)
    _, _, rep = solve_periodic(s, None, "averaging", EPS, 5)
    assert rep.converged and rep.cycles == 1


def test_report_serialisation(tmp_path, cavity_runs):
    rep = cavity_runs["averaging"][2]
    rep.write_json(tmp_path / "r.json")
    rep.write_csv(tmp_path / "e.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["mode"] == "averaging" and data["cycles"] == rep.cycles
    assert data["error_history"] == rep.error_history
    lines = (tmp_path / "e.csv").read_text().splitlines()
    assert lines[0] == "cycle,periodicity_error" and len(lines) == rep.cycles + 1
