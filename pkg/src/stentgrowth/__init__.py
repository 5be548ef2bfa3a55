"""Temporal multiscale simulation of stenosis growth driven by pulsatile flow."""

from .config import ConfigError, RunConfig
from .geometry import GeometryError, GeometryParams, composite_map
from .growth import GrowthField, GrowthParams, averaged_reaction, clip, macro_step, reaction
from .microflow import FluidParams, FlowState, MicroSolver, SolverError, cavity_problem, cycle_integrate, vessel_problem
from .multiscale import MacroSchedule, MultiscaleRun, NonConvergentSequence, richardson_rate, run_multiscale
from .oracle import ResolvedRun, compare, run_resolved
from .periodic import PeriodicSolveReport, averaging_correction, periodicity_error, solve_periodic

__version__ = "0.1.0"
