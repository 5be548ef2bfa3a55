"""Slow-scale surface growth: reaction term, cycle average and macro step."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .geometry import C_MAX
from .grid import WallField, surface_stiffness_bands, wall_measure

log = logging.getLogger(__name__)

SCHEMES = ("semi_implicit_euler", "adams_bashforth2")


@dataclass(frozen=True)
class GrowthParams:
    alpha: float = 1e-3
    beta: float = 1.0
    lambda_c: float = 5e-7
    sigma_min: float = 5.0
    sigma_max: float = 8.0
    c_max: float = C_MAX

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.lambda_c < 0:
            raise ValueError("alpha, beta and lambda_c must be non-negative")
        if not self.sigma_min < self.sigma_max:
            raise ValueError("need sigma_min < sigma_max")
        if not 0.0 < self.c_max < 1.0:
            raise ValueError("c_max must lie in (0, 1)")


@dataclass
class GrowthField:
    c: WallField
    t: float = 0.0

    def __post_init__(self):
        v = self.c.values
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite growth values")


def _logistic(z):
    # 1 / (1 + exp(z)) without overflow warnings
    return 0.5 * (1.0 - np.tanh(0.5 * np.asarray(z, dtype=float)))


def clip(S, params: GrowthParams = GrowthParams()):
    """Activation band: close to 1 inside ``(sigma_min, sigma_max)``, 0 outside."""
    return _logistic(3.0 * (params.sigma_min - S)) * _logistic(3.0 * (S - params.sigma_max))


def reaction(c, sigma_wss, params: GrowthParams = GrowthParams()):
    """Instantaneous growth rate ``alpha / (1 + beta c) * clip(sigma_wss)``."""
    return params.alpha / (1.0 + params.beta * np.asarray(c, dtype=float)) * clip(sigma_wss, params)


def averaged_reaction(c: GrowthField, wss_traces, dt: float, params: GrowthParams = GrowthParams()) -> WallField:
    """Cycle average of the reaction with ``c`` frozen; trapezoidal in time."""
    traces = np.asarray(wss_traces, dtype=float)
    n = traces.shape[0] - 1
    if n < 1 or abs(n * dt - 1.0) > 1e-9:
        raise ValueError(f"{traces.shape[0]} traces at dt={dt} do not cover one period")
    if traces.shape[1:] != c.c.values.shape:
        raise ValueError("trace shape does not match the wall field")
    g = clip(traces, params)
    mean_g = dt * (g[1:-1].sum(axis=0) + 0.5 * (g[0] + g[-1]))
    rate = params.alpha / (1.0 + params.beta * c.c.values) * mean_g
    return c.c.with_values(rate)


def _solve_diffusion(c_rhs: np.ndarray, s: np.ndarray, K: float, lam: float) -> np.ndarray:
    """``(m + K lam S) c = m c_rhs`` per wall, tridiagonal."""
    m = wall_measure(s)
    lower, diag, upper = surface_stiffness_bands(s)
    out = np.empty_like(c_rhs)
    for w in range(c_rhs.shape[0]):
        ab = np.zeros((3, c_rhs.shape[1]))
        ab[0, 1:] = K * lam * upper[w, :-1]
        ab[1] = m[w] + K * lam * diag[w]
        ab[2, :-1] = K * lam * lower[w, 1:]
        out[w] = solve_banded((1, 1), ab, m[w] * c_rhs[w])
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("tridiagonal solve failed (degenerate arc lengths?)")
    return out


def macro_step(c_prev: GrowthField, rbar: WallField, K: float, params: GrowthParams = GrowthParams(),
               scheme: str = "semi_implicit_euler", rbar_prev: Optional[WallField] = None) -> GrowthField:
    """One step ``(c_n - c_{n-1})/K - lambda_c lap c_n = Rbar``.

    Diffusion is implicit, the reaction explicit.  ``adams_bashforth2`` uses
    ``(3 Rbar - Rbar_prev) / 2`` and falls back to Euler when no previous
    value exists.
    """
    if K <= 0:
        raise ValueError("macro step K must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    r = rbar.values
    if scheme == "adams_bashforth2" and rbar_prev is not None:
        r = 1.5 * rbar.values - 0.5 * rbar_prev.values
    rhs = c_prev.c.values + K * r
    s = c_prev.c.arclength
    new = _solve_diffusion(rhs, s, K, params.lambda_c) if params.lambda_c > 0 else rhs
    lo, hi = new.min(), new.max()
    if lo < 0.0 or hi > params.c_max:
        log.warning("growth clamped to [0, %.3g] (range was [%.3g, %.3g])", params.c_max, lo, hi)
        new = np.clip(new, 0.0, params.c_max)
    return GrowthField(c_prev.c.with_values(new), c_prev.t + K)
