#!/usr/bin/env python3
"""
dynamics.py - Implicit midpoint time stepping, energy traces and decay fits

The midpoint rule (I - dt/2 A) U1 = (I + dt/2 A) U0 keeps the discrete energy
balance exact: E1 - E0 = dt * dissipation((U0 + U1)/2). With no damping the
energy is conserved, with damping it never grows, for every dt > 0.
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.stats import linregress

from modules.errors import FitError, ParameterError, SolverError
from modules.operators import DiscreteGenerator, SystemState, dissipation, energy
from modules.spectral import spectral_abscissa

logger = logging.getLogger(__name__)

SOLVE_TOL = 1e-8
MIN_FIT_SAMPLES = 10
MONOTONE_SLACK = 1e-10


# =============================================================================
# TIME STEPPING
# =============================================================================

class MidpointStepper:
    """
    One sparse LU of (I - dt/2 A_h), reused for every step.

    A negative dt steps backwards; that is only stable for conservative
    generators and is used to check time reversibility.
    """

    def __init__(self, gen: DiscreteGenerator, dt: float, tol: float = SOLVE_TOL):
        if not np.isfinite(dt) or dt == 0:
            raise ParameterError(f"time step must be nonzero and finite, got {dt}", dt=dt)
        self.gen = gen
        self.dt = float(dt)
        self.tol = tol
        I = sp.identity(gen.dimension, format='csc')
        A = gen.matrix.tocsc()
        self.lhs = sp.csc_matrix(I - 0.5 * dt * A)
        self.rhs = sp.csr_matrix(I + 0.5 * dt * A)
        try:
            self.lu = splu(self.lhs)
        except RuntimeError as e:
            raise SolverError(f"midpoint matrix could not be factorized: {e}", dt=dt)

    def step(self, state: SystemState) -> SystemState:
        self.gen.check_state(state)
        rhs = self.rhs @ state.data
        new = self.lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        residual = np.linalg.norm(self.lhs @ new - rhs)
        if residual > self.tol * scale:
            raise SolverError(f"midpoint solve residual {residual:.3e} above {self.tol:.1e} x |rhs|",
                              residual=float(residual / scale if scale else residual), dt=self.dt)
        return SystemState(new, state.n_blocks)


@lru_cache(maxsize=16)
def _stepper(gen: DiscreteGenerator, dt: float) -> MidpointStepper:
    return MidpointStepper(gen, dt)


def step_implicit_midpoint(gen: DiscreteGenerator, state: SystemState, dt: float) -> SystemState:
    """Advance one step of size dt > 0; the factorization is cached per (gen, dt)"""
    if not dt > 0:
        raise ParameterError(f"time step must be positive, got {dt}", dt=dt)
    return _stepper(gen, float(dt)).step(state)


# =============================================================================
# INITIAL DATA
# =============================================================================

def smooth_bump(gen: DiscreteGenerator, amplitude: float = 1.0) -> SystemState:
    """Product of sin(pi x / L) factors in the first displacement, everything else zero"""
    grid = gen.grid
    profile = np.prod(np.sin(np.pi * grid.nodes() / grid.L), axis=1) * amplitude
    blocks = [profile] + [np.zeros(grid.size)] * (gen.n_blocks - 1)
    return SystemState.from_blocks(*blocks)


def initial_state(gen: DiscreteGenerator, kind: str = 'bump', seed: int = 0,
                  amplitude: float = 1.0) -> SystemState:
    """Named initial data: 'bump', 'zero' or 'random' (standard normal, seeded)"""
    if kind == 'bump':
        return smooth_bump(gen, amplitude)
    if kind == 'zero':
        return gen.zero_state()
    if kind == 'random':
        rng = np.random.default_rng(seed)
        return SystemState(amplitude * rng.standard_normal(gen.dimension), gen.n_blocks)
    raise ParameterError(f"unknown initial data '{kind}'", initial=kind)


# =============================================================================
# TRACES
# =============================================================================

@dataclass
class EnergyTrace:
    times: np.ndarray
    energies: np.ndarray
    dissipations: np.ndarray
    dt: float = 0.0
    final_state: Optional[SystemState] = field(default=None, repr=False)

    CSV_HEADER = 't,energy,dissipation'

    def max_relative_increase(self) -> float:
        """Largest E_{k+1} - E_k relative to E_0 (<= 0 for a monotone trace)"""
        if len(self.energies) < 2:
            return 0.0
        ref = self.energies[0] if self.energies[0] > 0 else 1.0
        return float(np.max(np.diff(self.energies)) / ref)

    def is_non_increasing(self, slack: float = MONOTONE_SLACK) -> bool:
        return self.max_relative_increase() <= slack

    def energy_ratio(self) -> float:
        """E(t_final) / E(0), 0 for a zero trace"""
        return float(self.energies[-1] / self.energies[0]) if self.energies[0] > 0 else 0.0

    def to_csv(self, path: str):
        table = np.column_stack([self.times, self.energies, self.dissipations])
        np.savetxt(path, table, fmt='%.17g', delimiter=',', header=self.CSV_HEADER, comments='')

    def summary(self) -> Dict:
        return {
            'samples': int(len(self.times)),
            't_final': float(self.times[-1]),
            'dt': self.dt,
            'initial_energy': float(self.energies[0]),
            'final_energy': float(self.energies[-1]),
            'energy_ratio': self.energy_ratio(),
            'non_increasing': self.is_non_increasing(),
            'max_relative_increase': self.max_relative_increase(),
        }


def simulate(gen: DiscreteGenerator, initial: SystemState, dt: float, t_final: float,
             sample_every: int = 1) -> EnergyTrace:
    """
    Integrate U_t = A_h U from t = 0 to t_final (rounded to whole steps).

    Samples are taken at t = 0, every sample_every steps, and at the last step.
    """
    if not t_final > 0:
        raise ParameterError(f"t_final must be positive, got {t_final}", t_final=t_final)
    if not dt > 0:
        raise ParameterError(f"time step must be positive, got {dt}", dt=dt)
    if int(sample_every) != sample_every or sample_every < 1:
        raise ParameterError(f"sample_every must be a positive integer, got {sample_every}")
    gen.check_state(initial)
    steps = max(int(math.ceil(t_final / dt - 1e-9)), 1)
    stepper = _stepper(gen, float(dt))

    times, energies, rates = [0.0], [energy(gen, initial)], [dissipation(gen, initial)]
    state = initial
    report_every = max(steps // 10, 1)
    for k in range(1, steps + 1):
        state = stepper.step(state)
        if k % sample_every == 0 or k == steps:
            times.append(k * dt)
            energies.append(energy(gen, state))
            rates.append(dissipation(gen, state))
        if k % report_every == 0:
            logger.debug(f"midpoint step {k}/{steps}, E = {energies[-1]:.6e}")

    trace = EnergyTrace(np.array(times), np.array(energies), np.array(rates), float(dt), state)
    if not trace.is_non_increasing():
        logger.warning(f"energy grew by {trace.max_relative_increase():.3e} x E(0) during the run")
    logger.info(f"simulated {steps} steps to t={steps * dt:g}, E ratio {trace.energy_ratio():.3e}")
    return trace


# =============================================================================
# DECAY FITS
# =============================================================================

class DecayModel(str, Enum):
    POLYNOMIAL = 'polynomial'
    EXPONENTIAL = 'exponential'


@dataclass(frozen=True)
class DecayFit:
    """E(t) ~ constant * t^(-exponent) or constant * exp(-exponent t) over window"""

    model: DecayModel
    exponent: float
    constant: float
    r_squared: float
    window: Tuple[float, float]
    samples: int
    truncated: bool = False

    def predict(self, t):
        t = np.asarray(t, dtype=float)
        if self.model is DecayModel.POLYNOMIAL:
            return self.constant * t ** (-self.exponent)
        return self.constant * np.exp(-self.exponent * t)

    def to_dict(self) -> Dict:
        return {
            'model': self.model.value,
            'exponent': self.exponent,
            'constant': self.constant,
            'r_squared': self.r_squared,
            'window': list(self.window),
            'samples': self.samples,
            'truncated': self.truncated,
        }


def fit_decay_rate(trace: EnergyTrace, window: Tuple[float, float],
                   model=DecayModel.POLYNOMIAL) -> DecayFit:
    """
    Least-squares line through (log t, log E) or (t, log E) on the window.

    Samples after the first exact zero inside the window are dropped with a
    warning. Needs MIN_FIT_SAMPLES positive samples.
    """
    model = DecayModel(model)
    t_lo, t_hi = map(float, window)
    if not t_lo < t_hi:
        raise FitError(f"fit window needs t_lo < t_hi, got {window}", window=list(window))
    mask = (trace.times >= t_lo) & (trace.times <= t_hi)
    if model is DecayModel.POLYNOMIAL:
        mask &= trace.times > 0
    t = trace.times[mask]
    E = trace.energies[mask]
    if t.size == 0:
        raise FitError(f"no samples inside window {window}", window=list(window))

    truncated = False
    nonpositive = np.flatnonzero(E <= 0)
    if nonpositive.size:
        cut = nonpositive[0]
        logger.warning(f"energy reaches zero at t={t[cut]:g} inside the fit window, truncating")
        t, E, truncated = t[:cut], E[:cut], True
    if t.size < MIN_FIT_SAMPLES:
        raise FitError(f"fit window holds {t.size} positive samples, need {MIN_FIT_SAMPLES}",
                       window=list(window), samples=int(t.size))

    x = np.log(t) if model is DecayModel.POLYNOMIAL else t
    fit = linregress(x, np.log(E))
    r_squared = float(fit.rvalue ** 2) if np.isfinite(fit.rvalue) else 0.0
    return DecayFit(model, float(-fit.slope), float(np.exp(fit.intercept)), r_squared,
                    (float(t[0]), float(t[-1])), int(t.size), truncated)


@dataclass(frozen=True)
class DecayCaveat:
    """Spectral abscissa of A_h and the horizon t* where its exponential tail takes over"""

    abscissa: float
    t_star: float
    tail_decades: float

    @property
    def default_window(self) -> Tuple[float, float]:
        return 0.1 * self.t_star, 0.8 * self.t_star

    def to_dict(self) -> Dict:
        return {
            'abscissa': self.abscissa,
            't_star': self.t_star if np.isfinite(self.t_star) else None,
            'tail_decades': self.tail_decades,
            'default_window': list(self.default_window) if np.isfinite(self.t_star) else None,
        }


def semidiscrete_decay_caveat(gen: DiscreteGenerator, tail_decades: float = 3.0) -> DecayCaveat:
    """
    The finite grid eventually decays like exp(2 s t), s the spectral abscissa.

    t* is when that slowest mode has lost tail_decades decades of energy:
    t* = tail_decades ln(10) / (2 |s|). Conservative generators give s = 0
    and t* = inf. Polynomial fits should end before t*.
    """
    if gen.is_conservative:
        return DecayCaveat(0.0, math.inf, tail_decades)
    s = spectral_abscissa(gen)
    scale = max(abs(gen.matrix).max(), 1.0)
    if s >= -1e-12 * scale:
        logger.warning(f"spectral abscissa {s:.3e} is not negative, no finite horizon")
        return DecayCaveat(min(s, 0.0) if s < 0 else 0.0, math.inf, tail_decades)
    t_star = tail_decades * math.log(10.0) / (2.0 * abs(s))
    logger.info(f"spectral abscissa {s:.6e}, horizon t* = {t_star:.4g}")
    return DecayCaveat(float(s), float(t_star), tail_decades)
