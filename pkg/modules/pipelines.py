#!/usr/bin/env python3
"""
pipelines.py - The four experiment pipelines bound to an ExperimentConfig

Each runner takes a validated config and a run directory, writes its CSV and
JSON artifacts there, and returns a PipelineResult for the manifest.
"""

import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from modules.dynamics import DecayModel, fit_decay_rate, initial_state, semidiscrete_decay_caveat, simulate
from modules.errors import KVLabError, ParameterError, PipelineError
from modules.experiment_config import ExperimentConfig, config_hash, resolve_workers
from modules.experiment_logger import ExperimentLogger
from modules.geometry import CoefficientField, build_grid, indicator_field, preset_config
from modules.operators import (KELVIN_VOIGT, VISCOUS_COUPLED, DiscreteGenerator,
                               assemble_generator, assemble_viscous_generator, export_coo)
from modules.resolvent import LambdaSchedule, fit_growth_exponent, sweep, theorem_target
from modules.spectral import (dirichlet_modes, discrete_modes, generator_spectrum, imaginary_axis_gap,
                              quartic_spectrum, spectrum_distance, verify_asymptotics)

logger = logging.getLogger(__name__)

# slack on one-sided exponent checks
DECAY_FIT_MARGIN = 0.05
GROWTH_FIT_MARGIN = 0.5
SCALING_TOLERANCE = 0.2
EXPONENTIAL_R_SQUARED = 0.99


@dataclass
class PipelineResult:
    artifacts: List[str] = field(default_factory=list)
    results: Dict = field(default_factory=dict)


def write_json(path: str, data: Dict):
    with open(path, 'w') as f:
        json.dump(data, f, indent=2, default=_json_default)


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, complex):
        return [value.real, value.imag]
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


# =============================================================================
# GENERATORS FROM CONFIGS
# =============================================================================

def build_fields(config: ExperimentConfig, grid) -> Tuple[CoefficientField, CoefficientField]:
    """(b, c) on the grid, from the preset or the explicit regions"""
    if config.preset:
        return preset_config(config.preset, grid, config.coefficients['preset_params'])
    coeffs = config.coefficients
    b = indicator_field(grid, config.b_regions(), coeffs['b']['value'], name='b')
    c = indicator_field(grid, config.c_regions(), coeffs['c']['value'], name='c')
    return b, c


def build_generator(config: ExperimentConfig) -> DiscreteGenerator:
    """
    Generator of the configured system.

    viscous_coupled uses the b field as the viscous damping d;
    viscous_single damps with d = 1 on the support of c.
    """
    grid = build_grid(config.domain, config.n)
    b, c = build_fields(config, grid)
    a = config.coefficients['a']
    if config.system == KELVIN_VOIGT:
        return assemble_generator(grid, a, b, c)
    if config.system == VISCOUS_COUPLED:
        d = CoefficientField(grid, b.values, name='d')
        return assemble_viscous_generator(grid, a, d, c)
    d = CoefficientField(grid, c.support.astype(float), name='d')
    return assemble_viscous_generator(grid, a, d, single=True)


def _target(config: ExperimentConfig) -> Optional[Dict]:
    target = theorem_target(config.target_key, config.system)
    return target.to_dict() if target is not None else None


# =============================================================================
# RUNNERS
# =============================================================================

def run_simulate(config: ExperimentConfig, run_dir: str, workers: int) -> PipelineResult:
    p = config.params
    gen = build_generator(config)
    start = initial_state(gen, p['initial'], seed=config.seed, amplitude=p['amplitude'])
    trace = simulate(gen, start, p['dt'], p['t_final'], p['sample_every'])
    out = PipelineResult()
    trace.to_csv(os.path.join(run_dir, 'energy_trace.csv'))
    out.artifacts.append('energy_trace.csv')
    if p['export_matrix']:
        count = export_coo(gen.matrix, os.path.join(run_dir, 'generator_coo.txt'))
        out.artifacts.append('generator_coo.txt')
        logger.info(f"exported {count} generator entries")
    out.results = {'generator': gen.describe(), 'trace': trace.summary()}
    return out


def _non_uniform_check(report, modes, starts: List[int], width: int) -> List[Dict]:
    """Max |Re| over consecutive mode windows against the mu^-2 prediction"""
    rows = []
    for k_lo in starts:
        rows.append({'k_lo': k_lo, 'k_hi': k_lo + width,
                     'max_abs_re': report.window_max_abs_re(k_lo, k_lo + width),
                     'mu_lo': float(modes.mus[k_lo - 1])})
    for prev, row in zip(rows, rows[1:]):
        observed = row['max_abs_re'] / prev['max_abs_re']
        predicted = (prev['mu_lo'] / row['mu_lo']) ** 2
        row['ratio'] = observed
        row['predicted_ratio'] = predicted
        row['decreasing'] = observed < 1.0
        row['scaling_ok'] = abs(observed / predicted - 1.0) <= SCALING_TOLERANCE
    return rows


def run_spectrum(config: ExperimentConfig, run_dir: str, workers: int) -> PipelineResult:
    p = config.params
    coeffs = config.coefficients
    a, b, c = coeffs['a'], coeffs['b']['value'], coeffs['c']['value']
    modes = dirichlet_modes(config.domain, p['modes'])
    report = verify_asymptotics(a, b, c, modes, p['k_min'], workers=workers)
    out = PipelineResult()
    report.to_csv(os.path.join(run_dir, 'spectrum_report.csv'))
    out.artifacts.append('spectrum_report.csv')

    k_lo, k_hi = p['gap_window']
    window_gap = report.max_gap(k_lo, k_hi)
    summary = dict(report.summary())
    summary['gap_window'] = [k_lo, k_hi]
    summary['gap_window_max_rel_gap'] = window_gap
    summary['gap_ceiling'] = p['gap_ceiling']
    summary['gap_pass'] = bool(window_gap < p['gap_ceiling'])
    starts = [k for k in p['decay_windows'] if k >= p['k_min']]
    summary['non_uniform'] = _non_uniform_check(report, modes, starts, p['window_width']) if starts else []

    if p['cross_validate']:
        gen = build_generator(config)
        dense = generator_spectrum(gen)
        per_mode = quartic_spectrum(a, b, c, discrete_modes(gen.grid).mus, workers=workers)
        distance = spectrum_distance(dense, per_mode)
        summary['cross_validation'] = {
            'n': config.n,
            'eigenvalues': int(dense.size),
            'max_distance': distance,
            'relative_distance': distance / max(float(np.abs(dense).max()), 1.0),
            'imaginary_axis_gap': imaginary_axis_gap(gen),
        }

    write_json(os.path.join(run_dir, 'spectrum_summary.json'), summary)
    out.artifacts.append('spectrum_summary.json')
    out.results = summary
    return out


def _schedule(config: ExperimentConfig) -> LambdaSchedule:
    s = config.params['schedule']
    if s['kind'] == 'log_uniform':
        return LambdaSchedule.log_uniform(s['lo'], s['hi'], s['count'])
    modes = dirichlet_modes(config.domain, s['k_hi']).window(s['k_lo'], s['k_hi'])
    return LambdaSchedule.at_modes(modes, continuous=s['continuous'])


def run_resolvent(config: ExperimentConfig, run_dir: str, workers: int) -> PipelineResult:
    p = config.params
    gen = build_generator(config)
    schedule = _schedule(config)
    result = sweep(gen, schedule, workers=workers, tol=p['tol'])
    out = PipelineResult()
    result.to_csv(os.path.join(run_dir, 'resolvent_sweep.csv'))
    out.artifacts.append('resolvent_sweep.csv')

    fit = fit_growth_exponent(result, p['fit_window'])
    fit_json = fit.to_dict()
    write_json(os.path.join(run_dir, 'growth_fit.json'), fit_json)
    out.artifacts.append('growth_fit.json')

    target = _target(config)
    checks = {}
    if target and target['resolvent_exponent'] is not None:
        ceiling = target['resolvent_exponent']
        checks['ceiling'] = ceiling
        checks['below_ceiling'] = bool(fit.exponent <= ceiling + GROWTH_FIT_MARGIN)
    out.results = {
        'generator': gen.describe(),
        'schedule': schedule.describe(),
        'sweep': result.summary(),
        'fit': fit_json,
        'target': target,
        'checks': checks,
    }
    return out


def run_decay_fit(config: ExperimentConfig, run_dir: str, workers: int) -> PipelineResult:
    p = config.params
    gen = build_generator(config)
    caveat = semidiscrete_decay_caveat(gen, p['tail_decades'])
    t_final = p['t_final'] if p['t_final'] is not None else caveat.t_star
    window = tuple(p['window']) if p['window'] is not None else caveat.default_window
    if not math.isfinite(t_final) or not all(math.isfinite(t) for t in window):
        raise ParameterError("conservative generator has no decay horizon; set params.t_final and params.window",
                             abscissa=caveat.abscissa)
    if window[1] > caveat.t_star:
        logger.warning(f"fit window ends at {window[1]:g}, past the horizon t* = {caveat.t_star:.4g}")

    start = initial_state(gen, p['initial'], seed=config.seed, amplitude=p['amplitude'])
    trace = simulate(gen, start, p['dt'], t_final, p['sample_every'])
    out = PipelineResult()
    trace.to_csv(os.path.join(run_dir, 'energy_trace.csv'))
    out.artifacts.append('energy_trace.csv')

    fit = fit_decay_rate(trace, window, DecayModel(p['model']))
    write_json(os.path.join(run_dir, 'decay_fit.json'), fit.to_dict())
    out.artifacts.append('decay_fit.json')

    target = _target(config)
    checks = {}
    if target and target['decay_exponent'] is not None and fit.model is DecayModel.POLYNOMIAL:
        floor = target['decay_exponent']
        checks['floor'] = floor
        checks['above_floor'] = bool(fit.exponent >= floor - DECAY_FIT_MARGIN)
    if target and target['model'] == 'exponential' and fit.model is DecayModel.EXPONENTIAL:
        checks['exponential'] = bool(fit.exponent > 0 and fit.r_squared > EXPONENTIAL_R_SQUARED)
    if math.isfinite(caveat.t_star) and trace.times[-1] >= caveat.t_star:
        idx = int(np.searchsorted(trace.times, caveat.t_star))
        checks['energy_ratio_at_t_star'] = float(trace.energies[idx] / trace.energies[0]) if trace.energies[0] > 0 else 0.0
    out.results = {
        'generator': gen.describe(),
        'caveat': caveat.to_dict(),
        'trace': trace.summary(),
        'fit': fit.to_dict(),
        'target': target,
        'checks': checks,
    }
    return out


PIPELINE_RUNNERS: Dict[str, Callable[[ExperimentConfig, str, int], PipelineResult]] = {
    'simulate': run_simulate,
    'spectrum': run_spectrum,
    'resolvent': run_resolvent,
    'decay-fit': run_decay_fit,
}


def run_pipeline(config: ExperimentConfig, experiment_logger: Optional[ExperimentLogger] = None) -> Tuple[str, PipelineResult]:
    """
    Run the configured pipeline and record a manifest.

    A failing pipeline still leaves a manifest with status 'failed' before
    the error propagates.
    """
    experiment_logger = experiment_logger or ExperimentLogger(config.out_dir)
    run_dir = experiment_logger.run_dir(config)
    workers = resolve_workers(config)
    runner = PIPELINE_RUNNERS[config.pipeline]
    logger.info(f"running {config.pipeline} '{config.name}' [{config_hash(config)}] with {workers} workers")

    started = time.perf_counter()
    try:
        result = runner(config, run_dir, workers)
    except Exception as e:
        error = e if isinstance(e, KVLabError) else PipelineError.wrap(e)
        elapsed = time.perf_counter() - started
        logger.error(f"{config.pipeline} failed after {elapsed:.2f}s: {error.message}")
        experiment_logger.write_manifest(run_dir, config, 'failed', [], {}, elapsed, error=error.to_dict())
        if error is e:
            raise
        raise error from e
    elapsed = time.perf_counter() - started

    result.results = json.loads(json.dumps(result.results, default=_json_default))
    manifest = experiment_logger.write_manifest(run_dir, config, 'ok', result.artifacts, result.results, elapsed)
    logger.info(f"{config.pipeline} finished in {elapsed:.2f}s, manifest {manifest}")
    return manifest, result
