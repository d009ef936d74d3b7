#!/usr/bin/env python3
"""
experiment_config.py - Experiment files: parse, validate, serialize, hash

An experiment is a JSON document:

    {
      "name": "spectrum_asymptotics",
      "pipeline": "spectrum",              # simulate | spectrum | resolvent | decay-fit
      "domain": {"kind": "interval", "L": 3.141592653589793},
      "grid": {"n": 50},
      "coefficients": {
        "system": "kelvin_voigt",          # kelvin_voigt | viscous_coupled | viscous_single
        "a": 1.0,
        "preset": null,                    # or H1_sample, H2_sample, H3_sample, H4, H5, OneD_bc
        "preset_params": {},               # b0, c0 and bound overrides for the preset
        "b": {"value": 1.0, "regions": [{"kind": "all"}]},
        "c": {"value": 1.0, "regions": [{"kind": "all"}]}
      },
      "params": {...},                     # pipeline parameters, see PIPELINE_DEFAULTS
      "output": {"dir": "runs"},
      "seed": 0,
      "workers": null
    }

Regions are {"kind": "all"}, {"kind": "interval", "lo", "hi"},
{"kind": "strip", "axis", "lo", "hi"}, {"kind": "box", "lo": [..], "hi": [..]}
or {"kind": "frame", "offset", "width"}. Explicit regions are ignored when a
preset is named.

Environment overrides (KVLAB_OUT_DIR, KVLAB_WORKERS, KVLAB_SEED) sit between
the file and command-line flags.
"""

import copy
import hashlib
import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from modules.errors import ConfigError, GeometryError
from modules.geometry import (PRESETS, Domain, DomainKind, RegionKind, RegionSpec,
                              preset_regions)
from modules.operators import SYSTEMS

load_dotenv()

logger = logging.getLogger(__name__)

ENV_PREFIX = 'KVLAB_'
PIPELINES = ('simulate', 'spectrum', 'resolvent', 'decay-fit')
INITIAL_DATA = ('bump', 'zero', 'random')

PIPELINE_DEFAULTS: Dict[str, Dict[str, Any]] = {
    'simulate': {
        'dt': 0.01,
        't_final': 1.0,
        'sample_every': 1,
        'initial': 'bump',
        'amplitude': 1.0,
        'export_matrix': False,
    },
    'spectrum': {
        'modes': 120,
        'k_min': 20,
        'gap_window': [100, 120],
        'gap_ceiling': 0.02,
        'decay_windows': [20, 40, 80],
        'window_width': 20,
        'cross_validate': False,
    },
    'resolvent': {
        'schedule': {'kind': 'at_modes', 'k_lo': 10, 'k_hi': 60, 'continuous': False},
        'fit_window': None,
        'tol': 1e-6,
    },
    'decay-fit': {
        'dt': 0.05,
        't_final': None,
        'sample_every': 1,
        'initial': 'bump',
        'amplitude': 1.0,
        'model': 'polynomial',
        'window': None,
        'tail_decades': 3.0,
    },
}

DEFAULT_COEFFICIENTS = {
    'system': 'kelvin_voigt',
    'a': 1.0,
    'preset': None,
    'preset_params': {},
    'b': {'value': 1.0, 'regions': [{'kind': 'all'}]},
    'c': {'value': 1.0, 'regions': [{'kind': 'all'}]},
}


# =============================================================================
# REGIONS
# =============================================================================

def region_from_dict(data: Dict, where: str) -> RegionSpec:
    """Build a RegionSpec from its JSON form; errors name the offending field"""
    if not isinstance(data, dict) or 'kind' not in data:
        raise ConfigError(where, "region must be an object with a 'kind'")
    try:
        kind = RegionKind(data['kind'])
        if kind is RegionKind.ALL:
            return RegionSpec.everywhere()
        if kind is RegionKind.INTERVAL:
            return RegionSpec.interval(float(data['lo']), float(data['hi']))
        if kind is RegionKind.STRIP:
            return RegionSpec.strip(int(data.get('axis', 0)), float(data['lo']), float(data['hi']))
        if kind is RegionKind.BOX:
            return RegionSpec.box(data['lo'], data['hi'])
        if kind is RegionKind.FRAME:
            return RegionSpec.frame(float(data['offset']), float(data['width']))
    except KeyError as e:
        raise ConfigError(where, f"missing key {e}")
    except (TypeError, ValueError) as e:
        raise ConfigError(where, str(e))
    raise ConfigError(where, f"region kind '{data['kind']}' cannot be written in a config file")


def _normalize_region(data: Dict, where: str) -> Dict:
    spec = region_from_dict(data, where)
    out = {'kind': spec.kind.value}
    if spec.kind is RegionKind.STRIP:
        out.update(axis=spec.axis, lo=spec.lo[0], hi=spec.hi[0])
    elif spec.kind is RegionKind.INTERVAL:
        out.update(lo=spec.lo[0], hi=spec.hi[0])
    elif spec.kind is RegionKind.BOX:
        out.update(lo=list(spec.lo), hi=list(spec.hi))
    elif spec.kind is RegionKind.FRAME:
        out.update(offset=spec.lo[0], width=spec.hi[0] - spec.lo[0])
    return out


# =============================================================================
# CONFIG
# =============================================================================

@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    pipeline: str
    domain_kind: str
    L: float
    n: int
    coefficients: Dict[str, Any]
    params: Dict[str, Any]
    out_dir: str = 'runs'
    seed: int = 0
    workers: Optional[int] = None
    source: Optional[str] = field(default=None, compare=False)

    @property
    def domain(self) -> Domain:
        return Domain(DomainKind(self.domain_kind), self.L)

    @property
    def system(self) -> str:
        return self.coefficients['system']

    @property
    def preset(self) -> Optional[str]:
        return self.coefficients.get('preset')

    @property
    def target_key(self) -> str:
        """Preset name, or 'constant' for explicit everywhere-coefficients"""
        if self.preset:
            return self.preset
        regions = [r['kind'] for key in ('b', 'c') for r in self.coefficients[key]['regions']]
        return 'constant' if all(kind == 'all' for kind in regions) else 'custom'

    def b_regions(self) -> List[RegionSpec]:
        return [region_from_dict(r, 'coefficients.b.regions') for r in self.coefficients['b']['regions']]

    def c_regions(self) -> List[RegionSpec]:
        return [region_from_dict(r, 'coefficients.c.regions') for r in self.coefficients['c']['regions']]

    def to_dict(self) -> Dict:
        return {
            'name': self.name,
            'pipeline': self.pipeline,
            'domain': {'kind': self.domain_kind, 'L': self.L},
            'grid': {'n': self.n},
            'coefficients': copy.deepcopy(self.coefficients),
            'params': copy.deepcopy(self.params),
            'output': {'dir': self.out_dir},
            'seed': self.seed,
            'workers': self.workers,
        }


def _number(value, where: str, positive: bool = False, nonnegative: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(where, f"expected a number, got {value!r}")
    value = float(value)
    if value != value or value in (float('inf'), float('-inf')):
        raise ConfigError(where, "must be finite")
    if positive and not value > 0:
        raise ConfigError(where, f"must be positive, got {value}")
    if nonnegative and value < 0:
        raise ConfigError(where, f"must be nonnegative, got {value}")
    return value


def _integer(value, where: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) and not (isinstance(value, float) and value.is_integer()):
        raise ConfigError(where, f"expected an integer, got {value!r}")
    value = int(value)
    if value < minimum:
        raise ConfigError(where, f"must be >= {minimum}, got {value}")
    return value


def _window(value, where: str) -> Optional[List[float]]:
    if value is None:
        return None
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise ConfigError(where, "expected [lo, hi]")
    lo, hi = (_number(v, where) for v in value)
    if not lo < hi:
        raise ConfigError(where, f"needs lo < hi, got [{lo}, {hi}]")
    return [lo, hi]


def _coefficients(raw: Dict, domain: Domain) -> Dict:
    if not isinstance(raw, dict):
        raise ConfigError('coefficients', 'expected an object')
    unknown = set(raw) - set(DEFAULT_COEFFICIENTS)
    if unknown:
        raise ConfigError('coefficients', f"unknown keys {sorted(unknown)}")
    merged = copy.deepcopy(DEFAULT_COEFFICIENTS)
    merged.update(copy.deepcopy(raw))

    if merged['system'] not in SYSTEMS:
        raise ConfigError('coefficients.system', f"expected one of {', '.join(SYSTEMS)}, got {merged['system']!r}")
    merged['a'] = _number(merged['a'], 'coefficients.a', positive=True)
    if merged['preset_params'] is None:
        merged['preset_params'] = {}
    if not isinstance(merged['preset_params'], dict):
        raise ConfigError('coefficients.preset_params', 'expected an object')

    for key in ('b', 'c'):
        spec = merged[key]
        if not isinstance(spec, dict) or 'regions' not in spec:
            raise ConfigError(f'coefficients.{key}', "expected {'value': .., 'regions': [..]}")
        value = _number(spec.get('value', 1.0), f'coefficients.{key}.value', nonnegative=(key == 'b'))
        regions = [_normalize_region(r, f'coefficients.{key}.regions[{i}]') for i, r in enumerate(spec['regions'])]
        if not regions:
            raise ConfigError(f'coefficients.{key}.regions', 'needs at least one region')
        for i, r in enumerate(regions):
            try:
                region_from_dict(r, '').validate(domain)
            except GeometryError as e:
                raise ConfigError(f'coefficients.{key}.regions[{i}]', e.message)
        merged[key] = {'value': value, 'regions': regions}

    preset = merged['preset']
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError('coefficients.preset', f"expected one of {', '.join(PRESETS)}, got {preset!r}")
        try:
            preset_regions(preset, domain, merged['preset_params'])
        except GeometryError as e:
            raise ConfigError('coefficients.preset_params', e.message)
        merged['preset_params'] = json.loads(json.dumps(merged['preset_params']))
    elif merged['preset_params']:
        raise ConfigError('coefficients.preset_params', 'given without a preset')
    return merged


def _schedule(raw: Dict) -> Dict:
    where = 'params.schedule'
    if not isinstance(raw, dict):
        raise ConfigError(where, 'expected an object')
    kind = raw.get('kind')
    if kind == 'at_modes':
        k_lo = _integer(raw.get('k_lo', 1), f'{where}.k_lo')
        k_hi = _integer(raw.get('k_hi'), f'{where}.k_hi') if 'k_hi' in raw else None
        if k_hi is None or k_hi < k_lo:
            raise ConfigError(f'{where}.k_hi', f"needs k_hi >= k_lo = {k_lo}")
        return {'kind': kind, 'k_lo': k_lo, 'k_hi': k_hi, 'continuous': bool(raw.get('continuous', False))}
    if kind == 'log_uniform':
        lo = _number(raw.get('lo'), f'{where}.lo', positive=True)
        hi = _number(raw.get('hi'), f'{where}.hi', positive=True)
        if not lo < hi:
            raise ConfigError(where, f"needs lo < hi, got {lo}, {hi}")
        return {'kind': kind, 'lo': lo, 'hi': hi, 'count': _integer(raw.get('count'), f'{where}.count')}
    raise ConfigError(f'{where}.kind', f"expected at_modes or log_uniform, got {kind!r}")


def _params(pipeline: str, raw: Dict, coefficients: Dict) -> Dict:
    if not isinstance(raw, dict):
        raise ConfigError('params', 'expected an object')
    defaults = PIPELINE_DEFAULTS[pipeline]
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError('params', f"unknown keys for {pipeline}: {sorted(unknown)}")
    p = copy.deepcopy(defaults)
    p.update(copy.deepcopy(raw))

    if pipeline in ('simulate', 'decay-fit'):
        p['dt'] = _number(p['dt'], 'params.dt', positive=True)
        if p['t_final'] is not None:
            p['t_final'] = _number(p['t_final'], 'params.t_final', positive=True)
        elif pipeline == 'simulate':
            raise ConfigError('params.t_final', 'required for simulate')
        p['sample_every'] = _integer(p['sample_every'], 'params.sample_every')
        if p['initial'] not in INITIAL_DATA:
            raise ConfigError('params.initial', f"expected one of {', '.join(INITIAL_DATA)}, got {p['initial']!r}")
        p['amplitude'] = _number(p['amplitude'], 'params.amplitude')

    if pipeline == 'simulate':
        p['export_matrix'] = bool(p['export_matrix'])

    if pipeline == 'decay-fit':
        if p['model'] not in ('polynomial', 'exponential'):
            raise ConfigError('params.model', f"expected polynomial or exponential, got {p['model']!r}")
        p['window'] = _window(p['window'], 'params.window')
        p['tail_decades'] = _number(p['tail_decades'], 'params.tail_decades', positive=True)

    if pipeline == 'spectrum':
        if coefficients['preset'] is not None or coefficients['system'] != 'kelvin_voigt':
            raise ConfigError('coefficients', 'the spectrum pipeline needs constant Kelvin-Voigt coefficients')
        for key in ('b', 'c'):
            if any(r['kind'] != 'all' for r in coefficients[key]['regions']):
                raise ConfigError(f'coefficients.{key}.regions', 'the spectrum pipeline needs a constant field')
        if not coefficients['b']['value'] > 0:
            raise ConfigError('coefficients.b.value', 'the characteristic quartic needs b > 0')
        p['modes'] = _integer(p['modes'], 'params.modes')
        p['k_min'] = _integer(p['k_min'], 'params.k_min')
        if p['k_min'] > p['modes']:
            raise ConfigError('params.k_min', f"exceeds the mode count {p['modes']}")
        lo, hi = _window(p['gap_window'], 'params.gap_window')
        p['gap_window'] = [int(lo), int(hi)]
        p['gap_ceiling'] = _number(p['gap_ceiling'], 'params.gap_ceiling', positive=True)
        p['window_width'] = _integer(p['window_width'], 'params.window_width')
        p['decay_windows'] = [_integer(k, 'params.decay_windows') for k in p['decay_windows']]
        if p['decay_windows'] and max(p['decay_windows']) + p['window_width'] > p['modes']:
            raise ConfigError('params.decay_windows', f"last window runs past the mode count {p['modes']}")
        if p['gap_window'][1] > p['modes']:
            raise ConfigError('params.gap_window', f"runs past the mode count {p['modes']}")
        p['cross_validate'] = bool(p['cross_validate'])

    if pipeline == 'resolvent':
        p['schedule'] = _schedule(p['schedule'])
        p['fit_window'] = _window(p['fit_window'], 'params.fit_window')
        p['tol'] = _number(p['tol'], 'params.tol', positive=True)
    return p


def from_dict(data: Dict, source: Optional[str] = None) -> ExperimentConfig:
    """Validate a parsed config document; raises ConfigError naming the field"""
    if not isinstance(data, dict):
        raise ConfigError('<root>', 'expected a JSON object')
    pipeline = data.get('pipeline')
    if pipeline not in PIPELINES:
        raise ConfigError('pipeline', f"expected one of {', '.join(PIPELINES)}, got {pipeline!r}")

    domain_raw = data.get('domain') or {}
    kind = domain_raw.get('kind', 'interval')
    if kind not in (k.value for k in DomainKind):
        raise ConfigError('domain.kind', f"expected interval or square, got {kind!r}")
    L = _number(domain_raw.get('L', 1.0), 'domain.L', positive=True)
    domain = Domain(DomainKind(kind), L)

    n = _integer((data.get('grid') or {}).get('n'), 'grid.n', minimum=1)
    coefficients = _coefficients(data.get('coefficients') or {}, domain)
    params = _params(pipeline, data.get('params') or {}, coefficients)

    workers = data.get('workers')
    if workers is not None:
        workers = _integer(workers, 'workers')
    seed = _integer(data.get('seed', 0), 'seed', minimum=0)
    out_dir = (data.get('output') or {}).get('dir', 'runs')
    if not isinstance(out_dir, str) or not out_dir:
        raise ConfigError('output.dir', 'expected a non-empty path')

    name = data.get('name') or (os.path.splitext(os.path.basename(source))[0] if source else pipeline)
    return ExperimentConfig(str(name), pipeline, kind, L, n, coefficients, params,
                            out_dir, seed, workers, source)


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a JSON experiment file"""
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError('<file>', f"no such config: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError('<file>', f"invalid JSON in {path}: line {e.lineno} column {e.colno}: {e.msg}")
    config = from_dict(data, source=path)
    logger.info(f"loaded config '{config.name}' ({config.pipeline}) from {path}")
    return config


def save_config(config: ExperimentConfig, path: str):
    with open(path, 'w') as f:
        json.dump(config.to_dict(), f, indent=2)


def config_hash(config: ExperimentConfig) -> str:
    """
    First 16 hex digits of SHA-256 over the canonical JSON of everything
    that affects results (output dir and worker count excluded).
    """
    payload = config.to_dict()
    payload.pop('output')
    payload.pop('workers')
    canonical = json.dumps(payload, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


# =============================================================================
# OVERRIDES
# =============================================================================

def env_overrides() -> Dict[str, Any]:
    """KVLAB_OUT_DIR, KVLAB_WORKERS and KVLAB_SEED when set and non-empty"""
    overrides = {}
    out_dir = os.getenv(f'{ENV_PREFIX}OUT_DIR', '')
    if out_dir:
        overrides['out_dir'] = out_dir
    for key, attr in (('WORKERS', 'workers'), ('SEED', 'seed')):
        raw = os.getenv(f'{ENV_PREFIX}{key}', '')
        if raw:
            try:
                overrides[attr] = int(raw)
            except ValueError:
                raise ConfigError(f'{ENV_PREFIX}{key}', f"expected an integer, got {raw!r}")
    return overrides


def apply_overrides(config: ExperimentConfig, out_dir: Optional[str] = None,
                    workers: Optional[int] = None, seed: Optional[int] = None,
                    use_env: bool = True) -> ExperimentConfig:
    """Layer environment then explicit values over the file's settings"""
    changes = env_overrides() if use_env else {}
    for attr, value in (('out_dir', out_dir), ('workers', workers), ('seed', seed)):
        if value is not None:
            changes[attr] = value
    if 'workers' in changes:
        changes['workers'] = _integer(changes['workers'], 'workers')
    if 'seed' in changes:
        changes['seed'] = _integer(changes['seed'], 'seed', minimum=0)
    return replace(config, **changes) if changes else config


def resolve_workers(config: ExperimentConfig) -> int:
    return config.workers or os.cpu_count() or 1
