#!/usr/bin/env python3
"""
geometry.py - Domains, uniform grids and damping/coupling coefficient fields

Covers the 1D reference system (damping on (alpha_1, alpha_3), coupling on
(alpha_2, alpha_4)) and the square configurations H1-H5. Fields are sampled
at interior nodes; membership is half-open (lo <= x < hi) so nested regions
sharing an endpoint stay unambiguous.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from modules.errors import GeometryError

logger = logging.getLogger(__name__)

# Relative slack used when comparing node coordinates against region bounds
MEMBERSHIP_TOL = 1e-12


class DomainKind(str, Enum):
    INTERVAL = 'interval'
    SQUARE = 'square'


@dataclass(frozen=True)
class Domain:
    """Interval (0, L) or square (0, L) x (0, L)"""

    kind: DomainKind
    L: float

    def __post_init__(self):
        try:
            kind = DomainKind(self.kind)
        except ValueError:
            raise GeometryError(f"unknown domain kind '{self.kind}'", kind=str(self.kind))
        object.__setattr__(self, 'kind', kind)
        if not np.isfinite(self.L) or self.L <= 0:
            raise GeometryError(f"domain length must be positive, got {self.L}", L=self.L)
        object.__setattr__(self, 'L', float(self.L))

    @classmethod
    def interval(cls, L: float = 1.0) -> 'Domain':
        return cls(DomainKind.INTERVAL, L)

    @classmethod
    def square(cls, L: float = 1.0) -> 'Domain':
        return cls(DomainKind.SQUARE, L)

    @property
    def dim(self) -> int:
        return 1 if self.kind is DomainKind.INTERVAL else 2


@dataclass(frozen=True)
class Grid:
    """
    Uniform tensor mesh with Dirichlet boundary eliminated.

    Interior nodes sit at i*h, 1 <= i <= n, per axis. In 2D the flat node
    index is p = i + n*j (x fastest), matching kron(I_y, .) + kron(., I_x)
    assembly in operators.py.
    """

    domain: Domain
    n: int

    def __post_init__(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 1:
            raise GeometryError(f"grid needs n >= 1 interior nodes per axis, got {self.n}", n=self.n)
        object.__setattr__(self, 'n', int(self.n))

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def L(self) -> float:
        return self.domain.L

    @property
    def h(self) -> float:
        return self.domain.L / (self.n + 1)

    @property
    def size(self) -> int:
        """Number of interior unknowns (n or n^2)"""
        return self.n ** self.dim

    @property
    def cell_volume(self) -> float:
        """h^d, the lumped mass weight of every node"""
        return self.h ** self.dim

    def axis_coordinates(self) -> np.ndarray:
        # multiply before dividing so i*L/(n+1) hits exact fractions like 3/5
        return np.arange(1, self.n + 1) * self.domain.L / (self.n + 1)

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape (size, dim)"""
        x = self.axis_coordinates()
        if self.dim == 1:
            return x[:, None]
        X, Y = np.meshgrid(x, x, indexing='xy')
        return np.column_stack([X.ravel(), Y.ravel()])


def build_grid(domain: Domain, n: int) -> Grid:
    """Uniform grid with n interior nodes per axis and h = L/(n+1)"""
    return Grid(domain, n)


# =============================================================================
# REGIONS
# =============================================================================

class RegionKind(str, Enum):
    ALL = 'all'
    STRIP = 'strip'
    BOX = 'box'
    INTERVAL = 'interval'
    FRAME = 'frame'
    PREDICATE = 'predicate'


@dataclass(frozen=True)
class RegionSpec:
    """
    A subset of the domain, tested per node coordinate.

    STRIP      lo <= x[axis] < hi, any value on the other axis
    BOX        lo[k] <= x[k] < hi[k] on every axis
    INTERVAL   lo <= x < hi (1D only)
    FRAME      offset <= dist(x, boundary) < offset + width
    PREDICATE  user callable mapping an (m, dim) coordinate array to a mask
    """

    kind: RegionKind
    lo: Tuple[float, ...] = ()
    hi: Tuple[float, ...] = ()
    axis: int = 0
    predicate: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, compare=False)
    label: str = ''

    @classmethod
    def everywhere(cls) -> 'RegionSpec':
        return cls(RegionKind.ALL, label='all')

    @classmethod
    def strip(cls, axis: int, lo: float, hi: float) -> 'RegionSpec':
        return cls(RegionKind.STRIP, (float(lo),), (float(hi),), axis=axis,
                   label=f"strip[{'xy'[axis] if axis in (0, 1) else axis}]({lo}, {hi})")

    @classmethod
    def box(cls, lo: Sequence[float], hi: Sequence[float]) -> 'RegionSpec':
        return cls(RegionKind.BOX, tuple(map(float, lo)), tuple(map(float, hi)), label=f"box({tuple(lo)}, {tuple(hi)})")

    @classmethod
    def interval(cls, lo: float, hi: float) -> 'RegionSpec':
        return cls(RegionKind.INTERVAL, (float(lo),), (float(hi),), label=f"interval({lo}, {hi})")

    @classmethod
    def frame(cls, offset: float, width: float) -> 'RegionSpec':
        return cls(RegionKind.FRAME, (float(offset),), (float(offset + width),), label=f"frame({offset}, {width})")

    @classmethod
    def where(cls, predicate: Callable[[np.ndarray], np.ndarray], label: str = 'predicate') -> 'RegionSpec':
        return cls(RegionKind.PREDICATE, predicate=predicate, label=label)

    def validate(self, domain: Domain):
        """Check bounds against the domain; raises GeometryError"""
        kind = RegionKind(self.kind)
        L = domain.L
        if kind is RegionKind.ALL:
            return
        if kind is RegionKind.PREDICATE:
            if not callable(self.predicate):
                raise GeometryError("predicate region needs a callable", region=self.label)
            return
        if kind is RegionKind.INTERVAL and domain.dim != 1:
            raise GeometryError("Interval1D regions only apply to interval domains", region=self.label)
        if kind is RegionKind.STRIP and self.axis not in range(domain.dim):
            raise GeometryError(f"strip axis {self.axis} outside a {domain.dim}D domain", region=self.label)
        if kind is RegionKind.BOX and (len(self.lo) != domain.dim or len(self.hi) != domain.dim):
            raise GeometryError(f"box needs {domain.dim} bounds per corner", region=self.label)
        upper = L / 2 if kind is RegionKind.FRAME else L
        for lo, hi in zip(self.lo, self.hi):
            if not lo < hi:
                raise GeometryError(f"region bounds need lo < hi, got ({lo}, {hi})", region=self.label)
            if lo < 0 or hi > upper * (1 + MEMBERSHIP_TOL):
                raise GeometryError(f"region bounds ({lo}, {hi}) leave [0, {upper}]", region=self.label)

    def contains(self, points: np.ndarray, domain: Domain) -> np.ndarray:
        """Boolean membership mask for an (m, dim) coordinate array"""
        kind = RegionKind(self.kind)
        points = np.atleast_2d(points)
        tol = MEMBERSHIP_TOL * domain.L
        if kind is RegionKind.ALL:
            return np.ones(len(points), dtype=bool)
        if kind is RegionKind.PREDICATE:
            return np.asarray(self.predicate(points), dtype=bool).reshape(len(points))
        if kind is RegionKind.FRAME:
            dist = np.minimum(points, domain.L - points).min(axis=1)
            return _half_open(dist, self.lo[0], self.hi[0], tol)
        if kind is RegionKind.STRIP:
            return _half_open(points[:, self.axis], self.lo[0], self.hi[0], tol)
        mask = np.ones(len(points), dtype=bool)
        for k, (lo, hi) in enumerate(zip(self.lo, self.hi)):
            mask &= _half_open(points[:, k], lo, hi, tol)
        return mask


def _half_open(x: np.ndarray, lo: float, hi: float, tol: float) -> np.ndarray:
    return (x >= lo - tol) & (x < hi - tol)


# =============================================================================
# COEFFICIENT FIELDS
# =============================================================================

@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Nodal values of b(x), c(x) or d(x) on a grid"""

    grid: Grid
    values: np.ndarray
    name: str = 'b'

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        if values.size != self.grid.size:
            raise GeometryError(
                f"field '{self.name}' has {values.size} values for {self.grid.size} nodes",
                field=self.name)
        if not np.all(np.isfinite(values)):
            raise GeometryError(f"field '{self.name}' has non-finite values", field=self.name)
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @property
    def support(self) -> np.ndarray:
        return self.values != 0

    @property
    def is_constant(self) -> bool:
        return bool(np.all(self.values == self.values[0]))

    def levels(self) -> List[float]:
        return sorted(set(self.values.tolist()))

    def describe(self) -> Dict:
        return {
            'name': self.name,
            'levels': self.levels(),
            'support_nodes': int(self.support.sum()),
            'nodes': self.grid.size,
        }


RegionLike = Union[RegionSpec, Sequence[RegionSpec]]


def indicator_field(grid: Grid, region: RegionLike, inside_value: float,
                    name: str = 'b', damping: Optional[bool] = None) -> CoefficientField:
    """
    Piecewise-constant field: inside_value on the region, 0 elsewhere.

    A sequence of regions is treated as their union. Damping fields (b, d)
    reject negative values; coupling fields (c) take any real.
    """
    if damping is None:
        damping = name in ('b', 'd')
    if damping and inside_value < 0:
        raise GeometryError(f"damping field '{name}' needs inside_value >= 0, got {inside_value}", field=name)
    regions = [region] if isinstance(region, RegionSpec) else list(region)
    points = grid.nodes()
    mask = np.zeros(grid.size, dtype=bool)
    for spec in regions:
        spec.validate(grid.domain)
        mask |= spec.contains(points, grid.domain)
    values = np.where(mask, float(inside_value), 0.0)
    return CoefficientField(grid, values, name)


def constant_field(grid: Grid, value: float, name: str = 'b') -> CoefficientField:
    return indicator_field(grid, RegionSpec.everywhere(), value, name=name)


def check_nesting(b: CoefficientField, c: CoefficientField) -> bool:
    """True when every node carrying coupling also carries damping (omega_c inside omega_b)"""
    return bool(np.all(b.support[c.support]))


# =============================================================================
# PRESETS
# =============================================================================

PRESETS = ('H1_sample', 'H2_sample', 'H3_sample', 'H4', 'H5', 'OneD_bc')

# Default bounds as fractions of L; override with absolute values in params
PRESET_DEFAULTS = {
    'OneD_bc': {'alpha': (0.1, 0.3, 0.5, 0.7)},
    'H1_sample': {'delta': 0.2},
    'H2_sample': {'delta_c': 0.1, 'delta_b': 0.2},
    'H3_sample': {'deltas': (0.1, 0.15, 0.25, 0.3)},
    'H4': {'eps': (0.2, 0.4, 0.6, 0.8)},
    'H5': {'eps': (0.25, 0.5)},
}

# Presets whose hypotheses require omega_c inside omega_b
NESTED_PRESETS = ('H2_sample', 'H3_sample', 'H4', 'H5')


def resolve_preset_params(name: str, L: float, params: Optional[Dict] = None) -> Dict:
    """Merge user params with the documented defaults (scaled by L)"""
    if name not in PRESET_DEFAULTS:
        raise GeometryError(f"unknown preset '{name}', expected one of {', '.join(PRESETS)}", preset=name)
    params = dict(params or {})
    resolved = {'b0': float(params.pop('b0', 1.0)), 'c0': float(params.pop('c0', 1.0))}
    for key, default in PRESET_DEFAULTS[name].items():
        value = params.pop(key, None)
        if value is None:
            value = tuple(f * L for f in default) if isinstance(default, tuple) else default * L
        resolved[key] = tuple(map(float, value)) if isinstance(default, tuple) else float(value)
    if params:
        raise GeometryError(f"unexpected parameters for {name}: {sorted(params)}", preset=name)
    return resolved


def _require_increasing(name: str, label: str, values: Sequence[float], upper: float):
    chain = [0.0, *values, upper]
    if any(not lo < hi for lo, hi in zip(chain, chain[1:])):
        names = ' < '.join(['0'] + [f"{label}_{i + 1}" for i in range(len(values))] + [f"{upper:g}"])
        raise GeometryError(f"{name} requires {names}, got {tuple(values)}",
                            preset=name, constraint=names, values=list(values))


def preset_regions(name: str, domain: Domain, params: Optional[Dict] = None) -> Tuple[List[RegionSpec], List[RegionSpec], Dict]:
    """Damping regions, coupling regions and resolved parameters of a preset"""
    p = resolve_preset_params(name, domain.L, params)
    L = domain.L
    if p['b0'] <= 0:
        raise GeometryError(f"{name} requires b0 > 0, got {p['b0']}", preset=name)

    if name == 'OneD_bc':
        if domain.dim != 1:
            raise GeometryError("OneD_bc lives on an interval domain", preset=name)
        a1, a2, a3, a4 = _unpack(name, p['alpha'], 4)
        _require_increasing(name, 'alpha', p['alpha'], L)
        return [RegionSpec.interval(a1, a3)], [RegionSpec.interval(a2, a4)], p

    if name in ('H4', 'H5') and domain.dim != 2:
        raise GeometryError(f"{name} lives on a square domain", preset=name)

    if name == 'H4':
        e1, e2, e3, e4 = _unpack(name, p['eps'], 4)
        _require_increasing(name, 'eps', p['eps'], L)
        return [RegionSpec.strip(0, e1, e4)], [RegionSpec.strip(0, e2, e3)], p

    if name == 'H5':
        e1, e2 = _unpack(name, p['eps'], 2)
        _require_increasing(name, 'eps', p['eps'], L)
        return [RegionSpec.strip(0, 0.0, e2)], [RegionSpec.strip(0, 0.0, e1)], p

    if name == 'H1_sample':
        _require_increasing(name, 'delta', (p['delta'],), L / 2)
        frame = RegionSpec.frame(0.0, p['delta'])
        return [frame], [frame], p

    if name == 'H2_sample':
        _require_increasing(name, 'delta', (p['delta_c'], p['delta_b']), L / 2)
        return [RegionSpec.frame(0.0, p['delta_b'])], [RegionSpec.frame(0.0, p['delta_c'])], p

    # H3_sample
    d1, d2, d3, d4 = _unpack(name, p['deltas'], 4)
    _require_increasing(name, 'delta', p['deltas'], L / 2)
    return [RegionSpec.frame(d1, d4 - d1)], [RegionSpec.frame(d2, d3 - d2)], p


def _unpack(name: str, values: Sequence[float], count: int) -> Tuple[float, ...]:
    if len(values) != count:
        raise GeometryError(f"{name} needs {count} bounds, got {len(values)}", preset=name)
    return tuple(values)


def preset_config(name: str, grid: Grid, params: Optional[Dict] = None) -> Tuple[CoefficientField, CoefficientField]:
    """
    Build the (b, c) pair of a named configuration on a grid.

    Args:
        name: one of PRESETS
        grid: grid carrying the domain (its L scales the default bounds)
        params: optional b0, c0 and bound overrides (alpha, eps, delta, ...)

    Returns:
        (b field, c field)
    """
    b_regions, c_regions, p = preset_regions(name, grid.domain, params)
    b = indicator_field(grid, b_regions, p['b0'], name='b')
    c = indicator_field(grid, c_regions, p['c0'], name='c')
    if name in NESTED_PRESETS and not check_nesting(b, c):
        raise GeometryError(f"{name}: coupling support escapes the damping support on this grid", preset=name)
    logger.info(f"preset {name}: b on {int(b.support.sum())} nodes, c on {int(c.support.sum())} nodes")
    return b, c


if __name__ == "__main__":
    grid = build_grid(Domain.square(1.0), 9)
    for preset in ('H4', 'H5', 'H1_sample'):
        b, c = preset_config(preset, grid)
        print(f"{preset}:")
        print((b.values.reshape(grid.n, grid.n) > 0).astype(int)[::-1])
        print(f"  nested: {check_nesting(b, c)}")
