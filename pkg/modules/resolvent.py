#!/usr/bin/env python3
"""
resolvent.py - Resolvent norms of A_h along the imaginary axis

||(i lam - A_h)^-1|| is measured in the energy norm of the generator, so a
conservative generator is normal and its resolvent norm is exactly the
reciprocal distance from i*lam to the spectrum. Growth like lam^l along
the axis corresponds to energy decay like t^(-2/l) for smooth data.

Complex solves run over the reals: (i lam - A) (x + i y) = f + i g becomes

    [[-A, -lam I], [lam I, -A]] [x; y] = [f; g]

whose transpose is the embedding of the adjoint (-i lam - A^T), so one
sparse LU per lam serves both directions.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import splu
from scipy.stats import linregress

from modules.errors import FitError, ParameterError, SingularSystemError, SolverError
from modules.operators import DiscreteGenerator, SystemState
from modules.spectral import ModeSet, grid_consistent_modes

logger = logging.getLogger(__name__)

SOLVE_TOL = 1e-10
NORM_TOL = 1e-6
MAX_ITERATIONS = 500
BLOCK_SIZE = 4
REFINEMENT_STEPS = 2
# growth * (|lam| + ||A||) above this means i*lam sits on the spectrum
SINGULAR_CONDITION = 1e13
DENSE_ORACLE_LIMIT = 500
MIN_FIT_POINTS = 8
# fitted exponents below this read as a bounded resolvent
BOUNDED_GROWTH = 0.2


# =============================================================================
# SHIFTED SOLVES
# =============================================================================

class ShiftedSystem:
    """One factorization of the real embedding of (i lam - A_h)"""

    def __init__(self, gen: DiscreteGenerator, lam: float, tol: float = SOLVE_TOL):
        if not np.isfinite(lam):
            raise ParameterError(f"frequency must be finite, got {lam}", lam=lam)
        self.gen = gen
        self.lam = float(lam)
        self.tol = tol
        A = gen.matrix.tocsc()
        I = sp.identity(gen.dimension, format='csc')
        self.embedded = sp.csc_matrix(sp.bmat([[-A, -self.lam * I], [self.lam * I, -A]]))
        self.scale = abs(self.lam) + float(abs(A).sum(axis=1).max())
        self.worst_residual = 0.0
        try:
            self.lu = splu(self.embedded)
        except RuntimeError as e:
            raise SingularSystemError(f"i*{lam:g} - A_h is singular: {e}", lam=self.lam)

    def _solve(self, rhs: np.ndarray, adjoint: bool) -> np.ndarray:
        """Solve for one or more complex right-hand side columns"""
        N = self.gen.dimension
        stacked = np.concatenate([rhs.real, rhs.imag], axis=0)
        rhs_norm = np.linalg.norm(stacked)
        if rhs_norm == 0:
            return np.zeros(rhs.shape, dtype=complex)
        trans = 'T' if adjoint else 'N'
        matrix = self.embedded.T if adjoint else self.embedded
        out = self.lu.solve(np.ascontiguousarray(stacked), trans=trans)
        if not np.all(np.isfinite(out)):
            raise SingularSystemError(f"i*{self.lam:g} - A_h produced a non-finite solve", lam=self.lam)
        for _ in range(REFINEMENT_STEPS + 1):
            defect = stacked - matrix @ out
            residual = float(np.linalg.norm(defect) / rhs_norm)
            if residual <= self.tol:
                break
            out = out + self.lu.solve(np.ascontiguousarray(defect), trans=trans)
        # normwise backward error, the attainable floor on large grids
        backward = float(np.linalg.norm(defect) / (self.scale * np.linalg.norm(out) + rhs_norm))
        if residual > self.tol and backward > self.tol:
            raise SolverError(f"resolvent solve residual {residual:.2e} above {self.tol:.0e} at lam={self.lam:g}",
                              residual=residual, lam=self.lam)
        self.worst_residual = max(self.worst_residual, residual)
        return out[:N] + 1j * out[N:]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """(i lam - A_h)^-1 rhs"""
        return self._solve(rhs, adjoint=False)

    def solve_adjoint(self, rhs: np.ndarray) -> np.ndarray:
        """(i lam - A_h)^-H rhs, the Euclidean adjoint"""
        return self._solve(rhs, adjoint=True)

    def check_growth(self, growth: float):
        """growth is an energy-norm amplification; too large means i*lam is an eigenvalue"""
        if not np.isfinite(growth) or growth * self.scale > SINGULAR_CONDITION:
            raise SingularSystemError(f"i*{self.lam:g} - A_h is numerically singular "
                                      f"(condition estimate {growth * self.scale:.2e})",
                                      growth=float(growth), lam=self.lam)


def _energy_norm(gen: DiscreteGenerator, data: np.ndarray) -> float:
    return float(np.sqrt(max(np.vdot(data, gen.gram @ data).real, 0.0)))


def resolvent_solve(gen: DiscreteGenerator, lam: float, F: SystemState) -> SystemState:
    """
    U with (i lam - A_h) U = F, residual at most 1e-10 ||F||.

    Raises SingularSystemError when i*lam is (numerically) an eigenvalue.
    """
    gen.check_state(F)
    system = ShiftedSystem(gen, lam)
    data = system.solve(np.asarray(F.data, dtype=complex))
    f_norm = _energy_norm(gen, F.data)
    if f_norm > 0:
        system.check_growth(_energy_norm(gen, data) / f_norm)
    return SystemState(data, F.n_blocks)


# =============================================================================
# NORM ESTIMATION
# =============================================================================

@dataclass(frozen=True)
class NormEstimate:
    lam: float
    norm: float
    relative_change: float
    iterations: int
    converged: bool
    solve_residual: float


def _gram_orthonormalize(gen: DiscreteGenerator, V: np.ndarray) -> np.ndarray:
    """Columns orthonormal in the energy inner product, near-dependent directions dropped"""
    M = V.conj().T @ (gen.gram @ V)
    M = 0.5 * (M + M.conj().T)
    w, Q = np.linalg.eigh(M)
    keep = w > w.max() * 1e-14
    return V @ (Q[:, keep] / np.sqrt(w[keep]))


def resolvent_norm(gen: DiscreteGenerator, lam: float, tol: float = NORM_TOL,
                   max_iter: int = MAX_ITERATIONS, block: int = BLOCK_SIZE,
                   seed: int = 0) -> NormEstimate:
    """
    Energy-norm ||(i lam - A_h)^-1|| by block power iteration on R^# R.

    R^# = G^-1 R^H G is the energy adjoint of R, so every sweep costs one
    forward and one adjoint solve per column. The largest Ritz value of the
    block is the estimate; iteration stops once its relative change drops
    below tol. An estimate that hits max_iter is returned unconverged.
    """
    system = ShiftedSystem(gen, lam)
    rng = np.random.default_rng(seed)
    p = max(1, min(block, gen.dimension))
    V = rng.standard_normal((gen.dimension, p)) + 1j * rng.standard_normal((gen.dimension, p))
    V = _gram_orthonormalize(gen, V)

    previous = math.nan
    change = math.inf
    estimate = 0.0
    iterations = 0
    for iterations in range(1, max_iter + 1):
        Y = system.solve(V)
        GY = gen.gram @ Y
        H = Y.conj().T @ GY
        estimate = float(np.sqrt(max(np.linalg.eigvalsh(0.5 * (H + H.conj().T)).max(), 0.0)))
        system.check_growth(estimate)
        if np.isfinite(previous) and estimate > 0:
            change = abs(estimate - previous) / estimate
            if change < tol:
                break
        previous = estimate
        Z = system.solve_adjoint(GY)
        Z = np.column_stack([gen.gram_solve(Z[:, j]) for j in range(Z.shape[1])])
        V = _gram_orthonormalize(gen, Z)

    converged = change < tol or estimate == 0.0
    if not converged:
        logger.warning(f"power iteration at lam={lam:g} stopped after {iterations} sweeps, "
                       f"relative change {change:.2e}")
    return NormEstimate(float(lam), estimate, float(change if np.isfinite(change) else 0.0),
                        iterations, converged, system.worst_residual)


def _gram_factor(gen: DiscreteGenerator) -> np.ndarray:
    """Dense upper Cholesky factor of G, ||x||_G = ||R x||"""
    return scipy.linalg.cholesky(gen.gram.toarray(), lower=False)


def dense_resolvent_norm(gen: DiscreteGenerator, lam: float) -> float:
    """Reference value 1 / sigma_min(R_G (i lam - A_h) R_G^-1) from a dense SVD"""
    if gen.block_size > DENSE_ORACLE_LIMIT:
        raise ParameterError(f"dense resolvent oracle limited to {DENSE_ORACLE_LIMIT} nodes per block",
                             block_size=gen.block_size)
    R = _gram_factor(gen)
    shifted = 1j * lam * np.eye(gen.dimension) - gen.matrix.toarray()
    # X R = shifted, solved as R^T X^T = shifted^T
    X = scipy.linalg.solve_triangular(R, shifted.T, trans='T', lower=False).T
    sigma = scipy.linalg.svdvals(R @ X)
    if sigma.min() == 0:
        return math.inf
    return float(1.0 / sigma.min())


# =============================================================================
# SWEEPS
# =============================================================================

class ScheduleKind(str, Enum):
    AT_MODES = 'at_modes'
    LOG_UNIFORM = 'log_uniform'


@dataclass(frozen=True, eq=False)
class LambdaSchedule:
    """Frequencies to visit: Dirichlet frequencies of a mode set, or a log-uniform grid"""

    kind: ScheduleKind
    modes: Optional[ModeSet] = None
    lo: float = 0.0
    hi: float = 0.0
    count: int = 0
    continuous: bool = False

    @classmethod
    def at_modes(cls, modes: ModeSet, continuous: bool = False) -> 'LambdaSchedule':
        return cls(ScheduleKind.AT_MODES, modes=modes, continuous=continuous)

    @classmethod
    def log_uniform(cls, lo: float, hi: float, count: int) -> 'LambdaSchedule':
        if not 0 < lo < hi or count < 1:
            raise ParameterError(f"log-uniform schedule needs 0 < lo < hi and count >= 1, got {lo}, {hi}, {count}")
        return cls(ScheduleKind.LOG_UNIFORM, lo=float(lo), hi=float(hi), count=int(count))

    def lambdas(self, gen: Optional[DiscreteGenerator] = None) -> np.ndarray:
        """
        Frequencies in increasing order. AtModes on a grid uses the grid's
        own frequencies for the same mode labels unless continuous is set.
        """
        if self.kind is ScheduleKind.LOG_UNIFORM:
            return np.geomspace(self.lo, self.hi, self.count)
        if self.modes is None or len(self.modes) == 0:
            raise ParameterError("AtModes schedule has no modes")
        modes = self.modes
        if gen is not None and not self.continuous and not modes.discrete:
            modes = grid_consistent_modes(gen.grid, modes)
        return np.sort(np.asarray(modes.mus, dtype=float))

    def describe(self) -> Dict:
        if self.kind is ScheduleKind.LOG_UNIFORM:
            return {'kind': self.kind.value, 'lo': self.lo, 'hi': self.hi, 'count': self.count}
        return {'kind': self.kind.value, 'modes': len(self.modes), 'continuous': self.continuous}


@dataclass
class ResolventSweep:
    lambdas: np.ndarray
    norms: np.ndarray
    estimator_residuals: np.ndarray
    flagged: np.ndarray
    solve_residuals: np.ndarray
    nyquist: float
    errors: Dict[int, Dict] = field(default_factory=dict)

    CSV_HEADER = 'lambda,norm,residual,flagged'

    @property
    def worst_residual(self) -> float:
        finite = self.solve_residuals[np.isfinite(self.solve_residuals)]
        return float(finite.max()) if finite.size else math.nan

    @property
    def trusted(self) -> np.ndarray:
        """Points usable in a fit: below the resolution limit and solved"""
        return ~self.flagged & np.isfinite(self.norms)

    def to_csv(self, path: str):
        table = np.column_stack([self.lambdas, self.norms, self.estimator_residuals,
                                 self.flagged.astype(int)])
        np.savetxt(path, table, fmt=['%.17g', '%.17g', '%.17g', '%d'], delimiter=',',
                   header=self.CSV_HEADER, comments='')

    def summary(self) -> Dict:
        return {
            'points': int(len(self.lambdas)),
            'flagged': int(self.flagged.sum()),
            'failed': len(self.errors),
            'nyquist': self.nyquist,
            'worst_solve_residual': self.worst_residual,
            'max_estimator_residual': float(np.nanmax(self.estimator_residuals)) if len(self.lambdas) else None,
            'max_norm': float(np.nanmax(np.where(self.trusted, self.norms, np.nan))) if self.trusted.any() else None,
        }


def resolution_limit(gen: DiscreteGenerator) -> float:
    """pi / (2h) times the fastest wave speed; frequencies above it are grid artifacts"""
    speed = max(math.sqrt(gen.a), 1.0) if gen.n_blocks == 4 else 1.0
    return speed * math.pi / (2.0 * gen.grid.h)


def sweep(gen: DiscreteGenerator, schedule: LambdaSchedule, workers: Optional[int] = None,
          tol: float = NORM_TOL) -> ResolventSweep:
    """
    Norm estimate at every scheduled frequency.

    Points run in parallel, each with its own factorization. A failed point
    is recorded with norm inf and the sweep goes on.
    """
    lambdas = schedule.lambdas(gen)
    if lambdas.size == 0:
        raise ParameterError("empty frequency schedule")
    nyquist = resolution_limit(gen)
    workers = workers or os.cpu_count() or 1

    def one(lam):
        try:
            return resolvent_norm(gen, lam, tol=tol)
        except SolverError as e:
            logger.warning(f"resolvent at lam={lam:g} failed: {e.message}")
            return e

    if workers > 1 and lambdas.size > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, lambdas))
    else:
        results = [one(lam) for lam in lambdas]

    norms = np.full(lambdas.size, math.inf)
    changes = np.full(lambdas.size, math.nan)
    residuals = np.full(lambdas.size, math.nan)
    errors = {}
    for i, result in enumerate(results):
        if isinstance(result, NormEstimate):
            norms[i] = result.norm
            changes[i] = result.relative_change
            residuals[i] = result.solve_residual
        else:
            errors[i] = result.to_dict()
    flagged = lambdas > nyquist
    if flagged.any():
        logger.warning(f"{int(flagged.sum())} frequencies above the resolution limit {nyquist:.4g} are flagged")
    result = ResolventSweep(lambdas, norms, changes, flagged, residuals, nyquist, errors)
    logger.info(f"resolvent sweep: {lambdas.size} points in [{lambdas[0]:.4g}, {lambdas[-1]:.4g}], "
                f"worst solve residual {result.worst_residual:.2e}")
    return result


# =============================================================================
# GROWTH FITS
# =============================================================================

@dataclass(frozen=True)
class GrowthFit:
    """||R(i lam)|| ~ constant * lam^exponent over window"""

    exponent: float
    constant: float
    r_squared: float
    window: Tuple[float, float]
    samples: int

    @property
    def implied_decay(self) -> float:
        """Energy decay exponent 2 / l"""
        return 2.0 / self.exponent if self.exponent > 0 else math.inf

    @property
    def stability_class(self) -> str:
        if self.exponent < BOUNDED_GROWTH:
            return 'exponential'
        return 'polynomial'

    def to_dict(self) -> Dict:
        decay = self.implied_decay
        return {
            'exponent': self.exponent,
            'constant': self.constant,
            'r_squared': self.r_squared,
            'window': list(self.window),
            'implied_decay': decay if math.isfinite(decay) else None,
            'stability_class': self.stability_class,
            'samples': self.samples,
        }


def fit_growth_exponent(sweep_result: ResolventSweep, window: Optional[Tuple[float, float]] = None) -> GrowthFit:
    """
    Least-squares slope of log norm against log lam.

    Only trusted points (solved, below the resolution limit) inside the
    window count; at least MIN_FIT_POINTS are required.
    """
    lam = sweep_result.lambdas
    mask = sweep_result.trusted & (lam > 0)
    if window is not None:
        lo, hi = map(float, window)
        if not lo < hi:
            raise FitError(f"fit window needs lo < hi, got {window}", window=list(window))
        mask &= (lam >= lo) & (lam <= hi)
    if mask.sum() < MIN_FIT_POINTS:
        raise FitError(f"growth fit needs {MIN_FIT_POINTS} trusted points, window holds {int(mask.sum())}",
                       window=list(window) if window else None, samples=int(mask.sum()))
    x, y = lam[mask], sweep_result.norms[mask]
    fit = linregress(np.log(x), np.log(y))
    r_squared = float(fit.rvalue ** 2) if np.isfinite(fit.rvalue) else 0.0
    return GrowthFit(float(fit.slope), float(np.exp(fit.intercept)), r_squared,
                     (float(x[0]), float(x[-1])), int(mask.sum()))


# =============================================================================
# PREDICTED RATES
# =============================================================================

@dataclass(frozen=True)
class TheoremTarget:
    """What the stability theory predicts for a configuration"""

    key: str
    system: str
    exponent: Optional[float]
    decay: Optional[float]
    model: str
    statement: str
    beta: Optional[float] = None

    def to_dict(self) -> Dict:
        return {
            'key': self.key,
            'system': self.system,
            'resolvent_exponent': self.exponent,
            'decay_exponent': self.decay,
            'model': self.model,
            'statement': self.statement,
            'beta': self.beta,
        }


def _localized(beta: float) -> Tuple[float, float]:
    ell = 2.0 + 4.0 * beta
    return ell, 2.0 / ell


THEOREM_TARGETS: Dict[Tuple[str, str], TheoremTarget] = {
    ('kelvin_voigt', 'constant'): TheoremTarget('constant', 'kelvin_voigt', 2.0, 1.0, 'polynomial',
                                                 'resolvent O(lam^2), energy ~ t^-1 and no uniform rate'),
    ('kelvin_voigt', 'OneD_bc'): TheoremTarget('OneD_bc', 'kelvin_voigt', None, None, 'strong',
                                                'localized damping and coupling on an interval: strong stability'),
    ('kelvin_voigt', 'H1_sample'): TheoremTarget('H1_sample', 'kelvin_voigt', 2.0, 1.0, 'polynomial',
                                                  'damping and coupling near the whole boundary: t^-1'),
    ('kelvin_voigt', 'H2_sample'): TheoremTarget('H2_sample', 'kelvin_voigt', 2.0, 1.0, 'polynomial',
                                                  'nested boundary frames: t^-1'),
    ('kelvin_voigt', 'H3_sample'): TheoremTarget('H3_sample', 'kelvin_voigt', 2.0, 1.0, 'polynomial',
                                                  'interior nested bands: t^-1'),
    ('kelvin_voigt', 'H4'): TheoremTarget('H4', 'kelvin_voigt', *_localized(2.0), 'polynomial',
                                          'interior vertical strips: t^-(2/(2+4 beta)), beta = 2', beta=2.0),
    ('kelvin_voigt', 'H5'): TheoremTarget('H5', 'kelvin_voigt', *_localized(1.5), 'polynomial',
                                          'strips touching the boundary: t^-(2/(2+4 beta)), beta = 3/2', beta=1.5),
    ('viscous_single', 'H4'): TheoremTarget('H4', 'viscous_single', 2.0, 1.0, 'polynomial',
                                            'single viscously damped wave on an interior strip: t^-1'),
    ('viscous_single', 'H5'): TheoremTarget('H5', 'viscous_single', 1.5, 4.0 / 3.0, 'polynomial',
                                            'single viscously damped wave on a boundary strip: t^-4/3'),
    ('viscous_single', 'H2_sample'): TheoremTarget('H2_sample', 'viscous_single', 0.0, None, 'exponential',
                                                   'single viscously damped wave, damping region controls: exponential'),
    ('viscous_single', 'H3_sample'): TheoremTarget('H3_sample', 'viscous_single', 0.0, None, 'exponential',
                                                   'single viscously damped wave, damping region controls: exponential'),
    ('viscous_single', 'constant'): TheoremTarget('constant', 'viscous_single', 0.0, None, 'exponential',
                                                  'single wave damped everywhere: exponential'),
    # both components viscously damped on a region satisfying the geometric control condition
    ('viscous_coupled', 'constant'): TheoremTarget('constant', 'viscous_coupled', 0.0, None, 'exponential',
                                                   'two viscous dampings everywhere: exponential'),
    ('viscous_coupled', 'H1_sample'): TheoremTarget('H1_sample', 'viscous_coupled', 0.0, None, 'exponential',
                                                    'two viscous dampings near the whole boundary: exponential'),
    ('viscous_coupled', 'H2_sample'): TheoremTarget('H2_sample', 'viscous_coupled', 0.0, None, 'exponential',
                                                    'two viscous dampings on boundary frames: exponential'),
}


def theorem_target(key: str, system: str = 'kelvin_voigt') -> Optional[TheoremTarget]:
    """Target for a preset name (or 'constant'), None when the theory makes no rate claim"""
    return THEOREM_TARGETS.get((system, key))


def predicted_exponent(key: str, system: str = 'kelvin_voigt') -> Optional[float]:
    """Resolvent growth ceiling l for a configuration"""
    target = theorem_target(key, system)
    return target.exponent if target is not None else None


if __name__ == "__main__":
    from modules.geometry import Domain, build_grid, constant_field
    from modules.operators import assemble_generator
    from modules.spectral import dirichlet_modes

    grid = build_grid(Domain.interval(math.pi), 200)
    gen = assemble_generator(grid, 1.0, constant_field(grid, 1.0, 'b'), constant_field(grid, 1.0, 'c'))
    result = sweep(gen, LambdaSchedule.at_modes(dirichlet_modes(grid.domain, 30).window(5, 30)), workers=2)
    fit = fit_growth_exponent(result)
    print(f"exponent {fit.exponent:.3f}, r^2 {fit.r_squared:.4f}, implied decay t^-{fit.implied_decay:.3f}")
