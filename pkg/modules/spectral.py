#!/usr/bin/env python3
"""
spectral.py - Characteristic quartic per Dirichlet mode and generator spectra

For constant b and c every Dirichlet mode mu_k contributes the four roots of

    P(lam) = lam^4 + b mu^2 lam^3 + ((1 + a) mu^2 + c^2) lam^2 + b mu^4 lam + a mu^4

The branch near i*mu behaves like i*mu - c^2 / (2 b mu^2), so the high
modes drift towards the imaginary axis and no uniform decay rate exists.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import linear_sum_assignment
from scipy.sparse.linalg import ArpackNoConvergence, eigs

from modules.errors import BranchSelectionError, ParameterError, RootPolishError, SolverError
from modules.geometry import Domain, Grid
from modules.operators import DiscreteGenerator

logger = logging.getLogger(__name__)

# Above this frequency roots are computed in xi = lam / mu (zeta = 1 / mu)
RESCALE_THRESHOLD = 1e3
POLISH_STEPS = 5
RESIDUAL_TOL = 1e-9
# rescaled roots may sit this many ulps right of the axis when Re is below rounding
HALF_PLANE_ULPS = 8
DENSE_BLOCK_LIMIT = 2500


# =============================================================================
# MODES
# =============================================================================

@dataclass(frozen=True, eq=False)
class ModeSet:
    """Dirichlet frequencies mu_k (ascending) with their mode labels"""

    domain: Domain
    mus: np.ndarray
    labels: Tuple[Tuple[int, ...], ...]
    discrete: bool = False

    def __len__(self) -> int:
        return len(self.mus)

    def tail(self, k_min: int) -> List[Tuple[int, Tuple[int, ...], float]]:
        """(1-based index, label, mu) for every mode with index >= k_min"""
        return [(i + 1, label, float(mu)) for i, (label, mu) in enumerate(zip(self.labels, self.mus)) if i + 1 >= k_min]

    def window(self, k_lo: int, k_hi: int) -> 'ModeSet':
        """Modes with 1-based index in [k_lo, k_hi]"""
        sl = slice(max(k_lo, 1) - 1, k_hi)
        return ModeSet(self.domain, self.mus[sl], self.labels[sl], self.discrete)


def _square_labels(count: int) -> List[Tuple[int, int]]:
    pairs = [(m, n) for m in range(1, count + 1) for n in range(1, count + 1)]
    pairs.sort(key=lambda mn: (mn[0] ** 2 + mn[1] ** 2, mn[0]))
    return pairs[:count]


def dirichlet_modes(domain: Domain, count: int) -> ModeSet:
    """
    The count lowest Dirichlet frequencies.

    1D: mu_k = k pi / L. Square: pi sqrt(m^2 + n^2) / L with multiplicity,
    ties ordered by m.
    """
    if count < 1:
        raise ParameterError(f"mode count must be >= 1, got {count}", count=count)
    if domain.dim == 1:
        labels = [(k,) for k in range(1, count + 1)]
    else:
        labels = _square_labels(count)
    mus = np.array([np.pi * np.sqrt(sum(i * i for i in label)) / domain.L for label in labels])
    return ModeSet(domain, mus, tuple(labels))


def discrete_frequency(grid: Grid, label: Sequence[int]) -> float:
    """sqrt of the finite-difference Laplacian eigenvalue sum_axis (4/h^2) sin^2(l pi h / 2L)"""
    if len(label) != grid.dim or any(l < 1 or l > grid.n for l in label):
        raise ParameterError(f"mode {tuple(label)} is not resolved by a grid with n={grid.n}", label=list(label))
    h, L = grid.h, grid.L
    return float(np.sqrt(sum(4.0 / h ** 2 * np.sin(l * np.pi * h / (2 * L)) ** 2 for l in label)))


def discrete_modes(grid: Grid, count: Optional[int] = None) -> ModeSet:
    """Grid frequencies mu_{k,h}, ascending; all n^d of them when count is None"""
    n = grid.n
    if grid.dim == 1:
        labels = [(k,) for k in range(1, n + 1)]
    else:
        labels = [(m, k) for m in range(1, n + 1) for k in range(1, n + 1)]
    mus = np.array([discrete_frequency(grid, label) for label in labels])
    order = np.argsort(mus, kind='stable')
    if count is not None:
        order = order[:count]
    return ModeSet(grid.domain, mus[order], tuple(labels[i] for i in order), discrete=True)


def grid_consistent_modes(grid: Grid, modes: ModeSet) -> ModeSet:
    """Same labels as modes, frequencies replaced by their grid counterparts"""
    mus = np.array([discrete_frequency(grid, label) for label in modes.labels])
    return ModeSet(modes.domain, mus, modes.labels, discrete=True)


# =============================================================================
# CHARACTERISTIC QUARTIC
# =============================================================================

def _check_params(a: Optional[float], b: float, mu: float):
    if a is not None and not a > 0:
        raise ParameterError(f"a must be positive, got {a}", a=a)
    if not b > 0:
        raise ParameterError(f"b must be positive, got {b}", b=b)
    if not mu > 0:
        raise ParameterError(f"mu must be positive, got {mu}", mu=mu)


def characteristic_coefficients(a: float, b: float, c: float, mu: float) -> np.ndarray:
    """Coefficients of P, highest degree first"""
    mu2 = mu * mu
    return np.array([1.0, b * mu2, (1.0 + a) * mu2 + c * c, b * mu2 * mu2, a * mu2 * mu2])


def rescaled_coefficients(a: float, b: float, c: float, mu: float) -> np.ndarray:
    """h(xi) = P(mu xi) / mu^5 = zeta xi^4 + b xi^3 + ((1+a) zeta + c^2 zeta^3) xi^2 + b xi + a zeta"""
    zeta = 1.0 / mu
    return np.array([zeta, b, (1.0 + a) * zeta + c * c * zeta ** 3, b, a * zeta])


def symbol_residual(a: float, b: float, c: float, mu: float, lam: complex) -> complex:
    """Scalar symbol of the fourth-order reduction (in y) for mode mu"""
    mu2 = mu * mu
    return (a + lam * b) * mu2 * mu2 + ((1 + a) * lam ** 2 + b * lam ** 3) * mu2 + lam ** 2 * (lam ** 2 + c * c)


def _residual_and_scale(coeffs: np.ndarray, r: complex) -> Tuple[float, float]:
    powers = np.abs(r) ** np.arange(len(coeffs) - 1, -1, -1)
    terms = np.abs(coeffs) * powers
    return float(abs(np.polyval(coeffs, r))), float(terms.max())


def _newton_polish(coeffs: np.ndarray, root: complex, steps: int) -> complex:
    deriv = np.polyder(coeffs)
    best, best_res = root, abs(np.polyval(coeffs, root))
    r = root
    for _ in range(steps):
        dp = np.polyval(deriv, r)
        if dp == 0:
            break
        step = np.polyval(coeffs, r) / dp
        r = r - step
        res = abs(np.polyval(coeffs, r))
        if res <= best_res:
            best, best_res = r, res
        if abs(step) <= 1e-16 * max(abs(r), 1.0):
            break
    return complex(best)


@dataclass(frozen=True, eq=False)
class QuarticRoots:
    """Four roots of P for one mode, with |P(root)| and the scale it is judged against"""

    mu: float
    coefficients: np.ndarray
    roots: np.ndarray
    residuals: np.ndarray
    scales: np.ndarray
    rescaled: bool = False

    def vieta_errors(self) -> Tuple[float, float]:
        """Relative errors of sum = -b mu^2 and product = a mu^4"""
        c = self.coefficients
        total = -c[1]
        product = c[4]
        err_sum = abs(self.roots.sum() - total) / max(abs(total), 1e-300)
        err_prod = abs(np.prod(self.roots) - product) / max(abs(product), 1e-300)
        return float(err_sum), float(err_prod)

    def max_relative_residual(self) -> float:
        return float(np.max(self.residuals / self.scales))


def characteristic_roots(a: float, b: float, c: float, mu: float,
                         polish_steps: int = POLISH_STEPS, tol: float = RESIDUAL_TOL) -> QuarticRoots:
    """
    Roots of P via companion-matrix eigenvalues, each polished by Newton.

    For mu > RESCALE_THRESHOLD the rescaled polynomial h(xi) is solved and
    its roots multiplied by mu. A residual counts as converged when
    |P(r)| <= tol * max_j |p_j| |r|^j, the rounding scale of evaluating P at r.

    Raises:
        RootPolishError when any root misses the tolerance, or when coupling
        is on and a root leaves the open left half plane
    """
    _check_params(a, b, mu)
    rescaled = mu > RESCALE_THRESHOLD
    work = rescaled_coefficients(a, b, c, mu) if rescaled else characteristic_coefficients(a, b, c, mu)
    guesses = np.linalg.eigvals(scipy.linalg.companion(work))
    polished = np.array([_newton_polish(work, r, polish_steps) for r in guesses])
    checks = [_residual_and_scale(work, r) for r in polished]
    residuals = np.array([res for res, _ in checks])
    scales = np.array([scale for _, scale in checks])
    if np.any(residuals > tol * scales):
        raise RootPolishError(f"quartic roots for mu={mu} missed residual tolerance {tol}",
                              residuals=(residuals / scales).tolist(), mu=mu)
    roots = polished * mu if rescaled else polished
    if c != 0.0:
        band = HALF_PLANE_ULPS * np.finfo(float).eps * np.abs(roots) if rescaled else 0.0
        if np.any(roots.real >= band):
            raise RootPolishError(f"quartic root for mu={mu} landed in the closed right half plane",
                                  residuals=(residuals / scales).tolist(), mu=mu,
                                  max_re=float(roots.real.max()))
    coefficients = characteristic_coefficients(a, b, c, mu)
    if rescaled:
        # report residuals in the original polynomial's scale
        residuals = residuals * mu ** 5
        scales = scales * mu ** 5
    return QuarticRoots(float(mu), coefficients, np.sort_complex(roots), residuals, scales, rescaled)


def asymptotic_branch(a: float, b: float, c: float, mu: float) -> Tuple[complex, complex]:
    """Leading-order branches (i mu - c^2/(2 b mu^2), -i mu - c^2/(2 b mu^2))"""
    _check_params(None, b, mu)
    shift = -c * c / (2.0 * b * mu * mu)
    return complex(shift, mu), complex(shift, -mu)


def select_branch(roots: np.ndarray, mu: float, rel_tol: float = 1e-12) -> complex:
    """Root with positive imaginary part nearest to i*mu"""
    upper = [r for r in roots if r.imag > 0]
    if not upper:
        raise BranchSelectionError(f"no root with positive imaginary part for mu={mu}", mu=mu)
    dist = sorted((abs(r - 1j * mu), i) for i, r in enumerate(upper))
    if len(dist) > 1 and abs(dist[1][0] - dist[0][0]) <= rel_tol * max(dist[0][0], mu):
        raise BranchSelectionError(f"two roots equidistant from i*mu for mu={mu}", mu=mu,
                                   candidates=[upper[dist[0][1]], upper[dist[1][1]]])
    return complex(upper[dist[0][1]])


def quartic_spectrum(a: float, b: float, c: float, mus: Sequence[float], workers: int = 1) -> np.ndarray:
    """Union over modes of the roots of P (the constant-coefficient spectrum)"""
    mus = list(mus)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda mu: characteristic_roots(a, b, c, mu), mus))
    else:
        results = [characteristic_roots(a, b, c, mu) for mu in mus]
    return np.sort_complex(np.concatenate([r.roots for r in results]))


# =============================================================================
# ASYMPTOTIC REPORT
# =============================================================================

@dataclass(frozen=True)
class SpectrumRecord:
    k: int
    label: Tuple[int, ...]
    mu: float
    exact: complex
    asymptotic: complex
    abs_re_times_mu2: float
    rel_gap: float


@dataclass
class SpectrumReport:
    a: float
    b: float
    c: float
    k_min: int
    records: List[SpectrumRecord] = field(default_factory=list)

    CSV_HEADER = 'k,mu,re_exact,im_exact,re_asym,im_asym,abs_re_times_mu2,rel_gap'

    @property
    def target(self) -> float:
        """Limit of |Re lam_1k| mu^2, namely c^2 / (2b)"""
        return self.c * self.c / (2.0 * self.b)

    def gaps(self) -> np.ndarray:
        return np.array([r.rel_gap for r in self.records])

    def gap_non_increasing(self, noise: float = 1e-9) -> bool:
        g = self.gaps()
        return bool(np.all(np.diff(g) <= noise))

    def window_max_abs_re(self, k_lo: int, k_hi: int) -> float:
        values = [abs(r.exact.real) for r in self.records if k_lo <= r.k <= k_hi]
        if not values:
            raise ParameterError(f"no reported modes in [{k_lo}, {k_hi}]", k_lo=k_lo, k_hi=k_hi)
        return float(max(values))

    def max_gap(self, k_lo: Optional[int] = None, k_hi: Optional[int] = None) -> float:
        values = [r.rel_gap for r in self.records
                  if (k_lo is None or r.k >= k_lo) and (k_hi is None or r.k <= k_hi)]
        return float(max(values))

    def re_vanishing(self) -> bool:
        """Tail real parts shrink: last third peaks below the first third"""
        re = np.abs([r.exact.real for r in self.records])
        third = max(len(re) // 3, 1)
        return bool(re[-third:].max() < re[:third].max()) if len(re) >= 2 else False

    def summary(self) -> Dict:
        tail_lo = self.records[-1].k - min(20, len(self.records) - 1)
        return {
            'a': self.a, 'b': self.b, 'c': self.c,
            'k_min': self.k_min,
            'k_max': self.records[-1].k,
            'target_abs_re_times_mu2': self.target,
            'max_rel_gap': self.max_gap(),
            'tail_max_rel_gap': self.max_gap(tail_lo),
            'tail_window': [tail_lo, self.records[-1].k],
            'gap_non_increasing': self.gap_non_increasing(),
            're_vanishing': self.re_vanishing(),
            'last_abs_re': abs(self.records[-1].exact.real),
        }

    def to_csv(self, path: str):
        with open(path, 'w') as f:
            f.write(self.CSV_HEADER + '\n')
            for r in self.records:
                f.write(f"{r.k},{r.mu:.17g},{r.exact.real:.17g},{r.exact.imag:.17g},"
                        f"{r.asymptotic.real:.17g},{r.asymptotic.imag:.17g},"
                        f"{r.abs_re_times_mu2:.17g},{r.rel_gap:.17g}\n")


def verify_asymptotics(a: float, b: float, c: float, modes: ModeSet, k_min: int,
                       workers: int = 1) -> SpectrumReport:
    """
    Compare the exact i*mu branch with its leading-order prediction on the tail k >= k_min.

    rel_gap is | |Re lam| mu^2 - c^2/(2b) | / (c^2/(2b)); for c = 0 it is
    the absolute |Re lam| mu^2.
    """
    tail = modes.tail(k_min)
    if not tail:
        raise ParameterError(f"mode set of {len(modes)} modes has no tail beyond k_min={k_min}", k_min=k_min)
    report = SpectrumReport(a, b, c, k_min)
    target = report.target

    def one(item):
        k, label, mu = item
        exact = select_branch(characteristic_roots(a, b, c, mu).roots, mu)
        asym, _ = asymptotic_branch(a, b, c, mu)
        scaled = abs(exact.real) * mu * mu
        gap = abs(scaled - target) / target if target > 0 else scaled
        return SpectrumRecord(k, label, mu, exact, asym, scaled, gap)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            report.records = list(pool.map(one, tail))
    else:
        report.records = [one(item) for item in tail]
    logger.info(f"asymptotics: {len(report.records)} modes from k={k_min}, "
                f"max rel gap {report.max_gap():.3e}")
    return report


# =============================================================================
# GENERATOR SPECTRA
# =============================================================================

def generator_spectrum(gen: DiscreteGenerator, max_block: int = DENSE_BLOCK_LIMIT) -> np.ndarray:
    """All eigenvalues of the dense block matrix (rejects blocks above max_block nodes)"""
    if gen.block_size > max_block:
        raise ParameterError(f"dense eigensolve limited to {max_block} nodes per block, grid has {gen.block_size}",
                             block_size=gen.block_size)
    try:
        values = scipy.linalg.eigvals(gen.matrix.toarray())
    except (np.linalg.LinAlgError, ValueError) as e:
        raise SolverError(f"dense eigensolver failed: {e}")
    scale = max(abs(values).max(), 1.0)
    if values.real.max() > 1e-9 * scale:
        logger.warning(f"spectrum has Re = {values.real.max():.3e} > 0 beyond rounding")
    return np.sort_complex(values)


def spectral_abscissa(gen: DiscreteGenerator, max_block: int = DENSE_BLOCK_LIMIT) -> float:
    """max Re over the spectrum of A_h; sparse Arnoldi beyond the dense limit"""
    if gen.block_size <= max_block:
        return float(generator_spectrum(gen, max_block).real.max())
    logger.warning(f"grid above dense limit, estimating abscissa with Arnoldi")
    try:
        values = eigs(gen.matrix.tocsc(), k=6, which='LR', return_eigenvectors=False, maxiter=20000)
    except ArpackNoConvergence as e:
        raise SolverError(f"Arnoldi did not converge for the spectral abscissa: {e}")
    return float(values.real.max())


def imaginary_axis_gap(gen: DiscreteGenerator, max_block: int = DENSE_BLOCK_LIMIT) -> float:
    """Smallest |Re lam|; zero means an undamped mode survives on the imaginary axis"""
    return float(np.abs(generator_spectrum(gen, max_block).real).min())


def spectrum_distance(first: np.ndarray, second: np.ndarray) -> float:
    """Largest pointwise gap after optimally pairing two eigenvalue multisets"""
    first, second = np.asarray(first), np.asarray(second)
    if first.shape != second.shape:
        raise ParameterError(f"spectra have {first.size} and {second.size} values")
    cost = np.abs(first[:, None] - second[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


if __name__ == "__main__":
    modes = dirichlet_modes(Domain.interval(np.pi), 120)
    report = verify_asymptotics(1.0, 1.0, 1.0, modes, k_min=20)
    for key, value in report.summary().items():
        print(f"  {key}: {value}")
