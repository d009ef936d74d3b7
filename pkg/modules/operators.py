#!/usr/bin/env python3
"""
operators.py - Sparse discrete operators of the coupled Kelvin-Voigt system

Second-order finite differences with lumped mass. The state U = (u, v, y, z)
evolves under U_t = A_h U with

    A_h U = (v, -a K u - K_b v - C_c z, z, -K y + C_c v)

and the energy inner product

    <U, W>_h = h^d (a u'K w_u + v'w_v + y'K w_y + z'w_z)

in which Re<A_h U, U>_h = -h^d v'K_b v <= 0. The auxiliary viscous systems
(two coupled waves with d(x) damping, or a single damped wave) share the same
machinery with a diagonal damping matrix in place of K_b.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from modules.errors import OperatorError
from modules.geometry import CoefficientField, Grid

logger = logging.getLogger(__name__)

KELVIN_VOIGT = 'kelvin_voigt'
VISCOUS_COUPLED = 'viscous_coupled'
VISCOUS_SINGLE = 'viscous_single'
SYSTEMS = (KELVIN_VOIGT, VISCOUS_COUPLED, VISCOUS_SINGLE)


# =============================================================================
# STATES
# =============================================================================

@dataclass(frozen=True, eq=False)
class SystemState:
    """
    Flat state vector split into equal blocks over the interior nodes.

    Four blocks (u, v, y, z) for the coupled systems, two blocks (u, v) for
    the single damped wave. Complex data is allowed (resolvent solves).
    """

    data: np.ndarray
    n_blocks: int = 4

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 1 or data.size % self.n_blocks:
            raise OperatorError(f"state of length {data.size} does not split into {self.n_blocks} blocks")
        if not np.iscomplexobj(data):
            data = data.astype(float)
        object.__setattr__(self, 'data', data)

    @classmethod
    def from_blocks(cls, *blocks: np.ndarray) -> 'SystemState':
        sizes = {np.size(b) for b in blocks}
        if len(sizes) != 1:
            raise OperatorError(f"state blocks have different sizes {sorted(sizes)}")
        return cls(np.concatenate([np.ravel(b) for b in blocks]), len(blocks))

    @property
    def block_size(self) -> int:
        return self.data.size // self.n_blocks

    def block(self, k: int) -> np.ndarray:
        N = self.block_size
        return self.data[k * N:(k + 1) * N]

    @property
    def u(self) -> np.ndarray:
        return self.block(0)

    @property
    def v(self) -> np.ndarray:
        return self.block(1)

    @property
    def y(self) -> np.ndarray:
        return self.block(2)

    @property
    def z(self) -> np.ndarray:
        return self.block(3)

    def _like(self, data: np.ndarray) -> 'SystemState':
        return SystemState(data, self.n_blocks)

    def __add__(self, other: 'SystemState') -> 'SystemState':
        return self._like(self.data + other.data)

    def __sub__(self, other: 'SystemState') -> 'SystemState':
        return self._like(self.data - other.data)

    def __mul__(self, scalar) -> 'SystemState':
        return self._like(self.data * scalar)

    __rmul__ = __mul__


# =============================================================================
# MATRICES
# =============================================================================

def _difference_1d(n: int) -> sp.csr_matrix:
    """Edge differences (n+1 edges, boundary values eliminated)"""
    ones = np.ones(n)
    return sp.diags([ones, -ones], [0, -1], shape=(n + 1, n), format='csr')


def _edge_average_1d(n: int) -> sp.csr_matrix:
    """Arithmetic mean of the two end values of each edge; boundary edges take the interior value"""
    half = 0.5 * np.ones(n)
    M = sp.diags([half, half], [0, -1], shape=(n + 1, n), format='lil')
    M[0, 0] = 1.0
    M[n, n - 1] = 1.0
    return M.tocsr()


def difference_operators(grid: Grid) -> Tuple[Tuple[sp.csr_matrix, sp.csr_matrix], ...]:
    """(difference, edge-average) pair per axis, acting on interior node vectors"""
    n = grid.n
    D1, M1 = _difference_1d(n), _edge_average_1d(n)
    if grid.dim == 1:
        return ((D1, M1),)
    I = sp.identity(n, format='csr')
    return (
        (sp.kron(I, D1, format='csr'), sp.kron(I, M1, format='csr')),
        (sp.kron(D1, I, format='csr'), sp.kron(M1, I, format='csr')),
    )


def laplacian_stiffness(grid: Grid) -> sp.csr_matrix:
    """
    Dirichlet stiffness of -Laplace: tridiagonal (2, -1)/h^2 in 1D,
    5-point (4, -1, -1, -1, -1)/h^2 in 2D. Symmetric positive definite.
    """
    K = sum(D.T @ D for D, _ in difference_operators(grid)) / grid.h ** 2
    return sp.csr_matrix(K)


def weighted_stiffness(grid: Grid, field: CoefficientField) -> sp.csr_matrix:
    """
    Flux-form stiffness of -div(b grad .).

    Edge weight = mean of the two nodal values, so v'K_b v equals
    sum_edges b_edge (v_j - v_i)^2 / h^2 and constant b gives b * K.
    """
    _check_field(grid, field)
    if np.any(field.values < 0):
        raise OperatorError(f"weighted stiffness needs a nonnegative field, '{field.name}' has min {field.values.min()}",
                            field=field.name)
    K_b = None
    for D, M in difference_operators(grid):
        w = M @ field.values
        term = D.T @ sp.diags(w) @ D
        K_b = term if K_b is None else K_b + term
    K_b = sp.csr_matrix(K_b / grid.h ** 2)
    K_b.eliminate_zeros()
    return K_b


def export_coo(matrix: sp.spmatrix, path: str) -> int:
    """Write 'row col value' triplets (0-based) for external checks; returns entry count"""
    coo = sp.coo_matrix(matrix)
    table = np.column_stack([coo.row, coo.col, coo.data])
    np.savetxt(path, table, fmt=['%d', '%d', '%.17g'])
    return coo.nnz


def _check_field(grid: Grid, field: Optional[CoefficientField]):
    if field is None:
        return
    if field.grid != grid or field.values.size != grid.size:
        raise OperatorError(
            f"field '{field.name}' lives on a grid with {field.values.size} nodes, generator grid has {grid.size}",
            field=field.name)


# =============================================================================
# GENERATOR
# =============================================================================

@dataclass(frozen=True, eq=False)
class DiscreteGenerator:
    """
    Block operator A_h with its energy structure.

    wave_weights holds the stiffness weight of each wave in the energy
    ((a, 1) for the coupled systems, (1,) for the single wave); damping holds
    the velocity damping operator of each wave (K_b and 0 for Kelvin-Voigt,
    D_d twice for the coupled viscous system).
    """

    grid: Grid
    a: float
    K: sp.csr_matrix
    K_b: sp.csr_matrix
    C_c: sp.csr_matrix
    matrix: sp.csr_matrix
    kind: str
    wave_weights: Tuple[float, ...]
    damping: Tuple[sp.csr_matrix, ...]
    b_field: Optional[CoefficientField] = None
    c_field: Optional[CoefficientField] = None

    @property
    def n_blocks(self) -> int:
        return 2 * len(self.wave_weights)

    @property
    def block_size(self) -> int:
        return self.grid.size

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_conservative(self) -> bool:
        return all(D.count_nonzero() == 0 for D in self.damping)

    @cached_property
    def stiffness_lu(self):
        return splu(sp.csc_matrix(self.K))

    @cached_property
    def gram(self) -> sp.csr_matrix:
        """Energy Gram matrix G with <U, W>_h = W^H G U"""
        I = sp.identity(self.block_size, format='csr')
        blocks = []
        for w in self.wave_weights:
            blocks += [w * self.K, I]
        return sp.csr_matrix(sp.block_diag(blocks) * self.grid.cell_volume)

    def zero_state(self, dtype=float) -> SystemState:
        return SystemState(np.zeros(self.dimension, dtype=dtype), self.n_blocks)

    def check_state(self, state: SystemState):
        if state.data.size != self.dimension or state.n_blocks != self.n_blocks:
            raise OperatorError(
                f"state with {state.n_blocks} blocks of {state.block_size} does not match "
                f"generator with {self.n_blocks} blocks of {self.block_size}")

    def inner(self, U: SystemState, W: SystemState) -> complex:
        self.check_state(U)
        self.check_state(W)
        return complex(np.vdot(W.data, self.gram @ U.data))

    def gram_solve(self, x: np.ndarray) -> np.ndarray:
        """G^{-1} x, reusing one factorization of K"""
        N = self.block_size
        out = np.empty_like(x)
        scale = self.grid.cell_volume
        for k, w in enumerate(self.wave_weights):
            disp = slice(2 * k * N, (2 * k + 1) * N)
            vel = slice((2 * k + 1) * N, (2 * k + 2) * N)
            out[disp] = _lu_solve(self.stiffness_lu, x[disp]) / (w * scale)
            out[vel] = x[vel] / scale
        return out

    def describe(self) -> dict:
        return {
            'kind': self.kind,
            'a': self.a,
            'grid': {'domain': self.grid.domain.kind.value, 'L': self.grid.L, 'n': self.grid.n, 'h': self.grid.h},
            'dimension': self.dimension,
            'b': self.b_field.describe() if self.b_field is not None else None,
            'c': self.c_field.describe() if self.c_field is not None else None,
        }


def _lu_solve(lu, x: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(x):
        return lu.solve(np.ascontiguousarray(x.real)) + 1j * lu.solve(np.ascontiguousarray(x.imag))
    return lu.solve(np.ascontiguousarray(x))


def _check_a(a: float):
    if not np.isfinite(a) or a <= 0:
        raise OperatorError(f"elastic modulus a must be positive, got {a}", a=a)


def assemble_generator(grid: Grid, a: float, b_field: CoefficientField,
                       c_field: CoefficientField) -> DiscreteGenerator:
    """
    Kelvin-Voigt coupled generator, rows matching the continuous operator:

        (v, div(a grad u + b grad v) - c z, z, Laplace y + c v)
    """
    _check_a(a)
    _check_field(grid, b_field)
    _check_field(grid, c_field)
    K = laplacian_stiffness(grid)
    K_b = weighted_stiffness(grid, b_field)
    C = sp.diags(c_field.values, format='csr')
    I = sp.identity(grid.size, format='csr')
    A = sp.bmat([
        [None, I, None, None],
        [-a * K, -K_b, None, -C],
        [None, None, None, I],
        [None, C, -K, None],
    ], format='csr')
    zero = sp.csr_matrix((grid.size, grid.size))
    logger.debug(f"assembled Kelvin-Voigt generator of dimension {A.shape[0]}")
    return DiscreteGenerator(grid, float(a), K, K_b, C, A, KELVIN_VOIGT, (float(a), 1.0), (K_b, zero),
                             b_field, c_field)


def assemble_viscous_generator(grid: Grid, a: float, d_field: CoefficientField,
                               c_field: Optional[CoefficientField] = None,
                               single: bool = False) -> DiscreteGenerator:
    """
    Viscously damped counterparts.

    single=False: (eta, a Lap phi - d eta - c xi, xi, Lap psi - d xi + c eta)
    single=True:  (eta, Lap phi - d eta), the one-wave system with d = 1 on omega_c
    """
    _check_a(a)
    _check_field(grid, d_field)
    if np.any(d_field.values < 0):
        raise OperatorError(f"viscous damping needs d >= 0, got min {d_field.values.min()}", field=d_field.name)
    K = laplacian_stiffness(grid)
    D = sp.diags(d_field.values, format='csr')
    I = sp.identity(grid.size, format='csr')
    zero = sp.csr_matrix((grid.size, grid.size))

    if single:
        A = sp.bmat([[None, I], [-K, -D]], format='csr')
        return DiscreteGenerator(grid, 1.0, K, zero, zero, A, VISCOUS_SINGLE, (1.0,), (D,), d_field, None)

    if c_field is None:
        raise OperatorError("coupled viscous system needs a coupling field")
    _check_field(grid, c_field)
    C = sp.diags(c_field.values, format='csr')
    A = sp.bmat([
        [None, I, None, None],
        [-a * K, -D, None, -C],
        [None, None, None, I],
        [None, C, -K, -D],
    ], format='csr')
    return DiscreteGenerator(grid, float(a), K, zero, C, A, VISCOUS_COUPLED, (float(a), 1.0), (D, D),
                             d_field, c_field)


# =============================================================================
# STATE FUNCTIONALS
# =============================================================================

def apply_generator(gen: DiscreteGenerator, state: SystemState) -> SystemState:
    gen.check_state(state)
    return SystemState(gen.matrix @ state.data, gen.n_blocks)


def energy(gen: DiscreteGenerator, state: SystemState) -> float:
    """E = 1/2 <U, U>_h"""
    return 0.5 * gen.inner(state, state).real


def dissipation(gen: DiscreteGenerator, state: SystemState) -> float:
    """dE/dt at this state: -h^d sum over waves of v' D v (nonpositive)"""
    gen.check_state(state)
    total = 0.0
    for k, D in enumerate(gen.damping):
        vel = state.block(2 * k + 1)
        total += np.vdot(vel, D @ vel).real
    return -gen.grid.cell_volume * total


def random_state(gen: DiscreteGenerator, rng: np.random.Generator, complex_valued: bool = False) -> SystemState:
    data = rng.standard_normal(gen.dimension)
    if complex_valued:
        data = data + 1j * rng.standard_normal(gen.dimension)
    return SystemState(data, gen.n_blocks)


def states_from_blocks(gen: DiscreteGenerator, blocks: Sequence[np.ndarray]) -> SystemState:
    state = SystemState.from_blocks(*blocks)
    gen.check_state(state)
    return state
