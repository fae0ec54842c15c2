"""Krylov solvers and preconditioners for the discrete gradient equation.

The full system is ``(M_Gamma + rho * A) y = b``. Splitting the dofs into
strict interior I and near-boundary B, the boundary-layer part of the H1 form
only couples B with B, so I can be eliminated with the interior H1 operator
alone, leaving a Schur complement system on B.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla

from .errors import ConfigurationError, DivergenceError, NotSPDError, OracleSizeError, SolverError
from .mesh1d import Tri1D
from .tensor import (
    DENSE_LIMIT,
    BlockOperator,
    DifferenceOperator,
    DofPartition,
    KronSumOperator,
    SumOperator,
    TensorSpace,
    build_boundary_mass,
    build_h1_operator,
    build_interior_h1_operator,
    contract_axes,
    materialize,
    partition_dofs,
)

INNER_MODES = ("fast-diagonalization-exact", "inner-pcg")
PRECONDITIONERS = ("none", "lumped-boundary-mass", "jacobi", "gmg-vcycle")
COARSENINGS = ("boundary-preserving", "uniform")


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-9
    max_iters: int = 2000
    inner_rel_tol: float = 1e-10
    inner_mode: str = "fast-diagonalization-exact"
    preconditioner: str = "none"
    jacobi_damping: float = 0.8
    smoothing_steps: int = 1
    coarsening: str = "boundary-preserving"

    def __post_init__(self):
        if not 0.0 < self.rel_tol < 1.0:
            raise ConfigurationError(f"rel_tol must lie in (0, 1), got {self.rel_tol}")
        if not 0.0 < self.inner_rel_tol < 1.0:
            raise ConfigurationError(f"inner_rel_tol must lie in (0, 1), got {self.inner_rel_tol}")
        if self.max_iters < 1:
            raise ConfigurationError("max_iters must be >= 1")
        if self.inner_mode not in INNER_MODES:
            raise ConfigurationError(f"unknown inner mode {self.inner_mode!r}")
        if self.preconditioner not in PRECONDITIONERS:
            raise ConfigurationError(f"unknown preconditioner {self.preconditioner!r}")
        if self.coarsening not in COARSENINGS:
            raise ConfigurationError(f"unknown coarsening {self.coarsening!r}")
        if not 0.0 < self.jacobi_damping <= 1.0:
            raise ConfigurationError(f"jacobi_damping must lie in (0, 1], got {self.jacobi_damping}")
        if self.smoothing_steps < 1:
            raise ConfigurationError("smoothing_steps must be >= 1")


@dataclass(frozen=True)
class SolveReport:
    iterations: int
    final_rel_residual: float
    converged: bool
    inner_iterations_total: int = 0
    wall_time: float = 0.0


def _as_apply(op) -> Callable[[np.ndarray], np.ndarray]:
    if op is None:
        return None
    return op.apply if hasattr(op, "apply") else op


def cg(op, rhs: np.ndarray, cfg: SolverConfig = SolverConfig(), precond=None,
       callback: Optional[Callable[[np.ndarray], None]] = None):
    """Preconditioned conjugate gradients from a zero initial guess.

    Stops when the Euclidean norm of the unpreconditioned residual drops below
    ``cfg.rel_tol * ||rhs||``. Returns ``(x, SolveReport)``; hitting
    ``max_iters`` is reported through ``converged=False``, not raised.
    """
    start = time.perf_counter()
    apply_a = _as_apply(op)
    apply_m = _as_apply(precond)
    b = np.asarray(rhs, dtype=float)
    if not np.all(np.isfinite(b)):
        raise DivergenceError("right-hand side is not finite")
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, SolveReport(0, 0.0, True, 0, time.perf_counter() - start)

    r = b.copy()
    z = apply_m(r) if apply_m else r
    p = z.copy()
    rz = r @ z
    res = 1.0
    for it in range(1, cfg.max_iters + 1):
        q = apply_a(p)
        pq = p @ q
        if not np.isfinite(pq):
            raise DivergenceError(f"non-finite value in iteration {it}")
        if pq <= 0.0:
            raise NotSPDError(f"p^T A p = {pq:.3e} <= 0 in iteration {it}")
        alpha = rz / pq
        x += alpha * p
        r -= alpha * q
        res = np.linalg.norm(r) / bnorm
        if callback is not None:
            callback(x)
        if not np.isfinite(res):
            raise DivergenceError(f"non-finite residual in iteration {it}")
        if res <= cfg.rel_tol:
            return x, SolveReport(it, res, True, 0, time.perf_counter() - start)
        z = apply_m(r) if apply_m else r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, SolveReport(cfg.max_iters, res, False, 0, time.perf_counter() - start)


class DiagonalPreconditioner:
    def __init__(self, diag: np.ndarray):
        self.diag = np.asarray(diag, dtype=float)

    def apply(self, r: np.ndarray) -> np.ndarray:
        return r / self.diag


def jacobi_preconditioner(op) -> DiagonalPreconditioner:
    diag = op.diagonal()
    if np.any(diag <= 0):
        raise NotSPDError("nonpositive diagonal entry")
    return DiagonalPreconditioner(diag)


def lumped_mass_preconditioner(mass_bb: BlockOperator, h: float | None = None) -> DiagonalPreconditioner:
    """Diagonal of row sums of the boundary mass block."""
    sums = mass_bb.apply(np.ones(mass_bb.shape[1]))
    if np.any(sums < 0):
        raise ValueError("negative row sum in boundary mass: assembly bug")
    zero = sums == 0.0
    if np.any(zero):
        if h is None:
            raise ValueError("zero row sum in boundary mass and no mesh size to fall back on")
        d = mass_bb.partition.d
        sums = np.where(zero, h ** (d - 1), sums)
    return DiagonalPreconditioner(sums)


class FastDiagSolver:
    """Exact solver for ``sum_k (M x .. K_k .. x M) + mass_weight * (M x .. x M)``.

    Uses the generalized eigenpairs of the 1D pencil (K, M): with
    ``K V = M V diag(lam)`` and ``V^T M V = I`` the operator becomes diagonal
    in the tensor basis ``V x .. x V`` with eigenvalues ``sum_k lam_k + mass_weight``.
    """

    def __init__(self, d: int, mass: Tri1D, stiffness: Tri1D, mass_weight: float = 1.0):
        try:
            lam, vecs = sla.eigh(stiffness.dense(), mass.dense())
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise SolverError(f"generalized eigen-decomposition failed: {exc}") from exc
        self.d = d
        self.m = mass.m
        self.shape = (self.m,) * d
        self.eigenvalues = lam
        self.vectors = vecs
        total = np.full(self.shape, float(mass_weight))
        for k in range(d):
            total = total + lam.reshape([-1 if j == k else 1 for j in range(d)])
        if np.any(total <= 0):
            raise SolverError("singular Kronecker-sum operator")
        self.inverse_eigenvalues = 1.0 / total

    def solve_grid(self, rhs: np.ndarray) -> np.ndarray:
        y = contract_axes(rhs, [self.vectors.T] * self.d)
        y *= self.inverse_eigenvalues
        return contract_axes(y, [self.vectors] * self.d)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        return self.solve_grid(rhs.reshape(self.shape, order="F")).reshape(-1, order="F")

    apply = solve


def fast_diag_build(d: int, mass: Tri1D, stiffness: Tri1D, mass_weight: float = 1.0) -> FastDiagSolver:
    return FastDiagSolver(d, mass, stiffness, mass_weight)


def fast_diag_solve(solver: FastDiagSolver, rhs: np.ndarray) -> np.ndarray:
    return solver.solve(rhs)


class InteriorSolver:
    """Action of the inverse of the interior block of the interior-domain H1 operator."""

    def __init__(self, space: TensorSpace, cfg: SolverConfig):
        self.cfg = cfg
        m = space.m
        self.block = build_interior_h1_operator(space).restrict(1, m - 1)
        self.iterations = 0
        if cfg.inner_mode == "fast-diagonalization-exact":
            self._fd = FastDiagSolver(space.d, space.mass_interior.restrict(1, m - 1),
                                      space.stiffness_interior.restrict(1, m - 1))
        else:
            self._fd = None
            self._jacobi = jacobi_preconditioner(self.block)
            self._inner_cfg = SolverConfig(rel_tol=cfg.inner_rel_tol, max_iters=10 * self.block.size + 10)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        if self._fd is not None:
            return self._fd.solve(rhs)
        x, rep = cg(self.block, rhs, self._inner_cfg, self._jacobi)
        self.iterations += rep.iterations
        if not rep.converged:
            raise SolverError(f"inner interior solve did not converge "
                              f"(residual {rep.final_rel_residual:.2e})", rep)
        return x


class SchurOperator:
    """Boundary Schur complement
    ``S v = M_BB v + rho * (Ktilde_BB v + Kring_BB v - Kring_BI Kring_II^{-1} Kring_IB v)``.
    """

    symmetric = True

    def __init__(self, space: TensorSpace, rho: float, cfg: SolverConfig = SolverConfig()):
        if rho <= 0:
            raise ConfigurationError(f"rho must be positive, got {rho}")
        self.space = space
        self.rho = float(rho)
        self.cfg = cfg
        self.partition: DofPartition = partition_dofs(space)
        if self.partition.interior_ids.size == 0:
            raise ConfigurationError("Schur complement needs at least one interior dof")
        self.h1 = build_h1_operator(space)
        self.h1_interior = build_interior_h1_operator(space)
        self.h1_layer = DifferenceOperator(self.h1, self.h1_interior)
        self.boundary_mass = build_boundary_mass(space)
        self.inner = InteriorSolver(space, cfg)
        self.size = self.partition.boundary_ids.size
        self.shape = (self.size, self.size)

    def block(self, which: str, rows: str, cols: str) -> BlockOperator:
        op = {"M": self.boundary_mass, "Kring": self.h1_interior,
              "Ktilde": self.h1_layer, "A": self.h1}[which]
        return BlockOperator(op, self.partition, rows, cols)

    @property
    def inner_iterations(self) -> int:
        return self.inner.iterations

    def _interior_grid(self, v_i):
        return v_i.reshape(self.partition.interior_shape, order="F")

    def apply(self, v_b: np.ndarray) -> np.ndarray:
        part = self.partition
        full = part.embed(v_boundary=v_b)
        kring_ib = self.h1_interior.apply(full)[part.interior_ids]
        # Ktilde_BB + Kring_BB is the B block of the full H1 operator
        h1_bb = self.h1.apply(full)[part.boundary_ids]
        mass_bb = self.boundary_mass.apply(full)[part.boundary_ids]
        z = self.inner.solve(-kring_ib)
        correction = self.h1_interior.apply(part.embed(v_interior=z))[part.boundary_ids]
        return mass_bb + self.rho * (h1_bb + correction)

    __matmul__ = apply

    def dense(self) -> np.ndarray:
        if self.partition.size > DENSE_LIMIT:
            raise OracleSizeError("dense Schur complement limited to small instances")
        eye = np.eye(self.size)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.size)])


def build_schur(space: TensorSpace, rho: float, cfg: SolverConfig = SolverConfig()) -> SchurOperator:
    return SchurOperator(space, rho, cfg)


def reconstruct_interior(schur: SchurOperator, y_b: np.ndarray) -> np.ndarray:
    """``y_I = -Kring_II^{-1} Kring_IB y_B``."""
    part = schur.partition
    rhs = schur.h1_interior.apply(part.embed(v_boundary=y_b))[part.interior_ids]
    return -schur.inner.solve(rhs)


class GMGPreconditioner:
    """Symmetric V(nu, nu) cycle with damped Jacobi smoothing.

    ``operators[0]`` is the finest level, ``prolongations[l]`` maps level l+1
    to level l along every axis (the same 1D matrix per axis). Restriction is
    the transpose; the coarsest level is solved with a dense Cholesky
    factorization. With a single level the cycle degenerates to ``nu`` damped
    Jacobi steps.
    """

    def __init__(self, operators: Sequence, prolongations: Sequence[np.ndarray] = (),
                 damping: float = 0.8, smoothing_steps: int = 1):
        if len(prolongations) != len(operators) - 1 or not operators:
            raise ConfigurationError("need one prolongation between each pair of levels")
        for lvl, p in enumerate(prolongations):
            if p.shape != (operators[lvl].shape[0], operators[lvl + 1].shape[0]):
                raise ConfigurationError(f"prolongation {lvl} has shape {p.shape}, levels do not match")
        if not 0.0 < damping <= 1.0:
            raise ConfigurationError(f"damping must lie in (0, 1], got {damping}")
        if smoothing_steps < 1:
            raise ConfigurationError("smoothing_steps must be >= 1")
        self.operators = list(operators)
        self.prolongations = [np.asarray(p, dtype=float) for p in prolongations]
        self.damping = damping
        self.nu = smoothing_steps
        self.inv_diag = [1.0 / op.diagonal().reshape(op.shape, order="F") for op in operators]
        self.coarse_factor = sla.cho_factor(materialize(operators[-1])) if len(operators) > 1 else None
        self.size = operators[0].size

    @property
    def levels(self) -> int:
        return len(self.operators)

    def _smooth(self, level, r, x):
        op, dinv, w = self.operators[level], self.inv_diag[level], self.damping
        for _ in range(self.nu):
            x = x + w * dinv * (r - op.apply_grid(x))
        return x

    def _cycle(self, level, r):
        last = len(self.operators) - 1
        if level == last and self.coarse_factor is not None:
            return sla.cho_solve(self.coarse_factor, r.reshape(-1, order="F")).reshape(r.shape, order="F")
        x = self._smooth(level, r, np.zeros_like(r))
        if level == last:
            return x
        p = self.prolongations[level]
        rc = contract_axes(r - self.operators[level].apply_grid(x), [p.T] * r.ndim)
        x = x + contract_axes(self._cycle(level + 1, rc), [p] * r.ndim)
        return self._smooth(level, r, x)

    def apply_grid(self, r):
        return self._cycle(0, r)

    def apply(self, r: np.ndarray) -> np.ndarray:
        shape = self.operators[0].shape
        return self._cycle(0, r.reshape(shape, order="F")).reshape(-1, order="F")


def system_operator(space: TensorSpace, rho: float) -> SumOperator:
    """``M_Gamma + rho * A`` on the full dof set."""
    return SumOperator([(1.0, build_boundary_mass(space)), (rho, build_h1_operator(space))])


def system_kron_sum(space: TensorSpace, rho: float) -> KronSumOperator:
    """``M_Gamma + rho * A`` as a single Kronecker sum (for Galerkin coarsening)."""
    terms = list(build_boundary_mass(space).as_kron_sum().terms)
    terms += [(rho * w, fs) for w, fs in build_h1_operator(space).terms]
    return KronSumOperator(space.d, terms)


def interpolation_1d(coarse_ids: Sequence[int], m: int) -> np.ndarray:
    """Nodal interpolation from the fine dofs ``coarse_ids`` to all ``m`` fine dofs.

    Fine dofs sit at equally spaced nodes, so a dropped dof takes the linear
    interpolant of its two kept neighbours. The kept set must contain both end
    dofs, which keeps the flat end pieces of the modified basis intact.
    """
    ids = np.asarray(coarse_ids, dtype=int)
    if ids[0] != 0 or ids[-1] != m - 1 or np.any(np.diff(ids) <= 0):
        raise ConfigurationError("coarse dofs must be increasing and contain both end dofs")
    p = np.zeros((m, ids.size))
    k = np.searchsorted(ids, np.arange(m))
    for i in range(m):
        if ids[min(k[i], ids.size - 1)] == i:
            p[i, k[i]] = 1.0
        else:
            a, b = ids[k[i] - 1], ids[k[i]]
            t = (i - a) / (b - a)
            p[i, k[i] - 1], p[i, k[i]] = 1.0 - t, t
    return p


def boundary_preserving_coarse_ids(m: int) -> np.ndarray:
    """Keep both end dofs and every odd-indexed dof in between."""
    return np.unique(np.concatenate([[0, m - 1], np.arange(1, m - 1, 2)]))


def uniform_prolongation(coarse: TensorSpace, fine: TensorSpace) -> np.ndarray:
    """Coarse modified basis evaluated at the fine dof nodes (nested uniform meshes)."""
    if fine.n != 2 * coarse.n or fine.d != coarse.d:
        raise ConfigurationError(f"levels not nested: n={coarse.n} then n={fine.n}")
    return coarse.basis.evaluate(fine.basis.dof_nodes)


def galerkin_kron_sum(op: KronSumOperator, p: np.ndarray) -> KronSumOperator:
    """``P^T op P`` for ``P`` acting as the same 1D matrix on every axis."""
    terms = []
    for w, factors in op.terms:
        coarse = []
        for f in factors:
            c = p.T @ f.dense() @ p
            if np.any(np.abs(np.triu(c, 2)) > 1e-12 * np.abs(c).max()):
                raise ConfigurationError("Galerkin factor is not tridiagonal")
            coarse.append(Tri1D(np.diag(c).copy(), np.diag(c, 1).copy(), f.kind))
        terms.append((w, coarse))
    return KronSumOperator(op.d, terms)


def gmg_vcycle(finest: TensorSpace, rho: float, coarsest_m: int = 3, damping: float = 0.8,
               smoothing_steps: int = 1, coarsening: str = "boundary-preserving") -> GMGPreconditioner:
    """V-cycle preconditioner for ``M_Gamma + rho * A``.

    ``boundary-preserving`` keeps the first and last fine dof on every level
    and halves the rest; coarse operators are Galerkin products. ``uniform``
    uses the nested meshes ``n/2, n/4, ..`` with their own modified bases;
    rediscretizing with the fine rho equals the Galerkin product there. Both
    stop once a level has at most ``coarsest_m`` dofs per axis.
    """
    if coarsening not in COARSENINGS:
        raise ConfigurationError(f"unknown coarsening {coarsening!r}")
    ops = [system_kron_sum(finest, rho)]
    prolongations = []
    if coarsening == "uniform":
        space = finest
        while space.n % 2 == 0 and space.n // 2 >= 4 and space.m > coarsest_m:
            coarse = TensorSpace.from_intervals(finest.d, space.n // 2)
            prolongations.append(uniform_prolongation(coarse, space))
            ops.append(system_kron_sum(coarse, rho))
            space = coarse
    else:
        m = finest.m
        while m > coarsest_m:
            p = interpolation_1d(boundary_preserving_coarse_ids(m), m)
            prolongations.append(p)
            ops.append(galerkin_kron_sum(ops[-1], p))
            m = p.shape[1]
    return GMGPreconditioner(ops, prolongations, damping, smoothing_steps)


def dense_lu_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Partial-pivoting LU; oracle use only."""
    a = np.asarray(matrix, dtype=float)
    if a.shape[0] > DENSE_LIMIT:
        raise OracleSizeError(f"dense LU limited to {DENSE_LIMIT} unknowns")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a, check_finite=True)
    if np.any(np.diag(lu) == 0.0):
        raise np.linalg.LinAlgError("singular matrix")
    return sla.lu_solve((lu, piv), np.asarray(rhs, dtype=float))
