"""Tensor-product operators on the modified space over the unit cube.

Dofs are ordered lexicographically with the first coordinate fastest, so a
flat vector reshaped with ``order="F"`` gives an array indexed ``[i1, .., id]``.
Operators are applied matrix-free, one 1D factor per axis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, OracleSizeError
from .mesh1d import (
    Modified1DBasis,
    QuadratureRule,
    Tri1D,
    apply_along_axis,
    assemble_mass_1d,
    assemble_mass_1d_interior,
    assemble_stiffness_1d,
    assemble_stiffness_1d_interior,
    assemble_trace_1d,
    build_basis,
    composite_points,
    gauss_rule,
    thomas_solve,
)

DENSE_LIMIT = 20_000


@dataclass(frozen=True)
class TensorSpace:
    d: int
    basis: Modified1DBasis

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise DimensionError(f"dimension must be 1, 2 or 3, got {self.d}")

    @classmethod
    def from_intervals(cls, d: int, n: int) -> "TensorSpace":
        return cls(d, build_basis(n))

    @classmethod
    def from_level(cls, d: int, level: int) -> "TensorSpace":
        """Level l uses n = 2**(l+1) intervals, i.e. m = 2**(l+1) - 1 dofs per direction."""
        return cls.from_intervals(d, 2 ** (level + 1))

    @property
    def m(self) -> int:
        return self.basis.m

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def h(self) -> float:
        return self.basis.h

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.d

    @property
    def total_dofs(self) -> int:
        return self.m ** self.d

    def grid(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.size != self.total_dofs:
            raise DimensionError(f"vector of length {v.size}, space has {self.total_dofs} dofs")
        return v.reshape(self.shape, order="F")

    @staticmethod
    def flat(a: np.ndarray) -> np.ndarray:
        return np.asarray(a).reshape(-1, order="F")

    @cached_property
    def mass(self) -> Tri1D:
        return assemble_mass_1d(self.basis)

    @cached_property
    def stiffness(self) -> Tri1D:
        return assemble_stiffness_1d(self.basis)

    @cached_property
    def mass_interior(self) -> Tri1D:
        return assemble_mass_1d_interior(self.basis)

    @cached_property
    def stiffness_interior(self) -> Tri1D:
        return assemble_stiffness_1d_interior(self.basis)


class KronSumOperator:
    """Weighted sum of Kronecker products of 1D tridiagonal factors.

    ``terms`` is a list of ``(weight, factors)`` where ``factors[k]`` acts on
    coordinate k.
    """

    symmetric = True

    def __init__(self, d: int, terms: Sequence[tuple[float, Sequence[Tri1D]]]):
        self.d = d
        self.terms = [(float(w), tuple(f)) for w, f in terms]
        for _, factors in self.terms:
            if len(factors) != d:
                raise DimensionError("each term needs one factor per dimension")
        self.m = self.terms[0][1][0].m
        self.shape = (self.m,) * d
        self.size = self.m ** d

    def apply_grid(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        for weight, factors in self.terms:
            y = x
            for axis, f in enumerate(factors):
                y = apply_along_axis(f, y, axis)
            out += weight * y
        return out

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.size != self.size:
            raise DimensionError(f"vector of length {v.size}, operator has size {self.size}")
        return self.apply_grid(v.reshape(self.shape, order="F")).reshape(-1, order="F")

    __matmul__ = apply

    def diagonal(self) -> np.ndarray:
        out = np.zeros(self.shape)
        for weight, factors in self.terms:
            out += weight * _outer([f.diag for f in factors])
        return out.reshape(-1, order="F")

    def restrict(self, start: int, stop: int) -> "KronSumOperator":
        """The same Kronecker sum on the sub-grid ``[start:stop]^d``."""
        return KronSumOperator(self.d, [(w, [f.restrict(start, stop) for f in fs]) for w, fs in self.terms])

    def dense(self) -> np.ndarray:
        _check_dense(self.size)
        out = np.zeros((self.size, self.size))
        for weight, factors in self.terms:
            k = np.ones((1, 1))
            for f in factors:  # first coordinate fastest -> innermost kron
                k = np.kron(f.dense(), k)
            out += weight * k
        return out


class BoundaryMassOperator:
    """L2(Gamma) Gram operator as a sum over the 2d faces.

    Face ``(k, side)`` fixes coordinate k at 0 (side 0) or 1 (side 1); only
    coefficients with index 0 resp. m-1 along axis k have nonzero trace there,
    and on the face the trace is the (d-1)-dimensional tensor basis.
    """

    symmetric = True

    def __init__(self, space: TensorSpace):
        self.space = space
        self.d = space.d
        self.m = space.m
        self.shape = space.shape
        self.size = space.total_dofs
        self.faces = [(k, 0 if side == 0 else self.m - 1) for k in range(self.d) for side in (0, 1)]
        self.face_mass = space.mass

    def apply_grid(self, x: np.ndarray) -> np.ndarray:
        out = np.zeros_like(x)
        for k, idx in self.faces:
            sl = _face_slice(self.d, k, idx)
            y = x[sl]
            for axis in range(self.d - 1):
                y = apply_along_axis(self.face_mass, y, axis)
            out[sl] += y
        return out

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.size != self.size:
            raise DimensionError(f"vector of length {v.size}, operator has size {self.size}")
        return self.apply_grid(v.reshape(self.shape, order="F")).reshape(-1, order="F")

    __matmul__ = apply

    def diagonal(self) -> np.ndarray:
        out = np.zeros(self.shape)
        face_diag = _outer([self.face_mass.diag] * (self.d - 1)) if self.d > 1 else np.array(1.0)
        for k, idx in self.faces:
            out[_face_slice(self.d, k, idx)] += face_diag
        return out.reshape(-1, order="F")

    def as_kron_sum(self) -> KronSumOperator:
        trace = assemble_trace_1d(self.space.basis)
        terms = []
        for k in range(self.d):
            terms.append((1.0, [trace if j == k else self.face_mass for j in range(self.d)]))
        return KronSumOperator(self.d, terms)

    def dense(self) -> np.ndarray:
        return self.as_kron_sum().dense()


class SumOperator:
    """``sum_i w_i A_i`` for operators sharing one dof set."""

    symmetric = True

    def __init__(self, terms):
        self.terms = [(float(w), op) for w, op in terms]
        self.size = self.terms[0][1].size
        self.shape = self.terms[0][1].shape

    def apply_grid(self, x):
        out = np.zeros_like(x)
        for w, op in self.terms:
            out += w * op.apply_grid(x)
        return out

    def apply(self, v):
        v = np.asarray(v, dtype=float)
        if v.size != self.size:
            raise DimensionError(f"vector of length {v.size}, operator has size {self.size}")
        return self.apply_grid(v.reshape(self.shape, order="F")).reshape(-1, order="F")

    __matmul__ = apply

    def diagonal(self):
        return sum(w * op.diagonal() for w, op in self.terms)

    def dense(self):
        _check_dense(self.size)
        return sum(w * op.dense() for w, op in self.terms)


@dataclass(frozen=True)
class DofPartition:
    """Strict interior dofs I (all indices in 2..m-1) and near-boundary dofs B."""

    shape: tuple
    interior_ids: np.ndarray
    boundary_ids: np.ndarray

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def m(self) -> int:
        return self.shape[0]

    @property
    def interior_shape(self) -> tuple:
        return (self.m - 2,) * self.d

    @property
    def size(self) -> int:
        return self.interior_ids.size + self.boundary_ids.size

    def multi_index(self, flat_ids) -> np.ndarray:
        return np.stack(np.unravel_index(np.asarray(flat_ids), self.shape, order="F"), axis=-1)

    def flat_index(self, multi) -> np.ndarray:
        multi = np.asarray(multi)
        return np.ravel_multi_index(tuple(multi.T), self.shape, order="F")

    def restrict(self, v: np.ndarray, which: str) -> np.ndarray:
        return np.asarray(v)[self.interior_ids if which == "I" else self.boundary_ids]

    def embed(self, v_interior=None, v_boundary=None) -> np.ndarray:
        out = np.zeros(self.size)
        if v_interior is not None:
            out[self.interior_ids] = v_interior
        if v_boundary is not None:
            out[self.boundary_ids] = v_boundary
        return out


def partition_dofs(space: TensorSpace) -> DofPartition:
    m = space.m
    if m < 3:
        raise DimensionError("need m >= 3 for a nonempty interior")
    ids = np.arange(space.total_dofs)
    multi = np.stack(np.unravel_index(ids, space.shape, order="F"), axis=-1)
    interior = np.all((multi >= 1) & (multi <= m - 2), axis=1)
    return DofPartition(space.shape, ids[interior], ids[~interior])


def build_h1_operator(space: TensorSpace) -> KronSumOperator:
    """Gram operator of the H1(Omega) inner product (gradient plus mass)."""
    M, K = space.mass, space.stiffness
    return KronSumOperator(space.d, _h1_terms(space.d, M, K))


def build_interior_h1_operator(space: TensorSpace) -> KronSumOperator:
    """Gram operator of the H1 inner product over (h, 1-h)^d."""
    M, K = space.mass_interior, space.stiffness_interior
    return KronSumOperator(space.d, _h1_terms(space.d, M, K))


def build_boundary_mass(space: TensorSpace) -> BoundaryMassOperator:
    return BoundaryMassOperator(space)


def apply(op, v: np.ndarray) -> np.ndarray:
    return op.apply(v)


class BlockOperator:
    """Action of ``op[rows, cols]`` on packed vectors, by embed-apply-restrict."""

    def __init__(self, op, partition: DofPartition, rows: str, cols: str):
        if rows not in ("I", "B") or cols not in ("I", "B"):
            raise ValueError("rows and cols must be 'I' or 'B'")
        self.op, self.partition, self.rows, self.cols = op, partition, rows, cols
        self._row_ids = partition.interior_ids if rows == "I" else partition.boundary_ids
        self._col_ids = partition.interior_ids if cols == "I" else partition.boundary_ids
        self.shape = (self._row_ids.size, self._col_ids.size)

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.size != self.shape[1]:
            raise DimensionError(f"block expects {self.shape[1]} entries, got {v.size}")
        full = np.zeros(self.partition.size)
        full[self._col_ids] = v
        return self.op.apply(full)[self._row_ids]

    __matmul__ = apply

    def dense(self) -> np.ndarray:
        _check_dense(self.partition.size)
        return self.op.dense()[np.ix_(self._row_ids, self._col_ids)]


class DifferenceOperator:
    """``a - b``; used for the boundary-layer H1 form, which is never assembled."""

    symmetric = True

    def __init__(self, a, b):
        self.a, self.b = a, b
        self.size, self.shape = a.size, a.shape

    def apply_grid(self, x):
        return self.a.apply_grid(x) - self.b.apply_grid(x)

    def apply(self, v):
        return self.a.apply(v) - self.b.apply(v)

    __matmul__ = apply

    def diagonal(self):
        return self.a.diagonal() - self.b.diagonal()

    def dense(self):
        return self.a.dense() - self.b.dense()


def extract_block(op, partition: DofPartition, rows: str, cols: str) -> BlockOperator:
    return BlockOperator(op, partition, rows, cols)


def materialize(op) -> np.ndarray:
    """Dense matrix of ``op``; oracle use only, limited to DENSE_LIMIT dofs."""
    if hasattr(op, "dense"):
        return op.dense()
    size = op.size
    _check_dense(size)
    eye = np.eye(size)
    return np.column_stack([op.apply(eye[:, j]) for j in range(size)])


def moment_tensor(func: Callable, space: TensorSpace, quad: QuadratureRule) -> np.ndarray:
    """``b_k = int_Omega func * phi_k`` with tensor Gauss quadrature on every element.

    ``func`` is called with d coordinate arrays of matching shape.
    """
    pts, wts = composite_points(space.basis.mesh, quad)
    weighted = space.basis.evaluate(pts) * wts[:, None]
    coords = np.meshgrid(*([pts] * space.d), indexing="ij")
    vals = np.broadcast_to(np.asarray(func(*coords), dtype=float), coords[0].shape)
    return contract_axes(vals, [weighted.T] * space.d)


def contract_axes(x: np.ndarray, mats: Sequence[np.ndarray]) -> np.ndarray:
    """Apply ``mats[k]`` (a dense matrix) along axis k of ``x``."""
    for axis, a in enumerate(mats):
        x = np.moveaxis(np.tensordot(a, x, axes=([1], [axis])), 0, axis)
    return x


def project_Ph(func: Callable, space: TensorSpace, quad: QuadratureRule | None = None) -> np.ndarray:
    """Tensor-product L2 projection: d successive 1D mass solves on the moment tensor."""
    quad = gauss_rule(5) if quad is None else quad
    b = moment_tensor(func, space, quad)
    for axis in range(space.d):
        b = thomas_solve(space.mass, b, axis=axis)
    return TensorSpace.flat(b)


def evaluate_on_grid(space: TensorSpace, coeffs: np.ndarray, pts_per_axis: Sequence[np.ndarray]) -> np.ndarray:
    """Values of the fe function on the tensor grid ``pts_per_axis``."""
    mats = [space.basis.evaluate(p) for p in pts_per_axis]
    return contract_axes(space.grid(coeffs), mats)


def _h1_terms(d, M, K):
    terms = [(1.0, [K if j == k else M for j in range(d)]) for k in range(d)]
    terms.append((1.0, [M] * d))
    return terms


def _outer(vectors):
    out = vectors[0]
    for v in vectors[1:]:
        out = np.multiply.outer(out, v)
    return out


def _face_slice(d, k, idx):
    sl = [slice(None)] * d
    sl[k] = idx
    return tuple(sl)


def _check_dense(size):
    if size > DENSE_LIMIT:
        raise OracleSizeError(f"dense materialization limited to {DENSE_LIMIT} dofs, got {size}")
