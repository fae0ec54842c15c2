"""Uniform 1D mesh and the modified piecewise-linear space with flat end pieces.

The space has ``m = n - 1`` basis functions. The first and last ones are equal
to one on the end intervals, so every function in the space has zero derivative
at ``x = 0`` and ``x = 1``. Coefficient ``c_i`` is the value at node ``x_i``
for ``i = 1 .. n-1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .errors import DimensionError, InvalidMeshError

MASS_FULL = "mass-full"
STIFFNESS_FULL = "stiffness-full"
MASS_INTERIOR = "mass-interior-domain"
STIFFNESS_INTERIOR = "stiffness-interior-domain"
TRACE = "trace"


@dataclass(frozen=True)
class Mesh1D:
    n: int
    h: float
    nodes: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class Modified1DBasis:
    mesh: Mesh1D

    @property
    def m(self) -> int:
        return self.mesh.n - 1

    @property
    def n(self) -> int:
        return self.mesh.n

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def dof_nodes(self) -> np.ndarray:
        """Nodes x_1 .. x_{n-1} carrying the coefficients."""
        return self.mesh.nodes[1:-1]

    def evaluate(self, x) -> np.ndarray:
        """Basis values, shape ``(len(x), m)``."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        nodes, h, m = self.mesh.nodes, self.h, self.m
        vals = np.clip(1.0 - np.abs(x[:, None] - nodes[None, 1:-1]) / h, 0.0, None)
        vals[:, 0] += np.clip(1.0 - x / h, 0.0, None)
        vals[:, m - 1] += np.clip(1.0 - (1.0 - x) / h, 0.0, None)
        return vals

    def evaluate_derivative(self, x) -> np.ndarray:
        """Basis derivatives, shape ``(len(x), m)``.

        At a node the right-sided derivative is returned (left-sided at x = 1).
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        n, h = self.n, self.h
        elem = np.clip(np.floor(x / h).astype(int), 0, n - 1)
        out = np.zeros((x.size, self.m))
        rows = np.arange(x.size)
        # on element e the hats at nodes e and e+1 are active; the hats at
        # x_0 and x_n are folded into the first and last coefficient
        for node, slope in ((elem, -1.0 / h), (elem + 1, 1.0 / h)):
            np.add.at(out, (rows, np.clip(node, 1, n - 1) - 1), slope)
        return out

    def function_values(self, coeffs, x) -> np.ndarray:
        return self.evaluate(x) @ np.asarray(coeffs, dtype=float)

    def function_derivative(self, coeffs, x) -> np.ndarray:
        return self.evaluate_derivative(x) @ np.asarray(coeffs, dtype=float)


@dataclass(frozen=True)
class Tri1D:
    """Symmetric tridiagonal matrix in (diag, sub) storage."""

    diag: np.ndarray
    sub: np.ndarray
    kind: str = ""

    @property
    def m(self) -> int:
        return self.diag.size

    def dense(self) -> np.ndarray:
        a = np.diag(self.diag)
        if self.m > 1:
            a += np.diag(self.sub, 1) + np.diag(self.sub, -1)
        return a

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return apply_along_axis(self, np.asarray(v, dtype=float), 0)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return thomas_solve(self, rhs)

    def row_sums(self) -> np.ndarray:
        return self.matvec(np.ones(self.m))

    def restrict(self, start: int, stop: int, kind: str | None = None) -> "Tri1D":
        """Principal sub-block ``[start:stop, start:stop]``."""
        return Tri1D(self.diag[start:stop].copy(), self.sub[start:stop - 1].copy(),
                     kind if kind is not None else self.kind)


def apply_along_axis(tri: Tri1D, x: np.ndarray, axis: int) -> np.ndarray:
    """Multiply ``x`` by ``tri`` along ``axis``."""
    xm = np.moveaxis(x, axis, 0)
    shape = (tri.m,) + (1,) * (xm.ndim - 1)
    out = tri.diag.reshape(shape) * xm
    if tri.m > 1:
        sub = tri.sub.reshape((tri.m - 1,) + shape[1:])
        out[1:] += sub * xm[:-1]
        out[:-1] += sub * xm[1:]
    return np.moveaxis(out, 0, axis)


def thomas_solve(tri: Tri1D, rhs: np.ndarray, axis: int = 0) -> np.ndarray:
    """Thomas algorithm for ``tri @ x = rhs`` along ``axis``, batched over the rest."""
    r = np.moveaxis(np.asarray(rhs, dtype=float), axis, 0)
    m = tri.m
    if r.shape[0] != m:
        raise DimensionError(f"rhs has length {r.shape[0]} along axis {axis}, expected {m}")
    a, b = tri.diag, tri.sub
    cp = np.empty(max(m - 1, 0))
    dp = np.empty_like(r)
    denom = a[0]
    if denom == 0.0:
        raise ZeroDivisionError("zero pivot in tridiagonal solve")
    if m > 1:
        cp[0] = b[0] / denom
    dp[0] = r[0] / denom
    for i in range(1, m):
        denom = a[i] - b[i - 1] * cp[i - 1]
        if denom == 0.0:
            raise ZeroDivisionError("zero pivot in tridiagonal solve")
        if i < m - 1:
            cp[i] = b[i] / denom
        dp[i] = (r[i] - b[i - 1] * dp[i - 1]) / denom
    x = dp
    for i in range(m - 2, -1, -1):
        x[i] -= cp[i] * x[i + 1]
    return np.moveaxis(x, 0, axis)


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    order: int  # exactness degree

    @property
    def npoints(self) -> int:
        return self.points.size


def gauss_rule(npoints: int) -> QuadratureRule:
    """Gauss-Legendre rule with ``npoints`` points on [0, 1]."""
    if not 1 <= int(npoints) <= 10:
        raise ValueError(f"unsupported quadrature order {npoints}; expected 1..10")
    x, w = np.polynomial.legendre.leggauss(int(npoints))
    return QuadratureRule(0.5 * (x + 1.0), 0.5 * w, 2 * int(npoints) - 1)


def composite_points(mesh: Mesh1D, quad: QuadratureRule, lo: int = 0, hi: int | None = None):
    """Quadrature points and weights of ``quad`` copied onto elements ``lo .. hi-1``."""
    hi = mesh.n if hi is None else hi
    left = mesh.nodes[lo:hi]
    pts = (left[:, None] + mesh.h * quad.points[None, :]).ravel()
    wts = np.tile(mesh.h * quad.weights, hi - lo)
    return pts, wts


def build_mesh(n: int) -> Mesh1D:
    if int(n) != n or n < 4:
        raise InvalidMeshError(f"need an integer interval count n >= 4, got {n}")
    n = int(n)
    return Mesh1D(n, 1.0 / n, np.linspace(0.0, 1.0, n + 1))


def build_basis(n: int) -> Modified1DBasis:
    return Modified1DBasis(build_mesh(n))


def assemble_mass_1d(basis: Modified1DBasis) -> Tri1D:
    h, m = basis.h, basis.m
    diag = np.full(m, 2.0 * h / 3.0)
    # end functions: flat piece (h) plus one linear piece (h/3)
    diag[0] = diag[-1] = 4.0 * h / 3.0
    return Tri1D(diag, np.full(m - 1, h / 6.0), MASS_FULL)


def assemble_stiffness_1d(basis: Modified1DBasis) -> Tri1D:
    h, m = basis.h, basis.m
    diag = np.full(m, 2.0 / h)
    diag[0] = diag[-1] = 1.0 / h
    return Tri1D(diag, np.full(m - 1, -1.0 / h), STIFFNESS_FULL)


def assemble_mass_1d_interior(basis: Modified1DBasis) -> Tri1D:
    """Mass matrix over (x_1, x_{n-1})."""
    full = assemble_mass_1d(basis)
    diag = full.diag.copy()
    diag[0] -= basis.h
    diag[-1] -= basis.h
    return Tri1D(diag, full.sub.copy(), MASS_INTERIOR)


def assemble_stiffness_1d_interior(basis: Modified1DBasis) -> Tri1D:
    """Stiffness matrix over (x_1, x_{n-1}).

    Assembled element by element over the interior elements only; it coincides
    with the full stiffness matrix because the end functions are flat on the
    end intervals, and that is checked here rather than assumed.
    """
    h, m, n = basis.h, basis.m, basis.n
    diag = np.zeros(m)
    sub = np.zeros(m - 1)
    # element e spans (x_{e-1}, x_e); interior elements are e = 2 .. n-1
    for e in range(2, n):
        i, j = e - 2, e - 1  # coefficient indices of the hats at x_{e-1}, x_e
        diag[i] += 1.0 / h
        diag[j] += 1.0 / h
        sub[i] -= 1.0 / h
    full = assemble_stiffness_1d(basis)
    if not (np.array_equal(diag, full.diag) and np.array_equal(sub, full.sub)):
        raise AssertionError("interior stiffness differs from full stiffness")
    return Tri1D(diag, sub, STIFFNESS_INTERIOR)


def assemble_trace_1d(basis: Modified1DBasis) -> Tri1D:
    """Point evaluation at {0, 1}: only phi_1(0) = phi_m(1) = 1 are nonzero."""
    diag = np.zeros(basis.m)
    diag[0] = diag[-1] = 1.0
    return Tri1D(diag, np.zeros(basis.m - 1), TRACE)


Samples = Union[np.ndarray, Callable[[np.ndarray], np.ndarray]]


def interp_Ih(samples: Samples, basis: Modified1DBasis) -> np.ndarray:
    """Nodal interpolation: coefficients are the values at x_1 .. x_{n-1}."""
    if callable(samples):
        return np.asarray(samples(basis.dof_nodes), dtype=float)
    values = np.asarray(samples, dtype=float)
    if values.shape != (basis.m,):
        raise DimensionError(f"expected {basis.m} nodal values, got shape {values.shape}")
    return values.copy()


def load_vector_1d(func: Callable, basis: Modified1DBasis, quad: QuadratureRule) -> np.ndarray:
    """Moments ``b_i = int_0^1 func * phi_i`` by per-element quadrature."""
    pts, wts = composite_points(basis.mesh, quad)
    return basis.evaluate(pts).T @ (wts * func(pts))


def project_Qh(func: Callable, basis: Modified1DBasis, quad: QuadratureRule | None = None) -> np.ndarray:
    """L2 projection onto the modified space."""
    quad = gauss_rule(5) if quad is None else quad
    if quad.npoints < 4:
        raise ValueError("projection needs a quadrature rule with at least 4 points")
    return thomas_solve(assemble_mass_1d(basis), load_vector_1d(func, basis, quad))
