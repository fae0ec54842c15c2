"""Numerical check of the 1D interpolation/projection estimates and the boundary projection rate.

Every norm is computed with composite Gauss quadrature (8 points per element)
on the mesh the discrete function lives on, so piecewise-linear parts are
integrated exactly and only the smooth test function is approximated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .mesh1d import build_basis, composite_points, gauss_rule, interp_Ih, project_Qh
from .tensor import TensorSpace, evaluate_on_grid, project_Ph

NORM_POINTS = 8
DEFAULT_NS = (8, 16, 32, 64)
L2_PROJECTION_ORDER = 1.9
H1_ERROR_ORDER = 0.9
BOUNDARY_ORDER = 1.9


@dataclass(frozen=True)
class TestFunction:
    """Smooth y on [0, 1] with y'(0) = y'(1) = 0, and its first two derivatives."""

    name: str
    f: Callable
    df: Callable
    d2f: Callable


def default_functions() -> list:
    pi = math.pi
    return [
        TestFunction("cos(pi x)", lambda x: np.cos(pi * x), lambda x: -pi * np.sin(pi * x),
                     lambda x: -pi ** 2 * np.cos(pi * x)),
        TestFunction("cos(2 pi x)", lambda x: np.cos(2 * pi * x), lambda x: -2 * pi * np.sin(2 * pi * x),
                     lambda x: -4 * pi ** 2 * np.cos(2 * pi * x)),
        TestFunction("x^2(3-2x)", lambda x: x ** 2 * (3 - 2 * x), lambda x: 6 * x - 6 * x ** 2,
                     lambda x: 6 - 12 * x),
    ]


@dataclass(frozen=True)
class Estimate:
    key: str
    statement: str
    constant: Optional[float]  # None: constant not given, only the rate is checked


ESTIMATES = (
    Estimate("interp-l2-h2", "||y - I_h y|| <= C h^2 ||y''||", 0.5),
    Estimate("interp-l2-h1", "||y - I_h y|| <= C h ||y'||", math.sqrt(2.0)),
    Estimate("interp-h1-h2", "||(y - I_h y)'|| <= C h ||y''||", 1.0 / math.sqrt(2.0)),
    Estimate("interp-stability", "||(I_h y)'|| <= C ||y'||", 1.0),
    Estimate("proj-l2-h2", "||y - Q_h y|| <= C h^2 ||y''||", 0.5),
    Estimate("proj-h1-h2", "||(y - Q_h y)'|| <= C h ||y''||", 0.5 * (math.sqrt(2.0) + 4.0 * math.sqrt(3.0))),
    Estimate("proj-h1-stability", "||(Q_h y)'|| <= C ||y'||", 1.0 + 4.0 * math.sqrt(6.0)),
    Estimate("boundary-Ph", "||y - P_h y||_L2(Gamma) <= c h^2 |y|_H2(Gamma)  (d=2)", None),
)


@dataclass(frozen=True)
class EstimateCheck:
    estimate: str
    function: str
    n: int
    observed: float  # observed constant: lhs divided by the rhs without C
    bound: Optional[float]
    lhs: float
    passed: bool


@dataclass(frozen=True)
class OrderCheck:
    estimate: str
    function: str
    orders: tuple
    threshold: float
    passed: bool


@dataclass
class AppendixReport:
    checks: list = field(default_factory=list)
    order_checks: list = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks) and all(o.passed for o in self.order_checks)

    @property
    def violations(self) -> list:
        """``(estimate, function, n, observed, bound)`` for every failed constant check."""
        return [(c.estimate, c.function, c.n, c.observed, c.bound) for c in self.checks if not c.passed]

    def estimates(self) -> list:
        return list(dict.fromkeys(c.estimate for c in self.checks))

    def summary_lines(self) -> list:
        lines = []
        for est in ESTIMATES:
            rows = [c for c in self.checks if c.estimate == est.key]
            if not rows:
                continue
            worst = max(rows, key=lambda c: c.observed)
            bound = "unspecified" if est.constant is None else f"{worst.bound:.4g}"
            status = "PASS" if all(c.passed for c in rows) else "FAIL"
            lines.append(f"{status} {est.key:18s} max observed {worst.observed:.4g} vs bound {bound}"
                         f"  [{est.statement}]")
        for o in self.order_checks:
            status = "PASS" if o.passed else "FAIL"
            orders = ", ".join(f"{v:.3f}" for v in o.orders)
            lines.append(f"{status} order {o.estimate:12s} {o.function:12s} orders [{orders}] >= {o.threshold}")
        return lines


def _l2(values: np.ndarray, weights: np.ndarray) -> float:
    return math.sqrt(float(np.sum(weights * values ** 2)))


def _observed_orders(errors: Sequence[float]) -> tuple:
    return tuple(math.log2(a / b) for a, b in zip(errors[:-1], errors[1:]))


def _one_dimensional(func: TestFunction, n: int, quad) -> dict:
    basis = build_basis(n)
    x, w = composite_points(basis.mesh, quad)
    y, dy, d2y = func.f(x), func.df(x), func.d2f(x)
    norm_d1, norm_d2 = _l2(dy, w), _l2(d2y, w)
    ci = interp_Ih(func.f, basis)
    cq = project_Qh(func.f, basis)
    iv, idv = basis.function_values(ci, x), basis.function_derivative(ci, x)
    qv, qdv = basis.function_values(cq, x), basis.function_derivative(cq, x)
    h = basis.h
    # lhs, and the rhs without the constant
    return {
        "interp-l2-h2": (_l2(y - iv, w), h ** 2 * norm_d2),
        "interp-l2-h1": (_l2(y - iv, w), h * norm_d1),
        "interp-h1-h2": (_l2(dy - idv, w), h * norm_d2),
        "interp-stability": (_l2(idv, w), norm_d1),
        "proj-l2-h2": (_l2(y - qv, w), h ** 2 * norm_d2),
        "proj-h1-h2": (_l2(dy - qdv, w), h * norm_d2),
        "proj-h1-stability": (_l2(qdv, w), norm_d1),
    }


def boundary_projection_error(func: TestFunction, n: int, quad=None) -> tuple:
    """``||y - P_h y||_{L2(Gamma)}`` and ``|y|_{H2(Gamma)}`` for ``y = f(x1) f(x2)`` on the unit square."""
    quad = gauss_rule(NORM_POINTS) if quad is None else quad
    space = TensorSpace.from_intervals(2, n)
    y = lambda x1, x2: func.f(x1) * func.f(x2)
    coeffs = project_Ph(y, space)
    x, w = composite_points(space.basis.mesh, quad)
    err2 = semi2 = 0.0
    for fixed in (0.0, 1.0):
        # edges x2 = fixed (varying x1) and x1 = fixed (varying x2); y is symmetric in its arguments
        edge = evaluate_on_grid(space, coeffs, [x, np.array([fixed])])[:, 0]
        err2 += float(np.sum(w * (y(x, fixed) - edge) ** 2))
        edge = evaluate_on_grid(space, coeffs, [np.array([fixed]), x])[0, :]
        err2 += float(np.sum(w * (y(fixed, x) - edge) ** 2))
        semi2 += 2.0 * float(np.sum(w * (func.d2f(x) * func.f(fixed)) ** 2))
    return math.sqrt(err2), math.sqrt(semi2)


def verify_appendix(ns: Sequence[int] = DEFAULT_NS, functions: Sequence[TestFunction] | None = None,
                    shrink: float = 1.0) -> AppendixReport:
    """Check every estimate on every (function, n); ``shrink`` divides the constants (self-test)."""
    import time

    start = time.perf_counter()
    functions = default_functions() if functions is None else list(functions)
    ns = sorted(int(n) for n in ns)
    quad = gauss_rule(NORM_POINTS)
    report = AppendixReport()
    tol = 1e-12
    for func in functions:
        per_n = [_one_dimensional(func, n, quad) for n in ns]
        for est in ESTIMATES[:-1]:
            bound = est.constant / shrink
            for n, data in zip(ns, per_n):
                lhs, scale = data[est.key]
                observed = lhs / scale if scale > 0 else 0.0
                report.checks.append(EstimateCheck(est.key, func.name, n, observed, bound, lhs,
                                                   lhs <= bound * scale * (1 + tol) + tol))
        for key, threshold in (("proj-l2-h2", L2_PROJECTION_ORDER), ("proj-h1-h2", H1_ERROR_ORDER)):
            orders = _observed_orders([data[key][0] for data in per_n])
            report.order_checks.append(OrderCheck(key, func.name, orders, threshold,
                                                  all(o >= threshold for o in orders)))
        errs = []
        for n in ns:
            err, semi = boundary_projection_error(func, n, quad)
            h = 1.0 / n
            errs.append(err)
            observed = err / (h ** 2 * semi) if semi > 0 else 0.0
            report.checks.append(EstimateCheck("boundary-Ph", func.name, n, observed, None, err, math.isfinite(err)))
        orders = _observed_orders(errs)
        report.order_checks.append(OrderCheck("boundary-Ph", func.name, orders, BOUNDARY_ORDER,
                                              all(o >= BOUNDARY_ORDER for o in orders)))
    report.elapsed = time.perf_counter() - start
    return report
