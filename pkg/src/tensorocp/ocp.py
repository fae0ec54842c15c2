"""Boundary value tracking problem: targets, right-hand side, solves and studies."""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, SolverError
from .mesh1d import QuadratureRule, composite_points, gauss_rule
from .solvers import (
    SchurOperator,
    SolveReport,
    SolverConfig,
    cg,
    gmg_vcycle,
    jacobi_preconditioner,
    lumped_mass_preconditioner,
    reconstruct_interior,
    system_operator,
)
from .tensor import TensorSpace, build_boundary_mass, build_h1_operator, contract_axes

PATHS = ("schur-cg", "schur-pcg", "full-pcg")


def _cosine(*x):
    out = np.cos(np.pi * x[0])
    for xi in x[1:]:
        out = out * np.cos(np.pi * xi)
    return out


def _quadratic_3d(x1, x2, x3):
    return x1 ** 2 - 0.5 * x2 ** 2 - 0.5 * x3 ** 2


def _quadratic_2d(x1, x2):
    return x1 ** 2 - x2 ** 2


def _quadratic_1d(x1):
    return x1 ** 2


@dataclass(frozen=True)
class Target:
    kind: str
    evaluator: Callable = field(repr=False)
    smoothness: str = "unknown"

    def __call__(self, *coords):
        return np.broadcast_to(np.asarray(self.evaluator(*coords), dtype=float), np.shape(coords[0]))

    @classmethod
    def cosine(cls) -> "Target":
        """prod_i cos(pi x_i); its own smooth extension, with zero normal derivative."""
        return cls("cosine", _cosine, "H2Gamma-compatible")

    @classmethod
    def quadratic(cls, d: int = 3) -> "Target":
        """x1^2 - 0.5 x2^2 - 0.5 x3^2 in 3D.

        In 2D we use x1^2 - x2^2 and in 1D x1^2; neither has a published
        reference value.
        """
        return cls("quadratic", {1: _quadratic_1d, 2: _quadratic_2d, 3: _quadratic_3d}[d],
                   "H1Gamma-incompatible")

    @classmethod
    def custom(cls, func: Callable, smoothness: str = "unknown") -> "Target":
        return cls("custom", func, smoothness)

    @classmethod
    def constant(cls, value: float) -> "Target":
        return cls("custom", lambda *x: np.full(np.shape(x[0]), float(value)), "H2Gamma-compatible")

    @classmethod
    def by_name(cls, name: str, d: int) -> "Target":
        if name == "cosine":
            return cls.cosine()
        if name == "quadratic":
            return cls.quadratic(d)
        raise ConfigurationError(f"unknown target {name!r}")


def rho_from_rule(rule: str, h: float) -> float:
    """Regularization weight for mesh size h: ``h``, ``h32``, ``h2`` or ``const:<v>``."""
    if rule == "h":
        return h
    if rule == "h32":
        return h ** 1.5
    if rule == "h2":
        return h * h
    if rule.startswith("const:"):
        try:
            value = float(rule.split(":", 1)[1])
        except ValueError as exc:
            raise ConfigurationError(f"bad constant rho {rule!r}") from exc
        if not value > 0 or not math.isfinite(value):
            raise ConfigurationError(f"rho must be positive and finite, got {value}")
        return value
    raise ConfigurationError(f"unknown rho rule {rule!r}")


@dataclass(frozen=True)
class OcpConfig:
    d: int = 3
    level: int = 1
    rho_rule: str = "h2"
    target: Target = field(default_factory=Target.cosine)
    path: str = "schur-cg"
    solver: SolverConfig = field(default_factory=SolverConfig)
    quad_points: int = 5

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ConfigurationError(f"dimension must be 1, 2 or 3, got {self.d}")
        if self.level < 1:
            raise ConfigurationError("level must be >= 1")
        if self.path not in PATHS:
            raise ConfigurationError(f"unknown solver path {self.path!r}")
        rho_from_rule(self.rho_rule, 0.25)

    @property
    def space(self) -> TensorSpace:
        return TensorSpace.from_level(self.d, self.level)

    @property
    def h(self) -> float:
        return 2.0 ** -(self.level + 1)

    @property
    def rho(self) -> float:
        return rho_from_rule(self.rho_rule, self.h)


@dataclass(frozen=True)
class StateSolution:
    coeffs: np.ndarray
    config: OcpConfig
    report: SolveReport
    space: TensorSpace
    rho: float


def face_quadrature(space: TensorSpace, quad: QuadratureRule):
    pts, wts = composite_points(space.basis.mesh, quad)
    return pts, wts, space.basis.evaluate(pts)


def _face_coords(d, k, side, pts):
    """Coordinate arrays on face (k, side) over the tensor grid of ``pts``."""
    grids = np.meshgrid(*([pts] * (d - 1)), indexing="ij") if d > 1 else []
    coords, it = [], iter(grids)
    shape = grids[0].shape if grids else ()
    for j in range(d):
        coords.append(np.full(shape, float(side)) if j == k else next(it))
    return coords


def _faces(space: TensorSpace):
    for k in range(space.d):
        for side in (0, 1):
            sl = [slice(None)] * space.d
            sl[k] = 0 if side == 0 else space.m - 1
            yield k, side, tuple(sl)


def assemble_boundary_rhs(target: Callable, space: TensorSpace, quad: QuadratureRule | None = None) -> np.ndarray:
    """Entries ``int_Gamma target * phi_k ds``, face by face."""
    quad = gauss_rule(5) if quad is None else quad
    if quad.npoints < 5:
        raise ValueError("boundary right-hand side needs at least 5 quadrature points")
    pts, wts, basis_vals = face_quadrature(space, quad)
    weighted = (basis_vals * wts[:, None]).T
    rhs = np.zeros(space.shape)
    for k, side, sl in _faces(space):
        vals = np.asarray(target(*_face_coords(space.d, k, side, pts)), dtype=float)
        rhs[sl] += contract_axes(vals, [weighted] * (space.d - 1))
    return TensorSpace.flat(rhs)


def boundary_l2_error(solution, target: Callable, quad: QuadratureRule | None = None,
                      space: TensorSpace | None = None) -> float:
    """``||y_h - target||_{L2(Gamma)}`` by face-wise tensor Gauss quadrature."""
    if isinstance(solution, StateSolution):
        coeffs, space = solution.coeffs, solution.space
    else:
        coeffs = np.asarray(solution, dtype=float)
        if space is None:
            raise ValueError("space is required when passing raw coefficients")
    quad = gauss_rule(5) if quad is None else quad
    if quad.npoints < 5:
        raise ValueError("boundary error needs at least 5 quadrature points")
    pts, wts, basis_vals = face_quadrature(space, quad)
    y = space.grid(coeffs)
    total = 0.0
    for k, side, sl in _faces(space):
        yh = contract_axes(y[sl], [basis_vals] * (space.d - 1))
        diff = yh - np.asarray(target(*_face_coords(space.d, k, side, pts)), dtype=float)
        w = np.ones(()) if space.d == 1 else _outer_weights(wts, space.d - 1)
        total += float(np.sum(w * diff * diff))
    return math.sqrt(total)


def _outer_weights(wts, k):
    out = wts
    for _ in range(k - 1):
        out = np.multiply.outer(out, wts)
    return out


def target_boundary_norm(target: Callable, space: TensorSpace, quad: QuadratureRule | None = None) -> float:
    return boundary_l2_error(np.zeros(space.total_dofs), target, quad, space)


def _solve_schur(space, rho, rhs, cfg: SolverConfig, preconditioned: bool):
    schur = SchurOperator(space, rho, cfg)
    part = schur.partition
    rhs_b = rhs[part.boundary_ids]
    precond = lumped_mass_preconditioner(schur.block("M", "B", "B"), space.h) if preconditioned else None
    y_b, report = cg(schur, rhs_b, cfg, precond)
    y = part.embed(v_boundary=y_b)
    if report.converged:
        y[part.interior_ids] = reconstruct_interior(schur, y_b)
    report = replace(report, inner_iterations_total=schur.inner_iterations)
    return y, report


def _solve_full(space, rho, rhs, cfg: SolverConfig):
    # the full path is multigrid-preconditioned unless Jacobi is asked for explicitly
    op = system_operator(space, rho)
    if cfg.preconditioner == "jacobi":
        precond = jacobi_preconditioner(op)
    else:
        precond = gmg_vcycle(space, rho, damping=cfg.jacobi_damping, smoothing_steps=cfg.smoothing_steps,
                             coarsening=cfg.coarsening)
    return cg(op, rhs, cfg, precond)


def solve_ocp(cfg: OcpConfig) -> StateSolution:
    """Solve ``[M_Gamma + rho (Ktilde + Kring)] y = ybar_h`` along ``cfg.path``."""
    start = time.perf_counter()
    space, rho = cfg.space, cfg.rho
    rhs = assemble_boundary_rhs(cfg.target, space, gauss_rule(cfg.quad_points))
    if cfg.path == "full-pcg":
        y, report = _solve_full(space, rho, rhs, cfg.solver)
    else:
        y, report = _solve_schur(space, rho, rhs, cfg.solver, cfg.path == "schur-pcg")
    report = replace(report, wall_time=time.perf_counter() - start)
    if not report.converged:
        raise SolverError(f"{cfg.path} did not converge in {report.iterations} iterations "
                          f"(relative residual {report.final_rel_residual:.2e})", report)
    return StateSolution(y, cfg, report, space, rho)


def full_residual(solution: StateSolution) -> float:
    """Relative residual of the full system for a solved state."""
    space = solution.space
    rhs = assemble_boundary_rhs(solution.config.target, space, gauss_rule(solution.config.quad_points))
    res = rhs - system_operator(space, solution.rho).apply(solution.coeffs)
    norm = np.linalg.norm(rhs)
    return float(np.linalg.norm(res) / norm) if norm > 0 else float(np.linalg.norm(res))


def h1_norm(space: TensorSpace, coeffs: np.ndarray) -> float:
    """Discrete H1(Omega) norm ``sqrt(y^T A y)``."""
    y = np.asarray(coeffs, dtype=float)
    return math.sqrt(max(float(y @ build_h1_operator(space).apply(y)), 0.0))


def recover_control(solution: StateSolution):
    """The control as a functional on the fe space, ``f = A y``, and its dual norm ``sqrt(y^T A y)``."""
    f = build_h1_operator(solution.space).apply(solution.coeffs)
    return f, math.sqrt(max(float(solution.coeffs @ f), 0.0))


def discrete_cost(solution: StateSolution) -> float:
    err = boundary_l2_error(solution, solution.config.target, gauss_rule(solution.config.quad_points))
    return 0.5 * err ** 2 + 0.5 * solution.rho * h1_norm(solution.space, solution.coeffs) ** 2


@dataclass
class TableRow:
    level: int
    dofs: int
    h: float
    error: Optional[float]
    eoc: Optional[float] = None
    iterations: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)
    d: int = 3
    target: str = ""
    rho_rule: str = ""

    def errors(self):
        return [r.error for r in self.rows]

    def eocs(self):
        return [r.eoc for r in self.rows]


def eoc(coarse_error: float, fine_error: float) -> float:
    """Observed order for a halved mesh size."""
    return math.log2(coarse_error / fine_error)


def fill_eoc(rows: Sequence[TableRow]) -> None:
    for prev, row in zip(rows[:-1], rows[1:]):
        if prev.error and row.error and row.level == prev.level + 1:
            row.eoc = eoc(prev.error, row.error)
        else:
            row.eoc = None
    if rows:
        rows[0].eoc = None


def _study_level(base: OcpConfig, level: int, paths: Sequence[str]) -> TableRow:
    space = TensorSpace.from_level(base.d, level)
    row = TableRow(level, space.total_dofs, space.h, None)
    for path in paths:
        cfg = replace(base, level=level, path=path)
        try:
            sol = solve_ocp(cfg)
        except SolverError as exc:
            row.failures[path] = str(exc)
            row.iterations[path] = None
            continue
        row.iterations[path] = sol.report.iterations
        if row.error is None:
            row.error = boundary_l2_error(sol, cfg.target, gauss_rule(cfg.quad_points))
    return row


def run_convergence_study(base: OcpConfig, levels: Sequence[int], paths: Sequence[str] | None = None,
                          jobs: int = 1) -> ConvergenceTable:
    """Solve every level along every path; failures are recorded per row and the study goes on."""
    levels = list(levels)
    if not levels or any(b <= a for a, b in zip(levels[:-1], levels[1:])):
        raise ConfigurationError("levels must be nonempty and increasing")
    paths = list(paths) if paths else [base.path]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(lambda lv: _study_level(base, lv, paths), levels))
    else:
        rows = [_study_level(base, lv, paths) for lv in levels]
    fill_eoc(rows)
    return ConvergenceTable(rows, base.d, base.target.kind, base.rho_rule)


@dataclass(frozen=True)
class SweepRecord:
    rho: float
    boundary_error: Optional[float]
    h1_norm: Optional[float]
    target_norm: float
    failure: str = ""


def rho_sweep(base: OcpConfig, level: int, rhos: Sequence[float]) -> list:
    """Boundary error and state H1 norm over a descending list of rho values at a fixed level."""
    rhos = [float(r) for r in rhos]
    if any(r <= 0 for r in rhos) or any(b > a for a, b in zip(rhos[:-1], rhos[1:])):
        raise ConfigurationError("rho values must be positive and sorted descending")
    space = TensorSpace.from_level(base.d, level)
    quad = gauss_rule(base.quad_points)
    tnorm = target_boundary_norm(base.target, space, quad)
    out = []
    for rho in rhos:
        cfg = replace(base, level=level, rho_rule=f"const:{rho!r}")
        try:
            sol = solve_ocp(cfg)
        except SolverError as exc:
            out.append(SweepRecord(rho, None, None, tnorm, str(exc)))
            continue
        out.append(SweepRecord(rho, boundary_l2_error(sol, base.target, quad), h1_norm(space, sol.coeffs), tnorm))
    return out


def fit_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log(ys) against log(xs)."""
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


def pre_saturation_window(records: Sequence[SweepRecord], floor_factor: float = 3.0,
                          ceiling_fraction: float = 0.1) -> list:
    """Sweep points in the asymptotic O(rho) regime.

    Drops points whose error is not yet small against the target norm (above
    ``ceiling_fraction * ||ybar||``) and points within ``floor_factor`` of the
    smallest error seen, where the discretization error takes over.
    """
    good = [r for r in records if r.boundary_error is not None and r.boundary_error > 0]
    if not good:
        return []
    floor = min(r.boundary_error for r in good)
    return [r for r in good
            if floor_factor * floor <= r.boundary_error <= ceiling_fraction * r.target_norm]
