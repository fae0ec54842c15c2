import numpy as np
import pytest
import scipy.linalg as sla

from oracles import dense_schur
from tensorocp import (
    ConfigurationError,
    DivergenceError,
    GMGPreconditioner,
    NotSPDError,
    SolverConfig,
    TensorSpace,
    build_boundary_mass,
    build_h1_operator,
    build_interior_h1_operator,
    build_schur,
    cg,
    dense_lu_solve,
    gmg_vcycle,
    partition_dofs,
    reconstruct_interior,
)
from tensorocp.solvers import (
    FastDiagSolver,
    boundary_preserving_coarse_ids,
    interpolation_1d,
    jacobi_preconditioner,
    lumped_mass_preconditioner,
    system_kron_sum,
    system_operator,
    uniform_prolongation,
)


def dense_system(space, rho):
    return build_boundary_mass(space).dense() + rho * build_h1_operator(space).dense()


def dense_of(op, size):
    eye = np.eye(size)
    return np.column_stack([op.apply(eye[:, j]) for j in range(size)])


# configuration

@pytest.mark.parametrize("kwargs", [
    {"rel_tol": 0.0}, {"rel_tol": 1.0}, {"max_iters": 0}, {"inner_mode": "amg"},
    {"preconditioner": "ilu"}, {"coarsening": "algebraic"}, {"jacobi_damping": 0.0},
    {"smoothing_steps": 0},
])
def test_config_validation(kwargs):
    with pytest.raises(ConfigurationError):
        SolverConfig(**kwargs)


# cg

def test_cg_zero_rhs():
    x, rep = cg(lambda v: 2 * v, np.zeros(5))
    assert rep.iterations == 0 and rep.converged and np.all(x == 0)


def test_cg_identity():
    b = np.random.default_rng(0).standard_normal(30)
    x, rep = cg(lambda v: v, b)
    assert rep.iterations == 1 and rep.converged
    np.testing.assert_allclose(x, b, rtol=1e-15)


def test_cg_full_system_matches_lu():
    s = TensorSpace.from_intervals(2, 8)
    rho = 1 / 64
    A = dense_system(s, rho)
    b = np.random.default_rng(1).standard_normal(s.total_dofs)
    x, rep = cg(system_operator(s, rho), b, SolverConfig(rel_tol=1e-12))
    ref = dense_lu_solve(A, b)
    e = x - ref
    assert rep.converged and np.sqrt(e @ A @ e) <= 1e-8 * np.sqrt(ref @ A @ ref)
    assert rep.final_rel_residual <= 1e-12


@pytest.mark.parametrize("precond", [None, "jacobi", "gmg"])
def test_cg_error_monotone_in_energy_norm(precond):
    s = TensorSpace.from_intervals(2, 8)
    rho = 1 / 8
    A = dense_system(s, rho)
    b = np.random.default_rng(2).standard_normal(s.total_dofs)
    ref = np.linalg.solve(A, b)
    pc = {None: None, "jacobi": jacobi_preconditioner(system_operator(s, rho)),
          "gmg": gmg_vcycle(s, rho)}[precond]
    errs = []
    cg(system_operator(s, rho), b, SolverConfig(rel_tol=1e-12), pc,
       callback=lambda x: errs.append(np.sqrt((x - ref) @ A @ (x - ref))))
    assert len(errs) > 1
    assert all(b_ <= a * (1 + 1e-10) + 1e-14 for a, b_ in zip(errs[:-1], errs[1:]))


def test_cg_not_spd():
    with pytest.raises(NotSPDError):
        cg(lambda v: -v, np.ones(4))


def test_cg_divergence():
    with pytest.raises(DivergenceError):
        cg(lambda v: v, np.array([1.0, np.nan]))
    with pytest.raises(DivergenceError):
        cg(lambda v: np.full_like(v, np.inf), np.ones(3))


def test_cg_max_iters_reported():
    A = np.diag(np.arange(1.0, 51.0))
    x, rep = cg(lambda v: A @ v, np.ones(50), SolverConfig(max_iters=3))
    assert not rep.converged and rep.iterations == 3 and rep.final_rel_residual > 1e-9


# Schur complement

def _schur_oracle(space, rho):
    part = partition_dofs(space)
    return dense_schur(build_h1_operator(space).dense(), build_interior_h1_operator(space).dense(),
                       build_boundary_mass(space).dense(), rho, part.interior_ids, part.boundary_ids)


def test_schur_dense_oracle():
    s = TensorSpace.from_intervals(2, 8)
    S = build_schur(s, 1 / 8).dense()
    ref = _schur_oracle(s, 1 / 8)
    assert np.max(np.abs(S - ref)) <= 1e-10 * np.max(np.abs(ref))


def test_schur_lower_bound_by_mass():
    s = TensorSpace.from_intervals(2, 8)
    schur = build_schur(s, 1 / 8)
    mbb = schur.block("M", "B", "B")
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = rng.standard_normal(schur.size)
        v /= np.sqrt(v @ mbb.apply(v))
        assert v @ schur.apply(v) >= 1.0 - 1e-12


def test_schur_small_rho_limit():
    s = TensorSpace.from_intervals(2, 8)
    schur = build_schur(s, 1e-16)
    v = np.random.default_rng(4).standard_normal(schur.size)
    mv = schur.block("M", "B", "B").apply(v)
    assert np.linalg.norm(schur.apply(v) - mv) <= 1e-12 * np.linalg.norm(mv)


def test_schur_symmetric():
    s = TensorSpace.from_intervals(3, 8)
    schur = build_schur(s, 1 / 64)
    v, w = np.random.default_rng(5).standard_normal((2, schur.size))
    assert abs(w @ schur.apply(v) - v @ schur.apply(w)) <= 1e-12 * abs(w @ schur.apply(v))


def test_schur_rejects_bad_rho():
    with pytest.raises(ConfigurationError):
        build_schur(TensorSpace.from_intervals(2, 8), 0.0)


def test_spectral_equivalence_levels():
    lams = []
    for n in (8, 16, 32):
        s = TensorSpace.from_intervals(2, n)
        schur = build_schur(s, 1 / n)
        ev = sla.eigh(schur.dense(), dense_of(schur.block("M", "B", "B"), schur.size), eigvals_only=True)
        assert ev[0] >= 1 - 1e-9
        lams.append(ev[-1])
    for a, b in zip(lams[:-1], lams[1:]):
        assert b <= 1.1 * a + 0.5, f"lambda_max {lams}"


# interior reconstruction

def test_reconstruct_zero():
    schur = build_schur(TensorSpace.from_intervals(2, 8), 1 / 8)
    assert np.all(reconstruct_interior(schur, np.zeros(schur.size)) == 0)


def _schur_solve(space, rho, b, cfg=SolverConfig()):
    schur = build_schur(space, rho, cfg)
    part = schur.partition
    bb = part.restrict(b, "B")
    # b is supported on B for boundary tracking, so the condensed rhs is b_B
    yb, rep = cg(schur, bb, cfg)
    return part.embed(reconstruct_interior(schur, yb), yb), rep


def _boundary_rhs(space, seed):
    part = partition_dofs(space)
    rng = np.random.default_rng(seed)
    return part.embed(v_boundary=rng.standard_normal(part.boundary_ids.size))


def test_reconstruct_full_residual_d2():
    s = TensorSpace.from_intervals(2, 8)
    rho = 1 / 8
    b = _boundary_rhs(s, 6)
    y, _ = _schur_solve(s, rho, b)
    assert np.linalg.norm(b - system_operator(s, rho).apply(y)) <= 5e-8 * np.linalg.norm(b)


def test_reconstruct_d1_matches_lu():
    s = TensorSpace.from_intervals(1, 8)
    rho = 1 / 8
    b = _boundary_rhs(s, 7)
    y, _ = _schur_solve(s, rho, b)
    ref = dense_lu_solve(dense_system(s, rho), b)
    assert np.linalg.norm(y - ref) <= 1e-9 * np.linalg.norm(ref)


def test_inner_pcg_matches_exact():
    s = TensorSpace.from_intervals(2, 16)
    b = _boundary_rhs(s, 8)
    y1, _ = _schur_solve(s, 1 / 16, b)
    cfg = SolverConfig(inner_mode="inner-pcg", inner_rel_tol=1e-10)
    y2, _ = _schur_solve(s, 1 / 16, b, cfg)
    assert np.linalg.norm(y1 - y2) <= 1e-6 * np.linalg.norm(y1)
    schur = build_schur(s, 1 / 16, cfg)
    schur.apply(np.ones(schur.size))
    assert schur.inner_iterations > 0


def test_lumped_preconditioner_does_not_change_solution():
    s = TensorSpace.from_intervals(2, 16)
    rho = 1 / 16
    schur = build_schur(s, rho)
    bb = schur.partition.restrict(_boundary_rhs(s, 9), "B")
    y1, r1 = cg(schur, bb)
    y2, r2 = cg(schur, bb, SolverConfig(), lumped_mass_preconditioner(schur.block("M", "B", "B"), s.h))
    assert np.linalg.norm(y1 - y2) <= 1e-7 * np.linalg.norm(y1)
    assert r2.iterations <= r1.iterations


# lumped boundary mass

def test_lumped_d1():
    s = TensorSpace.from_intervals(1, 8)
    schur = build_schur(s, 1 / 8)
    pc = lumped_mass_preconditioner(schur.block("M", "B", "B"))
    np.testing.assert_allclose(pc.diag, [1.0, 1.0])


@pytest.mark.parametrize("n", [8, 16, 32])
def test_lumped_scales_like_h(n):
    s = TensorSpace.from_intervals(2, n)
    diag = lumped_mass_preconditioner(build_schur(s, 1 / n).block("M", "B", "B")).diag
    # corner dofs carry two faces of length 3h/2, edge dofs one face of length h
    assert np.all(diag >= 0.5 * s.h) and np.all(diag <= 3.5 * s.h)


def test_lumped_rayleigh_quotients():
    s = TensorSpace.from_intervals(2, 8)
    mbb = build_schur(s, 1 / 8).block("M", "B", "B")
    M = dense_of(mbb, mbb.shape[0])
    D = np.diag(lumped_mass_preconditioner(mbb).diag)
    ev = sla.eigh(M, D, eigvals_only=True)
    assert ev.min() >= 1 / 3 and ev.max() <= 3


# fast diagonalization

def _interior_block(space):
    m = space.m
    op = build_interior_h1_operator(space).restrict(1, m - 1)
    fd = FastDiagSolver(space.d, space.mass_interior.restrict(1, m - 1), space.stiffness_interior.restrict(1, m - 1))
    return op, fd


@pytest.mark.parametrize("d,tol", [(1, 1e-12), (3, 1e-11)])
def test_fast_diag_residual(d, tol):
    op, fd = _interior_block(TensorSpace.from_intervals(d, 8))
    rhs = np.random.default_rng(10).standard_normal(op.size)
    assert np.linalg.norm(op.apply(fd.solve(rhs)) - rhs) <= tol * np.linalg.norm(rhs)


def test_fast_diag_ones():
    op, fd = _interior_block(TensorSpace.from_intervals(2, 8))
    ones = np.ones(op.size)
    np.testing.assert_allclose(fd.solve(op.apply(ones)), ones, rtol=0, atol=1e-11)


# geometric multigrid

def test_gmg_single_level_is_damped_jacobi():
    s = TensorSpace.from_intervals(2, 8)
    op = system_kron_sum(s, 0.1)
    pc = GMGPreconditioner([op], damping=0.8)
    r = np.random.default_rng(11).standard_normal(op.size)
    np.testing.assert_allclose(pc.apply(r), 0.8 * r / op.diagonal(), rtol=1e-14)


def test_system_kron_sum_matches_sum():
    s = TensorSpace.from_intervals(3, 8)
    v = np.random.default_rng(12).standard_normal(s.total_dofs)
    np.testing.assert_allclose(system_kron_sum(s, 0.3).apply(v), system_operator(s, 0.3).apply(v), rtol=1e-13)


@pytest.mark.parametrize("m", [7, 15, 31])
def test_boundary_preserving_prolongation_keeps_constants(m):
    p = interpolation_1d(boundary_preserving_coarse_ids(m), m)
    np.testing.assert_allclose(p @ np.ones(p.shape[1]), 1.0, rtol=0, atol=1e-15)


def test_uniform_prolongation_keeps_constants_and_nesting():
    coarse, fine = TensorSpace.from_intervals(3, 8), TensorSpace.from_intervals(3, 16)
    p = uniform_prolongation(coarse, fine)
    np.testing.assert_allclose(p @ np.ones(coarse.m), 1.0, atol=1e-15)
    # coarse functions are reproduced exactly on the fine space
    c = np.random.default_rng(13).standard_normal(coarse.m)
    x = np.linspace(0, 1, 97)
    np.testing.assert_allclose(fine.basis.function_values(p @ c, x), coarse.basis.function_values(c, x), atol=1e-14)


def test_non_nested_levels_rejected():
    with pytest.raises(ConfigurationError):
        uniform_prolongation(TensorSpace.from_intervals(2, 8), TensorSpace.from_intervals(2, 12))
    op8, op16 = system_kron_sum(TensorSpace.from_intervals(2, 8), 1.0), system_kron_sum(TensorSpace.from_intervals(2, 16), 1.0)
    with pytest.raises(ConfigurationError):
        GMGPreconditioner([op16, op8], [np.ones((15, 5))])
    with pytest.raises(ConfigurationError):
        interpolation_1d([1, 3, 6], 7)


@pytest.mark.parametrize("coarsening", ["boundary-preserving", "uniform"])
def test_gmg_symmetric_positive(coarsening):
    s = TensorSpace.from_intervals(2, 16)
    pc = gmg_vcycle(s, 1 / 256, coarsening=coarsening)
    assert pc.levels >= 2
    P = dense_of(pc, s.total_dofs)
    assert np.max(np.abs(P - P.T)) <= 1e-12 * np.max(np.abs(P))
    assert np.linalg.eigvalsh(0.5 * (P + P.T)).min() > 0


def test_gmg_pcg_converges_fast():
    s = TensorSpace.from_level(3, 3)
    rho = s.h ** 2
    b = _boundary_rhs(s, 14)
    _, rep = cg(system_operator(s, rho), b, SolverConfig(), gmg_vcycle(s, rho))
    assert rep.converged and rep.iterations <= 15


# dense LU oracle

def test_lu_identity_and_2x2():
    b = np.arange(4.0)
    np.testing.assert_array_equal(dense_lu_solve(np.eye(4), b), b)
    np.testing.assert_allclose(dense_lu_solve(np.array([[2.0, 1.0], [1.0, 2.0]]), np.array([3.0, 3.0])), [1, 1])


def test_lu_random_spd():
    rng = np.random.default_rng(15)
    q = rng.standard_normal((50, 50))
    a = q @ q.T + 50 * np.eye(50)
    b = rng.standard_normal(50)
    assert np.linalg.norm(a @ dense_lu_solve(a, b) - b) <= 1e-11 * np.linalg.norm(b)


def test_lu_singular():
    with pytest.raises(np.linalg.LinAlgError):
        dense_lu_solve(np.zeros((3, 3)), np.ones(3))
