import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from hmaxwell import clustering as cl, fem, hcore as hc, hlu, solve
from hmaxwell.hcore import TruncationControl as TC

from conftest import cube_system


def test_config_validation():
    for bad in (dict(tol=0), dict(max_it=0), dict(restart=0), dict(preconditioner="ilu")):
        with pytest.raises(ValueError):
            solve.SolverConfig(**bad)


def _identity_system(n=10):
    rng = np.random.default_rng(0)
    pts = rng.random((n, 3))
    geom = fem.DofGeometry(pts, pts, pts)
    return fem.SparseSystem(sp.eye(n), np.arange(1, n + 1), geometry=geom), geom


def test_richardson_identity():
    sys_, geom = _identity_system()
    bt = cl.build_square(geom, 4)
    F = hlu.hlu_factor(hc.sparse_to_h(sys_, bt))
    x, rep = solve.richardson_hlu(sys_, F)
    assert rep.iterations == 1 and rep.converged
    assert np.allclose(x, sys_.rhs)
    assert len(rep.err_history) == rep.iterations


def test_gmres_identity():
    b = np.arange(1.0, 8.0)
    x, rep = solve.gmres(lambda v: v, b)
    assert rep.iterations == 1 and rep.converged and np.allclose(x, b)


def test_gmres_zero_rhs():
    x, rep = solve.gmres(lambda v: 3 * v, np.zeros(5))
    assert rep.converged and rep.iterations == 0 and np.all(x == 0)


def test_direct_inverse_diag():
    sys_, geom = _identity_system()
    bt = cl.build_square(geom, 4)
    B = hc.from_dense(bt, 0.5 * np.eye(10))
    sys2 = fem.SparseSystem(2 * sp.eye(10), sys_.rhs)
    x, rep = solve.direct_apply_inverse(B, sys2.rhs, sys2)
    assert np.allclose(x, sys2.rhs / 2) and rep.final_error <= 1e-14


@given(st.integers(0, 10_000), st.integers(5, 60), st.integers(2, 30))
def test_gmres_random_systems(seed, n, restart):
    rng = np.random.default_rng(seed)
    A = np.eye(n) * 4 + rng.standard_normal((n, n)) / np.sqrt(n) + 1j * rng.standard_normal((n, n)) / np.sqrt(n)
    b = rng.standard_normal(n) + 0j
    cfg = solve.SolverConfig(tol=1e-10, restart=restart, max_it=500)
    x, rep = solve.gmres(lambda v: A @ v, b, None, cfg)
    assert rep.converged and rep.monotone
    assert len(rep.err_history) == rep.iterations
    assert np.linalg.norm(A @ x - b) <= 1e-8 * np.linalg.norm(b)


def test_gmres_stagnation_flag():
    # a cyclic shift makes GMRES stall completely until the last iteration
    n = 20
    S = np.roll(np.eye(n), 1, axis=0)
    b = np.zeros(n)
    b[0] = 1
    x, rep = solve.gmres(lambda v: S @ v, b, None, solve.SolverConfig(tol=1e-8, restart=5, max_it=100))
    assert rep.stagnated and not rep.converged


def test_richardson_max_it_flag(cube1):
    sys_ = cube1[2]
    bt = cl.build_square(sys_.geometry, 4)
    F = hlu.hlu_factor(hc.sparse_to_h(sys_, bt), TC(rank=1))
    x, rep = solve.richardson_hlu(sys_, F, solve.SolverConfig(tol=1e-14, max_it=2))
    assert rep.iterations == 2 and not rep.converged and np.isfinite(rep.final_error)


def test_richardson_cube_full_rank(cube1):
    sys_ = cube1[2]
    bt = cl.build_square(sys_.geometry, 4)
    F = hlu.hlu_factor(hc.sparse_to_h(sys_, bt))
    x, rep = solve.richardson_hlu(sys_, F, solve.SolverConfig(tol=1e-8))
    assert rep.iterations <= 3 and rep.converged
    assert solve.solution_error(x, fem.dense_solve(sys_)) <= 1e-8


def test_richardson_decreases_with_truncated_factors(cube2):
    sys_ = cube2[2]
    bt = cl.build_square(sys_.geometry, 16)
    F = hlu.hlu_factor(hc.sparse_to_h(sys_, bt), TC(eps=1e-3))
    x, rep = solve.richardson_hlu(sys_, F, solve.SolverConfig(tol=1e-10))
    assert rep.converged and rep.monotone


def test_direct_inverse_rank_starved(cube1_h):
    sys_, bt, A = cube1_h
    B = hc.schulz_inverse(A)
    res = {}
    for r in (2, 16):
        C = B.copy()
        hc.truncate_node(C.root, TC(rank=r))
        _, rep = solve.direct_apply_inverse(hc.HMatrix(C.tree, C.root), sys_.rhs, sys_)
        res[r] = rep.relative_residual
    assert np.isfinite(res[2]) and res[2] > res[16]
    assert res[16] <= 1e-5


def test_report_json_round_trip():
    x, rep = solve.gmres(lambda v: 2 * v, np.ones(4))
    back = solve.IterationReport.from_json(rep.to_json())
    assert back == rep
    assert json.loads(rep.to_json())["config"]["restart"] == 100


def test_determinism(cube1_h):
    sys_, bt, A = cube1_h
    F = hlu.hlu_factor(A, TC(rank=2))
    runs = [solve.gmres(lambda v: sys_.matrix @ v, sys_.rhs, F.solve, solve.SolverConfig(tol=1e-10))[1]
            for _ in range(2)]
    assert runs[0].err_history == runs[1].err_history
