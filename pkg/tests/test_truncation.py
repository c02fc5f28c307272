import numpy as np
import pytest
import scipy.sparse as sp

from helpers import dense_kkt, random_problem, scalar_problem
from localityopt import truncation
from localityopt.analysis import locality_report
from localityopt.benchmarks import gen_dispatch, gen_state_estimation
from localityopt.graphs import constraints_within, diameter, problem_graphs
from localityopt.problem import ConstrainedProblem, eval_objective, solve_equality_constrained
from localityopt.truncation import (extend_solution, induce_subproblem, khop_local_solution,
                                    parallel_map, solve_local, truncation_error_profile)


def fewer_constraints_solution(p, C_S):
    """Full objective, only the constraints in C_S (dense oracle)."""
    sub = ConstrainedProblem(p.objective, p.A[C_S], p.b[C_S], check=False)
    if len(C_S) == 0:
        return p.objective.unconstrained_minimizer()
    return dense_kkt(sub)[0]


def test_induce_full_set_is_global_problem():
    p = gen_dispatch(3, 3, 1.0).problem
    sub = induce_subproblem(p, np.arange(p.n))
    np.testing.assert_array_equal(sub.C_S, np.arange(p.m))
    assert (sub.sub_A != p.A).nnz == 0
    np.testing.assert_allclose(solve_local(sub), solve_equality_constrained(p).x, atol=1e-12)


def test_induce_one_load_scalar_blocks():
    # same constraint matrix as the 3x3 dispatch, one scalar block per variable
    A = gen_dispatch(3, 3, 0.0).problem.A
    p = scalar_problem(A, np.ones(A.shape[0]))
    S = A.getrow(1).indices
    sub = induce_subproblem(p, S)
    assert sub.sub_A.shape == (1, 4)
    np.testing.assert_array_equal(sub.C_S, [1])


def test_induce_one_load_closes_generator_blocks():
    p = gen_dispatch(3, 3, 1.0).problem
    S = p.A.getrow(0).indices
    sub = induce_subproblem(p, S)
    np.testing.assert_array_equal(sub.S, p.objective.closure(S))
    assert sub.S.size == 1 + 2 + 2 + 4
    np.testing.assert_array_equal(sub.C_S, [0])
    # every kept row is a whole row of A
    for c in sub.C_S:
        assert set(p.A.getrow(c).indices) <= set(sub.S)


def test_induce_without_contained_constraints():
    p = gen_dispatch(3, 3, 1.0, seed=1).problem
    idx = p.objective.block_indices(0)
    sub = induce_subproblem(p, idx)
    assert sub.C_S.size == 0 and sub.sub_A.shape == (0, idx.size)
    np.testing.assert_allclose(solve_local(sub), p.objective.restrict(sub.S).unconstrained_minimizer())


def test_induce_empty_set_rejected():
    with pytest.raises(ValueError):
        induce_subproblem(gen_dispatch(3, 3, 1.0).problem, [])


def test_solve_local_redundant_rows():
    A = np.array([[1.0, 1.0, 0.0, 0.0], [0.0, 1.0, 1.0, 0.0], [1.0, 0.0, -1.0, 1.0]])
    p = scalar_problem(A, [1.0, 2.0, -1.0])
    sub = induce_subproblem(p, [0, 1, 2])
    assert sub.C_S.tolist() == [0, 1]
    whole = induce_subproblem(p, [0, 1, 2, 3])
    np.testing.assert_allclose(solve_local(whole), solve_equality_constrained(p).x, atol=1e-10)
    # duplicate a row inside S: direct KKT is singular, the pivoted fallback recovers
    dup = truncation.LocalSubProblem(sub.S, np.array([0, 1, 1]), sp.vstack([sub.sub_A, sub.sub_A[1]]).tocsr(),
                                     np.array([1.0, 2.0, 2.0]), sub.sub_objective)
    np.testing.assert_allclose(solve_local(dup), solve_local(sub), atol=1e-10)


@pytest.mark.parametrize("seed", range(6))
def test_local_solve_and_implicit_constraints(seed):
    rng = np.random.default_rng(seed)
    p = random_problem(rng, 24, 12, per_row=3)
    S = rng.choice(p.n, size=12, replace=False)
    sub = induce_subproblem(p, S)
    x_S = solve_local(sub)
    full = fewer_constraints_solution(p, sub.C_S)
    np.testing.assert_allclose(x_S, full[sub.S], atol=1e-8)
    ext = extend_solution(p, sub, x_S)
    np.testing.assert_allclose(ext.x_hat, full, atol=1e-8)
    np.testing.assert_allclose(ext.b_hat[sub.C_S], p.b[sub.C_S], atol=1e-10)
    np.testing.assert_allclose(dense_kkt(p, ext.b_hat)[0], ext.x_hat, atol=1e-8)


def test_extend_full_set():
    p = gen_state_estimation(3, 3, seed=2).problem
    sub = induce_subproblem(p, np.arange(p.n))
    ext = extend_solution(p, sub, solve_local(sub))
    np.testing.assert_allclose(ext.x_hat, solve_equality_constrained(p).x, atol=1e-12)
    np.testing.assert_allclose(ext.b_hat, p.b, atol=1e-10)


def test_extend_fills_complement_with_zero_for_zero_alpha():
    p = gen_dispatch(4, 4, 0.0).problem
    sub = induce_subproblem(p, p.objective.block_indices(5))
    ext = extend_solution(p, sub, solve_local(sub))
    outside = np.setdiff1d(np.arange(p.n), sub.S)
    np.testing.assert_array_equal(ext.x_hat[outside], 0.0)


def test_khop_beyond_diameter_is_exact():
    inst = gen_dispatch(5, 5, 10.0, seed=3)
    p, g = inst.problem, inst.graphs
    x = solve_equality_constrained(p).x
    D = diameter(g.g_agent)
    for a in range(g.nagents):
        np.testing.assert_allclose(khop_local_solution(p, g, a, D), x[g.agents[a]], atol=1e-10)
    with pytest.raises(ValueError):
        khop_local_solution(p, g, 0, -1)


def test_zero_alpha_dispatch_splits_loads_evenly():
    inst = gen_dispatch(5, 4, 0.0, seed=4)
    p, g = inst.problem, inst.graphs
    x = solve_equality_constrained(p).x
    np.testing.assert_allclose(x, p.b[p.A.tocsc().indices] / 4, atol=1e-12)
    for a in range(g.nagents):
        for k in (1, 2):
            np.testing.assert_allclose(khop_local_solution(p, g, a, k), x[g.agents[a]], atol=1e-12)
        # a lone generator holds no complete load constraint
        np.testing.assert_array_equal(khop_local_solution(p, g, a, 0), 0.0)


def test_dispatch_k3_within_error_bound():
    inst = gen_dispatch(10, 10, 10.0, seed=0)
    p, g = inst.problem, inst.graphs
    rep = locality_report(p)
    x = solve_equality_constrained(p).x
    for a in range(0, g.nagents, 7):
        err = np.abs(khop_local_solution(p, g, a, 3) - x[g.agents[a]]).max()
        assert err <= rep.C * rep.lam ** 3


def test_profile_zero_rate_instance():
    inst = gen_dispatch(4, 4, 0.0, seed=5)
    p, g = inst.problem, inst.graphs
    rep = locality_report(p)
    assert rep.lam == pytest.approx(0.0, abs=1e-7)
    prof = truncation_error_profile(p, g, range(4), solve_equality_constrained(p).x, rep)
    assert [r.k for r in prof.rows] == [0, 1, 2, 3]
    assert all(r.max_error <= 1e-10 for r in prof.rows[1:])
    assert all(rec.abs_error <= rec.bound + 1e-9 for rec in prof.records)


def test_profile_bounds_and_objective_side():
    inst = gen_state_estimation(4, 3, seed=6)
    p, g = inst.problem, inst.graphs
    rep = locality_report(p)
    x = solve_equality_constrained(p).x
    prof = truncation_error_profile(p, g, range(diameter(g.g_agent) + 1), x, rep)
    assert not prof.failures
    assert all(rec.abs_error <= rec.bound + 1e-9 for rec in prof.records)
    for row in prof.rows:
        assert row.mean_error <= row.max_error
    f_star = eval_objective(p, x)
    for a in range(0, g.nagents, 5):
        for k in (0, 1, 2):
            sub = induce_subproblem(p, truncation.agent_neighborhood(g, a, k))
            ext = extend_solution(p, sub, solve_local(sub))
            assert eval_objective(p, ext.x_hat) <= f_star + 1e-9


def test_profile_records_failures(monkeypatch):
    inst = gen_dispatch(3, 3, 1.0)
    p, g = inst.problem, inst.graphs
    real = truncation.local_solution_on

    def flaky(p_, agent, S):
        if agent == 2:
            raise RuntimeError("boom")
        return real(p_, agent, S)

    monkeypatch.setattr(truncation, "local_solution_on", flaky)
    prof = truncation_error_profile(p, g, [0, 1], solve_equality_constrained(p).x, locality_report(p))
    assert set(prof.failures) == {(2, 0), (2, 1)}
    assert all(r.agent != 2 for r in prof.records)
    assert len(prof.records) == 2 * (g.nagents - 1)


def test_parallel_profile_is_identical(monkeypatch):
    inst = gen_dispatch(5, 5, 10.0, seed=7)
    p, g = inst.problem, inst.graphs
    rep = locality_report(p)
    x = solve_equality_constrained(p).x
    serial = truncation_error_profile(p, g, range(4), x, rep)
    monkeypatch.setenv("LOCALITYOPT_THREADS", "4")
    assert truncation.thread_count() == 4
    threaded = truncation_error_profile(p, g, range(4), x, rep)
    assert serial.records == threaded.records


def test_thread_count_parsing(monkeypatch):
    monkeypatch.setenv("LOCALITYOPT_THREADS", "many")
    assert truncation.thread_count() == 1
    monkeypatch.setenv("LOCALITYOPT_THREADS", "3")
    assert parallel_map(lambda v: v * v, range(5)) == [0, 1, 4, 9, 16]


def test_constraint_rows_kept_whole():
    rng = np.random.default_rng(8)
    p = random_problem(rng, 20, 10)
    g = problem_graphs(p)
    sub = induce_subproblem(p, truncation.agent_neighborhood(g, 0, 1))
    np.testing.assert_array_equal(sub.C_S, constraints_within(p.A, sub.S))
    for r, c in enumerate(sub.C_S):
        assert sub.sub_A.getrow(r).nnz == p.A.getrow(c).nnz
