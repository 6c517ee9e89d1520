import itertools
import stat
import sys

import numpy as np
import pytest

from metavrp.env import solution_cost, validate
from metavrp.errors import (ExternalSolverError, InfeasibleExternalSolution, InvalidArgument,
                            UnsupportedFormat, ValidationError)
from metavrp.oracles import (AdapterConfig, cvrp_local_search, distance_matrix, external_solver,
                             held_karp, reference_solve, relative_gap, tsp_local_search)
from metavrp.oracles import kernels
from metavrp.oracles.solvers import local_search_trace

from conftest import cvrp, square, tsp


def _brute_force(inst):
    n = inst.n
    return min(solution_cost([0, *p], inst) for p in itertools.permutations(range(1, n)))


def test_unit_square(kernel_backend):
    res = held_karp(square())
    assert res.exact and res.solver_tag == "held_karp"
    assert abs(res.cost - 4.0) < 1e-12


def test_tiny_cases(kernel_backend):
    for n in (2, 3):
        inst = tsp(n, 0)
        res = held_karp(inst)
        validate(res.solution.order, inst)
        assert abs(res.cost - _brute_force(inst)) < 1e-12


def test_frozen_held_karp_value(kernel_backend):
    res = held_karp(tsp(10, 2024))
    assert abs(res.cost - 3.1946399756713832) < 1e-12
    tour = list(res.solution.order)
    assert tour == [0, 9, 4, 3, 7, 6, 1, 5, 8, 2] or tour == [0, 2, 8, 5, 1, 6, 7, 3, 4, 9]
    assert abs(tsp_local_search(tsp(10, 2024)).cost - 3.1946399756713832) < 1e-12


@pytest.mark.parametrize("n", [5, 7])
def test_held_karp_matches_brute_force(kernel_backend, n):
    for seed in range(5):
        inst = tsp(n, seed, "gm_2_5")
        assert abs(held_karp(inst).cost - _brute_force(inst)) < 1e-12


def test_held_karp_dominates_heuristics(kernel_backend):
    rng = np.random.default_rng(0)
    for k in range(100):
        inst = tsp(int(rng.integers(4, 10)), 1000 + k, ["uniform", "gm_3_10", "rotation"][k % 3])
        opt = held_karp(inst).cost
        assert tsp_local_search(inst, seed=k).cost >= opt - 1e-9
        nn = kernels.nearest_neighbor(distance_matrix(inst.coords), 0)
        assert solution_cost(list(nn), inst) >= opt - 1e-9


def test_held_karp_limits():
    with pytest.raises(InvalidArgument):
        held_karp(tsp(14, 0))
    with pytest.raises(UnsupportedFormat):
        held_karp(cvrp(5, 0))


def test_local_search_feasible_and_monotone(kernel_backend):
    for seed in range(20):
        inst = tsp(60, seed, "gm_3_30" if seed % 2 else "uniform")
        d = distance_matrix(inst.coords)
        init, tour, trace = local_search_trace(inst, start=seed % 60)
        validate(list(tour), inst)
        c0 = solution_cost(list(init), inst)
        c1 = solution_cost(list(tour), inst)
        assert c1 <= c0 + 1e-12
        costs = [c0, *trace]
        assert all(b <= a + 1e-12 for a, b in zip(costs, costs[1:]))
        assert abs(kernels.tour_length(d, np.asarray(tour, dtype=np.int64)) - c1) < 1e-9


def test_backends_agree():
    mods = kernels.backends()
    if len(mods) < 2:
        pytest.skip("compiled kernels not built")
    inst = tsp(80, 3)
    d = distance_matrix(inst.coords)
    init = mods["python"].nearest_neighbor(d, 0)
    a = mods["python"].local_search(d, init, 50)
    b = mods["compiled"].local_search(d, init, 50)
    assert list(a[0]) == list(b[0]) and list(a[1]) == list(b[1])
    assert mods["python"].held_karp(d[:9, :9])[0] == mods["compiled"].held_karp(d[:9, :9])[0]


def test_cvrp_local_search(kernel_backend):
    for seed in range(10):
        inst = cvrp(20, seed, "gm_2_5" if seed % 2 else "uniform")
        trace = []
        res = cvrp_local_search(inst, trace=trace)
        validate(res.solution.order, inst)
        assert all(b <= a + 1e-9 for a, b in zip(trace, trace[1:]))
        assert abs(res.cost - trace[-1]) < 1e-9
    res = cvrp_local_search(cvrp(20, 2024))
    assert abs(res.cost - 5.425331924921494) < 1e-9


def test_cvrp_single_route_when_capacity_is_large(kernel_backend):
    inst = cvrp(8, 1)
    inst = type(inst)(coords=inst.coords, task=inst.task, depot=inst.depot,
                      demands_raw=inst.demands_raw, capacity_raw=int(inst.demands_raw.sum()))
    order = cvrp_local_search(inst).solution.order
    assert list(order).count(0) == 2
    with pytest.raises(UnsupportedFormat):
        cvrp_local_search(tsp(5, 0))


def test_reference_solve_dispatch():
    assert reference_solve(tsp(8, 0)).solver_tag == "held_karp"
    assert reference_solve(tsp(20, 0)).solver_tag == "ls_2opt_oropt"
    assert reference_solve(cvrp(8, 0)).solver_tag == "cvrp_savings_ls"


def test_relative_gap():
    assert relative_gap([1.1, 2.0], [1.0, 2.0]) == pytest.approx(0.05)
    for bad in (([1.0], [1.0, 2.0]), ([], []), ([1.0], [0.0])):
        with pytest.raises(InvalidArgument):
            relative_gap(*bad)


SOLVER = """#!{python}
import os, sys
src, dst = sys.argv[1], sys.argv[2]
mode = os.environ.get("FAKE_SOLVER_MODE", "ok")
lines = open(src).read().split()
n = int(lines[lines.index("DIMENSION") + 2] if lines[lines.index("DIMENSION") + 1] == ":" else
        lines[lines.index("DIMENSION") + 1].strip(":"))
if mode == "fail":
    print("solver crashed", file=sys.stderr)
    sys.exit(4)
if mode == "nofile":
    sys.exit(0)
tour = list(range(1, n + 1)) if mode == "ok" else [1] * n
with open(dst, "w") as fh:
    fh.write("NAME : t\\nTYPE : TOUR\\nDIMENSION : %d\\nTOUR_SECTION\\n" % n)
    fh.write("\\n".join(map(str, tour)) + "\\n-1\\nEOF\\n")
"""


@pytest.fixture
def fake_solver(tmp_path):
    path = tmp_path / "fake_solver"
    path.write_text(SOLVER.format(python=sys.executable))
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    return str(path)


def test_external_solver_success(fake_solver, monkeypatch):
    monkeypatch.setenv("FAKE_SOLVER_MODE", "ok")
    inst = tsp(7, 0)
    res = external_solver(inst, AdapterConfig(binary=fake_solver, solver_tag="fake"))
    assert list(res.solution.order) == list(range(7))
    assert res.solver_tag == "fake" and not res.exact


def test_external_solver_env_fallback(fake_solver, monkeypatch):
    monkeypatch.setenv("FAKE_SOLVER_MODE", "ok")
    monkeypatch.setenv("OMNI_SOLVER_BIN", fake_solver)
    assert external_solver(tsp(5, 0), AdapterConfig()).cost > 0
    monkeypatch.delenv("OMNI_SOLVER_BIN")
    with pytest.raises(ExternalSolverError):
        external_solver(tsp(5, 0), AdapterConfig())


@pytest.mark.parametrize("mode", ["fail", "nofile"])
def test_external_solver_failures(fake_solver, monkeypatch, mode):
    monkeypatch.setenv("FAKE_SOLVER_MODE", mode)
    with pytest.raises(ExternalSolverError) as info:
        external_solver(tsp(5, 0), AdapterConfig(binary=fake_solver))
    if mode == "fail":
        assert "solver crashed" in info.value.output


def test_external_solver_infeasible_tour_rejected(fake_solver, monkeypatch):
    monkeypatch.setenv("FAKE_SOLVER_MODE", "dup")
    with pytest.raises(InfeasibleExternalSolution) as info:
        external_solver(tsp(5, 0), AdapterConfig(binary=fake_solver))
    assert isinstance(info.value, ValidationError)


def test_external_solver_missing_binary(tmp_path):
    with pytest.raises(ExternalSolverError):
        external_solver(tsp(5, 0), AdapterConfig(binary=str(tmp_path / "nope")))
    with pytest.raises(InvalidArgument):
        external_solver(tsp(5, 0), AdapterConfig(binary="x", format="cvrplib"))
