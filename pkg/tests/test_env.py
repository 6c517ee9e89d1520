import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from metavrp.env import (Solution, apply_action, augment8, cvrp_routes, feasible_actions,
                         init_multistart, make_batch, solution_cost, tour_cost_tensor, validate)
from metavrp.errors import InvalidArgument, InvalidState, ValidationError
from metavrp.instances import TaskSpec, VrpInstance

from conftest import cvrp, square, tsp


def test_multistart_tsp():
    st_ = init_multistart(make_batch([tsp(5, 0)]), 5)
    assert st_.current.tolist() == [[0, 1, 2, 3, 4]]
    assert st_.visited.sum(-1).tolist() == [[1] * 5]


def test_multistart_cvrp_forces_first_customer():
    b = make_batch([cvrp(4, 0)])
    st_ = init_multistart(b, 4)
    assert st_.current.tolist() == [[0, 0, 0, 0]]
    mask = feasible_actions(st_, b)
    assert mask[0].float().argmax(-1).tolist() == [1, 2, 3, 4]
    assert mask.sum(-1).tolist() == [[1, 1, 1, 1]]


def test_multistart_bounds():
    b = make_batch([tsp(5, 0)])
    assert init_multistart(b, 1).S == 1
    with pytest.raises(InvalidArgument):
        init_multistart(b, 6)


def test_tsp_last_node_forced_then_terminal():
    b = make_batch([tsp(4, 0)])
    s = init_multistart(b, 1)
    for a in (1, 2):
        s = apply_action(s, torch.tensor([[a]]), b)
    mask = feasible_actions(s, b)
    assert mask.sum().item() == 1 and mask[0, 0, 3]
    s = apply_action(s, torch.tensor([[3]]), b)
    assert s.is_terminal()
    with pytest.raises(InvalidState):
        feasible_actions(s, b)


def _inst(demands, Q):
    pts = np.random.default_rng(0).uniform(size=(len(demands), 2))
    return VrpInstance(coords=pts, task=TaskSpec(len(demands), None, "cvrp"),
                       depot=np.array([0.5, 0.5]), demands_raw=np.array(demands), capacity_raw=Q)


def test_cvrp_capacity_dynamics():
    inst = _inst([2, 8, 5], 10)
    b = make_batch([inst])
    s = init_multistart(b, starts=torch.tensor([[0]]))
    s = apply_action(s, torch.tensor([[1]]), b)
    assert s.capacity.item() == pytest.approx(0.8)
    s = apply_action(s, torch.tensor([[2]]), b)
    assert s.capacity.item() == pytest.approx(0.0, abs=1e-12)
    mask = feasible_actions(s, b)
    assert mask[0, 0].tolist() == [True, False, False, False]
    s = apply_action(s, torch.tensor([[0]]), b)
    assert s.capacity.item() == 1.0
    mask = feasible_actions(s, b)
    assert mask[0, 0].tolist() == [False, False, False, True]  # no depot self-loop
    s = apply_action(s, torch.tensor([[3]]), b)
    assert feasible_actions(s, b)[0, 0].tolist() == [True, False, False, False]
    s = apply_action(s, torch.tensor([[0]]), b)
    assert s.is_terminal()


def test_infeasible_action_is_contract_violation():
    b = make_batch([tsp(4, 0)])
    s = init_multistart(b, 1)
    with pytest.raises(AssertionError):
        apply_action(s, torch.tensor([[0]]), b)


def test_square_cost_and_symmetry():
    inst = square()
    assert solution_cost([0, 1, 2, 3], inst) == 4.0
    assert solution_cost([3, 2, 1, 0], inst) == 4.0
    assert solution_cost([2, 3, 0, 1], inst) == 4.0


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), n=st.integers(3, 30), shift=st.integers(0, 29))
def test_tsp_cost_invariant_under_shift_and_reversal(seed, n, shift):
    inst = tsp(n, seed)
    order = list(np.random.default_rng(seed).permutation(n))
    c = solution_cost(order, inst)
    k = shift % n
    assert solution_cost(order[k:] + order[:k], inst) == pytest.approx(c, abs=1e-12)
    assert solution_cost(order[::-1], inst) == pytest.approx(c, abs=1e-12)
    validate(order, inst)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_cvrp_validate_rejects_overloaded_routes(seed):
    inst = cvrp(12, seed)
    rng = np.random.default_rng(seed)
    perm = list(rng.permutation(12) + 1)
    # one-customer routes are always feasible
    single = [v for c in perm for v in (int(c), 0)]
    validate(single, inst)
    # a single route holding everything is feasible iff the total fits
    over = int(inst.demands_raw.sum()) > inst.capacity_raw
    if over:
        with pytest.raises(ValidationError):
            validate(perm, inst)
    else:
        validate(perm, inst)


def test_validate_errors():
    inst = tsp(4, 0)
    for bad in ([0, 1, 2], [0, 1, 2, 2], [0, 1, 2, 4]):
        with pytest.raises(ValidationError):
            validate(bad, inst)
    c = cvrp(3, 0)
    with pytest.raises(ValidationError):
        validate([1, 2, 0], c)


def test_euc2d_rounding():
    pts = np.array([[0.0, 0.0], [0.5, 0.0], [0.5, 1.0]])
    inst = VrpInstance(coords=pts, task=TaskSpec(3, None, "tsp"), euc2d=True)
    # legs 0.5 -> 1 (half rounds up), 1.0 -> 1, sqrt(1.25) = 1.118 -> 1
    assert solution_cost([0, 1, 2], inst) == 3.0
    assert solution_cost([0, 1, 2], inst, "exact") == pytest.approx(1.5 + np.sqrt(1.25))


def test_solution_export_parse():
    sol = Solution((1, 2, 0, 3), "cvrp", 2.5)
    text = sol.export()
    assert text == "cost 2.5\norder 0 1 2 0 3 0\n"
    back = Solution.parse(text, "cvrp")
    assert back.cost == 2.5 and cvrp_routes(back.order) == [[1, 2], [3]]


def test_tour_cost_tensor_matches_solution_cost():
    insts = [cvrp(6, s) for s in range(3)]
    b = make_batch(insts)
    orders = torch.tensor([[[1, 2, 0, 3, 4, 5, 6, 0]]] * 3)
    got = tour_cost_tensor(b.coords, orders, "cvrp")[:, 0]
    for i, inst in enumerate(insts):
        try:
            want = solution_cost([1, 2, 0, 3, 4, 5, 6], inst)
        except ValidationError:
            continue
        assert got[i].item() == pytest.approx(want, abs=1e-12)


def test_augment8_identity_first_and_cost_invariant():
    for inst in (tsp(15, 3), cvrp(10, 4)):
        variants = augment8(inst)
        assert len(variants) == 8
        assert np.array_equal(variants[0].coords, inst.coords)
        order = list(range(inst.n)) if inst.problem == "tsp" else [v for c in range(1, 11) for v in (c, 0)]
        costs = [solution_cost(order, v) for v in variants]
        assert max(costs) - min(costs) <= 1e-9
        maps = {tuple(np.round(v.coords[0], 12)) for v in variants}
        assert len(maps) == 8
