import itertools

import numpy as np
import pytest
import torch

from metavrp.env import solution_cost
from metavrp.errors import InvalidArgument
from metavrp.policy import ModelConfig, init_params, rollout
from metavrp.reinforce import (enumerate_trajectories, exact_expected_cost,
                               exact_expected_cost_tensor, expected_pomo_gradient, pomo_loss)

from conftest import cvrp, tsp

TINY = ModelConfig(embed_dim=8, layers=1, heads=2, feedforward_dim=16)


def test_advantages_sum_to_zero():
    p = init_params(ModelConfig(embed_dim=16, layers=1, heads=2, feedforward_dim=32), 0)
    rng = np.random.default_rng(0)
    for trial in range(40):
        insts = [tsp(int(rng.integers(4, 9)), 100 * trial + m) for m in range(3)]
        insts = [i for i in insts if i.n == insts[0].n]
        rep = pomo_loss(rollout(insts, p, "sample", rng=rng))
        assert torch.all(rep.advantages.sum(-1).abs() < 1e-9)


def test_pomo_loss_rejections():
    p = init_params(TINY, 0)
    with pytest.raises(InvalidArgument):
        pomo_loss(rollout([tsp(5, 0)], p, "greedy"))
    with pytest.raises(InvalidArgument):
        pomo_loss(rollout([tsp(5, 0)], p, "sample", 1, rng=0))
    with pytest.raises(InvalidArgument):
        pomo_loss(rollout([tsp(5, 0)], p, "sample", rng=0), baseline="critic")


def test_enumeration_probabilities_sum_to_one_per_start():
    cvrp_cfg = ModelConfig(embed_dim=8, layers=1, heads=2, feedforward_dim=16, problem="cvrp")
    for inst, p in ((tsp(5, 3), init_params(TINY, 1)), (cvrp(4, 3), init_params(cvrp_cfg, 1))):
        traj = enumerate_trajectories(inst, p)
        prob = traj.total_logp[0].exp()
        starts = traj.orders[0, :, 0].numpy()
        for s in np.unique(starts):
            assert abs(float(prob[starts == s].sum()) - 1.0) < 1e-9


def test_uniform_policy_expectation_is_mean_tour():
    p = init_params(TINY, 0)
    p = p.with_values(torch.zeros_like(p.values))  # constant logits give a uniform policy
    inst = tsp(5, 4)
    tours = [(0,) + q for q in itertools.permutations(range(1, 5))]
    mean = np.mean([solution_cost(list(t), inst) for t in tours])
    assert abs(float(exact_expected_cost_tensor(inst, p)) - mean) < 1e-9


def test_exact_gradient_matches_finite_differences():
    p = init_params(TINY, 2)
    inst = tsp(4, 5)
    _, g = exact_expected_cost(inst, p)
    rng = np.random.default_rng(0)
    idx = rng.choice(len(g), 60, replace=False)
    eps = 1e-6
    fd = []
    for i in idx:
        e = torch.zeros_like(p.values)
        e[i] = eps
        hi = float(exact_expected_cost_tensor(inst, p.with_values(p.values + e)))
        lo = float(exact_expected_cost_tensor(inst, p.with_values(p.values - e)))
        fd.append((hi - lo) / (2 * eps))
    fd = np.array(fd)
    assert np.linalg.norm(fd - g[idx]) / np.linalg.norm(g[idx]) < 1e-4


def test_expected_estimator_bias():
    p = init_params(TINY, 3)
    inst = tsp(4, 6)
    _, g = exact_expected_cost(inst, p)
    S = inst.n
    shared = expected_pomo_gradient(inst, p, "shared")
    loo = expected_pomo_gradient(inst, p, "leave_one_out")
    rel = lambda a, b: np.linalg.norm(a - b) / np.linalg.norm(b)
    assert rel(shared, (S - 1) / S * g) < 1e-6
    assert rel(loo, g) < 1e-6


def test_expected_cost_invariant_to_relabeling():
    p = init_params(TINY, 4)
    inst = tsp(5, 7)
    perm = np.random.default_rng(1).permutation(5)
    a = float(exact_expected_cost_tensor(inst, p))
    b = float(exact_expected_cost_tensor(inst.with_coords(inst.coords[perm]), p))
    assert abs(a - b) < 1e-9


def test_enumeration_size_limit():
    with pytest.raises(InvalidArgument):
        enumerate_trajectories(tsp(7, 0), init_params(TINY, 0))
