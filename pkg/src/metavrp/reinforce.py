"""Policy-gradient losses for multi-start construction, plus an exact oracle.

``pomo_loss`` builds the surrogate whose gradient is the multi-start REINFORCE
estimator with a per-instance mean-cost baseline. ``exact_expected_cost``
enumerates every feasible trajectory of a tiny instance so the true gradient
of the expected cost is available for testing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import torch

from .env import make_batch
from .errors import InvalidArgument
from .instances import VrpInstance
from .policy import PolicyParams, TrajectoryBatch, rollout

BASELINES = ("shared", "leave_one_out")
EXACT_MAX_N = 6


@dataclass
class LossReport:
    loss: torch.Tensor  # scalar surrogate, differentiable in the policy parameters
    advantages: torch.Tensor  # (M, S) cost minus baseline, detached
    baselines: torch.Tensor  # (M,) shared baseline per instance
    M: int
    S: int

    @property
    def value(self) -> float:
        return float(self.loss.detach())

    @property
    def mean_cost(self) -> float:
        return float((self.advantages + self.baselines[:, None]).mean())


def pomo_loss(traj: TrajectoryBatch, baseline: str = "shared") -> LossReport:
    """Multi-start REINFORCE surrogate ``mean((c - b) * log p)``.

    ``shared`` uses b = mean cost over the S starts of the instance.
    ``leave_one_out`` excludes the trajectory's own cost from its baseline,
    which equals the shared form scaled by S/(S-1) and removes the
    (S-1)/S shrinkage of the expected gradient.
    """
    if traj.mode == "greedy":
        raise InvalidArgument("pomo_loss needs sampled trajectories, got a greedy batch")
    if baseline not in BASELINES:
        raise InvalidArgument(f"unknown baseline {baseline!r}")
    M, S = traj.M, traj.S
    if M * S == 1:
        raise InvalidArgument("M = S = 1 leaves a degenerate self-baseline")
    cost = traj.cost.detach()
    b = cost.mean(dim=1)
    adv = cost - b[:, None]
    weight = adv
    if baseline == "leave_one_out":
        if S == 1:
            raise InvalidArgument("leave_one_out needs S >= 2")
        weight = adv * (S / (S - 1))
    loss = (weight * traj.total_logp).mean()
    return LossReport(loss, adv, b, M, S)


# -- exact enumeration oracle -------------------------------------------------

def _tsp_trajectories(n: int):
    starts, actions = [], []
    for s in range(n):
        rest = [v for v in range(n) if v != s]
        for perm in itertools.permutations(rest):
            starts.append(s)
            actions.append(list(perm))
    return starts, actions


def _cvrp_trajectories(inst: VrpInstance):
    """Every feasible action sequence per forced first customer, depot-padded."""
    n = inst.n
    dem = [0] + [int(v) for v in inst.demands_raw]
    cap = int(inst.capacity_raw)
    seqs_by_start = []

    def dfs(cur, load, visited, seq, out):
        if len(visited) == n:
            out.append(seq + ([0] if cur != 0 else []))
            return
        for v in range(1, n + 1):
            if v not in visited and load + dem[v] <= cap:
                dfs(v, load + dem[v], visited | {v}, seq + [v], out)
        if cur != 0:
            dfs(0, 0, visited, seq + [0], out)

    for s in range(n):
        out = []
        dfs(s + 1, dem[s + 1], {s + 1}, [s + 1], out)
        seqs_by_start.append(out)
    starts, actions = [], []
    T = max(len(q) for out in seqs_by_start for q in out)
    for s, out in enumerate(seqs_by_start):
        for q in out:
            starts.append(s)
            actions.append(q + [0] * (T - len(q)))
    return starts, actions


def enumerate_trajectories(instance: VrpInstance, params: PolicyParams) -> TrajectoryBatch:
    """All feasible trajectories of every start, scored by teacher forcing (one instance)."""
    if instance.n > EXACT_MAX_N:
        raise InvalidArgument(f"enumeration limited to n <= {EXACT_MAX_N}, got {instance.n}")
    if instance.problem == "tsp":
        starts, actions = _tsp_trajectories(instance.n)
    else:
        starts, actions = _cvrp_trajectories(instance)
    batch = make_batch([instance], params.values.dtype)
    starts_t = torch.tensor([starts], dtype=torch.long)
    forced = torch.tensor([actions], dtype=torch.long)
    return rollout(batch, params, "forced", starts=starts_t, forced=forced)


def exact_expected_cost_tensor(instance: VrpInstance, params: PolicyParams) -> torch.Tensor:
    """Differentiable mean over starts of E_{tau ~ p(.|start)} c(tau)."""
    traj = enumerate_trajectories(instance, params)
    prob = traj.total_logp[0].exp()
    return (prob * traj.cost[0]).sum() / instance.n


def exact_expected_cost(instance: VrpInstance, params: PolicyParams) -> tuple[float, np.ndarray]:
    """Exact expected cost and its gradient with respect to the flat parameters."""
    theta = params.values.detach().clone().requires_grad_(True)
    value = exact_expected_cost_tensor(instance, params.with_values(theta))
    (grad,) = torch.autograd.grad(value, theta)
    return float(value.detach()), grad.numpy()


def expected_pomo_gradient(instance: VrpInstance, params: PolicyParams,
                           baseline: str = "shared") -> np.ndarray:
    """Exact expectation of the pomo_loss gradient for one instance with S = n.

    Averages the estimator over the joint draw of one trajectory per start,
    weighting each combination by its exact probability. Cost grows as the
    product of per-start trajectory counts, so keep n tiny (n = 4 gives 6^4).
    """
    theta = params.values.detach().clone().requires_grad_(True)
    traj = enumerate_trajectories(instance, params.with_values(theta))
    starts = np.array(_tsp_trajectories(instance.n)[0] if instance.problem == "tsp"
                      else _cvrp_trajectories(instance)[0])
    logp = traj.total_logp[0]
    cost = traj.cost[0].detach()
    S = instance.n
    groups = [np.flatnonzero(starts == s) for s in range(S)]
    # per-trajectory expected weight: E[(c_s - b) | tau_s] factorizes across independent starts
    mean_c = torch.stack([(logp[g].detach().exp() * cost[g]).sum() for g in groups])
    coef = torch.zeros_like(cost)
    for s, g in enumerate(groups):
        others = mean_c.sum() - mean_c[s]
        if baseline == "shared":
            w = cost[g] - (cost[g] + others) / S
        elif baseline == "leave_one_out":
            w = cost[g] - others / (S - 1)
        else:
            raise InvalidArgument(f"unknown baseline {baseline!r}")
        coef[g] = logp[g].detach().exp() * w
    surrogate = (coef * logp).sum() / S
    (grad,) = torch.autograd.grad(surrogate, theta)
    return grad.numpy()


def joint_expected_pomo_gradient(instance: VrpInstance, params: PolicyParams,
                                 baseline: str = "shared") -> np.ndarray:
    """Brute-force version of ``expected_pomo_gradient``: loops over every joint draw."""
    theta = params.values.detach().clone().requires_grad_(True)
    traj = enumerate_trajectories(instance, params.with_values(theta))
    starts = np.array(_tsp_trajectories(instance.n)[0] if instance.problem == "tsp"
                      else _cvrp_trajectories(instance)[0])
    S = instance.n
    groups = [np.flatnonzero(starts == s).tolist() for s in range(S)]
    logp = traj.total_logp[0]
    prob = logp.detach().exp()
    cost = traj.cost[0].detach()
    total = torch.zeros(())
    for combo in itertools.product(*groups):
        idx = list(combo)
        c = cost[idx]
        b = c.mean()
        adv = c - b if baseline == "shared" else (c - b) * S / (S - 1)
        w = prob[idx].prod()
        total = total + w * (adv * logp[idx]).mean()
    (grad,) = torch.autograd.grad(total, theta)
    return grad.numpy()
