"""Construction MDP for TSP and CVRP.

Node indexing follows the solution export convention: tsp nodes are
``0..n-1``; cvrp uses ``0`` for the depot and ``1..n`` for customers. A
rollout state holds ``P`` parallel trajectories per instance for a batch of
``B`` instances of equal size.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
import torch

from .errors import InvalidArgument, InvalidState, ValidationError
from .instances import VrpInstance

CAP_EPS = 1e-9


@dataclass(frozen=True)
class Solution:
    order: tuple
    problem: str
    cost: float

    def export(self) -> str:
        order = list(self.order)
        if self.problem == "cvrp":
            if not order or order[0] != 0:
                order = [0] + order
            if order[-1] != 0:
                order = order + [0]
        return f"cost {self.cost!r}\norder {' '.join(str(i) for i in order)}\n"

    @classmethod
    def parse(cls, text: str, problem: str) -> "Solution":
        lines = [ln.split() for ln in text.strip().splitlines()]
        if len(lines) != 2 or lines[0][0] != "cost" or lines[1][0] != "order":
            raise ValidationError("solution text must be 'cost <v>' then 'order <ids>'")
        return cls(tuple(int(t) for t in lines[1][1:]), problem, float(lines[0][1]))


@dataclass
class InstanceBatch:
    """Tensors for B instances of one task; depot at row 0 for cvrp."""

    coords: torch.Tensor  # (B, N, 2)
    demands: torch.Tensor | None  # (B, N), depot demand 0
    problem: str
    instances: list

    @property
    def B(self) -> int:
        return self.coords.shape[0]

    @property
    def N(self) -> int:
        return self.coords.shape[1]

    @property
    def n(self) -> int:
        return self.N - 1 if self.problem == "cvrp" else self.N


def make_batch(instances, dtype=torch.float64) -> InstanceBatch:
    if isinstance(instances, VrpInstance):
        instances = [instances]
    instances = list(instances)
    if not instances:
        raise InvalidArgument("empty instance batch")
    problem = instances[0].problem
    sizes = {inst.n for inst in instances}
    if len(sizes) != 1 or any(inst.problem != problem for inst in instances):
        raise InvalidArgument("a batch needs instances of one problem and size")
    coords = torch.as_tensor(np.stack([inst.all_coords() for inst in instances]), dtype=dtype)
    demands = None
    if problem == "cvrp":
        d = np.stack([np.concatenate([[0.0], inst.demands]) for inst in instances])
        demands = torch.as_tensor(d, dtype=dtype)
    return InstanceBatch(coords, demands, problem, instances)


@dataclass(frozen=True)
class RolloutState:
    current: torch.Tensor  # (B, P) long
    visited: torch.Tensor  # (B, P, N) bool; depot column never set
    capacity: torch.Tensor | None  # (B, P) remaining capacity, cvrp only
    forced: torch.Tensor | None  # (B, P) customer forced at step 0 (cvrp), or None
    orders: tuple  # per-step (B, P) long tensors, start node included for tsp
    t: int
    problem: str

    @property
    def S(self) -> int:
        return self.current.shape[1]

    def order_tensor(self) -> torch.Tensor:
        return torch.stack(self.orders, dim=-1)

    def finished(self) -> torch.Tensor:
        """(B, P) mask of trajectories that completed their tour."""
        if self.problem == "tsp":
            return self.visited.all(-1)
        return self.visited[..., 1:].all(-1) & (self.current == 0)

    def is_terminal(self) -> bool:
        return bool(self.finished().all())


def init_multistart(batch: InstanceBatch, S: int | None = None, starts=None) -> RolloutState:
    """Start S trajectories per instance, trajectory s beginning at node s.

    ``starts`` (B, P) overrides the start assignment (used for enumeration).
    For cvrp, trajectories sit at the depot and the first move is forced to
    customer s (node ``s + 1``).
    """
    n, B = batch.n, batch.B
    if starts is None:
        if S is None:
            S = n
        if not 1 <= S <= n:
            raise InvalidArgument(f"need 1 <= S <= n, got S={S}, n={n}")
        starts = torch.arange(S).expand(B, S)
    starts = torch.as_tensor(starts, dtype=torch.long)
    P = starts.shape[1]
    visited = torch.zeros(B, P, batch.N, dtype=torch.bool)
    if batch.problem == "tsp":
        visited.scatter_(2, starts[..., None], True)
        return RolloutState(starts.clone(), visited, None, None, (starts.clone(),), 1, "tsp")
    cap = torch.ones(B, P, dtype=batch.coords.dtype)
    depot = torch.zeros(B, P, dtype=torch.long)
    return RolloutState(depot, visited, cap, starts + 1, (), 0, "cvrp")


def feasible_actions(state: RolloutState, batch: InstanceBatch) -> torch.Tensor:
    """Boolean (B, P, N) mask; finished cvrp rows may only stay at the depot."""
    if state.is_terminal():
        raise InvalidState("feasible_actions called on a terminal state")
    if state.problem == "tsp":
        return ~state.visited
    if state.t == 0 and state.forced is not None:
        mask = torch.zeros_like(state.visited)
        mask.scatter_(2, state.forced[..., None], True)
        return mask
    demand = batch.demands[:, None, :]
    mask = (~state.visited) & (demand <= state.capacity[..., None] + CAP_EPS)
    mask[..., 0] = False
    at_depot = state.current == 0
    all_done = state.visited[..., 1:].all(-1)
    mask[..., 0] = ~at_depot | all_done
    return mask


def apply_action(state: RolloutState, actions: torch.Tensor, batch: InstanceBatch,
                 check: bool = True) -> RolloutState:
    actions = torch.as_tensor(actions, dtype=torch.long)
    if check:
        mask = feasible_actions(state, batch)
        if not bool(mask.gather(2, actions[..., None]).all()):
            raise AssertionError("infeasible action applied")
    visited = state.visited.clone()
    visited.scatter_(2, actions[..., None], True)
    capacity = state.capacity
    if state.problem == "cvrp":
        visited[..., 0] = False
        demand = batch.demands.gather(1, actions.view(batch.B, -1)).view_as(capacity)
        capacity = torch.where(actions == 0, torch.ones_like(capacity), capacity - demand)
    return replace(state, current=actions, visited=visited, capacity=capacity,
                   orders=state.orders + (actions,), t=state.t + 1)


# -- costs and validation -----------------------------------------------------

def _leg_lengths(pts: np.ndarray, seq: Sequence[int], closed: bool, rounding: str) -> np.ndarray:
    idx = np.asarray(seq, dtype=np.int64)
    nxt = np.roll(idx, -1) if closed else idx[1:]
    cur = idx if closed else idx[:-1]
    d = np.linalg.norm(pts[cur] - pts[nxt], axis=1)
    if rounding == "euc2d":
        d = np.floor(d + 0.5)
    elif rounding != "exact":
        raise InvalidArgument(f"unknown rounding {rounding!r}")
    return d


def validate(order, instance: VrpInstance) -> None:
    """Raise ValidationError unless ``order`` is a complete feasible solution."""
    seq = [int(i) for i in order]
    n = instance.n
    if instance.problem == "tsp":
        if sorted(seq) != list(range(n)):
            raise ValidationError("tsp order must be a permutation of 0..n-1")
        return
    customers = [i for i in seq if i != 0]
    if sorted(customers) != list(range(1, n + 1)):
        raise ValidationError("every customer 1..n must appear exactly once")
    if any(i < 0 or i > n for i in seq):
        raise ValidationError("node index out of range")
    load = 0
    for i in seq:
        if i == 0:
            load = 0
            continue
        load += int(instance.demands_raw[i - 1])
        if load > instance.capacity_raw:
            raise ValidationError("route load exceeds capacity")


def solution_cost(order, instance: VrpInstance, rounding: str | None = None) -> float:
    if rounding is None:
        rounding = "euc2d" if instance.euc2d else "exact"
    validate(order, instance)
    seq = [int(i) for i in order]
    if instance.problem == "tsp":
        return float(_leg_lengths(instance.coords, seq, True, rounding).sum())
    route = [0] + [i for i in seq] + [0]
    return float(_leg_lengths(instance.all_coords(), route, False, rounding).sum())


def make_solution(order, instance: VrpInstance, rounding: str | None = None) -> Solution:
    return Solution(tuple(int(i) for i in order), instance.problem,
                    solution_cost(order, instance, rounding))


def cvrp_routes(order) -> list[list[int]]:
    """Split a cvrp order into customer routes (depot index 0 separates)."""
    routes, cur = [], []
    for i in order:
        if int(i) == 0:
            if cur:
                routes.append(cur)
            cur = []
        else:
            cur.append(int(i))
    if cur:
        routes.append(cur)
    return routes


def tour_cost_tensor(coords: torch.Tensor, orders: torch.Tensor, problem: str) -> torch.Tensor:
    """Exact closed-tour lengths for (B, P, T) orders over (B, N, 2) coords."""
    B, P, T = orders.shape
    if problem == "cvrp":
        orders = torch.cat([torch.zeros(B, P, 1, dtype=orders.dtype), orders], dim=-1)
        T += 1
    pts = coords[:, None, :, :].expand(B, P, -1, 2)
    seq = pts.gather(2, orders[..., None].expand(B, P, T, 2))
    nxt = torch.roll(seq, -1, dims=2)
    return (seq - nxt).norm(dim=-1).sum(-1)


# -- x8 symmetry augmentation -------------------------------------------------

_AUG_MAPS = (
    lambda x, y: (x, y),
    lambda x, y: (y, x),
    lambda x, y: (x, 1 - y),
    lambda x, y: (y, 1 - x),
    lambda x, y: (1 - x, y),
    lambda x, y: (1 - y, x),
    lambda x, y: (1 - x, 1 - y),
    lambda x, y: (1 - y, 1 - x),
)


def _apply_map(f, pts: np.ndarray) -> np.ndarray:
    x, y = f(pts[..., 0], pts[..., 1])
    return np.stack([x, y], axis=-1)


def augment8(instance: VrpInstance) -> list[VrpInstance]:
    out = []
    for f in _AUG_MAPS:
        depot = _apply_map(f, instance.depot) if instance.depot is not None else None
        out.append(instance.with_coords(_apply_map(f, instance.coords), depot))
    return out
