"""Hierarchical task scheduler: size curriculum plus hardness-weighted distributions.

Sizes grow linearly from ``n_min`` to ``n_max`` over ``E_s`` iterations.
Within a size, each distribution is weighted by the softmax of its current
relative gap against a frozen validation pool, so harder distributions are
drawn more often.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, InvalidState, ParseError
from .instances import (DistributionSpec, TaskSpec, VrpInstance, make_instances, read_instances,
                        write_instances)


@dataclass
class PoolEntry:
    instance: VrpInstance
    ref_cost: float
    solver_tag: str


@dataclass
class SchedulerState:
    dists: list
    n_min: int
    n_max: int
    E_s: int
    eta: float = 1.0
    problem: str = "tsp"
    step: int = 5  # size-bucket spacing for the validation pool
    refresh_period: int = 100
    probe_size: int = 32
    pool_size: int = 64
    train_on_buckets: bool = False
    weights: np.ndarray = None
    gaps: np.ndarray = None
    pool: dict = field(default_factory=dict, repr=False)  # (n, dist name) -> [PoolEntry]
    refreshed_at: int | None = None

    def __post_init__(self):
        if not self.dists:
            raise InvalidArgument("scheduler needs at least one distribution")
        if not 2 <= self.n_min <= self.n_max:
            raise InvalidArgument(f"need 2 <= n_min <= n_max, got {self.n_min}, {self.n_max}")
        if self.eta <= 0:
            raise InvalidArgument("eta must be positive")
        if self.E_s < 0 or self.step < 1 or self.refresh_period < 1:
            raise InvalidArgument("E_s >= 0, step >= 1 and refresh_period >= 1 required")
        k = len(self.dists)
        if self.weights is None:
            self.weights = np.full(k, 1.0 / k)
        if self.gaps is None:
            self.gaps = np.zeros(k)

    @property
    def buckets(self) -> list[int]:
        out = list(range(self.n_min, self.n_max + 1, self.step))
        if out[-1] != self.n_max:
            out.append(self.n_max)
        return out

    def bucket_for(self, n: int) -> int:
        """Largest pool bucket not above n."""
        below = [b for b in self.buckets if b <= n]
        if not below:
            raise InvalidArgument(f"size {n} below n_min={self.n_min}")
        return below[-1]


def size_at_iter(e: int, state: SchedulerState) -> int:
    if e < 0:
        raise InvalidArgument("iteration must be >= 0")
    frac = 1.0 if state.E_s == 0 else min(e / state.E_s, 1.0)
    return math.floor(state.n_min + frac * (state.n_max - state.n_min))


def task_weights(gaps, eta: float) -> np.ndarray:
    if eta <= 0:
        raise InvalidArgument("eta must be positive")
    z = np.asarray(gaps, dtype=np.float64) / eta
    z = np.exp(z - z.max())
    return z / z.sum()


def train_size(e: int, state: SchedulerState) -> int:
    n = size_at_iter(e, state)
    return state.bucket_for(n) if state.train_on_buckets else n


def sample_batch(state: SchedulerState, e: int, B: int, rng) -> list[tuple[TaskSpec, float]]:
    """Draw B distributions (with replacement) at the curriculum size, weights renormalized."""
    if B < 1:
        raise InvalidArgument("B must be >= 1")
    n = train_size(e, state)
    idx = rng.choice(len(state.dists), size=B, replace=True, p=state.weights)
    w = state.weights[idx]
    w = w / w.sum()
    return [(TaskSpec(n, state.dists[i], state.problem), float(wi)) for i, wi in zip(idx, w)]


# -- validation pool ----------------------------------------------------------

def _pool_seed(root_seed: int, n: int, dist: DistributionSpec) -> int:
    # stable across runs and Python hash randomization
    key = f"{n}:{dist.name}".encode()
    return int(np.random.SeedSequence([root_seed, *key]).generate_state(1)[0])


def build_pool(state: SchedulerState, root_seed: int = 0, budget: int = 50, solver=None) -> None:
    """Generate and solve the frozen validation pool for every (bucket, distribution)."""
    from .oracles import reference_solve

    solver = solver or (lambda inst: reference_solve(inst, budget))
    for n in state.buckets:
        for dist in state.dists:
            task = TaskSpec(n, dist, state.problem)
            entries = []
            for inst in make_instances(task, state.pool_size, _pool_seed(root_seed, n, dist)):
                res = solver(inst)
                entries.append(PoolEntry(inst, float(res.cost), res.solver_tag))
            state.pool[(n, dist.name)] = entries


def refresh_hardness(state: SchedulerState, params, e: int, rng) -> np.ndarray:
    """Greedy gaps of ``params`` on probe subsets of the pool at the current bucket."""
    from .oracles import relative_gap
    from .policy import greedy_costs

    n = state.bucket_for(size_at_iter(e, state))
    gaps = np.zeros(len(state.dists))
    for i, dist in enumerate(state.dists):
        entries = state.pool.get((n, dist.name))
        if not entries:
            raise InvalidState(f"empty validation pool for n={n}, {dist.name}")
        k = min(state.probe_size, len(entries))
        pick = np.sort(rng.choice(len(entries), size=k, replace=False))
        probe = [entries[j] for j in pick]
        costs = greedy_costs([p.instance for p in probe], params)
        gaps[i] = relative_gap(costs, [p.ref_cost for p in probe])
    state.gaps = gaps
    state.weights = task_weights(gaps, state.eta)
    state.refreshed_at = e
    return gaps


def save_pool(state: SchedulerState, directory) -> None:
    """One JSONL file per (bucket, distribution) plus a sidecar of oracle costs."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    index = {}
    for (n, name), entries in sorted(state.pool.items()):
        stem = f"{state.problem}_{n}_{name}"
        write_instances([e.instance for e in entries], out / f"{stem}.jsonl")
        index[stem] = {"n": n, "dist": name,
                       "oracle": {str(i): {"cost": e.ref_cost, "solver": e.solver_tag}
                                  for i, e in enumerate(entries)}}
    (out / "pool_oracle.json").write_text(json.dumps(index, indent=1, sort_keys=True))


def load_pool(state: SchedulerState, directory) -> None:
    src = Path(directory)
    try:
        index = json.loads((src / "pool_oracle.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"unreadable pool index: {exc}") from exc
    pool = {}
    for stem, rec in index.items():
        instances = read_instances(src / f"{stem}.jsonl")
        oracle = rec["oracle"]
        if len(oracle) != len(instances):
            raise ParseError(f"{stem}: {len(instances)} instances but {len(oracle)} oracle costs")
        pool[(rec["n"], rec["dist"])] = [
            PoolEntry(inst, float(oracle[str(i)]["cost"]), oracle[str(i)]["solver"])
            for i, inst in enumerate(instances)]
    state.pool = pool
