"""Reference solvers used for gaps and tests.

Exact Held-Karp for tiny TSP, nearest-neighbor + 2-opt/Or-opt for TSP,
savings + route improvement for CVRP, and a shell adapter for external
binaries. Costs use TSPLIB rounding when the instance came from a benchmark
file and exact Euclidean lengths otherwise.
"""

from __future__ import annotations

import os
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..env import Solution, cvrp_routes, make_solution, validate
from ..errors import (ExternalSolverError, InfeasibleExternalSolution, InvalidArgument,
                      ParseError, UnsupportedFormat, ValidationError)
from ..instances import VrpInstance, parse_tour_file, write_tsplib
from . import kernels

HELD_KARP_MAX_N = 13
DEFAULT_BUDGET = 50
IMPROVE_EPS = 1e-10


@dataclass(frozen=True)
class SolverResult:
    solution: Solution
    solver_tag: str
    effort: int
    exact: bool = False

    @property
    def cost(self) -> float:
        return self.solution.cost


def distance_matrix(points: np.ndarray, euc2d: bool = False) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(-1))
    return np.floor(d + 0.5) if euc2d else d


def instance_distances(instance: VrpInstance) -> np.ndarray:
    """Matrix over environment indices (depot at 0 for cvrp)."""
    return distance_matrix(instance.all_coords(), instance.euc2d)


def _require_tsp(instance: VrpInstance, what: str) -> None:
    if instance.problem != "tsp":
        raise UnsupportedFormat(f"{what} solves tsp only, got {instance.problem}")


def held_karp(instance: VrpInstance) -> SolverResult:
    _require_tsp(instance, "held_karp")
    if instance.n > HELD_KARP_MAX_N:
        raise InvalidArgument(f"held_karp limited to n <= {HELD_KARP_MAX_N}, got {instance.n}")
    _, tour = kernels.held_karp(instance_distances(instance))
    return SolverResult(make_solution(tour, instance), "held_karp", 1 << max(instance.n - 1, 0), True)


def tsp_local_search(instance: VrpInstance, budget: int = DEFAULT_BUDGET,
                     seed: int | None = None) -> SolverResult:
    """Nearest-neighbor tour improved by first-improvement 2-opt and Or-opt passes.

    ``seed`` picks the construction's start city; ``None`` starts at city 0.
    """
    _require_tsp(instance, "tsp_local_search")
    d = instance_distances(instance)
    start = 0 if seed is None else int(np.random.default_rng(seed).integers(instance.n))
    tour = kernels.nearest_neighbor(d, start)
    tour, trace, passes = kernels.local_search(d, tour, int(budget))
    result = SolverResult(make_solution(tour, instance), "ls_2opt_oropt", passes, False)
    return result


def local_search_trace(instance: VrpInstance, budget: int = DEFAULT_BUDGET, start: int = 0):
    """Construction tour, improved tour and per-move cost trace (for auditing)."""
    d = instance_distances(instance)
    init = kernels.nearest_neighbor(d, start)
    tour, trace, passes = kernels.local_search(d, init, int(budget))
    return init, tour, trace


# -- CVRP ---------------------------------------------------------------------

def _route_cost(d: np.ndarray, route: list[int]) -> float:
    total, prev = 0.0, 0
    for v in route:
        total += d[prev, v]
        prev = v
    return total + d[prev, 0]


def savings_routes(d: np.ndarray, demand: np.ndarray, capacity: int) -> list[list[int]]:
    """Parallel Clarke-Wright savings; ``demand[i]`` belongs to node i (depot 0 unused)."""
    n = len(d) - 1
    routes = {i: [i] for i in range(1, n + 1)}
    owner = {i: i for i in range(1, n + 1)}
    load = {i: int(demand[i]) for i in range(1, n + 1)}
    pairs = [(d[0, i] + d[0, j] - d[i, j], i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)]
    pairs.sort(key=lambda p: (-p[0], p[1], p[2]))
    for _, i, j in pairs:
        ri, rj = owner[i], owner[j]
        if ri == rj or load[ri] + load[rj] > capacity:
            continue
        a, b = routes[ri], routes[rj]
        if a[-1] == i and b[0] == j:
            merged = a + b
        elif a[0] == i and b[-1] == j:
            merged = b + a
        elif a[0] == i and b[0] == j:
            merged = a[::-1] + b
        elif a[-1] == i and b[-1] == j:
            merged = a + b[::-1]
        else:
            continue
        routes[ri] = merged
        load[ri] += load.pop(rj)
        del routes[rj]
        for v in b:
            owner[v] = ri
    return [routes[k] for k in sorted(routes)]


def _improve_route(d: np.ndarray, route: list[int], budget: int) -> list[int]:
    if len(route) < 3:
        return route
    nodes = [0] + route
    sub = d[np.ix_(nodes, nodes)]
    tour, _, _ = kernels.local_search(sub, list(range(len(nodes))), budget)
    k = tour.index(0)
    tour = tour[k:] + tour[:k]
    return [nodes[i] for i in tour[1:]]


def _relocate(d, routes, loads, demand, capacity) -> float | None:
    for a, ra in enumerate(routes):
        for pos, u in enumerate(ra):
            prev = ra[pos - 1] if pos > 0 else 0
            nxt = ra[pos + 1] if pos + 1 < len(ra) else 0
            gain = d[prev, u] + d[u, nxt] - d[prev, nxt]
            for b, rb in enumerate(routes):
                if b == a or loads[b] + demand[u] > capacity:
                    continue
                for q in range(len(rb) + 1):
                    p = rb[q - 1] if q > 0 else 0
                    s = rb[q] if q < len(rb) else 0
                    delta = d[p, u] + d[u, s] - d[p, s] - gain
                    if delta < -IMPROVE_EPS:
                        rb.insert(q, u)
                        del ra[pos]
                        loads[a] -= demand[u]
                        loads[b] += demand[u]
                        return delta
    return None


def _exchange(d, routes, loads, demand, capacity) -> float | None:
    for a in range(len(routes)):
        ra = routes[a]
        for b in range(a + 1, len(routes)):
            rb = routes[b]
            for i, u in enumerate(ra):
                pu = ra[i - 1] if i > 0 else 0
                nu = ra[i + 1] if i + 1 < len(ra) else 0
                for j, v in enumerate(rb):
                    if loads[a] - demand[u] + demand[v] > capacity:
                        continue
                    if loads[b] - demand[v] + demand[u] > capacity:
                        continue
                    pv = rb[j - 1] if j > 0 else 0
                    nv = rb[j + 1] if j + 1 < len(rb) else 0
                    delta = (d[pu, v] + d[v, nu] - d[pu, u] - d[u, nu]
                             + d[pv, u] + d[u, nv] - d[pv, v] - d[v, nv])
                    if delta < -IMPROVE_EPS:
                        ra[i], rb[j] = v, u
                        loads[a] += demand[v] - demand[u]
                        loads[b] += demand[u] - demand[v]
                        return delta
    return None


def cvrp_local_search(instance: VrpInstance, budget: int = DEFAULT_BUDGET,
                      trace: list | None = None) -> SolverResult:
    """Savings construction, then intra-route 2-opt/Or-opt and inter-route relocate/exchange.

    Each pass improves every route internally and then applies first-improvement
    inter-route moves until none is left. ``trace`` collects the total cost
    after each accepted move.
    """
    if instance.problem != "cvrp":
        raise UnsupportedFormat("cvrp_local_search needs a cvrp instance")
    d = instance_distances(instance)
    demand = np.concatenate([[0], instance.demands_raw]).astype(np.int64)
    cap = int(instance.capacity_raw)
    routes = savings_routes(d, demand, cap)
    loads = [int(demand[r].sum()) for r in routes]
    total = sum(_route_cost(d, r) for r in routes)
    if trace is not None:
        trace.append(total)
    passes = 0
    while passes < budget:
        passes += 1
        improved = False
        for k, r in enumerate(routes):
            new = _improve_route(d, r, budget)
            c_old, c_new = _route_cost(d, r), _route_cost(d, new)
            if c_new < c_old - IMPROVE_EPS:
                routes[k] = new
                total += c_new - c_old
                improved = True
                if trace is not None:
                    trace.append(total)
        while True:
            delta = _relocate(d, routes, loads, demand, cap)
            if delta is None:
                delta = _exchange(d, routes, loads, demand, cap)
            if delta is None:
                break
            total += delta
            improved = True
            if trace is not None:
                trace.append(total)
            keep = [k for k, r in enumerate(routes) if r]
            routes = [routes[k] for k in keep]
            loads = [loads[k] for k in keep]
        if not improved:
            break
    order = []
    for r in routes:
        order += [0] + r
    return SolverResult(make_solution(order + [0], instance), "cvrp_savings_ls", passes, False)


def reference_solve(instance: VrpInstance, budget: int = DEFAULT_BUDGET) -> SolverResult:
    """Best available internal reference: exact when small enough, else local search."""
    if instance.problem == "cvrp":
        return cvrp_local_search(instance, budget)
    if instance.n <= HELD_KARP_MAX_N:
        return held_karp(instance)
    return tsp_local_search(instance, budget)


def relative_gap(model_costs, ref_costs) -> float:
    m = np.asarray(model_costs, dtype=np.float64)
    r = np.asarray(ref_costs, dtype=np.float64)
    if m.shape != r.shape or m.ndim != 1 or len(m) == 0:
        raise InvalidArgument("relative_gap needs two non-empty lists of equal length")
    if np.any(r <= 0):
        raise InvalidArgument("reference costs must be positive")
    return float(np.mean((m - r) / r))


# -- external binaries --------------------------------------------------------

@dataclass(frozen=True)
class AdapterConfig:
    binary: str | None = None  # falls back to $OMNI_SOLVER_BIN
    format: str = "tsplib"  # tsplib | cvrplib
    solver_tag: str = "external"
    timeout: float | None = None

    def resolved_binary(self) -> str:
        path = self.binary or os.environ.get("OMNI_SOLVER_BIN")
        if not path:
            raise ExternalSolverError("no solver binary given and OMNI_SOLVER_BIN unset")
        return path


def external_solver(instance: VrpInstance, config: AdapterConfig) -> SolverResult:
    """Run ``<binary> <input> <output>`` and read back a 1-based, -1 terminated tour."""
    expected = "tsplib" if instance.problem == "tsp" else "cvrplib"
    if config.format not in ("tsplib", "cvrplib"):
        raise InvalidArgument(f"unknown adapter format {config.format!r}")
    if config.format != expected:
        raise InvalidArgument(f"{instance.problem} instances use format {expected}")
    binary = config.resolved_binary()
    with tempfile.TemporaryDirectory(prefix="metavrp_ext_") as tmp:
        src, dst = Path(tmp) / "instance.txt", Path(tmp) / "tour.txt"
        write_tsplib(instance, src)
        try:
            proc = subprocess.run([binary, str(src), str(dst)], capture_output=True,
                                  text=True, timeout=config.timeout)
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExternalSolverError(f"could not run {binary}: {exc}") from exc
        output = proc.stdout + proc.stderr
        if proc.returncode != 0:
            raise ExternalSolverError(f"{binary} exited with status {proc.returncode}", output)
        if not dst.exists():
            raise ExternalSolverError(f"{binary} wrote no tour file", output)
        try:
            order = parse_tour_file(dst)
        except ParseError as exc:
            raise ExternalSolverError(f"unparseable tour: {exc}", output) from exc
    try:
        validate(order, instance)
    except ValidationError as exc:
        raise InfeasibleExternalSolution(f"infeasible tour from {binary}: {exc}", output) from exc
    if instance.problem == "cvrp":
        order = [0] + [v for r in cvrp_routes(order) for v in r + [0]]
    return SolverResult(make_solution(order, instance), config.solver_tag, 1, False)
