"""Reference solvers; hot loops live in a compiled extension when available."""

from .kernels import BACKEND
from .solvers import (AdapterConfig, SolverResult, cvrp_local_search, distance_matrix,
                      external_solver, held_karp, instance_distances, reference_solve,
                      relative_gap, tsp_local_search)

__all__ = [
    "BACKEND", "AdapterConfig", "SolverResult", "cvrp_local_search", "distance_matrix",
    "external_solver", "held_karp", "instance_distances", "reference_solve", "relative_gap",
    "tsp_local_search",
]
