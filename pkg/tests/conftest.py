import numpy as np
import pytest
import torch

from metavrp.instances import TaskSpec, VrpInstance, make_instance
from metavrp.oracles import kernels

torch.set_num_threads(1)


@pytest.fixture(params=sorted(kernels.backends()))
def kernel_backend(request, monkeypatch):
    """Run the test once per available kernel backend (compiled and python)."""
    mod = kernels.backends()[request.param]
    for name in ("held_karp", "nearest_neighbor", "tour_length", "local_search"):
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


def square(problem="tsp"):
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    return VrpInstance(coords=pts, task=TaskSpec(4, None, problem))


def tsp(n, seed, dist="uniform"):
    return make_instance(TaskSpec.parse(f"tsp:{n}:{dist}"), seed)


def cvrp(n, seed, dist="uniform"):
    return make_instance(TaskSpec.parse(f"cvrp:{n}:{dist}"), seed)


_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Store one pass/fail line per acceptance criterion for the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> None:
        _ACCEPTANCE[number] = (bool(ok), detail)
        print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[number]
        terminalreporter.line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
