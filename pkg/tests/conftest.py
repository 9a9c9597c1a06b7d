from __future__ import annotations

import functools

import pytest

from mdfrac.presets import build_benchmark_mesh, default_parameters, default_pressure_data
from mdfrac.scaling import attach_scaling
from mdfrac.assembly import ProblemSpec, assemble_system
from mdfrac.solver import solve

# one entry per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES: dict[int, tuple[str, bool, list[str]]] = {}


def record(number: int, name: str, passed: bool, detail: str) -> None:
    """Record one outcome; parametrized cases of a criterion are merged into a single line."""
    _, ok, details = ACCEPTANCE_LINES.get(number, (name, True, []))
    ACCEPTANCE_LINES[number] = (name, ok and bool(passed), details + [detail])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        name, ok, details = ACCEPTANCE_LINES[k]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {k}. {name}: {' | '.join(details)}")


@functools.lru_cache(maxsize=None)
def benchmark_mesh(preset: str, level: int = 0):
    return build_benchmark_mesh(preset, level)


@functools.lru_cache(maxsize=None)
def benchmark_solution(preset: str, level: int = 0):
    mesh = benchmark_mesh(preset, level)
    fields = attach_scaling(mesh, default_parameters(preset))
    system = assemble_system(ProblemSpec(mesh, fields, default_pressure_data(preset)))
    return solve(system)


@pytest.fixture(scope="session")
def square2d():
    return benchmark_mesh("square2d", 0)


@pytest.fixture(scope="session")
def cube3d():
    return benchmark_mesh("cube3d", 0)
