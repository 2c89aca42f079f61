import numpy as np
import pytest

from tugofwar.problem import Problem

INTERVAL = {"kind": "interval", "params": [0.0, 1.0]}
LINEAR_F = {"kind": "affine", "params": [0.0, 1.0]}


def weighted_reference(x):
    return ((1 + np.asarray(x)) ** (2 / 3) - 1) / (2 ** (2 / 3) - 1)


@pytest.fixture(scope="session")
def weighted_1d():
    """Interval (0,1), f = 1 + x, p = 4, eps = 0.02, h = eps/4, F(x) = x, solved."""
    pb = Problem.from_catalog(INTERVAL, {"kind": "affine", "params": [1.0]}, LINEAR_F, 4.0, 0.02)
    v, rep = pb.solve()
    return pb, v, rep


@pytest.fixture(scope="session")
def flat_coarse():
    """Interval (0,1), f = 1, p = 4, eps = 0.1, F(x) = x, solved."""
    pb = Problem.from_catalog(INTERVAL, {"kind": "constant", "params": [1.0]}, LINEAR_F, 4.0, 0.1)
    v, rep = pb.solve()
    return pb, v, rep


ACCEPTANCE_LINES = []


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
