import numpy as np
import pytest

from cascadeforge.scores import ConstantCost, DetectorSpec, LogNormalCost, SynthSpec, split, synthesize

ACCEPTANCE_LINES: list[str] = []


def four_detector_specs(slow_cost: float = 3.0):
    law = lambda c: LogNormalCost(float(np.log(c)), 0.3)
    rows = ((0.97, slow_cost), (0.85, 1.0), (0.75, 0.2), (0.65, 0.05))
    return tuple(DetectorSpec(acc, law(c), 0.0, "ABCD"[i]) for i, (acc, c) in enumerate(rows))


@pytest.fixture(scope="session")
def small_table():
    spec = SynthSpec(four_detector_specs(), 400, 0.5, 3)
    return synthesize(spec)


@pytest.fixture(scope="session")
def small_splits(small_table):
    return split(small_table, (0.75, 0.10, 0.15), 3)


@pytest.fixture(scope="session")
def two_detector_table():
    dets = (DetectorSpec(1.0, ConstantCost(0.01), 0.0, "A"),
            DetectorSpec(0.55, ConstantCost(10.0), 0.0, "B"))
    return synthesize(SynthSpec(dets, 2000, 0.5, 1))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
