import json
import math
from pathlib import Path

import numpy as np
import pytest

from equiseq.tensor import Rng

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def rng():
    return Rng(20240601)


@pytest.fixture
def fixtures_dir():
    return FIXTURES


def naive_softmax_rows(a):
    """Row softmax written with Python loops and no max shift (inputs kept small)."""
    a = np.asarray(a, dtype=float)
    out = np.zeros_like(a)
    for i in range(a.shape[0]):
        denom = sum(math.exp(v) for v in a[i])
        for j in range(a.shape[1]):
            out[i, j] = math.exp(a[i, j]) / denom
    return out


def loop_matmul(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    out = np.zeros((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        for j in range(b.shape[1]):
            out[i, j] = math.fsum(a[i, t] * b[t, j] for t in range(a.shape[1]))
    return out


def load_fixture(name):
    return json.loads((FIXTURES / name).read_text())


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE_RESULTS: dict[int, str] = {}


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
