import math

import pytest

from yamabe_partition import IntervalCache, SymmetryConfig, build_grid


@pytest.fixture(scope="session")
def cfg22():
    return SymmetryConfig(2, 2)


@pytest.fixture(scope="session")
def grid22_128(cfg22):
    return build_grid(cfg22, 128)


@pytest.fixture(scope="session")
def grid22_256(cfg22):
    return build_grid(cfg22, 256)


@pytest.fixture(scope="session")
def cache22_128(grid22_128):
    return IntervalCache(grid22_128)


@pytest.fixture(scope="session")
def cache22_256(grid22_256):
    return IntervalCache(grid22_256)


CONSTANT_ENERGY_22 = math.pi ** 2 * math.sqrt(3.0) / 4.0


# acceptance bookkeeping: criterion number -> list of (part, passed, detail)
ACCEPTANCE = {}


def record(criterion, part, passed, detail=""):
    ACCEPTANCE.setdefault(criterion, []).append((part, bool(passed), detail))
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[crit]
        ok = all(p for _, p, _ in parts)
        detail = "; ".join(f"{name} {'PASS' if p else 'FAIL'} {d}".strip() for name, p, d in parts)
        terminalreporter.write_line(f"criterion {crit}: {'PASS' if ok else 'FAIL'} | {detail}")
