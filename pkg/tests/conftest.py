from functools import lru_cache

import pytest

from coarsespace.model_problem import build_problem, build_smoother, eigensystem

# Grid behind the published numbers: 10 interior points per direction.
REFERENCE_H = "1/11"
PANELS = [(0.0, 0.5), (0.0, 1.0), (10.0, 0.5), (10.0, 1.0)]

ACCEPTANCE_LINES = []


@lru_cache(maxsize=None)
def setup(h, c, omega, tie_break="negative_first"):
    p = build_problem(h, c)
    s = build_smoother(p, omega)
    return p, s, eigensystem(p, s, tie_break=tie_break)


@pytest.fixture(params=PANELS, ids=lambda cw: f"c{cw[0]:g}-w{cw[1]:g}")
def panel(request):
    return setup(REFERENCE_H, *request.param)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
