import time

import pytest

_RESULTS = []


class Criterion:
    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.start = time.perf_counter()
        self.details = []
        self.ok = True

    def check(self, cond, detail):
        self.ok &= bool(cond)
        self.details.append(("ok " if cond else "BAD ") + detail)

    def finish(self):
        elapsed = time.perf_counter() - self.start
        self.check(elapsed < self.budget, f"runtime {elapsed:.2f}s < {self.budget:g}s")
        _RESULTS.append(self)
        assert self.ok, "; ".join(d for d in self.details if d.startswith("BAD"))


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(_RESULTS, key=lambda c: c.number):
        terminalreporter.write_line(f"criterion {c.number:2d} {'PASS' if c.ok else 'FAIL'}  {c.title}")
        for d in c.details:
            terminalreporter.write_line(f"    {d}")
