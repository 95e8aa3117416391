import time

import pytest

_RESULTS = {}


class Criterion:
    """Collects named checks for one acceptance criterion."""

    def __init__(self, number, budget):
        self.number = number
        self.budget = budget
        self.checks = []
        self.start = time.perf_counter()
        self.outcome = None

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))

    @property
    def elapsed(self):
        return time.perf_counter() - self.start

    def finish(self):
        self.check("runtime", self.elapsed < self.budget, f"{self.elapsed:.1f} s, budget {self.budget:g} s")
        failed = [f"{n} ({d})" if d else n for n, ok, d in self.checks if not ok]
        assert not failed, f"criterion {self.number} failed: " + "; ".join(failed)

    def line(self):
        passed = self.outcome == "passed"
        failed = [f"{n}: {d}" if d else n for n, ok, d in self.checks if not ok]
        note = "; ".join(failed) if failed else f"{len(self.checks)} checks"
        if not passed and not failed:
            note = "error before all checks ran"
        return f"criterion {self.number}: {'PASS' if passed else 'FAIL'}  [{note}]"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, budget): acceptance criterion with a runtime budget")


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    rec = Criterion(*marker.args)
    _RESULTS[rec.number] = rec
    return rec


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and report.when == "call":
        rec = _RESULTS.get(marker.args[0])
        if rec is not None:
            rec.outcome = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[number].line())
