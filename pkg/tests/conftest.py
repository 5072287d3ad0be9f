import time

import pytest

_ACCEPTANCE_LINES = []


class _Recorder:
    def __init__(self):
        self.t0 = time.perf_counter()

    def restart(self):
        self.t0 = time.perf_counter()

    def check(self, number, name, ok, detail, budget_seconds):
        elapsed = time.perf_counter() - self.t0
        passed = bool(ok) and elapsed < budget_seconds
        line = (f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {name} | {detail} | "
                f"{elapsed:.2f}s (limit {budget_seconds:g}s)")
        print(line)
        _ACCEPTANCE_LINES.append(line)
        assert passed, line


@pytest.fixture
def criterion():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
