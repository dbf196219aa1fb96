import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_RESULTS = {}


class Verdict:
    """Collects the checks of one acceptance criterion and prints a single line."""

    def __init__(self, name):
        self.name = name
        self.failed = []
        self.notes = []

    def check(self, ok, what):
        self.notes.append(what)
        if not ok:
            self.failed.append(what)

    def finish(self):
        status = "PASS" if not self.failed else "FAIL"
        line = f"{self.name} {status}: " + "; ".join(self.notes)
        _RESULTS[self.name] = line
        print(line)
        assert not self.failed, "; ".join(self.failed)


@pytest.fixture
def verdict(request):
    name = request.node.name.split("_")[1].upper()
    return Verdict(name)


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for name in sorted(_RESULTS, key=lambda n: (len(n), n)):
            terminalreporter.write_line(_RESULTS[name])
