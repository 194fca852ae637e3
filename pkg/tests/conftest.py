from collections import OrderedDict

import pytest

_RESULTS = OrderedDict()


class Criteria:
    """Collects acceptance results; one summary line per criterion."""

    def record(self, criterion, part, passed, detail):
        _RESULTS.setdefault(criterion, []).append((part, bool(passed), detail))
        return passed


@pytest.fixture(scope="session")
def criteria():
    return Criteria()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_RESULTS, key=lambda c: (int("".join(ch for ch in c if ch.isdigit())), c)):
        parts = _RESULTS[criterion]
        status = "PASS" if all(p for _, p, _ in parts) else "FAIL"
        detail = "; ".join(f"{name}: {'pass' if ok else 'FAIL'} ({d})" for name, ok, d in parts)
        terminalreporter.write_line(f"criterion {criterion}: {status} | {detail}")
