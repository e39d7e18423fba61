import contextlib

import pytest

_LINES: list[tuple[int, str]] = []


class Criterion:
    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.notes: list[str] = []

    def note(self, text: str) -> None:
        self.notes.append(text)

    def line(self, verdict: str) -> str:
        tail = f" ({'; '.join(self.notes)})" if self.notes else ""
        return f"{verdict} criterion {self.number}: {self.title}{tail}"


@pytest.fixture
def criterion():
    """``with criterion(n, title) as c:`` records PASS or FAIL for one acceptance criterion."""

    @contextlib.contextmanager
    def run(number: int, title: str):
        c = Criterion(number, title)
        try:
            yield c
        except BaseException as exc:
            c.note(f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
            _LINES.append((number, c.line("FAIL")))
            print(c.line("FAIL"))
            raise
        _LINES.append((number, c.line("PASS")))
        print(c.line("PASS"))

    return run


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, text in sorted(_LINES):
        terminalreporter.write_line(text)
