import pytest

_RESULTS: dict[int, tuple[bool, str]] = {}


class Criterion:
    """Records one acceptance criterion's verdict and prints it as a single line."""

    def __init__(self, number: int, title: str):
        self.number, self.title = number, title
        self.notes: list[str] = []
        self.ok = True

    def check(self, cond, note: str):
        self.notes.append(note)
        self.ok = self.ok and bool(cond)
        return cond

    def line(self) -> str:
        verdict = "PASS" if self.ok else "FAIL"
        return f"criterion {self.number:>2} {verdict}  {self.title}: " + "; ".join(self.notes)


@pytest.fixture
def criterion(request):
    made = []

    def make(number, title):
        c = Criterion(number, title)
        made.append(c)
        return c

    yield make
    for c in made:
        if request.node.rep_call.failed if hasattr(request.node, "rep_call") else False:
            c.ok = False
        _RESULTS[c.number] = (c.ok, c.line())
        print("\n" + c.line())


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        terminalreporter.write_line(_RESULTS[n][1])
