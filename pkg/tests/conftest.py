import pytest

_ACCEPTANCE: list[str] = []


class _Criterion:
    def __init__(self):
        self.line = None

    def report(self, number, title, ok, detail=""):
        status = "PASS" if ok else "FAIL"
        self.line = f"criterion {number} {title}: {status} {detail}".rstrip()
        _ACCEPTANCE.append(self.line)
        print(self.line)
        return ok


@pytest.fixture
def criterion(request):
    c = _Criterion()
    yield c
    if c.line is None:
        _ACCEPTANCE.append(f"{request.node.name}: FAIL (errored before reporting)")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
