import pytest

_RESULTS: list[tuple[str, bool, str]] = []


class Acceptance:
    def check(self, label: str, ok: bool, detail: str = "") -> None:
        _RESULTS.append((label, bool(ok), detail))
        print(f"[{'PASS' if ok else 'FAIL'}] {label} {detail}")
        assert ok, f"{label}: {detail}"


@pytest.fixture(scope="session")
def acceptance():
    return Acceptance()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {label}  {detail}")
