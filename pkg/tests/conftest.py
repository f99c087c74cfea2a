import pytest

from specal.scenes import BasisSetup

ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(criterion: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")


@pytest.fixture(scope="session")
def setup():
    """Default 400-700 nm / f=31 grid, 44 synthetic training cameras, b_s = b_eta = 7."""
    s = BasisSetup()
    s.sensitivity_bases, s.mean_sensitivity  # build once
    return s


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k.split()[1].rstrip(":"))):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
