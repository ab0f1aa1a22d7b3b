import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("ci")

_CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record a one-line acceptance outcome: ``criterion(n, ok, text)``."""
    def record(number: int, ok: bool, text: str):
        _CRITERIA[number] = f"[{'PASS' if ok else 'FAIL'}] criterion {number:2d}: {text}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
