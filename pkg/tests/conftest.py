import pytest


@pytest.fixture
def criterion(record_property):
    """Label an acceptance test so the run ends with one PASS/FAIL line per criterion."""
    def label(text: str) -> None:
        record_property("criterion", text)
    return label


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" and outcome != "error":
                continue
            label = dict(getattr(rep, "user_properties", [])).get("criterion")
            if label:
                lines.append((label, "PASS" if outcome == "passed" else "FAIL"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for label, verdict in sorted(lines, key=lambda x: int(x[0].split(":")[0])):
            terminalreporter.write_line(f"{verdict}  criterion {label}")
