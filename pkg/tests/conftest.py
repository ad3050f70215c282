"""Shared pytest plumbing: the acceptance criteria summary table."""

_criterion_lines: list[tuple[int, str]] = []


def record_criterion(num: int, label: str, ok: bool, detail: str = "") -> None:
    verdict = "PASS" if ok else "FAIL"
    line = f"criterion {num} [{verdict}] {label}"
    if detail:
        line += f" -- {detail}"
    _criterion_lines.append((num, line))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_criterion_lines):
        terminalreporter.write_line(line)
