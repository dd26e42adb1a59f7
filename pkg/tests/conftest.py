ACCEPTANCE_LINES = []


def record_acceptance(num: int, name: str, ok: bool, detail: str) -> str:
    line = (f"ACCEPTANCE {num} [{name}]: {'PASS' if ok else 'FAIL'} "
            f"({detail})")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
