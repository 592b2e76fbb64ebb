ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1])):
            terminalreporter.write_line(line)
        n_ok = sum(l.startswith("[PASS]") for l in ACCEPTANCE_LINES)
        terminalreporter.write_line(f"{n_ok}/{len(ACCEPTANCE_LINES)} criteria passed")
