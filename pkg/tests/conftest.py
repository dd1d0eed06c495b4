"""Shared test plumbing: acceptance criteria report one line each at the end of the run."""

ACCEPTANCE = {}


def record(criterion, passed, detail):
    """Store the outcome of an acceptance criterion; several checks may add to one."""
    ok, notes = ACCEPTANCE.get(criterion, (True, []))
    ACCEPTANCE[criterion] = (ok and bool(passed), notes + [detail])
    line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        ok, notes = ACCEPTANCE[c]
        terminalreporter.write_line(f"criterion {c:>2}: {'PASS' if ok else 'FAIL'}  " + "; ".join(notes))
