import os

os.environ.setdefault("HALFCELL_THREADS", "4")


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        label, status = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {label}")
