import sys


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance") or next(
        (m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = module.summary_lines() if module else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
