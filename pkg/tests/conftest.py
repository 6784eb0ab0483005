import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_")


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            m = _CRITERION.search(getattr(rep, "nodeid", ""))
            if not m:
                continue
            n = int(m.group(1))
            ok = status == "passed" and outcomes.get(n, True)
            outcomes[n] = ok
    if not outcomes:
        return
    from test_acceptance import CRITERIA

    terminalreporter.section("acceptance criteria")
    for n in sorted(outcomes):
        word = "PASS" if outcomes[n] else "FAIL"
        terminalreporter.write_line(f"{word}  criterion {n}: {CRITERIA[n]}")
