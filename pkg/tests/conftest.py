import os
import time
from contextlib import contextmanager

import pytest

# every coordinate-descent fit in the suite checks that its objective never increases
os.environ.setdefault("IP_DEBUG", "1")

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_LINES = pytest.StashKey[list]()


class Checks:
    def __init__(self):
        self.failures: list[str] = []
        self.count = 0

    def check(self, name: str, ok: bool, detail: str = "") -> bool:
        self.count += 1
        if not ok:
            self.failures.append(f"{name}: {detail}" if detail else name)
        return ok


@pytest.fixture
def criterion(request):
    """Context manager recording one pass/fail line per acceptance criterion."""
    lines = request.config.stash.setdefault(_LINES, [])

    @contextmanager
    def run(number, title):
        checks = Checks()
        t0 = time.perf_counter()
        try:
            yield checks
        except Exception as exc:
            checks.failures.append(f"{type(exc).__name__}: {exc}")
            raise
        finally:
            status = "FAIL" if checks.failures else "PASS"
            extra = f" -- {'; '.join(checks.failures)}" if checks.failures else ""
            lines.append(f"criterion {number} {status}: {title} "
                         f"[{checks.count} checks, {time.perf_counter() - t0:.1f}s]{extra}")
        assert not checks.failures, "; ".join(checks.failures)

    return run


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
