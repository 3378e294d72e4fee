import numpy as np
import pytest
from hypothesis import HealthCheck, settings

import nspinn  # noqa: F401  (turns on float64 in jax)

settings.register_profile(
    "pkg", deadline=None, max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("pkg")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.acceptance_lines = {}


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "acceptance_lines", {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])


@pytest.fixture
def report(request, capsys):
    """report(k, ok, detail): record and print one PASS/FAIL line, then assert it."""
    def emit(k, ok, detail):
        line = f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines[k] = line
        with capsys.disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return emit
