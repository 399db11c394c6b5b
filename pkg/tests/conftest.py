from dataclasses import replace

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from monoheight import synth
from monoheight.nn import kernels

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_population():
    return synth.generate_population(replace(synth.PRESETS["default"], n=400, seed=11))


@pytest.fixture(scope="session")
def small_examples(small_population):
    examples, _ = synth.population_examples(small_population)
    return examples


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=sorted(kernels.BACKENDS))
def kernel_backend(request, monkeypatch):
    """Route the tensor ops through one kernel backend for the test."""
    for name, fn in kernels.BACKENDS[request.param].items():
        monkeypatch.setattr(kernels, name, fn)
    return request.param


# --- acceptance report ------------------------------------------------------------------


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion; one summary line per test")
    config.acceptance_lines = []


@pytest.fixture
def measured():
    """Measurements a criterion test wants shown in its summary line."""
    return []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or (rep.when == "setup" and rep.failed)):
        return
    notes = "; ".join(item.funcargs.get("measured", None) or [])
    verdict = "PASS" if rep.passed else "FAIL"
    item.config.acceptance_lines.append(f"{verdict}  {marker.args[0]}" + (f"  [{notes}]" if notes else ""))


def pytest_terminal_summary(terminalreporter, config):
    if config.acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in config.acceptance_lines:
            terminalreporter.write_line(line)
