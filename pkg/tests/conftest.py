import time

import numpy as np
import pytest

from koopmpc.harness import compare_scenarios, generate_datasets, coordinate_transform, suite, vdp_scenario
from koopmpc.harness.closed_loop import fit_model, model_cache_key

ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(lines):
        terminalreporter.write_line(line[1])


@pytest.fixture
def report(request):
    """Record one PASS/FAIL line for an acceptance criterion."""
    store = request.config.stash[ACCEPTANCE_KEY]

    def _report(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
        store.append((number, line))
        print(line)
        return ok

    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def vdp_data():
    scenario = vdp_scenario("bilinear", "offset_free")
    tf = coordinate_transform(scenario)
    datasets, _ = generate_datasets(scenario, tf)
    return scenario, tf, datasets


@pytest.fixture(scope="session")
def vdp_models(vdp_data):
    scenario, tf, datasets = vdp_data
    return {kind: fit_model(scenario.with_(model={"kind": kind}), datasets, tf)
            for kind in ("bilinear", "safedmd", "edmdc")}


class SuiteRun:
    def __init__(self, name):
        self.scenarios = suite(name)
        self.models = {}
        started = time.perf_counter()
        self.comparison = compare_scenarios(self.scenarios, self.models)
        self.total_time = time.perf_counter() - started
        self.traces = {self.key(s): t for s, t in zip(self.scenarios, self.comparison.traces)}

    @staticmethod
    def key(s):
        return (s.model.kind, s.controller.mode, s.equilibrium.mode)

    def model_for(self, kind, mode, eq):
        s = next(s for s in self.scenarios if self.key(s) == (kind, mode, eq))
        return self.models[model_cache_key(s)], s


@pytest.fixture(scope="session")
def vdp_suite():
    return SuiteRun("vdp")


@pytest.fixture(scope="session")
def four_tanks_suite():
    return SuiteRun("four-tanks")
