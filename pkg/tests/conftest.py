import numpy as np
import pytest

from ovkv.core import EngineConfig, ModelDims
from ovkv.sim import TOY_DIMS, ToyModel, TrajectoryScene


@pytest.fixture
def toy_cfg():
    return EngineConfig(dims=TOY_DIMS, total_budget=1000, element_size=4, min_anchor_interval=10, coverage_tau=0.3)


@pytest.fixture
def small_dims():
    return ModelDims(num_layers=2, num_heads=1, head_dim=4, patch_rows=2, patch_cols=2, num_aux=1)


@pytest.fixture
def orbit_scene():
    return TrajectoryScene(kind="orbit", seed=1, num_frames=200, orbit_period=120)


@pytest.fixture
def toy_model():
    return ToyModel(seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA: dict[int, tuple[str, list[str]]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    _, outcomes = _CRITERIA.setdefault(number, (title, []))
    outcomes.append("PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, outcomes = _CRITERIA[number]
        verdict = "PASS" if outcomes and all(o == "PASS" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict}: {title}")
