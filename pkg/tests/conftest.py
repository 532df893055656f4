import numpy as np
import pytest

from dlasim.arch_model import VectorConfig, arria10_1150
from dlasim.topology import builtin_alexnet


@pytest.fixture(scope="session")
def alexnet():
    return builtin_alexnet()


@pytest.fixture(scope="session")
def a10():
    return arria10_1150()


@pytest.fixture
def cfg():
    return VectorConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY = {
    "name": "tiny",
    "input": [3, 23, 23],
    "layers": [
        {"kind": "conv", "name": "conv1", "K": 16, "R": 5, "S": 5, "stride": 2, "pad": 0},
        {"kind": "relu", "name": "relu1"},
        {"kind": "norm", "name": "norm1", "n": 5, "alpha": 0.0001, "beta": 0.75, "k": 2.0},
        {"kind": "maxpool", "name": "pool1", "window": 3, "stride": 2},
        {"kind": "conv", "name": "conv2", "K": 16, "R": 3, "S": 3, "pad": 1, "groups": 2},
        {"kind": "relu", "name": "relu2"},
        {"kind": "fc", "name": "fc3", "n_out": 32},
        {"kind": "relu", "name": "relu3"},
        {"kind": "fc", "name": "fc4", "n_out": 10},
        {"kind": "softmax", "name": "prob"},
    ],
}


@pytest.fixture
def tiny_doc():
    import copy
    return copy.deepcopy(TINY)


@pytest.fixture
def tiny():
    from dlasim.topology import from_dict
    return from_dict(TINY)


@pytest.fixture
def tiny_cfg():
    return VectorConfig(c_vec=4, k_vec=8)


# acceptance criteria report: one PASS/FAIL line per criterion in the terminal summary
_ACCEPTANCE = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _ACCEPTANCE.append((marker.args[0], "PASS" if rep.passed else "FAIL", rep.duration, title))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, secs, title in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {n}: {status}  ({secs:6.1f} s)  {title}")
