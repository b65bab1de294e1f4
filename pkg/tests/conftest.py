import numpy as np
import pytest

from rlcsens.config import data_path, load_config
from rlcsens.netlist import parse_netlist
from rlcsens.sensitivity import ResponseSpec
from rlcsens.statespace import build_state_space
from rlcsens.eigen import solve_pencil


@pytest.fixture(scope="session")
def mnet():
    return parse_netlist(data_path("matching_network.cir").read_text())


@pytest.fixture(scope="session")
def mnet_cfg():
    return load_config(data_path("matching_network.cfg"))


@pytest.fixture(scope="session")
def mnet_rs(mnet):
    return ResponseSpec.for_circuit(mnet, [("ch1", 200e6, 1), ("ch2", 50e6, 2)])


@pytest.fixture(scope="session")
def mnet_ss(mnet):
    return build_state_space(mnet)


@pytest.fixture(scope="session")
def mnet_es(mnet_ss):
    return solve_pencil(mnet_ss.m, mnet_ss.n)


@pytest.fixture(scope="session")
def fix_rc():
    return parse_netlist(data_path("fix_rc.cir").read_text())


@pytest.fixture(scope="session")
def fix_rlc():
    return parse_netlist(data_path("fix_rlc.cir").read_text())


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), np.finfo(float).tiny))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
