import numpy as np
import pytest

from flowcast import measurement, scenario
from flowcast.netmodel import load_case


@pytest.fixture(scope="session")
def model9():
    return load_case("wscc9")


@pytest.fixture(scope="session")
def model118():
    return load_case("ieee118")


@pytest.fixture(scope="session")
def model3():
    return load_case("toy3")


@pytest.fixture(scope="session")
def model2():
    return load_case("toy2")


@pytest.fixture(scope="session")
def ds9(model9):
    """Small solved dataset on the 9-bus system (all buses placed)."""
    scen = scenario.generate_scenarios(model9, 420, scenario.ScenarioParams(), seed=5)
    placement = measurement.default_hv_placement(model9)
    return scenario.build_dataset(model9, scen, placement,
                                  {"train": 300, "val": 50, "test": 70}, seed=3)


@pytest.fixture(scope="session")
def cache118(model118):
    """Solved scenarios on the 118-bus system, shared across tests."""
    scen = scenario.generate_scenarios(model118, 330, scenario.ScenarioParams(), seed=11)
    return scenario.solve_scenarios(model118, scen)


def two_bus_case(x=0.1, r=0.0, charging=0.0):
    from flowcast.netmodel import parse_case
    return parse_case(
        "mpc.baseMVA = 100;\n"
        "mpc.bus = [\n"
        "1 3 0 0 0 0 1 1 0 138 1 1.1 0.9;\n"
        "2 1 40 10 0 0 1 1 0 138 1 1.1 0.9;\n"
        "];\n"
        "mpc.gen = [1 0 0 300 -300 1.0 100 1 300 0];\n"
        f"mpc.branch = [1 2 {r} {x} {charging} 0 0 0 0 0 1 -360 360];\n",
        name="twobus")


def assert_close(a, b, tol, label=""):
    err = np.max(np.abs(np.asarray(a) - np.asarray(b)))
    assert err < tol, f"{label}: max error {err:.3e} >= {tol:g}"
