import numpy as np
import pytest
from hypothesis import strategies as st

from diagcert import data_path
from diagcert.automaton import build_dfa, label_partition
from diagcert.certificate import Certificate
from diagcert.model import FiniteModel, load_system, two_room_model


@pytest.fixture(scope="session")
def running():
    return load_system(data_path("running.json"))


@pytest.fixture(scope="session")
def two_room():
    return two_room_model()


@pytest.fixture(scope="session")
def running_k3(running):
    return running, build_dfa(1.0, 3), label_partition(running, 1.0)


@pytest.fixture(scope="session")
def running_k2(running):
    return running, build_dfa(1.0, 2), label_partition(running, 1.0)


@pytest.fixture(scope="session")
def printed_b():
    return Certificate.from_json(data_path("b_running_k3.json"))


@pytest.fixture(scope="session")
def printed_v():
    return Certificate.from_json(data_path("v_running_k2.json"))


def random_finite_model(rng: np.random.Generator, max_states: int = 8, max_inputs: int = 3) -> FiniteModel:
    """Scalar states on a coarse lattice so outputs often land within delta of each other."""
    ns = int(rng.integers(1, max_states + 1))
    nu = int(rng.integers(1, max_inputs + 1))
    states = [(float(v),) for v in rng.choice(np.arange(0, ns, 0.5), size=ns, replace=False)]
    trans = {(s, u): int(rng.integers(ns)) for s in range(ns) for u in range(nu)}
    initial = sorted(set(rng.choice(ns, size=int(rng.integers(1, ns + 1)), replace=True).tolist()))
    faulty = [i for i in range(ns) if rng.random() < 0.3]
    return FiniteModel(states, initial, faulty, [(float(u),) for u in range(nu)], trans, states, name="random")


@st.composite
def finite_models(draw, max_states: int = 8, max_inputs: int = 3):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_finite_model(np.random.default_rng(seed), max_states, max_inputs)


def pytest_terminal_summary(terminalreporter):
    # acceptance lines survive output capture
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in mod.LINES:
            terminalreporter.write_line(line)
