import numpy as np
import pytest

from sfreinforce import MdpModel, ParamPolicy, make_random_ssp


def one_step_model(cost=1.0):
    """One state, one action, terminates immediately."""
    return MdpModel.from_lists([[[0.0, 1.0]]], [[cost]], [1.0])


def geometric_model(stay=0.5, cost=1.0):
    return MdpModel.from_lists([[[stay, 1.0 - stay]]], [[cost]], [1.0])


def two_state_model():
    """Fixed 2-state / 2-action SSP used for the estimator checks."""
    transitions = [
        [[0.2, 0.3, 0.5], [0.2, 0.6, 0.2]],
        [[0.4, 0.0, 0.6], [0.0, 0.7, 0.3]],
    ]
    costs = [[1.0, 0.5], [2.0, 0.2]]
    return MdpModel.from_lists(transitions, costs, [0.5, 0.5])


TWO_STATE_THETA = np.array([0.3, -0.2, -0.4, 0.1])


def single_action_model(p=3, seed=0):
    """Every state has exactly one action, so the objective ignores theta."""
    m = make_random_ssp(p, 1, 0.3, seed=seed)
    return m


@pytest.fixture
def one_step():
    return one_step_model()


@pytest.fixture
def two_state():
    return two_state_model()


@pytest.fixture
def two_state_policy(two_state):
    return ParamPolicy(two_state, TWO_STATE_THETA)


@pytest.fixture
def random_ssp():
    return make_random_ssp(10, 3, 0.1, seed=7)


ACCEPTANCE = []


def record_criterion(number, title, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
