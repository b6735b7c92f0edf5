import sys
from types import SimpleNamespace

import pytest

from sipkit import exactsolve
from sipkit.model import ModelParams, perturbed_params


@pytest.fixture(scope="session")
def box30():
    """Equilibrium N=3, m=1, b=1, d=2 chain on {0..30}^3 with Dyson terms and two driven solves."""
    space = exactsolve.build_space(3, 30)
    p0 = ModelParams.equilibrium(3, 1.0, 1.0, 2.0)
    G0 = exactsolve.build_generator(space, p0)
    nu0 = exactsolve.stationary_distribution(G0)
    gamma = exactsolve.perturbation_operator(space, p0)
    h1 = exactsolve.dyson_first_order(G0, nu0)
    stage2 = exactsolve.dyson_higher_order(G0, gamma, h1, nu0)
    driven = {
        eps: exactsolve.stationary_distribution(exactsolve.build_generator(space, perturbed_params(1.0, 2.0, eps, 3, 1.0)))
        for eps in (0.01, 0.02)
    }
    return SimpleNamespace(space=space, p0=p0, G0=G0, nu0=nu0, gamma=gamma, h1=h1, stage2=stage2, driven=driven)


def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
