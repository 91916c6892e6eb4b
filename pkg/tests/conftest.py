import numpy as np
import pytest

from nmes_predictor.dynamics import PlantModel, ReferenceSpec, reference_build
from nmes_predictor.envelopes import build_envelopes


@pytest.fixture(scope="session")
def model():
    return PlantModel()


@pytest.fixture(scope="session")
def unit_model():
    return PlantModel(J=1, m=1, l=1, g_const=1, k1=1, k2=1, k3=1, moment_gain=1.0)


@pytest.fixture(scope="session")
def ref(model):
    return reference_build(ReferenceSpec.sinusoid(0.5), model, 0.05)


@pytest.fixture(scope="session")
def zero_ref(model):
    return reference_build(ReferenceSpec.constant(0.0), model, 0.05)


@pytest.fixture(scope="session")
def env(model, ref):
    return build_envelopes(model, ref, mu=1.0, eps=0.1, r=0.05)


@pytest.fixture(scope="session")
def zero_env(model, zero_ref):
    return build_envelopes(model, zero_ref, mu=1.0, eps=0.1, r=0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", []):
                if name == "acceptance":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
