import numpy as np
import pytest

from arnet import synth
from arnet.model import ARNet


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_spec():
    return synth.DatasetSpec(train_per_class=2, val_per_class=1, test_per_class=1)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_spec):
    return synth.generate(tiny_spec, seed=0)


@pytest.fixture(scope="session")
def model():
    return ARNet.build(num_classes=6, seed=0)


def pytest_terminal_summary(terminalreporter):
    import acceptance_report

    if acceptance_report.RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(acceptance_report.RESULTS):
            terminalreporter.write_line(acceptance_report.line(number))
