import numpy as np
import pytest

from eeamc.arch import build
from eeamc.signals import GenConfig, generate_dataset, split_dataset
from eeamc.train import TrainConfig, train


@pytest.fixture(scope="session")
def small_splits():
    return split_dataset(generate_dataset(GenConfig(samples_per_cell=20, seed=21)), seed=21)


@pytest.fixture(scope="session")
def lightly_trained(small_splits):
    """A V1 model after two short epochs: its exit entropies spread over a useful range."""
    tr, va, _ = small_splits
    g, _ = train(build("v1", seed=21), tr, va, TrainConfig(epochs=2, seed=21))
    return g


@pytest.fixture(scope="session")
def eval_set(small_splits):
    te = small_splits[2]
    return te.subset(np.arange(0, len(te), 2))


def pytest_terminal_summary(terminalreporter):
    from .acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(LINES):
            terminalreporter.write_line(LINES[n])
