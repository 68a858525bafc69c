import numpy as np
import pytest
import torch

from manigraph.slices import SliceConfig
from manigraph.synthetic import cooking_spec, default_vocab, generate_synthetic

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def vocab():
    return default_vocab()


@pytest.fixture(scope="session")
def cooking_demos(vocab):
    return generate_synthetic(cooking_spec(), vocab, subjects=2, takes=2, seed=7)


@pytest.fixture(scope="session")
def slice_cfg():
    return SliceConfig(history=4, sample_rate=5, horizon=5, n_past=4)


@pytest.fixture(autouse=True)
def _deterministic_torch():
    torch.manual_seed(0)
    np.random.seed(0)
