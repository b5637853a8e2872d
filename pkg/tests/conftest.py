import numpy as np
import pytest
import torch

from gammassl.nnet import ModelConfig, SegNet


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(height=16, width=16, patch_size=4, num_classes=3, dim=8, depth=1, heads=2,
                       dropout_rate=0.1)


@pytest.fixture
def tiny_model(tiny_cfg):
    return SegNet(tiny_cfg, seed=7, dtype=torch.float64)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
