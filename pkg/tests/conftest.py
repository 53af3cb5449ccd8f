import numpy as np
import pytest
import torch

from recolor_fad.toy import synth_toy_corpus

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """3+3 train, 2+2 dev, 2+2 pretrain utterances."""
    root = tmp_path_factory.mktemp("tiny")
    return {
        "root": root,
        "train": synth_toy_corpus(3, 101, root / "train", "train"),
        "dev": synth_toy_corpus(2, 102, root / "dev", "dev"),
        "pretrain": synth_toy_corpus(2, 103, root / "pre", "pretrain"),
    }
