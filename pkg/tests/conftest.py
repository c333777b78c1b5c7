import numpy as np
import pytest

from myoadapt.dataset import ShiftConfig, generate_synthetic, preprocess_session


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def short_sessions():
    """Three small raw sessions (0.5 s repetitions, 8 channels, 3 classes)."""
    cfg = ShiftConfig(n_classes=3, channels=8, sessions=3, rep_seconds=0.5, seed=3,
                      class_spread=0.4)
    return generate_synthetic(cfg)


@pytest.fixture(scope="session")
def short_frames(short_sessions):
    return [preprocess_session(s)[0] for s in short_sessions]


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
