import numpy as np
import pytest

from klrf.data_io import SynthConfig, synth_generate
from klrf.model import KLRFConfig

# Pass/fail lines recorded by the acceptance tests, echoed after the run.
ACCEPTANCE_LINES = []


def record_criterion(num, description, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    line = f"criterion {num:2d} {status}: {description}"
    if detail:
        line += f" [{detail}]"
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def small_synth(seed=0, **overrides):
    """Reduced benchmark for fast unit tests (full scale lives in acceptance)."""
    cfg = SynthConfig(
        seed=seed,
        sequences_per_class=8,
        frames_per_sequence=12,
        subjects_per_split=2,
        **overrides,
    )
    return synth_generate(cfg)


def small_config(**overrides):
    defaults = dict(num_trees=8, reference_trees=16, seed=0)
    defaults.update(overrides)
    return KLRFConfig(**defaults)


@pytest.fixture(scope="session")
def tiny_dataset():
    train, test = small_synth()
    return train, test


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(0)
