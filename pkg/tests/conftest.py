import numpy as np
import pytest

from rstv.motioncomp import make_shift_training_set, train_shift_regressor
from rstv.synthdata import SynthConfig, gen_sequence

# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def _train_pair():
    seqs = [gen_sequence(SynthConfig(frames=100, seed=100 + s)) for s in range(2)]
    coarse_set = fine_set = None
    for s, m in enumerate(seqs):
        c = make_shift_training_set(m, 16.0, 10, seed=s)
        f = make_shift_training_set(m, 4.0, 10, seed=10 + s)
        coarse_set = c if coarse_set is None else coarse_set + c
        fine_set = f if fine_set is None else fine_set + f
    coarse = train_shift_regressor(coarse_set, "coarse", seed=0, epochs=6, shift_range=16.0)
    fine = train_shift_regressor(fine_set, "fine", seed=1, epochs=6, shift_range=4.0)
    return coarse, fine


@pytest.fixture(scope="session")
def shift_models():
    """Coarse (+-16 px) and fine (+-4 px) shift CNNs trained once per session."""
    return _train_pair()


@pytest.fixture(scope="session")
def small_seq():
    return gen_sequence(SynthConfig(frames=60, seed=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
