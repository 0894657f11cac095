import numpy as np
import pytest
from hypothesis import settings

from pvqe.model import ModelConfig, build_model

settings.register_profile("pvqe", deadline=None, max_examples=25)
settings.load_profile("pvqe")

# Small enough for finite differences, large enough to keep every block
TINY = ModelConfig(bins=17, far_filters=(2, 4), mic_filters=(3, 4), comb_filters=(4, 3),
                   dec_filters=(4, 3, 3, 4), align_history=6, align_dim=4, gru_hidden=8,
                   fusion_size=6, emb_dim=8)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_model():
    return build_model(TINY, seed=3)


def zero_model(cfg, dtype=np.float32):
    m = build_model(cfg, seed=0, dtype=dtype)
    for k in m.params:
        m.params[k] = np.zeros_like(m.params[k].data)
    return m


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for tag in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[tag])
