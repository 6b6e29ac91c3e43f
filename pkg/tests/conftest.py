import numpy as np
import pytest

from fairvoice.corpus import ELDERLY, HC, PD, YOUNG, SynthConfig, generate_synthetic


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small deterministic corpus shared across tests: 13 samples, 4 kHz."""
    cfg = SynthConfig(
        counts={(YOUNG, PD): 2, (YOUNG, HC): 4, (ELDERLY, PD): 4, (ELDERLY, HC): 3},
        sample_rate=4000,
        seed=7,
    )
    out = tmp_path_factory.mktemp("corpus")
    manifest = generate_synthetic(cfg, out)
    return cfg, out, manifest


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
