import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=50, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_manifest(tmp_path_factory):
    """The 64-recording, 4-class synthetic corpus (raw ECG3 files)."""
    from x3ecg.data import synth_corpus

    return synth_corpus(tmp_path_factory.mktemp("corpus"), n_classes=4, per_class=16, seed=1)
