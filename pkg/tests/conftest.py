import numpy as np
import pytest

from octnav.trial import TrialConfig, run_trial


def fast_config(**kw):
    """Noise-free trial config used across test modules."""
    base = dict(master_seed=123)
    base.update(kw)
    return TrialConfig(**base)


@pytest.fixture(scope="session")
def done_record():
    """One completed noise-free trial, shared read-only across tests."""
    rec = run_trial(fast_config(), 0, 0)
    assert rec.status == "done"
    return rec


@pytest.fixture(scope="session")
def noisy_record():
    rec = run_trial(fast_config(actuation_noise_um=2.0), 0, 1)
    assert rec.status == "done"
    return rec


@pytest.fixture
def rng():
    return np.random.default_rng(0)
