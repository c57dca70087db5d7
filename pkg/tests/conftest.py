import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("repo", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("LCREG_OUT", str(tmp_path / "runs"))
    return tmp_path / "runs"
