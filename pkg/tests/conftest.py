import os

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("GFNLOSS_OUTPUT_DIR", str(tmp_path))
    return tmp_path
