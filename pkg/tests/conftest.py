import numpy as np
import pytest

from fepkit import tracegen
from fepkit.datamodel import build_frame_table


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_config():
    """A miniature scenario for fast end-to-end tests."""
    import dataclasses
    cfg = tracegen.scaled_config(tracegen.preset("scr4"), 0.05)
    return dataclasses.replace(cfg, matches=2, links_per_match=4)


@pytest.fixture(scope="session")
def tiny_table(tiny_config):
    return build_frame_table(tracegen.generate_scrimmage(tiny_config, 7))


def randomize_params(params, rng, scale=0.5):
    for p in params:
        p.value[...] = rng.normal(0.0, scale, p.shape)
