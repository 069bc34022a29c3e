"""Shared fixtures: a tiny world for fast tests, the default world for
acceptance-grade checks, and small helpers."""

import numpy as np
import pytest

from emcomm.game import EpisodeSource
from emcomm.training import TrainConfig
from emcomm.worldgen import DataConfig, build_dataset


# smallest world the 128-component PCA accepts (needs more rows than components)
TINY_DATA = DataConfig(images_per_class=24, clips_per_class=24, seed=0)


def tiny_train_config(**kw):
    base = dict(msg_len=4, epochs=2, episodes_per_epoch=64, eval_episodes=60,
                seed=1, t_max=4)
    base.update(kw)
    return TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_world():
    return build_dataset(TINY_DATA)


@pytest.fixture(scope="session")
def tiny_audio(tiny_world):
    return tiny_world[0]


@pytest.fixture(scope="session")
def tiny_image(tiny_world):
    return tiny_world[1]


@pytest.fixture(scope="session")
def tiny_uni_source(tiny_audio):
    return EpisodeSource(tiny_audio, tiny_audio)


@pytest.fixture(scope="session")
def tiny_multi_source(tiny_audio, tiny_image):
    return EpisodeSource(tiny_audio, tiny_image)


@pytest.fixture(scope="session")
def default_world():
    """Full-size Shapes World; built once per session."""
    return build_dataset(DataConfig())


def rel_err(a, b):
    denom = max(abs(a), abs(b), 1e-8)
    return abs(a - b) / denom


def assert_all_close(x, y, tol=1e-10):
    assert np.max(np.abs(np.asarray(x) - np.asarray(y))) < tol
