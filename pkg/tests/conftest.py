import numpy as np
import pytest

from core.config import NetworkConfig, SyntheticTask, TrainConfig
from utils.helpers import set_progress


@pytest.fixture(autouse=True)
def _no_progress_bars():
    set_progress(False)
    yield
    set_progress(True)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_vsn():
    return NetworkConfig.from_preset('vsn-tiny')


@pytest.fixture
def small_task():
    return SyntheticTask(kind='frame_order', clip_length=8, frame_size=8, num_train=64, num_val=32,
                         noise_std=0.05, seed=3)


@pytest.fixture
def quick_train():
    return TrainConfig(lr=0.05, batch_size=16, eval_batch_size=32, epochs=2, seed=7,
                       schedule={'kind': 'cosine', 'warmup_steps': 2})
