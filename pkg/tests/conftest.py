

import numpy as np
import pytest


from corpus import square, write_fixture_corpus
from models.completion_config import BackboneConfig, ExperimentConfig, ModelConfig, TrainConfig


@pytest.fixture
def rng():
    return np.random.default_rng(42)


@pytest.fixture
def tiny_model_config():
    # narrow enough that a full generator fits a finite-difference audit
    return ModelConfig(image_channels=3, resolution=8, widths=(2, 3, 4), dilations=(2,),
                       disc_widths=(2, 3), disc_kernel=3, seed=3)


@pytest.fixture
def tiny_backbone_config():
    return BackboneConfig(widths=(2, 3, 3, 4))


@pytest.fixture
def tiny_experiment(tiny_model_config, tiny_backbone_config):
    return ExperimentConfig(model=tiny_model_config, backbone=tiny_backbone_config,
                            train=TrainConfig(batch_size=2, steps=4, log_every=1, checkpoint_every=2))


@pytest.fixture
def two_instance_corpus(tmp_path):
    return write_fixture_corpus(tmp_path, [
        (1, [square(8, 8, 16)]),
        (3, [square(6, 10, 18)]),
    ])


@pytest.fixture
def mixed_corpus(tmp_path):
    # 12 instances, 5 of them animals
    categories = [1, 3, 2, 4, 3, 1, 4, 2, 3, 4, 1, 3]
    return write_fixture_corpus(tmp_path, [(c, [square(6 + i % 4, 8, 14 + i % 3)]) for i, c in enumerate(categories)])
