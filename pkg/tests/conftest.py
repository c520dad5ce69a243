import numpy as np
import pytest

from divafn.datamodel import SynthConfig, generate_synthetic


@pytest.fixture(scope="session")
def small_data():
    """Four classes, five samples each, narrow features: cheap to train on."""
    cfg = SynthConfig(classes=4, per_class=5, image_dim=10, keyframe_dim=9, video_dim=12,
                      semantic_dim=4, latent_dim=5, noise=0.1)
    return generate_synthetic(cfg, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
