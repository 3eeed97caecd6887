import numpy as np
import pytest

from videoreid.data import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """2 identities x 2 cameras x 6 frames: the smallest trainable corpus."""
    root = tmp_path_factory.mktemp("tiny_ds")
    spec = SyntheticSpec(identity_count=2, frames_per_track=6, occlusion_prob=0.1)
    return generate_synthetic(spec, seed=11, out_dir=root)


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """4 identities x 2 cameras x 8 frames for evaluation-level tests."""
    root = tmp_path_factory.mktemp("small_ds")
    spec = SyntheticSpec(identity_count=4, frames_per_track=8, occlusion_prob=0.2)
    return generate_synthetic(spec, seed=23, out_dir=root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
