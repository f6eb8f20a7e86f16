import numpy as np
import pytest

from fttn.datagen import toy_separable, write_demo_idx
from fttn.model import init_model


@pytest.fixture(scope="session")
def demo_fixture_dir(tmp_path_factory):
    """Deterministic 200/100-sample IDX fixture pair on disk."""
    out = tmp_path_factory.mktemp("demo-idx")
    paths = write_demo_idx(out, n_train=200, n_test=100, seed=7)
    return {"dir": out, **paths}


@pytest.fixture(scope="session")
def toy_dataset():
    return toy_separable(100, seed=0)


def random_model(n_sites, chi, num_classes, seed, spread=0.3, label_site=None):
    """Model with mixed-sign O(1) entries, away from the identity core."""
    model = init_model(n_sites, chi, num_classes, seed=seed,
                       noise_scale=spread, label_site=label_site)
    return model


def random_image(n_sites, seed):
    return np.random.default_rng(seed).uniform(0.0, 1.0, n_sites)
