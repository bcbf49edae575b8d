import numpy as np
import pytest

from siamtrack.tensor import Parameter


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, *shape, scale=1.0, name=""):
    return Parameter(rng.normal(scale=scale, size=shape), name=name)


def small_config(**kw):
    """A reduced network that keeps every stage but runs in milliseconds."""
    from siamtrack.config import Config

    base = dict(n_template=64, n_search=128, channels=(8, 16, 16), out_channels=8, neighbors=(8, 8, 8),
                knn_k=8, head_channels=8, log_every=0)
    base.update(kw)
    return Config(**base)
