import numpy as np
import pytest

from nbsreg.data import Dataset


def make_dataset(n=200, seed=0, censor_scale=8.0, categorical=False):
    """Small randomized cohort with log-normal costs and Weibull times."""
    rng = np.random.default_rng(seed)
    l = rng.standard_normal(n)
    x = (rng.random(n) < 0.4).astype(float)
    a = (rng.random(n) < 0.5).astype(int)
    t = np.exp(1.5 + 0.3 * a + 0.2 * l) * rng.weibull(2.0, n)
    c = censor_scale * rng.weibull(2.0, n)
    y = np.exp(2.0 + 0.1 * t + 0.4 * a + 0.3 * rng.standard_normal(n))
    cens = c < t
    levels = {"x": ("lo", "hi")} if categorical else None
    return Dataset.from_arrays(a, np.minimum(t, c), np.where(cens, np.nan, y), cens,
                               x={"x": x}, l={"l": l}, levels=levels)


@pytest.fixture
def small_dataset():
    return make_dataset()
