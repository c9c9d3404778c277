import numpy as np
import pytest

from causalgp.data import ObservationalDataset
from causalgp.kernels import CMGPHyperparams, validate_or_project


def random_dataset(rng: np.random.Generator, n: int, d: int,
                   y_scale: float = 2.0) -> ObservationalDataset:
    X = rng.random((n, d))
    w = (rng.random(n) < 0.5).astype(int)
    # keep both arms nonempty
    w[0] = 0
    if n > 1:
        w[1] = 1
    y = rng.normal(0.0, y_scale, size=n)
    return ObservationalDataset(X, w, y)


def random_theta(rng: np.random.Generator, d: int) -> CMGPHyperparams:
    theta = CMGPHyperparams(
        noise_std=(rng.uniform(0.2, 1.0), rng.uniform(0.2, 1.0)),
        lengthscales0=rng.uniform(0.3, 2.0, size=d),
        lengthscales1=rng.uniform(0.3, 2.0, size=d),
        coreg0=(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.0, 0.5)),
        coreg1=(rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.0, 0.5)),
    )
    return validate_or_project(theta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
