import numpy as np
import pytest


def make_batch(seed, n=12, d=4, K=3, unit=False, min_count=2):
    """Seeded Gaussian embeddings; every class gets ``min_count`` members."""
    rng = np.random.default_rng(seed)
    y = np.concatenate([np.repeat(np.arange(K), min_count),
                        rng.integers(0, K, n - K * min_count)])
    y = rng.permutation(y)
    Z = rng.standard_normal((n, d))
    if unit:
        Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return Z, y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
