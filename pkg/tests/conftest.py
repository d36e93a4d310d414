import numpy as np
import pytest

from xai_concord.dataset import Dataset, FeatureSpec, SyntheticSpec, standardize, synthesize


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(X, y, names=None):
    X = np.asarray(X, dtype=float)
    names = names or [f"f{j}" for j in range(X.shape[1])]
    specs = tuple(FeatureSpec(n, "numeric", False, float(X[:, j].min()), float(X[:, j].max()))
                  for j, n in enumerate(names))
    return Dataset(specs, X, np.asarray(y))


@pytest.fixture(scope="session")
def six_feature_data():
    """Standardized d=6 synthetic set with mixed-sign effects, n=800."""
    spec = SyntheticSpec(d=6, n=800, beta=[2.0, -1.5, 1.0, 0.0, 0.5, 0.0], intercept=0.2, seed=2024)
    data, _ = standardize(synthesize(spec))
    return data
