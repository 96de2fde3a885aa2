import numpy as np
import pytest

from oob_bands.forest import OobResiduals


def make_residuals(values, predictions=None):
    """OobResiduals with a given residual vector, all rows OOB-covered."""
    r = np.asarray(values, dtype=np.float64)
    preds = np.zeros_like(r) if predictions is None else np.asarray(predictions, float)
    return OobResiduals(
        oob_prediction=preds.copy(),
        residual=r.copy(),
        tree_count=np.ones(r.size, dtype=np.int64),
        valid=np.ones(r.size, dtype=bool),
    )


@pytest.fixture
def small_training_set():
    rng = np.random.default_rng(424242)
    X = rng.random((20, 3))
    y = 2.0 * X[:, 0] - X[:, 1] + 0.3 * rng.standard_normal(20)
    return X, y
