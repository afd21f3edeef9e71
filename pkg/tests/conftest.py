import numpy as np
import pytest


def pack(arrays):
    return np.concatenate([a.ravel() for a in arrays])


def model_theta(model) -> np.ndarray:
    return pack([p for _, p in model.parameters()])


def set_model_theta(model, theta: np.ndarray) -> None:
    offset = 0
    for _, p in model.parameters():
        p[...] = theta[offset : offset + p.size].reshape(p.shape)
        offset += p.size
    assert offset == theta.size


def model_grads(model) -> np.ndarray:
    return pack([g for _, g in model.gradients()])


def grad_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation relative to the gradient scale."""
    scale = max(1.0, np.abs(analytic).max(), np.abs(numeric).max())
    return float(np.abs(analytic - numeric).max() / scale)


@pytest.fixture(scope="session")
def quiet_mpl():
    import matplotlib

    matplotlib.use("Agg")
