import numpy as np
import pytest

from mpnet import gradcheck as gc


def test_fd_helpers_on_quadratic(rng):
    a = rng.standard_normal((4, 4))
    x = rng.standard_normal(4)
    np.testing.assert_allclose(gc.fd_gradient(lambda v: v @ a @ v, x.copy()), (a + a.T) @ x, atol=1e-8)
    s = rng.standard_normal((3, 3))
    s = s + s.T
    g = rng.standard_normal((3, 3))
    np.testing.assert_allclose(gc.fd_symmetric(lambda v: np.sum(g * v), s.copy()), gc._sym_directional(g), atol=1e-9)


def test_detects_a_wrong_gradient(rng):
    x = rng.standard_normal(5)
    numeric = gc.fd_gradient(lambda v: np.sum(v**3), x.copy())
    assert gc._rel_error(3 * x**2, numeric) < 1e-8
    assert gc._rel_error(2 * x**2, numeric) > 0.1


@pytest.mark.parametrize("seed", [0, 7])
def test_layer_checks_pass(seed):
    rng = np.random.default_rng(seed)
    errs = {**gc.check_stream_conv(rng), **gc.check_covariance(rng), **gc.check_pooling(rng)}
    assert max(errs.values()) < gc.TOLERANCE


@pytest.mark.parametrize("pooling", ["wem", "rm", "none"])
def test_model_checks_pass(pooling):
    assert gc.check_model(np.random.default_rng(11), pooling) < gc.TOLERANCE
