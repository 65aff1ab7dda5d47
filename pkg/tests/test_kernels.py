import os
import subprocess
import sys

import numpy as np
import pytest

from reldesc import kernels as K

pytestmark = pytest.mark.skipif(not K.HAS_NUMBA, reason="numba not installed")


@pytest.fixture
def x(rng):
    return rng.normal(size=(7, 11)) * 3


def test_softmax_paths_agree(x, rng):
    y_np, y_nb = K.np_softmax_rows(x), K.nb_softmax_rows(x)
    np.testing.assert_allclose(y_nb, y_np, atol=1e-14)
    dy = rng.normal(size=x.shape)
    np.testing.assert_allclose(K.nb_softmax_rows_backward(y_np, dy),
                               K.np_softmax_rows_backward(y_np, dy), atol=1e-14)


def test_logsumexp_paths_agree(x):
    np.testing.assert_allclose(K.nb_logsumexp_rows(x), K.np_logsumexp_rows(x), atol=1e-13)


def test_layernorm_paths_agree(x, rng):
    g, b = rng.normal(size=11), rng.normal(size=11)
    ref = K.np_layernorm_rows(x, g, b, 1e-5)
    got = K.nb_layernorm_rows(x, g, b, 1e-5)
    for a, c in zip(got, ref):
        np.testing.assert_allclose(a, c, atol=1e-13)
    dy = rng.normal(size=x.shape)
    for a, c in zip(K.nb_layernorm_rows_backward(dy, ref[1], ref[2], g),
                    K.np_layernorm_rows_backward(dy, ref[1], ref[2], g)):
        np.testing.assert_allclose(a, c, atol=1e-12)


def test_gelu_paths_agree(rng):
    x = rng.normal(size=(3, 4, 5)) * 4
    np.testing.assert_allclose(K.nb_gelu(x), K.np_gelu(x), atol=1e-14)
    dy = rng.normal(size=x.shape)
    np.testing.assert_allclose(K.nb_gelu_backward(x, dy), K.np_gelu_backward(x, dy), atol=1e-14)


def test_scatter_add_paths_agree(rng):
    idx = np.array([0, 3, 3, 1, 0])
    src = rng.normal(size=(5, 4))
    want = np.zeros((6, 4))
    np.add.at(want, idx, src)
    np.testing.assert_allclose(K.np_scatter_add_rows(6, idx, src), want, atol=1e-15)
    np.testing.assert_allclose(K.nb_scatter_add_rows(6, idx, src), want, atol=1e-15)


def test_gelu_known_values():
    # tanh approximation: gelu(0) = 0, gelu(x) -> x for large x
    np.testing.assert_allclose(K.np_gelu(np.array([0.0, 10.0, -10.0])), [0.0, 10.0, 0.0],
                               atol=1e-12)


def test_env_flag_selects_numpy():
    env = dict(os.environ, RELDESC_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from reldesc import kernels; print(kernels.backend())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
