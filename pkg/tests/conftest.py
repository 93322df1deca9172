"""Shared fixtures and the central finite-difference oracle."""

import numpy as np
import pytest

from mcwf.stft import StftConfig


def central_difference(f, x0, h=1e-5):
    """Central finite-difference gradient of a scalar function of one array.

    Independent of the tape: evaluates f at 2*size perturbed copies.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    grad = np.zeros_like(x0)
    flat = grad.reshape(-1)
    xf = x0.reshape(-1)
    for i in range(xf.size):
        xp = xf.copy()
        xm = xf.copy()
        xp[i] += h
        xm[i] -= h
        flat[i] = (f(xp.reshape(x0.shape)) - f(xm.reshape(x0.shape))) / (2.0 * h)
    return grad


def rel_error(a, b, floor=1e-12):
    """Max absolute difference normalized by the larger max magnitude."""
    a = np.asarray(a)
    b = np.asarray(b)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return np.abs(a - b).max(initial=0.0) / scale


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    """4-frame x 8-bin instance config: 14-sample window, 7-sample hop."""
    return StftConfig(sample_rate=16000, win_len=14, hop=7)


@pytest.fixture
def paper_cfg():
    """The full-scale default: 16 kHz, 32 ms Hann window, 8 ms hop."""
    return StftConfig()


def random_complex(rng, shape, scale=1.0):
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def random_hpd(rng, shape_kk, jitter=0.5):
    """Random Hermitian positive definite matrices, batched."""
    k = shape_kk[-1]
    b = random_complex(rng, shape_kk)
    m = b @ np.conj(np.swapaxes(b, -1, -2))
    return m + jitter * np.eye(k)
