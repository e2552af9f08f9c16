import numpy as np
import pytest


def random_preshape(rng, m, q):
    x = rng.standard_normal((m, q))
    return x / np.linalg.norm(x)


def random_rotation(rng, m):
    """Haar-ish rotation from QR of a Gaussian matrix, determinant fixed to +1."""
    q, r = np.linalg.qr(rng.standard_normal((m, m)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_rotation_stack(rng, n, m):
    a = rng.standard_normal((n, m, m))
    q, r = np.linalg.qr(a)
    d = np.sign(np.einsum("nii->ni", r))
    q = q * d[:, None, :]
    det = np.linalg.det(q)
    q[det < 0, :, 0] *= -1.0
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(20260811)
