import numpy as np
import pytest

from polattack.policy import HIDDEN, DiagGaussian, PolicyNet


def random_net(rng, obs_dim=None, act_dim=None, log_std_range=(-1.5, 0.5)):
    """Small random network for gradient and attack tests."""
    obs_dim = obs_dim or int(rng.integers(3, 12))
    act_dim = act_dim or int(rng.integers(1, 4))
    return PolicyNet(
        W1=0.6 * rng.standard_normal((HIDDEN, obs_dim)),
        b1=0.1 * rng.standard_normal(HIDDEN),
        W2=0.3 * rng.standard_normal((HIDDEN, HIDDEN)),
        b2=0.1 * rng.standard_normal(HIDDEN),
        Wmu=0.4 * rng.standard_normal((act_dim, HIDDEN)),
        bmu=0.1 * rng.standard_normal(act_dim),
        log_std=rng.uniform(*log_std_range, act_dim),
    )


def random_dist(rng, dim, mean_range=(-2.0, 2.0), std_range=(0.3, 2.0)):
    return DiagGaussian(mean=rng.uniform(*mean_range, dim),
                        std=rng.uniform(*std_range, dim))


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of scalar f at vector x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x.flat[i]))
        hi = x.copy()
        lo = x.copy()
        hi.flat[i] += step
        lo.flat[i] -= step
        g.flat[i] = (f(hi) - f(lo)) / (2.0 * step)
    return g


def rel_err(approx, exact):
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    scale = max(float(np.max(np.abs(exact))), 1e-12)
    return float(np.max(np.abs(approx - exact))) / scale


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
