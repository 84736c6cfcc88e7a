import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


def central_diff(f, x, h=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def assert_grad_close(analytic, numeric, rtol=1e-4, atol=1e-6):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    err = np.abs(analytic - numeric)
    ok = (err <= atol) | (err <= rtol * np.abs(numeric))
    assert ok.all(), f"max abs err {err.max():.3e} at {np.unravel_index(err.argmax(), err.shape)}"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def small_instance(seed, S=8, n_max=20, K=3, hidden=16):
    """Ragged random sequences (1..n_max events) and a randomly initialised model."""
    from eventgc.npp import BasisFamily, NppModel
    from eventgc.seqdata import Dataset, EventSequence

    rng = np.random.default_rng(seed)
    seqs = []
    for _ in range(S):
        n = int(rng.integers(1, n_max + 1))
        times = np.cumsum(rng.exponential(1.0, size=n))
        seqs.append(EventSequence(times, rng.integers(0, K, size=n), times[-1] + rng.exponential(1.0)))
    data = Dataset(seqs, K)
    model = NppModel.init(K, BasisFamily(4, 4.0), d_emb=hidden, hidden=hidden, rng=seed)
    return model, data


def relative_error(a, b):
    return float(np.max(np.abs(a - b)) / np.max(np.abs(b)))
