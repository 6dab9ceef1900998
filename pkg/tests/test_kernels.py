import math

import numpy as np
import pytest
from scipy.special import logsumexp

from eiglab import kernels


def _backends():
    out = [kernels.get_backend("py")]
    try:
        out.append(kernels.get_backend("c"))
    except ImportError:
        pass
    return out


@pytest.mark.parametrize("backend", _backends(), ids=lambda b: b.__name__.rsplit("_", 1)[-1])
def test_normal_logpdf_against_closed_form(backend):
    gen = np.random.default_rng(0)
    y = gen.standard_normal(9)
    mu = gen.standard_normal((9, 5))
    sigma = 0.73
    got = backend.normal_logpdf_mat(y, mu, sigma)
    want = -0.5 * math.log(2 * math.pi) - math.log(sigma) - 0.5 * ((y[:, None] - mu) / sigma) ** 2
    np.testing.assert_allclose(got, want, atol=1e-13)
    got1 = backend.normal_logpdf_mat(y, mu[0], sigma)
    want1 = -0.5 * math.log(2 * math.pi) - math.log(sigma) - 0.5 * ((y[:, None] - mu[0][None, :]) / sigma) ** 2
    np.testing.assert_allclose(got1, want1, atol=1e-13)
    gotv = backend.normal_logpdf_vec(y, mu[:, 0], sigma)
    np.testing.assert_allclose(gotv, got[:, 0], atol=1e-13)


@pytest.mark.parametrize("backend", _backends(), ids=lambda b: b.__name__.rsplit("_", 1)[-1])
def test_logmeanexp_matches_scipy_and_survives_extremes(backend):
    gen = np.random.default_rng(1)
    a = gen.standard_normal((7, 40)) * 3
    got = backend.logmeanexp_2d(a)
    want = logsumexp(a, axis=1) - math.log(a.shape[1])
    np.testing.assert_allclose(got, want, atol=1e-12)
    big = np.full((2, 3), 1000.0)
    np.testing.assert_allclose(backend.logmeanexp_2d(big), [1000.0, 1000.0], atol=1e-12)
    dead = np.full((1, 4), -np.inf)
    assert backend.logmeanexp_2d(dead)[0] == -np.inf
    assert backend.logmeanexp_1d(np.array([0.0, 0.0])) == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("backend", _backends(), ids=lambda b: b.__name__.rsplit("_", 1)[-1])
def test_systematic_resample_preserves_weight_proportions(backend):
    w = np.array([0.5, 0.25, 0.125, 0.125])
    idx = backend.systematic_resample(w, 0.0)
    counts = np.bincount(idx, minlength=4)
    # systematic resampling keeps counts within one of n * w
    np.testing.assert_array_equal(counts, [2, 1, 1, 0] if counts[3] == 0 else counts)
    assert counts.sum() == 4
    for u in (0.0, 0.3, 0.77, 0.999):
        idx = backend.systematic_resample(w, u)
        counts = np.bincount(idx, minlength=4)
        for i, wi in enumerate(w):
            assert abs(counts[i] - 4 * wi) <= 1.0


def test_backends_agree_when_both_present():
    backs = _backends()
    if len(backs) < 2:
        pytest.skip("compiled kernels not built")
    py, ck = backs
    gen = np.random.default_rng(3)
    y = gen.standard_normal(64)
    mu = gen.standard_normal((64, 33))
    a_py = py.normal_logpdf_mat(y, mu, 1.3)
    a_c = ck.normal_logpdf_mat(y, mu, 1.3)
    np.testing.assert_allclose(a_py, a_c, rtol=0, atol=1e-12)
    np.testing.assert_allclose(py.logmeanexp_2d(a_py), ck.logmeanexp_2d(a_c), rtol=0, atol=1e-12)
    w = gen.random(100)
    w /= w.sum()
    assert np.array_equal(py.systematic_resample(w, 0.42), ck.systematic_resample(w, 0.42))


def test_active_backend_exports():
    assert kernels.backend_name() in ("py", "c")
    assert kernels.logmeanexp_1d(np.array([math.log(2.0), math.log(2.0)])) == pytest.approx(math.log(2.0))
