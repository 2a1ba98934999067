import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from asvmismatch.special import chi2_sf, gammaincc, ndtri, norm_cdf


def _norm_cdf_series(x):
    # Maclaurin series of erf, independent of math.erf
    t = x / math.sqrt(2)
    term, total, k = t, t, 0
    while abs(term) > 1e-18:
        k += 1
        term *= -t * t / k
        total += term / (2 * k + 1)
    return 0.5 + total / math.sqrt(math.pi)


def _bisect_quantile(p):
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _norm_cdf_series(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_ndtri_0975_against_root_finding():
    oracle = _bisect_quantile(0.975)
    assert oracle == pytest.approx(1.959964, abs=1e-6)
    assert abs(ndtri(0.975) - oracle) < 1e-8


@pytest.mark.parametrize("p", [1e-3, 1e-2 + 1e-9, 0.01, 0.2, 0.5, 0.7, 0.93, 0.999])
def test_ndtri_against_independent_cdf(p):
    assert abs(ndtri(p) - _bisect_quantile(p)) < 1e-8


@given(st.floats(1e-300, 1 - 1e-16))
def test_ndtri_inverts_cdf(p):
    x = ndtri(p)
    if p < 0.5:
        assert 0.5 * math.erfc(-x / math.sqrt(2)) == pytest.approx(p, rel=1e-12)
    else:
        assert 0.5 * math.erfc(x / math.sqrt(2)) == pytest.approx(1 - p, rel=1e-9, abs=1e-16)


def test_ndtri_edges_and_vector():
    assert ndtri(0.0) == -math.inf and ndtri(1.0) == math.inf
    assert math.isnan(ndtri(1.5))
    v = ndtri(np.array([0.025, 0.5, 0.975]))
    assert v.shape == (3,) and v[1] == 0.0 and v[0] == pytest.approx(-v[2], abs=1e-15)


def test_norm_cdf():
    assert norm_cdf(0.0) == 0.5
    assert norm_cdf(1.959963984540054) == pytest.approx(0.975, abs=1e-15)


def test_chi2_tail_at_four_one_df():
    # chi-square(1) upper tail equals erfc(sqrt(x / 2))
    assert chi2_sf(4.0, 1) == pytest.approx(math.erfc(math.sqrt(2.0)), rel=1e-13)
    assert chi2_sf(4.0, 1) == pytest.approx(0.0455, abs=5e-5)


@pytest.mark.parametrize("a, x", [(0.5, 0.1), (0.5, 3.0), (1.0, 2.0), (2.5, 1.0), (2.5, 9.0),
                                  (10.0, 4.0), (10.0, 25.0), (40.0, 35.0)])
def test_gammaincc_against_quadrature(a, x):
    upper, _ = integrate.quad(lambda t: t ** (a - 1) * math.exp(-t), x, math.inf, epsabs=0, epsrel=1e-13)
    assert gammaincc(a, x) == pytest.approx(upper / math.gamma(a), rel=1e-9)


def test_gammaincc_series_and_fraction_agree_at_switch():
    a = 3.0
    below, above = gammaincc(a, a + 1 - 1e-9), gammaincc(a, a + 1 + 1e-9)
    assert below == pytest.approx(above, rel=1e-7)


def test_chi2_even_df_closed_form():
    # df = 2: exp(-x / 2)
    for x in (0.5, 3.0, 12.0):
        assert chi2_sf(x, 2) == pytest.approx(math.exp(-x / 2), rel=1e-13)


def test_chi2_edges():
    assert chi2_sf(0.0, 3) == 1.0
    assert chi2_sf(-1.0, 3) == 1.0
