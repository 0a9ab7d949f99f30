import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate as si

from lfi_lab.quadrature import gauss_kronrod, integrate


def _scipy_gk21():
    # published QUADPACK qk21 nodes (descending, non-negative half) and Kronrod weights
    x = np.array([0.995657163025808080735527280689003, 0.973906528517171720077964012084452,
                  0.930157491355708226001207180059508, 0.865063366688984510732096688423493,
                  0.780817726586416897063717578345042, 0.679409568299024406234327365114874,
                  0.562757134668604683339000099272694, 0.433395394129247190799265943165784,
                  0.294392862701460198131126603103866, 0.148874338981631210884826001129720, 0.0])
    w = np.array([0.011694638867371874278064396062192, 0.032558162307964727478818972459390,
                  0.054755896574351996031381300244580, 0.075039674810919952767043140916190,
                  0.093125454583697605535065465083366, 0.109387158802297641899210590325805,
                  0.123491976262065851077208795115120, 0.134709217311473325928054001771707,
                  0.142775938577060080797094273138717, 0.147739104901338491374841515972068,
                  0.149445554002916905664936468389821])
    return x, w


def test_gk21_matches_reference_table():
    nodes, wk, gw = gauss_kronrod(10)
    x, w = _scipy_gk21()
    pos = nodes >= -1e-15
    np.testing.assert_allclose(nodes[pos][::-1], x, atol=1e-14)
    np.testing.assert_allclose(wk[pos][::-1], w, atol=1e-14)
    xg, wg = np.polynomial.legendre.leggauss(10)
    np.testing.assert_allclose(np.sort(nodes[gw > 0]), xg, atol=1e-14)
    np.testing.assert_allclose(gw[gw > 0], wg, atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 3, 5, 7, 10, 15, 20])
def test_kronrod_exactness(n):
    nodes, wk, gw = gauss_kronrod(n)
    assert len(nodes) == 2 * n + 1
    assert np.all(np.abs(nodes) < 1) and np.all(wk > 0)
    deg_k = 3 * n + 1 if n % 2 == 0 else 3 * n + 2
    for d in range(deg_k + 1):
        exact = 0.0 if d % 2 else 2.0 / (d + 1)
        assert wk @ nodes**d == pytest.approx(exact, abs=1e-13)
    for d in range(2 * n):
        exact = 0.0 if d % 2 else 2.0 / (d + 1)
        assert gw @ nodes**d == pytest.approx(exact, abs=1e-13)


def test_invalid_order():
    with pytest.raises(ValueError):
        gauss_kronrod(0)
    with pytest.raises(ValueError):
        integrate(np.sin, 1.0, 1.0)


def test_smooth_and_kinked_integrals():
    r = integrate(np.exp, 0.0, 1.0)
    assert r.converged and r.value == pytest.approx(math.e - 1, rel=1e-14)
    r = integrate(lambda x: np.exp(-np.abs(x)), -40.0, 60.0, breakpoints=(0.0,))
    assert r.value == pytest.approx(2 - math.exp(-40) - math.exp(-60), rel=1e-12)
    assert r.n_intervals <= 4
    r = integrate(lambda x: np.sqrt(np.abs(x - 0.3)), 0.0, 1.0)
    exact = (2 / 3) * (0.3**1.5 + 0.7**1.5)
    assert r.value == pytest.approx(exact, rel=1e-9)


def test_vector_valued():
    r = integrate(lambda x: np.stack([np.sin(x), np.cos(x), x**2], axis=-1), 0.0, math.pi)
    np.testing.assert_allclose(r.value, [2.0, 0.0, math.pi**3 / 3], atol=1e-12)


def test_interval_cap_reports_non_convergence():
    r = integrate(lambda x: 1 / np.sqrt(np.abs(x) + 1e-300), -1.0, 1.0, max_intervals=8)
    assert not r.converged and r.n_intervals <= 8


@settings(max_examples=40, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 3), st.floats(-10, 0), st.floats(0.5, 10))
def test_gaussian_against_scipy(mu, s, a, width):
    b = a + width
    f = lambda x: np.exp(-0.5 * ((x - mu) / s) ** 2)
    ref = si.quad(lambda x: math.exp(-0.5 * ((x - mu) / s) ** 2), a, b, epsabs=0, epsrel=1e-13)[0]
    assert integrate(f, a, b).value == pytest.approx(ref, rel=1e-9, abs=1e-14)
