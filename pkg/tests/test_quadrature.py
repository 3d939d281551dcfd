import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgpfm.quadrature import (
    gauss_legendre, grid_from_description, make_rule, periodic, tensor_grid, trapezoidal,
)


def test_gl_one_point_is_midpoint():
    r = gauss_legendre(1, -1.0, 1.0)
    assert r.nodes.tolist() == [0.0] and r.weights.tolist() == [2.0]


def test_gl_two_points_closed_form():
    r = gauss_legendre(2, -1.0, 1.0)
    assert np.allclose(r.nodes, [-1 / math.sqrt(3), 1 / math.sqrt(3)], atol=1e-15)
    assert np.allclose(r.weights, [1.0, 1.0], atol=1e-15)


def test_gl_five_points_degree_eight():
    assert abs(gauss_legendre(5, -1.0, 1.0).integrate(lambda x: x**8) - 2 / 9) < 1e-14


@pytest.mark.parametrize("n", [3, 10, 33, 64, 128])
def test_gl_matches_numpy_leggauss(n):
    x, w = np.polynomial.legendre.leggauss(n)
    r = gauss_legendre(n, -1.0, 1.0)
    assert np.allclose(r.nodes, x, atol=1e-14, rtol=0)
    assert np.allclose(r.weights, w, atol=5e-14, rtol=0)  # both sides carry rounding in P_n'


def test_gl_exactness_up_to_degree_2n_minus_1():
    for n in range(1, 13):
        r = gauss_legendre(n, -1.0, 1.0)
        for deg in range(2 * n):
            exact = 0.0 if deg % 2 else 2.0 / (deg + 1)
            assert abs(r.integrate(lambda x: x**deg) - exact) < 1e-12, (n, deg)


@pytest.mark.parametrize("bad", [(0, 0.0, 1.0), (3, 1.0, 1.0), (3, 2.0, 1.0)])
def test_gl_invalid_arguments(bad):
    with pytest.raises(ValueError):
        gauss_legendre(*bad)


def test_trapezoid_small_cases():
    assert trapezoidal(2, 0.0, 1.0).integrate(np.ones_like) == 1.0
    r = trapezoidal(3, 0.0, 2.0)
    assert r.weights.tolist() == [0.5, 1.0, 0.5]
    assert r.integrate(lambda x: x) == 2.0
    with pytest.raises(ValueError):
        trapezoidal(1)


def trapezoid_order(ns):
    errs = [abs(trapezoidal(n, 0.0, math.pi).integrate(np.sin) - 2.0) for n in ns]
    h = [math.pi / (n - 1) for n in ns]
    return errs, np.polyfit(np.log(h), np.log(errs), 1)[0]


def test_trapezoid_second_order_on_sine():
    errs, slope = trapezoid_order([17, 33, 65])
    for a, b in zip(errs, errs[1:]):
        assert 3.8 < a / b < 4.2
    assert slope >= 1.9


def test_periodic_rule_is_spectrally_accurate():
    r = periodic(16, 0.0, 1.0)
    assert r.nodes[-1] < 1.0 and r.weights.sum() == pytest.approx(1.0)
    f = lambda x: np.exp(np.sin(2 * np.pi * x))
    from scipy.special import i0

    assert r.integrate(f) == pytest.approx(i0(1.0), abs=1e-13)


@settings(max_examples=60, deadline=None)
@given(kind=st.sampled_from(["gauss_legendre", "trapezoidal", "periodic"]), n=st.integers(2, 80),
       a=st.floats(-5, 5), width=st.floats(0.1, 10))
def test_rule_invariants(kind, n, a, width):
    b = a + width
    r = make_rule(kind, n, a, b)
    assert r.weights.sum() == pytest.approx(b - a, rel=1e-12)
    assert np.all(np.diff(r.nodes) > 0)
    assert r.nodes[0] >= a - 1e-12 and r.nodes[-1] <= b + 1e-12
    if kind == "gauss_legendre":
        assert np.all(r.weights > 0)
    else:
        assert np.all(r.weights >= 0)


def test_tensor_grid_cases():
    r = gauss_legendre(5, 0.0, 1.0)
    g = tensor_grid([r])
    assert np.array_equal(g.nodes[:, 0], r.nodes) and np.array_equal(g.weights, r.weights)
    g = tensor_grid([trapezoidal(2), trapezoidal(2)])
    assert g.size == 4 and np.allclose(g.weights, 0.25)
    g = tensor_grid([trapezoidal(3), gauss_legendre(4, 0.0, 1.0)])
    assert g.size == 12 and g.shape == (3, 4)
    # row-major: the last axis varies fastest
    assert np.array_equal(g.nodes[:4, 0], np.zeros(4))
    with pytest.raises(ValueError):
        tensor_grid([])
    with pytest.raises(ValueError):
        tensor_grid([trapezoidal(2)] * 4)


def test_tensor_weights_are_products():
    rules = [gauss_legendre(3, 0.0, 1.0), trapezoidal(4, 0.0, 2.0), periodic(2, -1.0, 1.0)]
    g = tensor_grid(rules)
    idx = np.stack(np.meshgrid(*[np.arange(len(r)) for r in rules], indexing="ij"), -1).reshape(-1, 3)
    for q, (i, j, k) in enumerate(idx):
        assert g.weights[q] == pytest.approx(rules[0].weights[i] * rules[1].weights[j] * rules[2].weights[k], rel=1e-15)
        assert np.array_equal(g.nodes[q], [rules[0].nodes[i], rules[1].nodes[j], rules[2].nodes[k]])


def test_separable_integral_is_product_of_1d():
    rx, ry = gauss_legendre(12, 0.0, 1.0), gauss_legendre(9, 0.0, 2.0)
    g = tensor_grid([rx, ry])
    f, h = np.cos, lambda y: np.exp(-y)
    got = float(np.dot(g.weights, f(g.nodes[:, 0]) * h(g.nodes[:, 1])))
    assert got == pytest.approx(rx.integrate(f) * ry.integrate(h), abs=1e-12)


def test_equispaced_flag_and_description():
    assert not tensor_grid([gauss_legendre(4)]).equispaced
    g = tensor_grid([periodic(8), trapezoidal(5, 0.0, 2.0)])
    assert g.equispaced
    again = grid_from_description(g.describe())
    assert np.array_equal(again.nodes, g.nodes) and np.array_equal(again.weights, g.weights)
