import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from dgpfm.kernels import Matern, SquaredExponential, make_kernel
from dgpfm.quadrature import gauss_legendre, periodic, tensor_grid, trapezoidal
from dgpfm.transforms import (
    UnsupportedGrid, cancellation_check, circulant_from_spectrum, ft_apply, full_apply, qr_apply,
    spectrum_length,
)

T = lambda a: torch.as_tensor(a, dtype=torch.float64)


def test_qr_reciprocal_weights_is_identity(rng):
    g = tensor_grid([gauss_legendre(16, 0.0, 1.0)])
    H = T(rng.normal(size=(16, 3)))
    out = qr_apply([T(np.diag(1.0 / g.rules[0].weights))], g, H)
    assert torch.allclose(out, H, atol=1e-13)


def test_qr_product_kernel_exact():
    r = gauss_legendre(64, 0.0, 1.0)
    g = tensor_grid([r])
    x = r.nodes
    out = qr_apply([T(np.outer(x, x))], g, T(x[:, None] ** 2))
    assert np.abs(out[:, 0].numpy() - x / 4).max() < 1e-12


def test_qr_zero_weights_2d(rng):
    g = tensor_grid([gauss_legendre(4, 0.0, 1.0), trapezoidal(5)])
    out = qr_apply([torch.zeros(4, 4, dtype=torch.float64), torch.zeros(5, 5, dtype=torch.float64)], g,
                   T(rng.normal(size=(2, 20, 3))))
    assert out.shape == (2, 20, 3) and float(out.abs().max()) == 0.0


def test_qr_2d_is_sum_of_axis_contractions(rng):
    rx, ry = gauss_legendre(3, 0.0, 1.0), trapezoidal(4)
    g = tensor_grid([rx, ry])
    W1, W2 = rng.normal(size=(3, 3)), rng.normal(size=(4, 4))
    h = rng.normal(size=(3, 4))
    want = np.einsum("ab,b,bj->aj", W1, rx.weights, h) + np.einsum("ij,j,aj->ai", W2, ry.weights, h)
    got = qr_apply([T(W1), T(W2)], g, T(h.reshape(12, 1)))[:, 0].numpy().reshape(3, 4)
    assert np.allclose(got, want, atol=1e-13)


def test_qr_shape_mismatch():
    g = tensor_grid([gauss_legendre(4, 0.0, 1.0)])
    with pytest.raises(ValueError):
        qr_apply([torch.zeros(3, 3, dtype=torch.float64)], g, torch.zeros(4, 1, dtype=torch.float64))
    with pytest.raises(ValueError):
        qr_apply([torch.zeros(4, 4, dtype=torch.float64)], g, torch.zeros(5, 1, dtype=torch.float64))


def test_ft_full_spectrum_of_ones_is_identity(rng):
    g = tensor_grid([periodic(64)])
    H = T(rng.normal(size=(64, 2)))
    c = torch.ones(spectrum_length(64), dtype=torch.complex128)
    assert torch.allclose(ft_apply([c], g, H), H, atol=1e-13)


def test_ft_single_mode_on_sine_matches_circulant():
    n = 64
    g = tensor_grid([periodic(n)])
    x = g.nodes[:, 0]
    h = T(np.sin(2 * np.pi * x)[:, None])
    c = torch.tensor([0.0, 0.7 - 0.4j], dtype=torch.complex128)  # DC and first mode
    out = ft_apply([c], g, h)[:, 0].numpy()
    # mode 1 of sin is -i n/2; multiplying by c gives Re(c) sin + Im(c) cos... after the inverse transform
    assert np.allclose(out, 0.7 * np.sin(2 * np.pi * x) - 0.4 * np.cos(2 * np.pi * x), atol=1e-12)
    W = circulant_from_spectrum(c, n).numpy() / g.weights[None, :]
    via_qr = qr_apply([T(W)], g, h)[:, 0].numpy()
    assert np.abs(out - via_qr).max() < 1e-10


def test_ft_dc_only_is_scaled_mean(rng):
    g = tensor_grid([periodic(10), periodic(6)])
    H = rng.normal(size=(10, 6, 2))
    c1, c2 = torch.tensor([1.5 + 0j]), torch.tensor([-0.5 + 0j])
    out = ft_apply([c1.to(torch.complex128), c2.to(torch.complex128)], g, T(H.reshape(60, 2))).numpy().reshape(10, 6, 2)
    want = 1.5 * H.mean(axis=0, keepdims=True) - 0.5 * H.mean(axis=1, keepdims=True)
    assert np.allclose(out, np.broadcast_to(want, out.shape), atol=1e-13)


def test_ft_mode_limits_and_grid_check():
    g = tensor_grid([periodic(8)])
    H = torch.zeros(8, 1, dtype=torch.float64)
    with pytest.raises(ValueError):
        ft_apply([torch.zeros(0, dtype=torch.complex128)], g, H)
    with pytest.raises(ValueError):
        ft_apply([torch.zeros(6, dtype=torch.complex128)], g, H)
    with pytest.raises(UnsupportedGrid):
        ft_apply([torch.ones(1, dtype=torch.complex128)], tensor_grid([gauss_legendre(8)]), H)


def test_ft_padding_gives_toeplitz_operator(rng):
    n = 16
    g = tensor_grid([periodic(n)])
    c = torch.as_tensor(rng.normal(size=n + 1) + 1j * rng.normal(size=n + 1))
    G = circulant_from_spectrum(c, 2 * n)[:n, :n]  # top-left block of the 2n circulant
    H = T(rng.normal(size=(n, 3)))
    assert torch.allclose(ft_apply([c], g, H, pad=True), G @ H, atol=1e-12)
    # a causal kernel stays causal: no wrap-around from the end of the interval
    spec = torch.fft.rfft(T((np.arange(2 * n) < n).astype(float)))
    out = ft_apply([spec], g, T(np.eye(n)), pad=True).numpy()
    assert np.allclose(out, np.tril(np.ones((n, n))), atol=1e-12)


def test_full_reciprocal_and_brute_force(rng):
    g = tensor_grid([gauss_legendre(3, 0.0, 1.0), trapezoidal(3)])
    Q = g.size
    H = rng.normal(size=(Q, 2))
    assert torch.allclose(full_apply(T(np.diag(1 / g.weights)), g, T(H)), T(H), atol=1e-13)
    W = rng.normal(size=(Q, Q))
    want = np.zeros((Q, 2))
    for q in range(Q):
        for m in range(Q):
            for i in range(2):
                want[q, i] += W[q, m] * g.weights[m] * H[m, i]
    assert np.abs(full_apply(T(W), g, T(H)).numpy() - want).max() < 1e-12
    with pytest.raises(ValueError):
        full_apply(T(np.zeros((Q - 1, Q - 1))), g, T(H))


def test_full_separable_reproduces_qr_term(rng):
    rx, ry = gauss_legendre(4, 0.0, 1.0), trapezoidal(3)
    g = tensor_grid([rx, ry])
    W1 = rng.normal(size=(4, 4))
    # delta-like second factor: identity divided by the axis weights
    W = np.kron(W1, np.diag(1.0 / ry.weights))
    H = T(rng.normal(size=(12, 2)))
    zero = torch.zeros(3, 3, dtype=torch.float64)
    assert torch.allclose(full_apply(T(W), g, H), qr_apply([T(W1), zero], g, H), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linearity(seed, a, b):
    rng = np.random.default_rng(seed)
    g = tensor_grid([periodic(8), periodic(6)])
    H1, H2 = T(rng.normal(size=(48, 2))), T(rng.normal(size=(48, 2)))
    Ws = [T(rng.normal(size=(8, 8))), T(rng.normal(size=(6, 6)))]
    cs = [torch.as_tensor(rng.normal(size=m) + 1j * rng.normal(size=m)) for m in (5, 3)]
    for f in (lambda H: qr_apply(Ws, g, H), lambda H: ft_apply(cs, g, H)):
        assert torch.allclose(f(a * H1 + b * H2), a * f(H1) + b * f(H2), atol=1e-12)


def test_qr_convergence_rate_smooth():
    # w(x, x') = exp(x x'), h = cos: analytic integral via series is avoided by a 200-node reference
    def apply(n, x_eval):
        r = gauss_legendre(n, 0.0, 1.0)
        return np.array([np.sum(r.weights * np.exp(x * r.nodes) * np.cos(3 * r.nodes)) for x in x_eval])

    xs = np.linspace(0, 1, 7)
    ref = apply(60, xs)
    errs = [np.abs(apply(n, xs) - ref).max() for n in (2, 3, 4, 5, 6)]
    # spectral convergence: the error falls by well over the algebraic O(1/n^2) rate per node added
    assert all(b < a / 10 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-7


def test_trapezoid_transform_rate():
    def err(n):
        r = trapezoidal(n, 0.0, 1.0)
        g = tensor_grid([r])
        x = r.nodes
        W = T(np.exp(np.outer(x, x)))
        out = qr_apply([W], g, T(np.cos(3 * x)[:, None]))[:, 0].numpy()
        fine = gauss_legendre(60, 0.0, 1.0)
        ref = np.array([np.sum(fine.weights * np.exp(xi * fine.nodes) * np.cos(3 * fine.nodes)) for xi in x])
        return np.abs(out - ref).max()

    ns = np.array([17, 33, 65, 129])
    errs = np.array([err(n) for n in ns])
    slope = -np.polyfit(np.log(ns - 1), np.log(errs), 1)[0]
    assert slope >= 1.9


def test_transform_gradients_match_finite_differences(rng):
    g = tensor_grid([periodic(6), periodic(4)])
    H = T(rng.normal(size=(24, 2)))
    W1 = T(rng.normal(size=(6, 6))).requires_grad_()
    W2 = T(rng.normal(size=(4, 4))).requires_grad_()
    assert torch.autograd.gradcheck(lambda a, b: qr_apply([a, b], g, H), (W1, W2), eps=1e-6, atol=1e-8, rtol=1e-5)
    c1 = torch.as_tensor(rng.normal(size=(4, 2))).requires_grad_()
    c2 = torch.as_tensor(rng.normal(size=(3, 2))).requires_grad_()
    f = lambda a, b: ft_apply([torch.view_as_complex(a), torch.view_as_complex(b)], g, H)
    assert torch.autograd.gradcheck(f, (c1, c2), eps=1e-6, atol=1e-8, rtol=1e-5)
    fp = lambda a, b: ft_apply([torch.view_as_complex(a), torch.view_as_complex(b)], g, H, pad=True)
    assert torch.autograd.gradcheck(fp, (c1, c2), eps=1e-6, atol=1e-8, rtol=1e-5)


def test_cancellation_identity_white_kernel_exact(rng):
    g = tensor_grid([gauss_legendre(8, 0.0, 1.0)])
    # a tiny lengthscale makes the Gram matrix the identity to machine precision
    k = SquaredExponential(1, 1e-4, 1.0)
    W, h = rng.normal(size=(8, 8)), rng.normal(size=8)
    lhs, rhs = cancellation_check(k, g, W, h)
    assert np.abs(lhs - rhs).max() < 1e-12


@pytest.mark.parametrize("name", ["se", "matern52", "matern132", "weighted_matern"])
def test_cancellation_identity_gl32(name, rng):
    g = tensor_grid([gauss_legendre(32, 0.0, 1.0)])
    for ell in (0.05, 0.2, 0.5):
        lhs, rhs = cancellation_check(make_kernel(name, 1, ell, 1.0), g, rng.normal(size=(32, 32)), rng.normal(size=32))
        assert np.abs(lhs - rhs).max() < 1e-6
