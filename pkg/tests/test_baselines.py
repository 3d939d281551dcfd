import numpy as np
import pytest

from dgpfm.baselines import FourierBasis, flr_fit, flr_gp, flr_gp_config, flr_objective, flr_predict
from dgpfm.data import Dataset, FunctionPair
from dgpfm.inference import TrainConfig
from dgpfm.kernels import NumericalFailure
from dgpfm.quadrature import gauss_legendre


def planted(rng, n=40, K=5, L=7, d=1, zero_out=False):
    inb, outb = FourierBasis(L, d), FourierBasis(K, d)
    omega = rng.normal(size=(1, inb.size, 1, outb.size))
    b0 = rng.normal(size=(1, outb.size))
    pairs = []
    for _ in range(n):
        x = rng.uniform(size=(60, d))
        xo = rng.uniform(size=(50, d))
        c = rng.normal(size=inb.size)
        f = inb(x) @ c
        b = b0[0] + np.einsum("lk,l->k", omega[0, :, 0], c)
        y = np.zeros(50) if zero_out else outb(xo) @ b
        pairs.append(FunctionPair(x, f, xo, y))
    return Dataset(pairs, d, 1, 1, np.array([[0.0, 1.0]] * d)), omega, b0


def test_basis_orthonormal():
    rule = gauss_legendre(64, 0.0, 1.0)
    B = FourierBasis(9)(rule.nodes)
    G = B.T @ (rule.weights[:, None] * B)
    assert np.abs(G - np.eye(9)).max() < 1e-8
    assert FourierBasis(3, 2).size == 9
    with pytest.raises(ValueError):
        FourierBasis(0)


def test_zero_outputs_give_zero_coefficients(rng):
    ds, _, _ = planted(rng, zero_out=True)
    m = flr_fit(ds, 5, 7, 1e-3)
    assert np.abs(m.omega).max() < 1e-12 and np.abs(m.intercept).max() < 1e-12


@pytest.mark.parametrize("d", [1, 2])
def test_recovers_planted_coefficients(rng, d):
    K, L = (5, 7) if d == 1 else (3, 3)
    ds, omega, b0 = planted(rng, n=60, K=K, L=L, d=d)
    m = flr_fit(ds, K, L, 1e-10)
    assert np.abs(m.omega - omega).max() < 1e-6
    assert np.abs(m.intercept - b0).max() < 1e-6


def test_ridge_shrinks_monotonically(rng):
    ds, _, _ = planted(rng)
    norms = [np.linalg.norm(flr_fit(ds, 5, 7, lam).omega) for lam in (1e-4, 1e-2, 1.0, 1e2, 1e4, 1e6)]
    assert all(a > b for a, b in zip(norms, norms[1:]))
    assert norms[-1] < 1e-2 * norms[0]


def test_rank_deficient_design_needs_ridge(rng):
    ds, _, _ = planted(rng, n=4)
    with pytest.raises(NumericalFailure):
        flr_fit(ds, 5, 7, 0.0)


@pytest.mark.parametrize("curvature", [False, True])
def test_fit_is_exact_minimizer(rng, curvature):
    ds, _, _ = planted(rng)
    ds = Dataset([FunctionPair(p.x_in, p.f_in, p.x_out, p.y_out + 0.1 * rng.normal(size=p.y_out.shape))
                  for p in ds.instances], 1, 1, 1, ds.bounds)
    m = flr_fit(ds, 5, 7, 0.3, curvature)
    base = flr_objective(m, ds, curvature)
    for _ in range(20):
        delta = 1e-4 * rng.normal(size=m.omega.shape)
        m.omega += delta
        assert flr_objective(m, ds, curvature) >= base
        m.omega -= delta


def test_prediction_examples(rng):
    ds, _, _ = planted(rng)
    m = flr_fit(ds, 5, 5, 1e-3)
    p = ds.instances[0]
    m.omega[:] = 0.0
    assert np.allclose(flr_predict(m, p)[:, 0], FourierBasis(5)(p.x_out) @ m.intercept[0])
    m.intercept[:] = 0.0
    m.omega[0, :, 0, :] = np.eye(5)
    x = np.linspace(0, 1, 80, endpoint=False)
    f = FourierBasis(5)(x)[:, 3]
    out = flr_predict(m, FunctionPair(x, f, x, np.zeros(80)))
    assert np.abs(out[:, 0] - f).max() < 1e-8


def test_prediction_linear_in_input(rng):
    ds, _, _ = planted(rng)
    m = flr_fit(ds, 5, 7, 1e-3)
    m.intercept[:] = 0.0
    x = np.sort(rng.uniform(size=30))
    xo = np.linspace(0, 1, 11)
    f1, f2 = rng.normal(size=30), rng.normal(size=30)
    P = lambda f: flr_predict(m, FunctionPair(x, f, xo, np.zeros(11)))
    assert np.allclose(P(2.0 * f1 - 3.0 * f2), 2.0 * P(f1) - 3.0 * P(f2), atol=1e-10)


def test_flr_gp_is_one_linear_layer_without_kl(rng):
    cfg = flr_gp_config()
    assert cfg.n_linear == 1 and cfg.activation == "none" and cfg.transform == "qr"
    ds, _, _ = planted(rng, n=6)
    learner, res = flr_gp(ds, TrainConfig(batch_size=3, epochs=1, lr=1e-3), nodes=16)
    assert len(learner.model.linear) == 1 and len(learner.model.activations) == 0
    assert learner.posterior.kl().item() == 0.0
    assert len(res.history) == 1
