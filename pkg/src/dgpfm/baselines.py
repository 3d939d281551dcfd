"""Functional linear regression baselines.

* FLR-Fourier: both functions are expanded in a Fourier basis and the
  coefficient vectors are related by ridge-regularized linear regression,
  ``b = b0 + Omega^T c``, which corresponds to the kernel
  ``w(x, x') = sum_kl omega_kl phi_k(x) psi_l(x')`` plus an intercept function.
* FLR-GP: the GP model restricted to a single Gauss-Legendre quadrature
  layer and no activation, trained by the same variational machinery.

FLR-Fourier expects coordinates already mapped to the unit box.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from . import metrics
from .data import Dataset, FunctionPair, Normalizer
from .inference import Learner, PredictiveSummary, TrainConfig, TrainResult, train
from .kernels import NumericalFailure
from .model import DGPFM, ModelConfig
from .quadrature import make_rule, tensor_grid

MAX_TERMS = 10_000


@dataclass(frozen=True)
class FourierBasis:
    """``1, sqrt2 cos(2 pi x), sqrt2 sin(2 pi x), sqrt2 cos(4 pi x), ...`` on the unit interval.

    ``K`` functions per dimension, orthonormal under the uniform measure; in
    ``d`` dimensions the basis is the tensor product (``K**d`` functions,
    first dimension slowest).
    """

    K: int
    d: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")

    @property
    def size(self) -> int:
        return self.K**self.d

    def frequencies_1d(self) -> np.ndarray:
        return (np.arange(self.K) + 1) // 2

    def frequencies(self) -> np.ndarray:
        """Integer frequency of every basis function along each dimension, ``(size, d)``."""
        f = self.frequencies_1d()
        mesh = np.meshgrid(*[f] * self.d, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def evaluate_1d(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(x.shape + (self.K,))
        out[..., 0] = 1.0
        for k in range(1, self.K):
            j = (k + 1) // 2
            trig = np.cos if k % 2 == 1 else np.sin
            out[..., k] = np.sqrt(2.0) * trig(2.0 * np.pi * j * x)
        return out

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[1] != self.d:
            raise ValueError("point dimension does not match the basis")
        out = self.evaluate_1d(X[:, 0])
        for j in range(1, self.d):
            out = (out[:, :, None] * self.evaluate_1d(X[:, j])[:, None, :]).reshape(len(X), -1)
        return out


def project(basis: FourierBasis, X, values, ridge: float = 1e-10) -> np.ndarray:
    """Basis coefficients of sampled values by (lightly) regularized least squares."""
    Phi = basis(X)
    values = np.asarray(values, dtype=np.float64)
    A = Phi.T @ Phi + ridge * np.eye(basis.size)
    return np.linalg.solve(A, Phi.T @ values)


@dataclass
class FlrModel:
    in_basis: FourierBasis
    out_basis: FourierBasis
    omega: np.ndarray  # (d0, L, d1, K): input coefficient -> output coefficient
    intercept: np.ndarray  # (d1, K)
    lam: float
    noise_var: np.ndarray  # (d1,) training residual variance

    def arrays(self) -> list[tuple[str, np.ndarray]]:
        return [("omega", self.omega), ("intercept", self.intercept), ("noise_var", self.noise_var)]


def _design(ds: Dataset, in_basis: FourierBasis) -> np.ndarray:
    # one row per instance: all input coefficients of all components
    return np.stack([project(in_basis, p.x_in, p.f_in).T.ravel() for p in ds.instances])


def _penalty_weights(in_basis: FourierBasis, out_basis: FourierBasis, d0: int, curvature: bool) -> np.ndarray:
    """Ridge weight of each (input coefficient, output coefficient) pair, shape ``(d0 * L, K)``."""
    L, K = in_basis.size, out_basis.size
    if not curvature:
        return np.ones((d0 * L, K))
    fin = (in_basis.frequencies() ** 4).sum(-1).astype(float)
    fout = (out_basis.frequencies() ** 4).sum(-1).astype(float)
    w = 1.0 + fin[:, None] + fout[None, :]
    return np.tile(w, (d0, 1))


def flr_fit(train: Dataset, K: int, L: int, lam: float, curvature: bool = False) -> FlrModel:
    """Fit FLR-Fourier with ``K`` output and ``L`` input basis functions per dimension.

    Minimizes ``sum_i |b_i - b0 - Omega^T c_i|^2 + lam * sum w_kl omega_kl^2``
    (intercept unpenalized). ``curvature`` weights each coefficient by
    ``1 + f_in^4 + f_out^4``, the diagonal form of a second-derivative penalty
    in a Fourier basis.
    """
    if lam < 0:
        raise ValueError("lam must be non-negative")
    if train.d > 2:
        raise ValueError("FLR-Fourier supports 1-d and 2-d domains")
    in_basis, out_basis = FourierBasis(L, train.d), FourierBasis(K, train.d)
    if in_basis.size * out_basis.size > MAX_TERMS:
        raise ValueError(f"K*L exceeds {MAX_TERMS}")
    d0, d1 = train.d_in, train.d_out
    C = _design(train, in_basis)  # (n, d0*L)
    Bout = np.stack([project(out_basis, p.x_out, p.y_out).T.ravel() for p in train.instances])  # (n, d1*K)
    n, P = C.shape
    Z = np.hstack([np.ones((n, 1)), C])
    if lam == 0.0 and np.linalg.matrix_rank(Z) < P + 1:
        raise NumericalFailure("rank-deficient FLR design with lam = 0; use lam > 0")
    ZtZ = Z.T @ Z
    ZtB = Z.T @ Bout
    W = _penalty_weights(in_basis, out_basis, d0, curvature)
    theta = np.empty((P + 1, d1 * out_basis.size))
    for col in range(theta.shape[1]):
        D = np.zeros(P + 1)
        D[1:] = lam * W[:, col % out_basis.size]
        theta[:, col] = np.linalg.solve(ZtZ + np.diag(D), ZtB[:, col])
    omega = theta[1:].reshape(d0, in_basis.size, d1, out_basis.size)
    intercept = theta[0].reshape(d1, out_basis.size)
    model = FlrModel(in_basis, out_basis, omega, intercept, float(lam), np.ones(d1))
    resid = np.concatenate([flr_predict(model, p) - p.y_out for p in train.instances])
    model.noise_var = np.maximum(resid.var(axis=0), 1e-12)
    return model


def flr_objective(model: FlrModel, train: Dataset, curvature: bool = False) -> float:
    """The regularized least-squares objective minimized by :func:`flr_fit`."""
    C = _design(train, model.in_basis)
    Bout = np.stack([project(model.out_basis, p.x_out, p.y_out).T.ravel() for p in train.instances])
    d0, d1 = train.d_in, train.d_out
    Om = model.omega.reshape(d0 * model.in_basis.size, d1 * model.out_basis.size)
    pred = model.intercept.ravel()[None, :] + C @ Om
    W = np.tile(_penalty_weights(model.in_basis, model.out_basis, d0, curvature), (1, d1))
    return float(((pred - Bout) ** 2).sum() + model.lam * (W * Om**2).sum())


def flr_predict(model: FlrModel, instance: FunctionPair) -> np.ndarray:
    """Predicted output values ``(N_out, d1)`` at the instance's output locations."""
    c = project(model.in_basis, instance.x_in, instance.f_in)  # (L, d0)
    b = model.intercept + np.einsum("jlik,lj->ik", model.omega, c)  # (d1, K)
    return model.out_basis(instance.x_out) @ b.T


def flr_summary(model: FlrModel, instance: FunctionPair) -> PredictiveSummary:
    """Deterministic prediction wrapped with the training residual variance as noise."""
    mean = flr_predict(model, instance)
    return PredictiveSummary(mean, np.sqrt(np.broadcast_to(model.noise_var, mean.shape)), mean[None], model.noise_var)


def flr_evaluate(model: FlrModel, ds: Dataset, norm: Normalizer, levels=(0.68, 0.95)) -> metrics.EvalReport:
    """Metrics of FLR-Fourier on a normalized dataset, in raw units."""
    t0 = time.perf_counter()
    preds = [flr_summary(model, p).denormalize(norm) for p in ds.instances]
    truths = [norm.y_inverse(p.y_out) for p in ds.instances]
    return metrics.report(preds, truths, levels=levels, seconds=time.perf_counter() - t0)


def flr_gp_config(base: ModelConfig | None = None) -> ModelConfig:
    """One Gauss-Legendre quadrature layer, no activation."""
    base = base or ModelConfig()
    return replace(base, n_linear=1, transform="qr", activation="none")


def flr_gp(train_ds: Dataset, cfg: TrainConfig, model_cfg: ModelConfig | None = None, nodes: int = 64,
           val: Dataset | None = None, norm: Normalizer | None = None) -> tuple[Learner, TrainResult]:
    """Build and train FLR-GP on a normalized dataset."""
    mcfg = flr_gp_config(model_cfg)
    mcfg = replace(mcfg, d=train_ds.d, d_in=train_ds.d_in, d_out=train_ds.d_out)
    grid = tensor_grid([make_rule("gauss_legendre", nodes, 0.0, 1.0) for _ in range(train_ds.d)])
    learner = Learner(DGPFM(mcfg, grid))
    return learner, train(learner, train_ds, cfg, val=val, norm=norm)
