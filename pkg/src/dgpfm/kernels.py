"""Stationary covariance functions and numerically safe Cholesky helpers.

Every kernel is a :class:`torch.nn.Module` whose trainable hyperparameters are
stored unconstrained and mapped through softplus, so any real value of the raw
parameter yields a valid (positive) lengthscale, variance or mixture weight.

Inputs follow the ``(..., n, d)`` convention; a kernel call on ``x1`` with
shape ``(..., n, d)`` and ``x2`` with shape ``(..., m, d)`` returns
``(..., n, m)``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

DTYPE = torch.float64

#: Jitter ladder, as multiples of the mean diagonal of the matrix.
JITTER_LADDER = (1e-8, 1e-6, 1e-4)


class NumericalFailure(RuntimeError):
    """A factorization failed even at the largest jitter on the ladder."""

    def __init__(self, message: str, jitter: float | None = None):
        super().__init__(message)
        self.jitter = jitter


def as_tensor(x) -> torch.Tensor:
    if isinstance(x, np.ndarray) and not x.flags.writeable:
        x = x.copy()
    return torch.as_tensor(x, dtype=DTYPE)


def softplus_inverse(y: float | np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("softplus inverse needs positive values")
    # log(expm1(y)) without overflow for large y
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


def _raw(value, size: int | None = None) -> nn.Parameter:
    arr = softplus_inverse(value)
    if size is not None:
        arr = np.broadcast_to(arr, (size,)).copy()
    return nn.Parameter(torch.as_tensor(arr, dtype=DTYPE))


class Kernel(nn.Module):
    """Base class; subclasses implement :meth:`forward` and :meth:`diag`."""

    input_dim: int

    def forward(self, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
        raise NotImplementedError

    def diag(self, x: torch.Tensor) -> torch.Tensor:
        """k(x_i, x_i) for each row, shape ``(..., n)``."""
        raise NotImplementedError

    @property
    def total_variance(self) -> torch.Tensor:
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError


class Stationary(Kernel):
    """Shared ARD lengthscale / variance plumbing for stationary kernels."""

    def __init__(self, input_dim: int = 1, lengthscale=1.0, variance=1.0):
        super().__init__()
        if input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        self.input_dim = input_dim
        self.raw_lengthscale = _raw(lengthscale, input_dim)
        self.raw_variance = _raw(variance)

    @property
    def lengthscale(self) -> torch.Tensor:
        return F.softplus(self.raw_lengthscale)

    @property
    def variance(self) -> torch.Tensor:
        return F.softplus(self.raw_variance)

    @property
    def total_variance(self) -> torch.Tensor:
        return self.variance

    def _check(self, x: torch.Tensor) -> None:
        if x.shape[-1] != self.input_dim:
            raise ValueError(
                f"point dimension {x.shape[-1]} does not match kernel input_dim {self.input_dim}"
            )

    def scaled_sqdist(self, x1: torch.Tensor, x2: torch.Tensor) -> torch.Tensor:
        # Difference form keeps k(x, x') == k(x', x) bit for bit.
        self._check(x1)
        self._check(x2)
        ell = self.lengthscale
        a = x1 / ell
        b = x2 / ell
        if self.input_dim == 1:
            diff = a[..., 0].unsqueeze(-1) - b[..., 0].unsqueeze(-2)
            return diff * diff
        diff = a.unsqueeze(-2) - b.unsqueeze(-3)
        return (diff * diff).sum(-1)

    def profile(self, r2: torch.Tensor) -> torch.Tensor:
        """Unit-variance correlation as a function of the scaled squared distance."""
        raise NotImplementedError

    def forward(self, x1, x2):
        return self.variance * self.profile(self.scaled_sqdist(x1, x2))

    def diag(self, x):
        self._check(x)
        return self.variance.expand(x.shape[:-1]).clone()


class SquaredExponential(Stationary):
    """k(r) = s2 * exp(-r^2 / 2) with r the lengthscale-scaled distance."""

    def profile(self, r2):
        return torch.exp(-0.5 * r2)

    def describe(self):
        return {"family": "se", "input_dim": self.input_dim}


def matern_polynomial_coefficients(p: int) -> list[float]:
    """Coefficients c_i of ``sum_i c_i (2 sqrt(2p+1) r)^(p-i)`` for nu = p + 1/2.

    c_i = p! / (2p)! * (p+i)! / (i! (p-i)!), indexed by i = 0..p.
    """
    return [
        math.factorial(p) / math.factorial(2 * p)
        * math.factorial(p + i) / (math.factorial(i) * math.factorial(p - i))
        for i in range(p + 1)
    ]


class Matern(Stationary):
    """Half-integer Matérn kernel, nu = p + 1/2, in closed form.

    ``p=2`` gives nu=5/2 and ``p=6`` gives nu=13/2.
    """

    def __init__(self, input_dim: int = 1, lengthscale=1.0, variance=1.0, p: int = 2):
        super().__init__(input_dim, lengthscale, variance)
        if p < 0:
            raise ValueError("p must be a non-negative integer")
        self.p = int(p)
        self._coef = matern_polynomial_coefficients(self.p)

    @property
    def nu(self) -> float:
        return self.p + 0.5

    def profile(self, r2):
        # clamp keeps d sqrt / d r2 finite at r = 0; the value there still rounds to 1
        r = torch.sqrt(torch.clamp(r2, min=1e-36))
        s = math.sqrt(2 * self.p + 1) * r
        z = 2.0 * s
        poly = torch.zeros_like(r)
        # Horner over descending powers of z: power p-i for i = 0..p
        for c in self._coef:
            poly = poly * z + c
        return poly * torch.exp(-s)

    def describe(self):
        return {"family": "matern", "p": self.p, "input_dim": self.input_dim}


class WeightedSum(Kernel):
    """Positive (softplus) weighted combination of member kernels."""

    def __init__(self, members: Sequence[Kernel], weights: Sequence[float]):
        super().__init__()
        if len(members) == 0 or len(members) != len(weights):
            raise ValueError("need one weight per member and at least one member")
        dims = {m.input_dim for m in members}
        if len(dims) != 1:
            raise ValueError("members must share input_dim")
        self.input_dim = dims.pop()
        self.members = nn.ModuleList(members)
        self.raw_weights = _raw(np.maximum(np.asarray(weights, dtype=np.float64), 1e-300))
        fixed_zero = [float(w) == 0.0 for w in weights]
        # an exact zero weight is honoured (softplus can never reach 0)
        self._zero_mask = torch.tensor(fixed_zero)

    @property
    def weights(self) -> torch.Tensor:
        w = F.softplus(self.raw_weights)
        return torch.where(self._zero_mask, torch.zeros_like(w), w)

    @property
    def total_variance(self):
        w = self.weights
        return sum(w[i] * m.total_variance for i, m in enumerate(self.members))

    def forward(self, x1, x2):
        w = self.weights
        return sum(w[i] * m(x1, x2) for i, m in enumerate(self.members))

    def diag(self, x):
        w = self.weights
        return sum(w[i] * m.diag(x) for i, m in enumerate(self.members))

    def describe(self):
        return {
            "family": "weighted_sum",
            "members": [m.describe() for m in self.members],
            "fixed_zero": [bool(z) for z in self._zero_mask],
        }


KERNEL_CHOICES = ("se", "matern52", "matern132", "weighted_matern")


def make_kernel(name: str, input_dim: int = 1, lengthscale=1.0, variance=1.0) -> Kernel:
    """Build a kernel by configuration name.

    ``weighted_matern`` is the Matérn 5/2 + 13/2 mixture, each member with its
    own lengthscale, starting from equal weights of 1/2.
    """
    if name == "se":
        return SquaredExponential(input_dim, lengthscale, variance)
    if name == "matern52":
        return Matern(input_dim, lengthscale, variance, p=2)
    if name == "matern132":
        return Matern(input_dim, lengthscale, variance, p=6)
    if name == "weighted_matern":
        return WeightedSum(
            [Matern(input_dim, lengthscale, variance, p=2), Matern(input_dim, lengthscale, variance, p=6)],
            [0.5, 0.5],
        )
    raise ValueError(f"unknown kernel {name!r}; choose from {KERNEL_CHOICES}")


def kernel_from_description(desc: dict) -> Kernel:
    family = desc["family"]
    if family == "se":
        return SquaredExponential(desc["input_dim"])
    if family == "matern":
        return Matern(desc["input_dim"], p=desc["p"])
    if family == "weighted_sum":
        members = [kernel_from_description(m) for m in desc["members"]]
        zero = desc.get("fixed_zero", [False] * len(members))
        return WeightedSum(members, [0.0 if z else 1.0 for z in zero])
    raise ValueError(f"unknown kernel family {family!r}")


def _points(x) -> torch.Tensor:
    t = as_tensor(x)
    if t.ndim == 0:
        t = t.reshape(1, 1)
    elif t.ndim == 1:
        t = t.reshape(-1, 1)
    return t


def eval_kernel(k: Kernel, x, x_prime) -> float:
    """Evaluate ``k(x, x')`` for two single points."""
    a = as_tensor(x).reshape(1, -1)
    b = as_tensor(x_prime).reshape(1, -1)
    if a.shape[-1] != b.shape[-1] or a.shape[-1] != k.input_dim:
        raise ValueError("point dimensions do not match the kernel")
    return float(k(a, b)[0, 0].detach())


def cov_matrix(k: Kernel, X, X_prime=None) -> torch.Tensor:
    """Gram matrix ``K[i, j] = k(X_i, X'_j)``.

    Lists of scalars are read as 1-d points. With ``X_prime`` omitted (or the
    same object) the result is symmetric by construction.
    """
    a = _points(X) if not isinstance(X, torch.Tensor) else X
    if a.shape[-2] == 0:
        raise ValueError("empty point list")
    if X_prime is None or X_prime is X:
        K = k(a, a)
        return 0.5 * (K + K.transpose(-1, -2))
    b = _points(X_prime) if not isinstance(X_prime, torch.Tensor) else X_prime
    if b.shape[-2] == 0:
        raise ValueError("empty point list")
    return k(a, b)


def cholesky(K: torch.Tensor, mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
    """Jittered lower Cholesky factor with per-matrix escalation.

    Works on batches ``(..., n, n)``. Each matrix independently climbs the
    jitter ladder until its factorization succeeds. ``mask`` (``(..., n)``,
    boolean) marks the real rows of a padded batch: the mean diagonal is taken
    over real rows only and jitter is only added there.

    Returns ``(L, jitter)`` where ``jitter`` holds the absolute amount added
    to the (real) diagonal of each matrix.
    """
    n = K.shape[-1]
    diag = torch.diagonal(K, dim1=-2, dim2=-1)
    if mask is None:
        where = torch.ones(diag.shape, dtype=K.dtype)
    else:
        where = mask.to(K.dtype).expand(diag.shape)
    with torch.no_grad():
        scale = (diag * where).sum(-1) / where.sum(-1).clamp(min=1.0)
        scale = scale.abs().clamp(min=1e-300)
        ladder = torch.as_tensor(JITTER_LADDER, dtype=K.dtype)
        level = torch.zeros(K.shape[:-2], dtype=torch.long)
        while True:
            jit = scale * ladder[level]
            _, info = torch.linalg.cholesky_ex(K + torch.diag_embed(jit[..., None] * where))
            failed = info > 0
            if not bool(failed.any()):
                break
            if bool((level[failed] >= len(JITTER_LADDER) - 1).any()):
                worst = float(jit[failed].max())
                raise NumericalFailure(
                    f"Cholesky failed at maximum jitter {worst:.3e}", jitter=worst
                )
            level = torch.where(failed, level + 1, level)
    # recompute outside no_grad so the factor carries gradients
    L = torch.linalg.cholesky(K + torch.diag_embed(jit[..., None] * where))
    return L, jit


def chol_solve(K, B, refine: bool = True) -> torch.Tensor:
    """Solve ``K X = B`` via the escalating-jitter Cholesky.

    The returned ``X`` solves ``(K + jitter I) X = B``. When the smallest
    jitter sufficed, ``refine`` adds up to two steps of iterative refinement
    against ``K`` itself (kept only while they shrink the residual), which
    removes the jitter bias on well-conditioned systems.
    """
    K = as_tensor(K) if not isinstance(K, torch.Tensor) else K
    B = as_tensor(B) if not isinstance(B, torch.Tensor) else B
    if K.shape[-1] != K.shape[-2]:
        raise ValueError("K must be square")
    vector = B.ndim == K.ndim - 1
    if vector:
        B = B.unsqueeze(-1)
    if B.shape[-2] != K.shape[-1]:
        raise ValueError("row count of B does not match K")
    L, jit = cholesky(K)
    X = torch.cholesky_solve(B, L)
    scale = torch.diagonal(K, dim1=-2, dim2=-1).mean(-1).abs()
    if refine and bool((jit <= JITTER_LADDER[0] * scale * (1 + 1e-12)).all()):
        resid = B - K @ X
        for _ in range(2):
            step = torch.cholesky_solve(resid, L)
            if float(step.norm()) > 1e-3 * float(X.norm()):
                break
            X = X + step
            resid = B - K @ X
    return X.squeeze(-1) if vector else X
