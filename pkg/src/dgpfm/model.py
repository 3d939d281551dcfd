"""The layered functional-map model.

Data flow for one instance::

    (X_in, F) --GP regression--> F_Q on the grid --W0--> H_1
      --linear--> [--GP activation--> --linear--> ...] --W1--> grid outputs
      --GP interpolation--> U at X_out --Gaussian likelihood--> Y

Every latent layer lives on the nodes of one :class:`ProjectionGrid`. Linear
layers are discrete integral transforms (see :mod:`dgpfm.transforms`); the
nonlinear layers apply a scalar activation function drawn from a sparse GP
with whitened inducing values.

Instances are processed in padded batches (:class:`Batch`). Padded input
rows get an identity block in the input Gram matrix and zero
cross-covariance, so they contribute nothing to the posterior or to the
marginal likelihood.

Conditioning jitter is treated as a nugget of the kernel: wherever two
points coincide exactly the same jitter is added to the cross-covariance.
This keeps interpolation at the training points exact even when the Gram
matrix needs regularizing.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import transforms
from .data import FunctionPair
from .kernels import DTYPE, Kernel, cholesky, make_kernel, softplus_inverse
from .quadrature import ProjectionGrid

NOISE_FLOOR = 1e-8
LOG_2PI = math.log(2.0 * math.pi)
TRANSFORMS = ("qr", "ft", "full")
ACTIVATIONS = ("gp", "none")
MODES = ("train", "sample", "mean")


@dataclass
class ModelConfig:
    d: int = 1
    d_in: int = 1
    d_out: int = 1
    channels: int = 16
    n_linear: int = 2
    transform: str = "qr"
    modes: list[int] | None = None  # FT: retained modes per dimension (default: all)
    ft_padding: bool = False  # FT: zero-pad to twice the grid so the convolution does not wrap
    activation: str = "gp"
    inducing: int = 32
    input_kernel: str = "se"
    input_lengthscale: float = 0.1
    input_noise: float = 1e-2
    activation_kernel: str = "se"
    activation_lengthscale: float = 0.5
    activation_variance: float = 1.0
    activation_init: str = "identity"  # or "prior"
    posterior_scale: float = 1e-3
    mean_field: bool = False
    interp_kernel: str = "matern52"
    interp_lengthscale: float = 0.1
    output_noise: float = 1e-2
    weight_std: float = 1.0  # nodal weights ~ N(0, weight_std^2 / n), spectra ~ CN(0, weight_std^2 / M)
    seed: int = 0

    def validate(self) -> None:
        if self.channels < 1 or self.inducing < 1 or self.n_linear < 1:
            raise ValueError("channels, inducing and n_linear must be >= 1")
        if min(self.d, self.d_in, self.d_out) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.transform not in TRANSFORMS:
            raise ValueError(f"transform must be one of {TRANSFORMS}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if self.activation_init not in ("identity", "prior"):
            raise ValueError("activation_init must be 'identity' or 'prior'")
        if self.modes is not None and len(self.modes) != self.d:
            raise ValueError("need one mode count per dimension")

    @property
    def n_nonlinear(self) -> int:
        return self.n_linear - 1 if self.activation == "gp" else 0


# --------------------------------------------------------------------------
# Batching
# --------------------------------------------------------------------------


@dataclass
class Batch:
    x_in: torch.Tensor  # (B, N_in, d)
    f_in: torch.Tensor  # (B, N_in, d0)
    m_in: torch.Tensor  # (B, N_in) bool
    x_out: torch.Tensor  # (B, N_out, d)
    y_out: torch.Tensor  # (B, N_out, d1)
    m_out: torch.Tensor  # (B, N_out) bool
    ids: list[int] = field(default_factory=list)

    def __len__(self) -> int:
        return self.x_in.shape[0]

    @property
    def n_out(self) -> torch.Tensor:
        return self.m_out.sum(-1)


def _check_domain(x: np.ndarray, what: str) -> None:
    if np.any(x < -1e-9) or np.any(x > 1.0 + 1e-9) or not np.all(np.isfinite(x)):
        raise ValueError(f"{what} locations fall outside the normalized unit box")


def collate(pairs: Sequence[FunctionPair], ids: Sequence[int] | None = None) -> Batch:
    """Pad a list of (normalized) instances into one :class:`Batch`."""
    if len(pairs) == 0:
        raise ValueError("empty batch")
    B = len(pairs)
    ni = max(p.n_in for p in pairs)
    no = max(p.n_out for p in pairs)
    d = pairs[0].x_in.shape[1]
    x_in = np.full((B, ni, d), 0.5)
    f_in = np.zeros((B, ni, pairs[0].f_in.shape[1]))
    m_in = np.zeros((B, ni), dtype=bool)
    x_out = np.full((B, no, d), 0.5)
    y_out = np.zeros((B, no, pairs[0].y_out.shape[1]))
    m_out = np.zeros((B, no), dtype=bool)
    for b, p in enumerate(pairs):
        _check_domain(p.x_in, "input")
        _check_domain(p.x_out, "output")
        x_in[b, : p.n_in] = p.x_in
        f_in[b, : p.n_in] = p.f_in
        m_in[b, : p.n_in] = True
        x_out[b, : p.n_out] = p.x_out
        y_out[b, : p.n_out] = p.y_out
        m_out[b, : p.n_out] = True
    t = lambda a: torch.as_tensor(a, dtype=DTYPE)
    return Batch(
        t(x_in), t(f_in), torch.as_tensor(m_in), t(x_out), t(y_out), torch.as_tensor(m_out),
        list(ids) if ids is not None else list(range(B)),
    )


def repeat_batch(batch: Batch, n: int) -> Batch:
    """Each instance repeated ``n`` times consecutively (for sample ensembles)."""
    r = lambda t: t.repeat_interleave(n, dim=0)
    return Batch(r(batch.x_in), r(batch.f_in), r(batch.m_in), r(batch.x_out), r(batch.y_out), r(batch.m_out),
                 [i for i in batch.ids for _ in range(n)])


# --------------------------------------------------------------------------
# Exogenous noise
# --------------------------------------------------------------------------


@dataclass
class Noise:
    """Standard-normal draws consumed by one forward pass of a batch."""

    eta: list[torch.Tensor]  # per nonlinear layer, (B, S)
    f: torch.Tensor  # (B, Q, d0)
    act: list[torch.Tensor]  # per nonlinear layer, (B, Q, C)

    @classmethod
    def zeros(cls, shapes: dict, B: int) -> "Noise":
        z = lambda s: torch.zeros((B, *s), dtype=DTYPE)
        return cls([z(s) for s in shapes["eta"]], z(shapes["f"]), [z(s) for s in shapes["act"]])


class NoiseSource:
    """Common-random-number generator keyed by (seed, step, instance, sample).

    Each key gets its own generator, so an instance's draws do not depend on
    its position within the batch or on which other instances share it.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)

    def _generator(self, key: Sequence[int]) -> torch.Generator:
        state = np.random.SeedSequence([self.seed, *[int(k) for k in key]]).generate_state(2, np.uint32)
        g = torch.Generator()
        g.manual_seed(int(state[0]) << 31 | int(state[1]) >> 1)
        return g

    def draw(self, shapes: dict, keys: Sequence[Sequence[int]]) -> Noise:
        eta, f, act = [], [], []
        for key in keys:
            g = self._generator(key)
            n = lambda s: torch.randn(s, generator=g, dtype=DTYPE)
            eta.append([n(s) for s in shapes["eta"]])
            f.append(n(shapes["f"]))
            act.append([n(s) for s in shapes["act"]])
        return Noise(
            [torch.stack([e[l] for e in eta]) for l in range(len(shapes["eta"]))],
            torch.stack(f),
            [torch.stack([a[l] for a in act]) for l in range(len(shapes["act"]))],
        )


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------


def add_nugget(cross: torch.Tensor, x1: torch.Tensor, x2: torch.Tensor, jitter) -> torch.Tensor:
    """Add ``jitter`` to cross-covariance entries whose two points coincide exactly."""
    if x1.shape[-1] == 1:
        same = x1[..., 0].unsqueeze(-1) == x2[..., 0].unsqueeze(-2)
    else:
        same = (x1.unsqueeze(-2) == x2.unsqueeze(-3)).all(-1)
    if not bool(same.any()):
        return cross
    jit = torch.as_tensor(jitter, dtype=cross.dtype)
    while jit.ndim < cross.ndim:
        jit = jit.unsqueeze(-1)
    return cross + same.to(cross.dtype) * jit


class InputEncoder(nn.Module):
    """GP regression of each input component onto the projection grid."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.kernels = nn.ModuleList(
            make_kernel(cfg.input_kernel, cfg.d, cfg.input_lengthscale) for _ in range(cfg.d_in)
        )
        self.raw_noise = nn.Parameter(torch.as_tensor(softplus_inverse(np.full(cfg.d_in, cfg.input_noise)), dtype=DTYPE))

    @property
    def noise(self) -> torch.Tensor:
        return NOISE_FLOOR + F.softplus(self.raw_noise)

    def posterior(self, j: int, batch: Batch, XQ: torch.Tensor):
        """Mean ``(B, Q)``, covariance ``(B, Q, Q)`` and log marginal ``(B,)`` of component ``j``."""
        k = self.kernels[j]
        mask = batch.m_in
        mf = mask.to(DTYPE)
        B, N = mask.shape
        K = k(batch.x_in, batch.x_in)
        K = 0.5 * (K + K.transpose(-1, -2))
        K = K * mf[:, :, None] * mf[:, None, :]
        eye = torch.eye(N, dtype=DTYPE)
        K = K + eye * (self.noise[j] * mf + (1.0 - mf))[:, None, :]
        L, jit = cholesky(K, mask)
        cross = add_nugget(k(XQ, batch.x_in), XQ, batch.x_in, jit) * mf[:, None, :]  # (B, Q, N)
        f = batch.f_in[..., j] * mf
        alpha = torch.cholesky_solve(f.unsqueeze(-1), L)
        mean = (cross @ alpha).squeeze(-1)
        V = torch.linalg.solve_triangular(L, cross.transpose(-1, -2), upper=False)
        Kqq = k(XQ, XQ)
        Kqq = 0.5 * (Kqq + Kqq.transpose(-1, -2))
        Q = XQ.shape[0]
        cov = Kqq + jit[:, None, None] * torch.eye(Q, dtype=DTYPE) - V.transpose(-1, -2) @ V
        cov = 0.5 * (cov + cov.transpose(-1, -2))
        logdet = 2.0 * (torch.log(torch.diagonal(L, dim1=-2, dim2=-1)) * mf).sum(-1)
        logp = -0.5 * (f * alpha.squeeze(-1)).sum(-1) - 0.5 * logdet - 0.5 * mf.sum(-1) * LOG_2PI
        return mean, cov, logp

    def forward(self, batch: Batch, XQ: torch.Tensor, eps: torch.Tensor | None):
        """Grid values ``(B, Q, d0)`` (sampled unless ``eps`` is None) and ``log p(F)`` ``(B,)``."""
        cols, logp = [], 0.0
        for j in range(len(self.kernels)):
            mean, cov, lp = self.posterior(j, batch, XQ)
            logp = logp + lp
            if eps is None:
                cols.append(mean)
            else:
                Ls, _ = cholesky(cov)
                cols.append(mean + (Ls @ eps[..., j].unsqueeze(-1)).squeeze(-1))
        return torch.stack(cols, dim=-1), logp


class LinearLayer(nn.Module):
    """One discrete integral transform, applied to every channel."""

    def __init__(self, grid: ProjectionGrid, kind: str, modes: Sequence[int] | None,
                 weight_std: float, gen: torch.Generator, pad: bool = False):
        super().__init__()
        self.kind = kind
        self.grid = grid
        self.pad = pad
        if kind == "qr":
            ws = []
            for rule in grid.rules:
                n = len(rule)
                ws.append(nn.Parameter(torch.randn(n, n, generator=gen, dtype=DTYPE) * (weight_std / math.sqrt(n))))
            self.weights = nn.ParameterList(ws)
        elif kind == "ft":
            if not grid.equispaced:
                raise transforms.UnsupportedGrid("Fourier transform layers need an equispaced projection grid")
            specs = []
            for j, n in enumerate(grid.shape):
                top = transforms.spectrum_length(2 * n if pad else n)
                m = top if modes is None else int(modes[j])
                if not 1 <= m <= top:
                    raise ValueError(f"mode count {m} outside [1, {top}]")
                # complex N(0, weight_std^2 / M): real and imaginary parts each carry half
                specs.append(nn.Parameter(torch.randn(m, 2, generator=gen, dtype=DTYPE) * (weight_std / math.sqrt(2 * m))))
            self.spectra = nn.ParameterList(specs)
        elif kind == "full":
            Q = grid.size
            if Q > transforms.MAX_FULL_NODES:
                raise ValueError(f"full transform limited to {transforms.MAX_FULL_NODES} nodes")
            self.weight = nn.Parameter(torch.randn(Q, Q, generator=gen, dtype=DTYPE) * (weight_std / math.sqrt(Q)))
        else:
            raise ValueError(f"unknown transform {kind!r}")

    def forward(self, H: torch.Tensor) -> torch.Tensor:
        if self.kind == "qr":
            return transforms.qr_apply(list(self.weights), self.grid, H)
        if self.kind == "ft":
            return transforms.ft_apply([torch.view_as_complex(s) for s in self.spectra], self.grid, H, self.pad)
        return transforms.full_apply(self.weight, self.grid, H)


class GPActivation(nn.Module):
    """Elementwise activation drawn from a sparse GP with whitened inducing values.

    For a latent value ``z`` and whitened inducing values ``eta`` the
    conditional mean is ``k(z, beta) A^{-T} eta`` and the conditional variance
    ``k(z, z) - |A^{-1} k(beta, z)|^2``, with ``A A^T = k(beta, beta)``.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.kernel = make_kernel(cfg.activation_kernel, 1, cfg.activation_lengthscale, cfg.activation_variance)
        beta = np.unique(np.linspace(-3.0, 3.0, cfg.inducing))
        self.beta = nn.Parameter(torch.as_tensor(beta, dtype=DTYPE))

    @property
    def num_inducing(self) -> int:
        return self.beta.shape[0]

    def prior_factor(self) -> tuple[torch.Tensor, torch.Tensor]:
        b = self.beta.unsqueeze(-1)
        K = self.kernel(b, b)
        return cholesky(0.5 * (K + K.T))

    def moments(self, z: torch.Tensor, eta: torch.Tensor):
        """Conditional mean and variance for latent values ``z`` ``(B, ...)`` and ``eta`` ``(B, S)``."""
        A, jit = self.prior_factor()
        S = A.shape[0]
        Ainv = torch.linalg.solve_triangular(A, torch.eye(S, dtype=DTYPE), upper=False)
        B = z.shape[0]
        flat = z.reshape(B, -1, 1)
        b = self.beta.unsqueeze(-1)
        Kzb = add_nugget(self.kernel(flat, b), flat, b, jit)  # (B, M, S)
        w = eta @ Ainv  # rows of A^{-T} eta
        mean = (Kzb @ w.unsqueeze(-1)).squeeze(-1)
        var = self.kernel.diag(flat) + jit - ((Kzb @ (Ainv.T @ Ainv)) * Kzb).sum(-1)
        return mean.reshape(z.shape), var.reshape(z.shape)

    def forward(self, z: torch.Tensor, eta: torch.Tensor, eps: torch.Tensor | None) -> torch.Tensor:
        mean, var = self.moments(z, eta)
        if eps is None:
            return mean
        # a tiny floor keeps the square root differentiable at exact inducing inputs
        return mean + torch.sqrt(torch.clamp(var, min=1e-12)) * eps

    def identity_eta(self) -> torch.Tensor:
        """Whitened values whose conditional mean interpolates ``a(beta) = beta``."""
        with torch.no_grad():
            A, _ = self.prior_factor()
            return torch.linalg.solve_triangular(A, self.beta.unsqueeze(-1), upper=False).squeeze(-1)


class OutputHead(nn.Module):
    """Grid-to-location GP interpolation and the Gaussian likelihood."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.kernel = make_kernel(cfg.interp_kernel, cfg.d, cfg.interp_lengthscale)
        # the interpolant is invariant to an overall kernel scale (jitter is relative),
        # so a trainable variance would only collect roundoff gradients
        for name, p in self.kernel.named_parameters():
            if name.endswith("raw_variance"):
                p.requires_grad_(False)
        self.raw_noise = nn.Parameter(torch.as_tensor(softplus_inverse(np.full(cfg.d_out, cfg.output_noise)), dtype=DTYPE))

    @property
    def noise(self) -> torch.Tensor:
        return NOISE_FLOOR + F.softplus(self.raw_noise)

    def interpolate(self, G: torch.Tensor, XQ: torch.Tensor, x_out: torch.Tensor) -> torch.Tensor:
        """``c(X_out, X_Q) c(X_Q, X_Q)^{-1} G`` for ``G`` of shape ``(B, Q, k)``."""
        K = self.kernel(XQ, XQ)
        L, jit = cholesky(0.5 * (K + K.T))
        B, Q, k = G.shape
        sol = torch.cholesky_solve(G.transpose(0, 1).reshape(Q, B * k), L).reshape(Q, B, k).transpose(0, 1)
        cross = add_nugget(self.kernel(x_out, XQ), x_out, XQ, jit)
        return cross @ sol


def log_likelihood(U: torch.Tensor, Y: torch.Tensor, v: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """``sum log N(y | u, v_i)`` over locations and components; one value per batch element."""
    v = torch.as_tensor(v, dtype=DTYPE)
    r = Y - U
    ll = -0.5 * (LOG_2PI + torch.log(v) + r * r / v)
    if mask is not None:
        ll = ll * mask.to(DTYPE).unsqueeze(-1)
    return ll.sum((-1, -2))


class DGPFM(nn.Module):
    """Deep GP functional map on a fixed projection grid."""

    def __init__(self, cfg: ModelConfig, grid: ProjectionGrid):
        super().__init__()
        cfg.validate()
        if grid.dim != cfg.d:
            raise ValueError("grid dimension does not match the model")
        self.cfg = cfg
        self.grid = grid
        self.register_buffer("XQ", torch.tensor(grid.nodes, dtype=DTYPE), persistent=False)
        gen = torch.Generator().manual_seed(cfg.seed)
        self.encoder = InputEncoder(cfg)
        C = cfg.channels
        self.W0 = nn.Parameter(torch.randn(cfg.d_in, C, generator=gen, dtype=DTYPE) / math.sqrt(cfg.d_in))
        self.linear = nn.ModuleList(
            LinearLayer(grid, cfg.transform, cfg.modes, cfg.weight_std, gen, cfg.ft_padding) for _ in range(cfg.n_linear)
        )
        self.activations = nn.ModuleList(GPActivation(cfg) for _ in range(cfg.n_nonlinear))
        self.W1 = nn.Parameter(torch.randn(C, cfg.d_out, generator=gen, dtype=DTYPE) / math.sqrt(C))
        self.head = OutputHead(cfg)

    def noise_shapes(self) -> dict:
        Q, C = self.grid.size, self.cfg.channels
        return {
            "eta": [(a.num_inducing,) for a in self.activations],
            "f": (Q, self.cfg.d_in),
            "act": [(Q, C) for _ in self.activations],
        }

    def forward(self, batch: Batch, eta: Sequence[torch.Tensor], noise: Noise | None, mode: str = "train"):
        """Outputs ``U`` ``(B, N_out, d1)`` and ``log p(F)`` ``(B,)``.

        ``eta`` holds the whitened inducing values of each nonlinear layer,
        one row per batch element. ``train`` and ``sample`` draw the grid
        inputs and activation noise from ``noise``; ``mean`` uses the input
        posterior mean and the activation mean.
        """
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if len(eta) != len(self.activations):
            raise ValueError("need one inducing-value block per nonlinear layer")
        stochastic = mode != "mean"
        if stochastic and noise is None:
            raise ValueError("sampling modes need a noise draw")
        FQ, logp = self.encoder(batch, self.XQ, noise.f if stochastic else None)
        H = FQ @ self.W0
        for l, lin in enumerate(self.linear):
            H = lin(H)
            if l < len(self.activations):
                H = self.activations[l](H, eta[l], noise.act[l] if stochastic else None)
        G = H @ self.W1
        U = self.head.interpolate(G, self.XQ, batch.x_out)
        return U, logp
