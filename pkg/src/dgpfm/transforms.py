"""Discrete integral transforms acting on latent fields over the projection grid.

A latent field is a tensor of shape ``(..., Q, C)``: ``Q`` grid nodes in the
row-major order of :class:`~dgpfm.quadrature.ProjectionGrid`, ``C`` channels,
and any number of leading batch dimensions. The same transform is applied to
every channel.

Three transforms are provided:

* :func:`qr_apply` -- dimension-wise quadrature: for each axis ``j`` the nodal
  weight matrix ``W_j`` is contracted against that axis after scaling by the 1-d
  quadrature weights, and the per-axis results are summed.
* :func:`ft_apply` -- dimension-wise Fourier convolution on equispaced grids:
  real FFT along each axis, multiply the lowest modes by a learned spectrum,
  inverse FFT, and sum over axes.
* :func:`full_apply` -- the non-separable transform ``W diag(alpha) h`` with a
  dense ``Q x Q`` weight matrix.

FFT convention: unnormalized forward transform, ``1/n`` on the inverse
(``torch.fft.rfft`` / ``irfft`` defaults). A spectrum of ones over all
``n // 2 + 1`` modes is therefore the identity.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import torch

from .kernels import DTYPE, Kernel, as_tensor, cholesky
from .quadrature import ProjectionGrid

MAX_FULL_NODES = 4096


class UnsupportedGrid(ValueError):
    """The requested transform cannot run on this projection grid."""


def _check_field(H: torch.Tensor, grid: ProjectionGrid) -> None:
    if H.ndim < 2 or H.shape[-2] != grid.size:
        raise ValueError(f"field has {H.shape[-2] if H.ndim >= 2 else '?'} nodes, grid has {grid.size}")


def _axis_view(H: torch.Tensor, grid: ProjectionGrid) -> torch.Tensor:
    return H.reshape(*H.shape[:-2], *grid.shape, H.shape[-1])


def qr_apply(weights: Sequence[torch.Tensor], grid: ProjectionGrid, H: torch.Tensor) -> torch.Tensor:
    """Dimension-wise quadrature transform.

    ``weights[j]`` is the ``(n_j, n_j)`` matrix of nodal values
    ``w_j(x_j, x'_j)`` over the Cartesian product of axis-``j`` nodes.
    """
    _check_field(H, grid)
    if len(weights) != grid.dim:
        raise ValueError(f"expected {grid.dim} weight matrices, got {len(weights)}")
    for W, n in zip(weights, grid.shape):
        if tuple(W.shape) != (n, n):
            raise ValueError(f"weight matrix of shape {tuple(W.shape)} does not match axis size {n}")
    Ht = _axis_view(H, grid)
    d = grid.dim
    lead = Ht.ndim - d - 1
    out = None
    for j, (W, rule) in enumerate(zip(weights, grid.rules)):
        Wa = W * torch.tensor(rule.weights, dtype=W.dtype)
        axis = lead + j
        term = torch.movedim(torch.tensordot(Ht, Wa, dims=([axis], [1])), -1, axis)
        out = term if out is None else out + term
    return out.reshape(H.shape)


def spectrum_length(n: int) -> int:
    return n // 2 + 1


def ft_apply(spectra: Sequence[torch.Tensor], grid: ProjectionGrid, H: torch.Tensor,
             pad: bool = False) -> torch.Tensor:
    """Dimension-wise Fourier-convolution transform.

    ``spectra[j]`` is a complex vector of length ``M_j`` (1 <= M_j <= n_j//2+1)
    multiplying the lowest ``M_j`` real-FFT modes along axis ``j``; the
    remaining modes are zeroed.

    With ``pad`` each axis is zero-padded to ``2 n_j`` before the transform and
    cropped afterwards (``M_j`` up to ``n_j + 1``). The circular convolution then
    never wraps, so the layer is a general Toeplitz operator suited to
    non-periodic data.
    """
    if not grid.equispaced:
        raise UnsupportedGrid("Fourier transform layers need an equispaced projection grid")
    _check_field(H, grid)
    if len(spectra) != grid.dim:
        raise ValueError(f"expected {grid.dim} spectra, got {len(spectra)}")
    Ht = _axis_view(H, grid)
    d = grid.dim
    lead = Ht.ndim - d - 1
    out = None
    for j, (c, n) in enumerate(zip(spectra, grid.shape)):
        m = c.shape[-1]
        size = 2 * n if pad else n
        if m < 1 or m > spectrum_length(size):
            raise ValueError(f"mode count {m} outside [1, {spectrum_length(size)}] for axis of size {size}")
        axis = lead + j
        spec = torch.fft.rfft(Ht, n=size, dim=axis)
        spec = torch.movedim(spec, axis, -1)
        kept = spec[..., :m] * c
        if m < spec.shape[-1]:
            kept = torch.cat([kept, kept.new_zeros(*kept.shape[:-1], spec.shape[-1] - m)], dim=-1)
        term = torch.fft.irfft(torch.movedim(kept, -1, axis), n=size, dim=axis)
        if pad:
            term = term.narrow(axis, 0, n)
        out = term if out is None else out + term
    return out.reshape(H.shape)


def full_apply(W: torch.Tensor, grid: ProjectionGrid, H: torch.Tensor) -> torch.Tensor:
    """Full (non-separable) transform: column i of the output is ``W diag(alpha) h_i``."""
    _check_field(H, grid)
    if tuple(W.shape) != (grid.size, grid.size):
        raise ValueError(f"weight matrix must be {grid.size}x{grid.size}, got {tuple(W.shape)}")
    Wa = W * torch.tensor(grid.weights, dtype=W.dtype)
    return torch.matmul(Wa, H)


def circulant_from_spectrum(c: torch.Tensor, n: int) -> torch.Tensor:
    """Dense ``n x n`` circulant matrix equal to the 1-d :func:`ft_apply` operator."""
    padded = torch.zeros(spectrum_length(n), dtype=torch.complex128)
    padded[: c.shape[-1]] = c
    g = torch.fft.irfft(padded, n=n)
    idx = (torch.arange(n)[:, None] - torch.arange(n)[None, :]) % n
    return g[idx]


def cancellation_check(k: Kernel, grid: ProjectionGrid, W, h) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the linear layer both with and without covariance bookkeeping.

    ``lhs`` builds the quadrature cross-covariance ``W diag(alpha) k(X, X_Q)``
    and interpolates with ``k(X_Q, X_Q)^{-1}``; ``rhs`` applies
    ``W diag(alpha)`` to ``h`` directly. With the projection points equal to
    the quadrature nodes the two agree up to the conditioning jitter.
    """
    W = as_tensor(W)
    h = as_tensor(h)
    X = torch.tensor(grid.nodes, dtype=DTYPE)
    alpha = torch.tensor(grid.weights, dtype=DTYPE)
    if tuple(W.shape) != (grid.size, grid.size) or h.shape[0] != grid.size:
        raise ValueError("W and h must match the grid size")
    with torch.no_grad():
        K = k(X, X)
        K = 0.5 * (K + K.T)
        L, jit = cholesky(K)
        # the jitter is a nugget of the kernel, so it also enters the
        # cross-covariance wherever quadrature nodes and projection points coincide
        K_nugget = K + jit * torch.eye(grid.size, dtype=DTYPE)
        cross = (W * alpha) @ K_nugget
        lhs = cross @ torch.cholesky_solve(h.reshape(grid.size, -1), L).reshape(h.shape)
        rhs = (W * alpha) @ h
    return lhs.numpy(), rhs.numpy()
