"""Whitened variational inference for the functional-map model.

The training objective for a minibatch of ``B`` out of ``N`` instances is::

    (N / B) * sum_b ( E_q[log p(Y_b | U_b)] + log p(F_b) )  -  sum_l KL(q(eta_l) || N(0, I))

minus an optional isotropic Gaussian penalty on the transform weights. The
expectation is estimated with reparameterized samples of the inducing values,
grid inputs and activation noise. Gradients come from torch autograd.
"""

from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import metrics
from .data import Dataset, FunctionPair, Normalizer
from .kernels import DTYPE, NumericalFailure, softplus_inverse
from .model import NOISE_FLOOR, DGPFM, Batch, Noise, NoiseSource, collate, log_likelihood, repeat_batch

TRAIN_STREAM = 0
PREDICT_STREAM = 1
REFIT_STREAM = 2
HISTORY_FIELDS = ("epoch", "mean_elbo", "val_nrmse", "val_mnll", "lr", "seconds")
# wall time stays in memory only, so reruns give byte-identical history files
CSV_FIELDS = HISTORY_FIELDS[:-1]


def kl_standard_normal(mu: torch.Tensor, L: torch.Tensor) -> torch.Tensor:
    """``KL(N(mu, L L^T) || N(0, I))`` for a lower-triangular ``L`` with positive diagonal."""
    S = mu.shape[-1]
    return 0.5 * ((mu * mu).sum() + (L * L).sum() - S - 2.0 * torch.log(torch.diagonal(L)).sum())


class VariationalPosterior(nn.Module):
    """Gaussian ``q(eta_l) = N(mu_l, L_l L_l^T)`` for each nonlinear layer.

    ``L_l`` is lower triangular with a softplus-positive diagonal; with
    ``mean_field`` only the diagonal is used.
    """

    def __init__(self, sizes: Sequence[int], means: Sequence[torch.Tensor] | None = None,
                 scale: float = 1e-3, mean_field: bool = False):
        super().__init__()
        self.mean_field = mean_field
        self.mu = nn.ParameterList()
        self.raw_diag = nn.ParameterList()
        self.offdiag = nn.ParameterList()
        for l, S in enumerate(sizes):
            m = torch.zeros(S, dtype=DTYPE) if means is None else means[l].detach().clone()
            self.mu.append(nn.Parameter(m))
            self.raw_diag.append(nn.Parameter(torch.as_tensor(softplus_inverse(np.full(S, scale)), dtype=DTYPE)))
            self.offdiag.append(nn.Parameter(torch.zeros(S, S, dtype=DTYPE), requires_grad=not mean_field))

    def __len__(self) -> int:
        return len(self.mu)

    def factor(self, l: int) -> torch.Tensor:
        diag = torch.diag_embed(F.softplus(self.raw_diag[l]))
        if self.mean_field:
            return diag
        return diag + torch.tril(self.offdiag[l], diagonal=-1)

    def sample(self, l: int, eps: torch.Tensor) -> torch.Tensor:
        """``mu + L eps`` row-wise for ``eps`` of shape ``(B, S)``."""
        return self.mu[l] + eps @ self.factor(l).T

    def kl(self) -> torch.Tensor:
        total = torch.zeros((), dtype=DTYPE)
        for l in range(len(self)):
            total = total + kl_standard_normal(self.mu[l], self.factor(l))
        return total


class Learner(nn.Module):
    """A model together with its variational posterior."""

    def __init__(self, model: DGPFM, weight_prior: float = 0.0):
        super().__init__()
        self.model = model
        cfg = model.cfg
        means = None
        if cfg.activation_init == "identity":
            means = [a.identity_eta() for a in model.activations]
        self.posterior = VariationalPosterior(
            [a.num_inducing for a in model.activations], means, cfg.posterior_scale, cfg.mean_field
        )
        self.weight_prior = float(weight_prior)

    def log_weight_prior(self) -> torch.Tensor:
        if self.weight_prior == 0.0:
            return torch.zeros((), dtype=DTYPE)
        sq = sum((p * p).sum() for lin in self.model.linear for p in lin.parameters())
        return -0.5 * self.weight_prior * sq

    def run(self, batch: Batch, noise: Noise | None, mode: str = "train"):
        """Forward pass with inducing values drawn from ``q`` (or its mean in ``mean`` mode)."""
        if mode == "mean":
            eta = [self.posterior.mu[l].expand(len(batch), -1) for l in range(len(self.posterior))]
        else:
            eta = [self.posterior.sample(l, noise.eta[l]) for l in range(len(self.posterior))]
        return self.model(batch, eta, noise, mode)


# --------------------------------------------------------------------------
# Objective
# --------------------------------------------------------------------------


@dataclass
class ElboParts:
    value: torch.Tensor
    data: torch.Tensor  # per-instance expected log-likelihood + log p(F), shape (B,)
    kl: torch.Tensor
    log_prior: torch.Tensor


def elbo(learner: Learner, batch: Batch, n_total: int, source: NoiseSource, step: int = 0,
         samples: int = 1, mode: str = "train") -> ElboParts:
    """Minibatch ELBO estimate with ``samples`` reparameterized draws per instance.

    Noise is keyed by ``(step, instance id, sample)``, so the estimate does not
    depend on the order of instances within the batch. ``mode='mean'`` is a
    check mode that replaces every draw by its mean.
    """
    if len(batch) == 0:
        raise ValueError("empty batch")
    if samples < 1:
        raise ValueError("samples must be >= 1")
    model = learner.model
    rep = repeat_batch(batch, samples) if samples > 1 else batch
    keys = [(TRAIN_STREAM, step, i, s) for i in batch.ids for s in range(samples)]
    noise = None if mode == "mean" else source.draw(model.noise_shapes(), keys)
    try:
        U, logp = learner.run(rep, noise, mode)
    except NumericalFailure as exc:
        raise NumericalFailure(f"{exc} (batch instances {batch.ids})", exc.jitter) from exc
    ll = log_likelihood(U, rep.y_out, model.head.noise, rep.m_out)
    per = (ll + logp).reshape(len(batch), samples).mean(-1)
    kl = learner.posterior.kl()
    lp = learner.log_weight_prior()
    value = (n_total / len(batch)) * per.sum() - kl + lp
    return ElboParts(value, per, kl, lp)


# --------------------------------------------------------------------------
# Prediction
# --------------------------------------------------------------------------


@dataclass
class PredictiveSummary:
    mean: np.ndarray  # (N_out, d1)
    sd: np.ndarray | None  # (N_out, d1)
    samples: np.ndarray  # (S, N_out, d1)
    noise_var: np.ndarray  # (d1,)

    def denormalize(self, norm: Normalizer) -> "PredictiveSummary":
        scale = np.asarray(norm.y_std)
        return PredictiveSummary(
            norm.y_inverse(self.mean),
            None if self.sd is None else self.sd * scale,
            norm.y_inverse(self.samples),
            self.noise_var * scale**2,
        )


@torch.no_grad()
def predict(learner: Learner, instance: FunctionPair, n_samples: int, source: NoiseSource,
            instance_id: int = 0, want_sd: bool = True, add_noise: bool = True,
            mode: str = "sample") -> PredictiveSummary:
    """Sample-based predictive summary for one (normalized) instance.

    Every draw takes fresh inducing values from ``q``, a fresh grid-input
    sample and fresh activation noise. ``mode='mean'`` propagates means only,
    so all draws coincide. With ``add_noise`` the observation variance is added
    to the sample variance.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if want_sd and n_samples < 2:
        raise ValueError("a standard deviation needs at least 2 samples")
    model = learner.model
    batch = repeat_batch(collate([instance], [instance_id]), n_samples)
    if mode == "mean":
        U, _ = learner.run(batch, None, "mean")
    else:
        keys = [(PREDICT_STREAM, instance_id, s) for s in range(n_samples)]
        U, _ = learner.run(batch, source.draw(model.noise_shapes(), keys), "sample")
    samples = U[:, : instance.n_out].numpy()
    v = model.head.noise.numpy()
    sd = None
    if want_sd:
        var = samples.var(axis=0, ddof=1)
        if add_noise:
            var = var + v
        sd = np.sqrt(var)
    return PredictiveSummary(samples.mean(axis=0), sd, samples, v)


def evaluate(learner: Learner, ds: Dataset, norm: Normalizer, n_samples: int, source: NoiseSource,
             add_noise: bool = True, levels: Sequence[float] = (0.68, 0.95)) -> metrics.EvalReport:
    """Metrics of ``learner`` on a normalized dataset, computed in raw units."""
    t0 = time.perf_counter()
    preds, truths = [], []
    for i, pair in enumerate(ds.instances):
        preds.append(predict(learner, pair, n_samples, source, instance_id=i, add_noise=add_noise).denormalize(norm))
        truths.append(norm.y_inverse(pair.y_out))
    return metrics.report(preds, truths, levels=levels, include_noise=add_noise,
                          seconds=time.perf_counter() - t0)


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------


@dataclass
class TrainConfig:
    batch_size: int = 20
    epochs: int = 100
    lr: float = 1e-3
    lr_min: float = 0.0
    cycle_epochs: int = 0  # cosine cycle length; 0 means one cycle over the whole run
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    samples: int = 1
    noise_lr_scale: float = 1.0  # learning-rate multiplier for the noise variances
    seed: int = 0
    val_every: int = 1
    val_samples: int = 16
    weight_prior: float = 0.0
    refit_noise: bool = True  # finish with the closed-form optimum of the output noise

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.lr < 0 or self.lr_min < 0:
            raise ValueError("learning rates must be non-negative")
        if self.samples < 1 or self.val_every < 1 or self.val_samples < 2:
            raise ValueError("samples >= 1, val_every >= 1 and val_samples >= 2 required")


@torch.no_grad()
def refit_output_noise(learner: Learner, data: Dataset, source: NoiseSource, samples: int = 4,
                       batch_size: int = 20) -> np.ndarray:
    """Set the output noise variances to their ELBO-optimal values.

    With everything else fixed the bound is maximized in ``v_i`` by the
    expected mean squared residual of component ``i``; the expectation is
    estimated with ``samples`` draws per instance. Returns the new variances.
    """
    model = learner.model
    sq = torch.zeros(model.cfg.d_out, dtype=DTYPE)
    count = 0.0
    for start in range(0, len(data), batch_size):
        ids = list(range(start, min(start + batch_size, len(data))))
        batch = collate([data.instances[i] for i in ids], ids)
        rep = repeat_batch(batch, samples) if samples > 1 else batch
        noise = source.draw(model.noise_shapes(), [(REFIT_STREAM, 0, i, s) for i in ids for s in range(samples)])
        U, _ = learner.run(rep, noise, "train")
        m = rep.m_out.to(DTYPE).unsqueeze(-1)
        sq += (((rep.y_out - U) ** 2) * m).sum((0, 1))
        count += float(m.sum())
    v = torch.clamp(sq / count - NOISE_FLOOR, min=1e-12)
    model.head.raw_noise.copy_(torch.as_tensor(softplus_inverse(v.numpy()), dtype=DTYPE))
    return model.head.noise.detach().numpy().copy()


def cosine_lr(step: int, steps_per_cycle: int, lr_max: float, lr_min: float) -> float:
    """Cyclical cosine annealing: restarts at ``lr_max`` every ``steps_per_cycle`` steps."""
    t = (step % steps_per_cycle) / steps_per_cycle
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * t))


class TrainingAborted(NumericalFailure):
    """Training stopped on a non-finite objective or a failed factorization.

    The learner has been restored to its last good state; ``history`` holds
    the completed epochs.
    """

    def __init__(self, message: str, history: list[dict], jitter=None):
        super().__init__(message, jitter)
        self.history = history


@dataclass
class TrainResult:
    history: list[dict] = field(default_factory=list)
    best_state: dict | None = None
    best_epoch: int = -1
    best_val_nrmse: float = math.inf


def train(learner: Learner, data: Dataset, cfg: TrainConfig, val: Dataset | None = None,
          norm: Normalizer | None = None,
          callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Maximize the ELBO with Adam under a cyclical cosine schedule.

    ``data`` and ``val`` are normalized datasets; validation metrics are
    reported in raw units through ``norm``. The parameters left in
    ``learner`` are those of the final epoch; the state with the best
    validation NRMSE is kept in the result.
    """
    cfg.validate()
    if len(data) == 0:
        raise ValueError("empty training set")
    norm = norm or Normalizer.identity(data.d, data.d_in, data.d_out)
    learner.weight_prior = cfg.weight_prior
    noise_params = [learner.model.head.raw_noise, learner.model.encoder.raw_noise]
    ids = {id(p) for p in noise_params}
    rest = [p for p in learner.parameters() if p.requires_grad and id(p) not in ids]
    params = rest + noise_params
    opt = torch.optim.Adam(
        [{"params": rest, "scale": 1.0}, {"params": noise_params, "scale": cfg.noise_lr_scale}],
        lr=cfg.lr, betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps,
    )
    source = NoiseSource(cfg.seed)
    val_source = NoiseSource(cfg.seed + 1)
    rng = np.random.default_rng(cfg.seed)
    N = len(data)
    B = min(cfg.batch_size, N)
    steps_per_epoch = math.ceil(N / B)
    cycle = (cfg.cycle_epochs or max(cfg.epochs, 1)) * steps_per_epoch
    result = TrainResult()
    last_good = copy.deepcopy(learner.state_dict())
    step = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(N)
        total = 0.0
        for start in range(0, N, B):
            ids = [int(i) for i in order[start : start + B]]
            batch = collate([data.instances[i] for i in ids], ids)
            lr = cosine_lr(step, cycle, cfg.lr, cfg.lr_min)
            for g in opt.param_groups:
                g["lr"] = lr * g["scale"]
            opt.zero_grad()
            try:
                parts = elbo(learner, batch, N, source, step, cfg.samples)
                value = parts.value
                if not torch.isfinite(value):
                    raise NumericalFailure(f"non-finite ELBO at epoch {epoch}, step {step}")
                (-value).backward()
                if not all(torch.isfinite(p.grad).all() for p in params if p.grad is not None):
                    raise NumericalFailure(f"non-finite gradient at epoch {epoch}, step {step}")
            except NumericalFailure as exc:
                learner.load_state_dict(last_good)
                raise TrainingAborted(str(exc), result.history, exc.jitter) from exc
            opt.step()
            total += float(value.detach()) * len(ids) / N
            step += 1
        last_good = copy.deepcopy(learner.state_dict())
        row = {"epoch": epoch + 1, "mean_elbo": total, "val_nrmse": math.nan, "val_mnll": math.nan,
               "lr": lr, "seconds": time.perf_counter() - t0}
        if val is not None and len(val) and ((epoch + 1) % cfg.val_every == 0 or epoch + 1 == cfg.epochs):
            rep = evaluate(learner, val, norm, cfg.val_samples, val_source)
            row["val_nrmse"], row["val_mnll"] = rep.mean_nrmse, rep.mean_nll
            if rep.mean_nrmse < result.best_val_nrmse:
                result.best_val_nrmse = rep.mean_nrmse
                result.best_epoch = epoch + 1
                result.best_state = copy.deepcopy(learner.state_dict())
        result.history.append(row)
        if callback is not None:
            callback(row)
    if cfg.refit_noise and cfg.epochs > 0:
        refit_source = NoiseSource(cfg.seed)
        if result.best_state is not None and result.best_epoch != cfg.epochs:
            final = copy.deepcopy(learner.state_dict())
            learner.load_state_dict(result.best_state)
            refit_output_noise(learner, data, refit_source)
            result.best_state = copy.deepcopy(learner.state_dict())
            learner.load_state_dict(final)
        refit_output_noise(learner, data, refit_source)
        if result.best_epoch == cfg.epochs:
            result.best_state = copy.deepcopy(learner.state_dict())
    if result.best_state is None:
        result.best_state = copy.deepcopy(learner.state_dict())
        result.best_epoch = cfg.epochs
    return result


def write_history(history: Sequence[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_FIELDS)
        w.writeheader()
        for row in history:
            w.writerow({k: repr(float(row[k])) if k != "epoch" else int(row[k]) for k in CSV_FIELDS})
