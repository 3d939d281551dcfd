"""Accuracy and calibration metrics for function-valued predictions.

NRMSE is the relative L2 error of one instance, ``|pred - truth| / |truth|``
over all locations and components, averaged over instances. MNLL scores each
held-out value under the sample mixture ``(1/S) sum_s N(y | u_s, v)``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm as _normal

VAR_FLOOR = 1e-8
LOG_2PI = math.log(2.0 * math.pi)


class UndefinedMetric(ValueError):
    pass


def instance_nrmse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {truth.shape}")
    scale = np.linalg.norm(truth)
    if scale == 0.0:
        raise UndefinedMetric("NRMSE is undefined for an all-zero truth")
    return float(np.linalg.norm(pred - truth) / scale)


def nrmse(preds, truths) -> float:
    """Mean per-instance NRMSE. Two arrays are treated as a single instance."""
    if isinstance(preds, np.ndarray) and isinstance(truths, np.ndarray):
        return instance_nrmse(preds, truths)
    if len(preds) != len(truths) or len(preds) == 0:
        raise ValueError("need equally many (and at least one) predictions and truths")
    return float(np.mean([instance_nrmse(p, t) for p, t in zip(preds, truths)]))


def pointwise_nll(samples, truth, v, include_noise: bool = True, moment_matched: bool = False) -> np.ndarray:
    """Negative log predictive density of every value in ``truth`` ``(N, d1)``.

    ``samples`` is ``(S, N, d1)``; ``v`` the per-component observation
    variance. The moment-matched variant replaces the mixture by one Gaussian
    with the sample mean and variance (plus ``v``).
    """
    samples = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if samples.ndim == truth.ndim:
        samples = samples[None]
    if samples.shape[1:] != truth.shape:
        raise ValueError("samples and truth disagree in shape")
    v = np.broadcast_to(np.asarray(v, dtype=np.float64), truth.shape[-1:])
    noise = v if include_noise else np.zeros_like(v)
    if moment_matched:
        S = samples.shape[0]
        var = (samples.var(axis=0, ddof=1) if S > 1 else 0.0) + noise
        var = np.maximum(var, VAR_FLOOR)
        r = truth - samples.mean(axis=0)
        return 0.5 * (LOG_2PI + np.log(var) + r * r / var)
    var = np.maximum(noise, VAR_FLOOR)
    r = truth[None] - samples
    logp = -0.5 * (LOG_2PI + np.log(var) + r * r / var)
    return -(logsumexp(logp, axis=0) - math.log(samples.shape[0]))


def mnll(samples, truth, v, include_noise: bool = True, moment_matched: bool = False) -> float:
    """Mean of :func:`pointwise_nll` over all values of one instance."""
    return float(np.mean(pointwise_nll(samples, truth, v, include_noise, moment_matched)))


def coverage_gaussian(mean, sd, truth, level: float) -> float:
    """Fraction of ``truth`` inside the central ``level`` interval of ``N(mean, sd^2)``."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    q = _normal.ppf(0.5 + level / 2.0)
    r = np.abs(np.asarray(truth, dtype=np.float64) - np.asarray(mean, dtype=np.float64))
    return float(np.mean(r <= q * np.asarray(sd, dtype=np.float64)))


def coverage(samples, truth, level: float, v=0.0) -> float:
    """Coverage of the Gaussian summary ``N(sample mean, sample var + v)``."""
    samples = np.asarray(samples, dtype=np.float64)
    var = samples.var(axis=0, ddof=1) if samples.shape[0] > 1 else np.zeros(samples.shape[1:])
    return coverage_gaussian(samples.mean(axis=0), np.sqrt(var + np.asarray(v)), truth, level)


@dataclass
class EvalReport:
    per_instance_nrmse: list[float]
    mean_nrmse: float
    mean_nll: float
    coverage: dict[str, float]
    seconds: float = 0.0
    per_instance_nll: list[float] = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        raw = json.loads(text)
        expected = {f for f in cls.__dataclass_fields__}
        if set(raw) != expected:
            raise ValueError(f"report keys {sorted(raw)} do not match {sorted(expected)}")
        return cls(**raw)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["instance", "nrmse", "nll"])
            for i, (e, n) in enumerate(zip(self.per_instance_nrmse, self.per_instance_nll)):
                w.writerow([i, repr(e), repr(n)])
            w.writerow(["mean", repr(self.mean_nrmse), repr(self.mean_nll)])
            for k, c in self.coverage.items():
                w.writerow([f"coverage_{k}", repr(c), ""])


def report(preds: Sequence, truths: Sequence[np.ndarray], levels: Sequence[float] = (0.68, 0.95),
           include_noise: bool = True, moment_matched: bool = False, seconds: float = 0.0) -> EvalReport:
    """Summarize a list of predictive summaries against the matching truths.

    Each prediction needs ``mean``, ``samples`` and ``noise_var`` attributes.
    Coverage pools all observations; MNLL and NRMSE average per instance.
    """
    errs, nlls = [], []
    inside = {lv: [] for lv in levels}
    for p, t in zip(preds, truths):
        errs.append(instance_nrmse(p.mean, t))
        nlls.append(mnll(p.samples, t, p.noise_var, include_noise, moment_matched))
        S = p.samples.shape[0]
        var = p.samples.var(axis=0, ddof=1) if S > 1 else np.zeros_like(p.mean)
        if include_noise:
            var = var + p.noise_var
        for lv in levels:
            q = _normal.ppf(0.5 + lv / 2.0)
            inside[lv].append((np.abs(t - p.mean) <= q * np.sqrt(var)).ravel())
    cov = {f"{lv:g}": float(np.mean(np.concatenate(inside[lv]))) for lv in levels}
    return EvalReport(errs, float(np.mean(errs)), float(np.mean(nlls)), cov, seconds, nlls)
