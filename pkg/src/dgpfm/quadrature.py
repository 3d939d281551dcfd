"""One-dimensional quadrature rules and tensor-product projection grids.

The projection grid is the single node set on which every latent layer lives.
Its nodes double as the quadrature nodes of the discrete integral transforms,
which is what lets the linear layers skip any covariance bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce
from typing import Sequence

import numpy as np

MAX_DIM = 3
RULE_KINDS = ("gauss_legendre", "trapezoidal", "periodic")


@dataclass(frozen=True, eq=False)
class Rule1D:
    kind: str
    nodes: np.ndarray
    weights: np.ndarray
    interval: tuple[float, float]

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def equispaced(self) -> bool:
        return self.kind in ("trapezoidal", "periodic")

    def integrate(self, f) -> float:
        return float(np.dot(self.weights, f(self.nodes)))


def _legendre_and_derivative(n: int, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p_prev = np.ones_like(x)
    p = x.copy()
    for k in range(2, n + 1):
        p_prev, p = p, ((2 * k - 1) * x * p - (k - 1) * p_prev) / k
    dp = n * (x * p - p_prev) / (x * x - 1.0)
    return p, dp


def gauss_legendre(n: int, a: float = -1.0, b: float = 1.0) -> Rule1D:
    """n-point Gauss–Legendre rule on ``[a, b]``.

    Roots of P_n are found by Newton iteration from the Tricomi-type initial
    guesses until the Newton correction drops below 1e-14; weights are ``2 / ((1 - x^2) P_n'(x)^2)`` mapped to the interval.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    if not a < b:
        raise ValueError("need a < b")
    n = int(n)
    if n == 1:
        x = np.zeros(1)
        w = np.full(1, 2.0)
    else:
        i = np.arange(1, n + 1)
        x = np.cos(np.pi * (i - 0.25) / (n + 0.5))
        for _ in range(100):
            p, dp = _legendre_and_derivative(n, x)
            step = p / dp
            x = x - step
            if np.max(np.abs(step)) < 1e-16:
                break
        p, dp = _legendre_and_derivative(n, x)
        # root residual measured as the remaining Newton correction
        if np.max(np.abs(p / dp)) >= 1e-14:
            raise ArithmeticError("Legendre root refinement did not converge")
        w = 2.0 / ((1.0 - x * x) * dp * dp)
        order = np.argsort(x)
        x, w = x[order], w[order]
    half = 0.5 * (b - a)
    nodes = a + half * (x + 1.0)
    return Rule1D("gauss_legendre", nodes, w * half, (float(a), float(b)))


def trapezoidal(n: int, a: float = 0.0, b: float = 1.0) -> Rule1D:
    """Composite trapezoid rule on n equispaced nodes including both endpoints."""
    if int(n) != n or n < 2:
        raise ValueError("trapezoidal rule needs n >= 2")
    if not a < b:
        raise ValueError("need a < b")
    n = int(n)
    h = (b - a) / (n - 1)
    nodes = np.linspace(a, b, n)
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return Rule1D("trapezoidal", nodes, w, (float(a), float(b)))


def periodic(n: int, a: float = 0.0, b: float = 1.0) -> Rule1D:
    """Uniform rule for periodic integrands: nodes a + i h, i < n, weights h = (b-a)/n.

    The right endpoint is excluded (it coincides with ``a`` on the circle).
    """
    if int(n) != n or n < 2:
        raise ValueError("periodic rule needs n >= 2")
    if not a < b:
        raise ValueError("need a < b")
    n = int(n)
    h = (b - a) / n
    return Rule1D("periodic", a + h * np.arange(n), np.full(n, h), (float(a), float(b)))


def make_rule(kind: str, n: int, a: float = 0.0, b: float = 1.0) -> Rule1D:
    if kind == "gauss_legendre":
        return gauss_legendre(n, a, b)
    if kind == "trapezoidal":
        return trapezoidal(n, a, b)
    if kind == "periodic":
        return periodic(n, a, b)
    raise ValueError(f"unknown rule kind {kind!r}; choose from {RULE_KINDS}")


@dataclass(frozen=True, eq=False)
class ProjectionGrid:
    """Tensor product of per-dimension rules, flattened in row-major order."""

    rules: tuple[Rule1D, ...]
    nodes: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        mesh = np.meshgrid(*[r.nodes for r in self.rules], indexing="ij")
        nodes = np.stack([m.reshape(-1) for m in mesh], axis=-1)
        weights = reduce(np.multiply.outer, [r.weights for r in self.rules]).reshape(-1)
        nodes.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", weights)

    @property
    def dim(self) -> int:
        return len(self.rules)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.rules)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def equispaced(self) -> bool:
        return all(r.equispaced for r in self.rules)

    def describe(self) -> list[dict]:
        return [
            {"kind": r.kind, "n": len(r), "interval": list(r.interval)} for r in self.rules
        ]


def tensor_grid(rules: Sequence[Rule1D]) -> ProjectionGrid:
    rules = tuple(rules)
    if not rules:
        raise ValueError("at least one rule is required")
    if len(rules) > MAX_DIM:
        raise ValueError(f"dimension {len(rules)} exceeds the supported maximum {MAX_DIM}")
    return ProjectionGrid(rules)


def grid_from_description(desc: Sequence[dict]) -> ProjectionGrid:
    return tensor_grid([make_rule(d["kind"], d["n"], *d.get("interval", (0.0, 1.0))) for d in desc])
