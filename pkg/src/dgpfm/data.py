"""Function-pair datasets: containers, normalization, synthetic operators, file IO.

Each instance is a :class:`FunctionPair` whose input and output functions may be
observed at different numbers of points and at different, even disjoint,
locations. Synthetic generators produce instances on regular grids; use
:func:`corrupt` to subsample and add input noise.
"""

from __future__ import annotations

import csv
import glob
import io
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy.integrate import cumulative_simpson


class FormatError(ValueError):
    """Malformed dataset file; ``offset`` is the byte position of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class GenerationError(RuntimeError):
    """A synthetic generator produced an unusable solution (e.g. blow-up)."""


@dataclass(eq=False)
class FunctionPair:
    x_in: np.ndarray  # (N_in, d)
    f_in: np.ndarray  # (N_in, d0)
    x_out: np.ndarray  # (N_out, d)
    y_out: np.ndarray  # (N_out, d1)

    def __post_init__(self):
        self.x_in = _as2d(self.x_in)
        self.f_in = _as2d(self.f_in)
        self.x_out = _as2d(self.x_out)
        self.y_out = _as2d(self.y_out)
        if len(self.x_in) < 1 or len(self.x_out) < 1:
            raise ValueError("a function pair needs at least one input and one output location")
        if len(self.x_in) != len(self.f_in) or len(self.x_out) != len(self.y_out):
            raise ValueError("locations and values disagree in length")
        if self.x_in.shape[1] != self.x_out.shape[1]:
            raise ValueError("input and output locations must share a dimension")

    @property
    def n_in(self) -> int:
        return len(self.x_in)

    @property
    def n_out(self) -> int:
        return len(self.x_out)


def _as2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError("expected a 1-d or 2-d array")
    return a


@dataclass(eq=False)
class Dataset:
    instances: list[FunctionPair]
    d: int
    d_in: int
    d_out: int
    bounds: np.ndarray  # (d, 2) raw bounding box, [lower, upper] per dimension

    def __post_init__(self):
        self.bounds = np.asarray(self.bounds, dtype=np.float64).reshape(self.d, 2)
        for i, p in enumerate(self.instances):
            if p.x_in.shape[1] != self.d or p.f_in.shape[1] != self.d_in or p.y_out.shape[1] != self.d_out:
                raise ValueError(f"instance {i} does not match dataset dimensions")
            lo, hi = self.bounds[:, 0] - 1e-12, self.bounds[:, 1] + 1e-12
            for x in (p.x_in, p.x_out):
                if np.any(x < lo) or np.any(x > hi):
                    raise ValueError(f"instance {i} has coordinates outside the bounding box")

    def __len__(self) -> int:
        return len(self.instances)

    def __getitem__(self, idx):
        if isinstance(idx, slice):
            return self.subset(range(len(self))[idx])
        return self.instances[idx]

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return replace(self, instances=[self.instances[i] for i in indices])

    def split(self, n_first: int) -> tuple["Dataset", "Dataset"]:
        return self.subset(range(n_first)), self.subset(range(n_first, len(self)))


@dataclass
class Normalizer:
    """Affine map of coordinates to the unit box and z-scoring of values.

    Statistics are meant to come from the training split only (:meth:`fit`).
    With ``center=False`` values are only divided by their root mean square,
    which keeps a linear operator linear (no offset term appears).
    """

    lower: np.ndarray
    upper: np.ndarray
    f_mean: np.ndarray
    f_std: np.ndarray
    y_mean: np.ndarray
    y_std: np.ndarray

    @classmethod
    def fit(cls, train: Dataset, center: bool = True) -> "Normalizer":
        F = np.concatenate([p.f_in for p in train.instances])
        Y = np.concatenate([p.y_out for p in train.instances])
        if center:
            f_mean, y_mean = F.mean(axis=0), Y.mean(axis=0)
        else:
            f_mean, y_mean = np.zeros(F.shape[1]), np.zeros(Y.shape[1])
        f_std = np.sqrt(((F - f_mean) ** 2).mean(axis=0))
        y_std = np.sqrt(((Y - y_mean) ** 2).mean(axis=0))
        return cls(
            lower=train.bounds[:, 0].copy(),
            upper=train.bounds[:, 1].copy(),
            f_mean=f_mean,
            f_std=np.where(f_std > 0, f_std, 1.0),
            y_mean=y_mean,
            y_std=np.where(y_std > 0, y_std, 1.0),
        )

    @classmethod
    def identity(cls, d: int, d_in: int, d_out: int) -> "Normalizer":
        return cls(np.zeros(d), np.ones(d), np.zeros(d_in), np.ones(d_in), np.zeros(d_out), np.ones(d_out))

    def x(self, x):
        return (np.asarray(x) - self.lower) / (self.upper - self.lower)

    def x_inverse(self, x):
        return np.asarray(x) * (self.upper - self.lower) + self.lower

    def f(self, f):
        return (np.asarray(f) - self.f_mean) / self.f_std

    def f_inverse(self, f):
        return np.asarray(f) * self.f_std + self.f_mean

    def y(self, y):
        return (np.asarray(y) - self.y_mean) / self.y_std

    def y_inverse(self, y):
        return np.asarray(y) * self.y_std + self.y_mean

    def y_scale_inverse(self, sd):
        """Map a standard deviation (not a location) back to raw units."""
        return np.asarray(sd) * self.y_std

    def apply(self, pair: FunctionPair) -> FunctionPair:
        return FunctionPair(self.x(pair.x_in), self.f(pair.f_in), self.x(pair.x_out), self.y(pair.y_out))

    def apply_dataset(self, ds: Dataset) -> Dataset:
        d = ds.d
        return Dataset(
            [self.apply(p) for p in ds.instances], d, ds.d_in, ds.d_out,
            np.tile(np.array([0.0, 1.0]), (d, 1)),
        )

    def to_dict(self) -> dict:
        return {k: np.asarray(getattr(self, k)).tolist() for k in ("lower", "upper", "f_mean", "f_std", "y_mean", "y_std")}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(**{k: np.asarray(v, dtype=np.float64) for k, v in d.items()})


# --------------------------------------------------------------------------
# Gaussian random fields
# --------------------------------------------------------------------------


def grf_eigenvalues(k, amplitude: float = 625.0, shift: float = 25.0, power: float = 2.0):
    """Eigenvalues ``amplitude * (4 pi^2 k^2 + shift)^(-power)`` of the periodic covariance."""
    k = np.asarray(k, dtype=np.float64)
    return amplitude * (4.0 * np.pi**2 * k**2 + shift) ** (-power)


@dataclass
class PeriodicField:
    """Real trigonometric polynomial ``c0 + sum_k a_k cos(2 pi k x) + b_k sin(2 pi k x)``."""

    c0: float
    a: np.ndarray
    b: np.ndarray

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        k = np.arange(1, len(self.a) + 1)
        phase = 2.0 * np.pi * np.multiply.outer(x, k)
        return self.c0 + np.cos(phase) @ self.a + np.sin(phase) @ self.b


def sample_grf_1d(rng: np.random.Generator, max_mode: int, amplitude=625.0, shift=25.0, power=2.0,
                  drop_constant: bool = False) -> PeriodicField:
    """Draw a zero-mean periodic GRF on [0, 1) truncated at ``max_mode``.

    With orthonormal eigenfunctions 1, sqrt(2) cos, sqrt(2) sin the pointwise
    variance is ``lam_0 + 2 sum_k lam_k``. ``drop_constant`` zeroes the
    constant mode, so every draw integrates to zero (the same random numbers
    are consumed either way).
    """
    k = np.arange(1, max_mode + 1)
    lam0 = grf_eigenvalues(0, amplitude, shift, power)
    lam = grf_eigenvalues(k, amplitude, shift, power)
    c0 = np.sqrt(lam0) * rng.standard_normal()
    if drop_constant:
        c0 = 0.0
    a = np.sqrt(2.0 * lam) * rng.standard_normal(max_mode)
    b = np.sqrt(2.0 * lam) * rng.standard_normal(max_mode)
    return PeriodicField(float(c0), a, b)


def grf_pointwise_variance(max_mode: int, amplitude=625.0, shift=25.0, power=2.0) -> float:
    k = np.arange(1, max_mode + 1)
    return float(grf_eigenvalues(0, amplitude, shift, power) + 2.0 * grf_eigenvalues(k, amplitude, shift, power).sum())


def gen_grf_1d(n_grid: int, seed: int, amplitude=625.0, shift=25.0, power=2.0, max_mode: int | None = None) -> np.ndarray:
    """One GRF draw on the periodic grid ``x_i = i / n_grid`` via the inverse real FFT."""
    if n_grid < 16:
        raise ValueError("n_grid must be at least 16")
    rng = np.random.default_rng(seed)
    if max_mode is None:
        max_mode = n_grid // 2 - 1
    fld = sample_grf_1d(rng, max_mode, amplitude, shift, power)
    spec = np.zeros(n_grid // 2 + 1, dtype=np.complex128)
    spec[0] = fld.c0 * n_grid
    spec[1 : max_mode + 1] = 0.5 * n_grid * (fld.a - 1j * fld.b)
    return np.fft.irfft(spec, n=n_grid)


def _spawn(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


# --------------------------------------------------------------------------
# Antiderivative operator
# --------------------------------------------------------------------------


def antiderivative(f: Callable[[np.ndarray], np.ndarray], n_grid: int, refine: int = 4) -> np.ndarray:
    """``u(x) = int_0^x f`` on ``n_grid`` nodes of [0, 1] (endpoints included).

    Cumulative Simpson integration on a ``refine``-times finer grid, restricted
    back to the coarse nodes.
    """
    fine = np.linspace(0.0, 1.0, refine * (n_grid - 1) + 1)
    u = cumulative_simpson(np.asarray(f(fine), dtype=np.float64), x=fine, initial=0.0)
    return u[::refine]


def gen_antiderivative(n_instances: int, n_grid: int, seed: int, max_mode: int = 16, **grf) -> Dataset:
    """Instances ``f -> int_0^x f`` with ``f`` a band-limited periodic GRF."""
    x = np.linspace(0.0, 1.0, n_grid)
    pairs = []
    for rng in _spawn(seed, n_instances):
        fld = sample_grf_1d(rng, max_mode, **grf)
        pairs.append(FunctionPair(x, fld(x), x, antiderivative(fld, n_grid)))
    return Dataset(pairs, 1, 1, 1, np.array([[0.0, 1.0]]))


# --------------------------------------------------------------------------
# Viscous Burgers, periodic, pseudo-spectral
# --------------------------------------------------------------------------


def solve_burgers(u0: np.ndarray, nu: float, t_final: float = 1.0, cfl: float = 0.2,
                  dt: float | None = None, return_energy: bool = False):
    """Integrate ``u_t + u u_x = nu u_xx`` on the periodic unit interval.

    Integrating-factor RK4: the viscous term is handled exactly by
    ``exp(-nu k^2 t)``; the nonlinear term ``-(u^2/2)_x`` is evaluated
    pseudo-spectrally with 2/3-rule dealiasing. ``u0`` is given on the grid
    ``x_i = i / n``.
    """
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    u0 = np.asarray(u0, dtype=np.float64)
    n = len(u0)
    h = 1.0 / n
    umax0 = max(float(np.max(np.abs(u0))), 1e-12)
    if dt is None:
        dt = min(cfl * h / umax0, 1e-2)
    steps = max(1, int(np.ceil(t_final / dt)))
    dt = t_final / steps
    kint = np.fft.rfftfreq(n, d=1.0 / n)
    k = 2.0 * np.pi * kint
    keep = kint <= n / 3.0
    E = np.exp(-nu * k**2 * dt / 2.0)
    E2 = E * E

    def nonlinear(v):
        u = np.fft.irfft(v * keep, n=n)
        return -0.5j * k * np.fft.rfft(u * u) * keep

    v = np.fft.rfft(u0)
    energy = [h * float(np.sum(u0 * u0))]
    bound = 10.0 * max(umax0, 1.0)
    # an unstable step overflows before it is caught; the checks below report it
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(steps):
            a = dt * nonlinear(v)
            b = dt * nonlinear(E * (v + a / 2.0))
            c = dt * nonlinear(E * v + b / 2.0)
            dd = dt * nonlinear(E2 * v + E * c)
            v = E2 * v + (E2 * a + 2.0 * E * (b + c) + dd) / 6.0
            if return_energy or not np.all(np.isfinite(v)):
                u = np.fft.irfft(v, n=n)
                if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > bound:
                    raise GenerationError("Burgers solve blew up; reduce the time step")
                energy.append(h * float(np.sum(u * u)))
    u1 = np.fft.irfft(v, n=n)
    if not np.all(np.isfinite(u1)) or np.max(np.abs(u1)) > bound:
        raise GenerationError("Burgers solve blew up; reduce the time step")
    if return_energy:
        return u1, np.asarray(energy)
    return u1


def gen_burgers_1d(n_instances: int, n_grid: int, nu: float = 0.1, seed: int = 0,
                   solve_factor: int = 4, max_mode: int | None = None, drop_constant: bool = True,
                   **grf) -> Dataset:
    """Instances ``u0 -> u(., 1)`` on the periodic grid ``x_i = i / n_grid``.

    Each solve runs on a grid ``solve_factor`` times finer and is subsampled.
    Initial conditions have no constant mode by default: the mean of ``u`` is
    conserved, and with a random mean of unit variance the solution at t = 1
    is almost entirely that constant, advected by it.
    """
    if nu <= 0:
        raise ValueError("viscosity must be positive")
    if max_mode is None:
        max_mode = n_grid // 2 - 1
    x = np.arange(n_grid) / n_grid
    fine = np.arange(n_grid * solve_factor) / (n_grid * solve_factor)
    pairs = []
    for rng in _spawn(seed, n_instances):
        fld = sample_grf_1d(rng, max_mode, drop_constant=drop_constant, **grf)
        u1 = solve_burgers(fld(fine), nu)[::solve_factor]
        pairs.append(FunctionPair(x, fld(x), x, u1))
    return Dataset(pairs, 1, 1, 1, np.array([[0.0, 1.0]]))


# --------------------------------------------------------------------------
# 2-d Poisson with homogeneous Dirichlet data
# --------------------------------------------------------------------------


@dataclass
class SineField2D:
    """``sum_{k,m} c[k-1, m-1] sin(pi k x) sin(pi m y)`` on the unit square."""

    coef: np.ndarray

    def __call__(self, x, y) -> np.ndarray:
        K, M = self.coef.shape
        sx = np.sin(np.pi * np.multiply.outer(np.asarray(x), np.arange(1, K + 1)))
        sy = np.sin(np.pi * np.multiply.outer(np.asarray(y), np.arange(1, M + 1)))
        return np.einsum("...k,km,...m->...", sx, self.coef, sy)


def sample_grf_2d(rng: np.random.Generator, max_mode: int, amplitude=625.0, shift=25.0, power=2.0) -> SineField2D:
    k = np.arange(1, max_mode + 1)
    lam = amplitude * (np.pi**2 * (k[:, None] ** 2 + k[None, :] ** 2) + shift) ** (-power)
    return SineField2D(np.sqrt(lam) * rng.standard_normal((max_mode, max_mode)))


def solve_poisson_dirichlet(f_grid: np.ndarray) -> np.ndarray:
    """Solve ``-Lap u = f`` with ``u = 0`` on the boundary of [0, 1]^2.

    ``f_grid`` is sampled on the ``n x n`` node grid including the boundary;
    the interior values are expanded in the sine eigenfunctions with a type-I
    DST and divided by ``pi^2 (k^2 + m^2)``.
    """
    n = f_grid.shape[0]
    inner = f_grid[1:-1, 1:-1]
    coef = sfft.dstn(inner, type=1)
    k = np.arange(1, n - 1)
    coef = coef / (np.pi**2 * (k[:, None] ** 2 + k[None, :] ** 2))
    u = np.zeros_like(f_grid)
    u[1:-1, 1:-1] = sfft.idstn(coef, type=1)
    return u


def gen_poisson_2d(n_instances: int, n_grid: int, seed: int, max_mode: int = 8, **grf) -> Dataset:
    """Source-to-solution instances for the Dirichlet Poisson problem on an ``n x n`` grid."""
    if n_grid < 4:
        raise ValueError("n_grid must be at least 4")
    max_mode = min(max_mode, n_grid - 2)
    g = np.linspace(0.0, 1.0, n_grid)
    X, Y = np.meshgrid(g, g, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    pairs = []
    for rng in _spawn(seed, n_instances):
        fld = sample_grf_2d(rng, max_mode, **grf)
        f = fld(X, Y)
        u = solve_poisson_dirichlet(f)
        pairs.append(FunctionPair(pts, f.reshape(-1), pts, u.reshape(-1)))
    return Dataset(pairs, 2, 1, 1, np.array([[0.0, 1.0], [0.0, 1.0]]))


# --------------------------------------------------------------------------
# Corruption
# --------------------------------------------------------------------------


def corrupt(ds: Dataset, keep_in: float = 1.0, keep_out: float = 1.0, noise_sd: float = 0.0,
            independent_masks: bool = True, seed: int = 0) -> Dataset:
    """Subsample locations and add Gaussian noise to the input values.

    Each instance keeps ``round(keep * N)`` (at least one) locations drawn
    uniformly without replacement; output locations are drawn independently
    of the input ones unless ``independent_masks`` is false and the two sets
    have equal size, in which case one index set serves both.
    """
    for name, frac in (("keep_in", keep_in), ("keep_out", keep_out)):
        if not 0.0 < frac <= 1.0:
            raise ValueError(f"{name} must be in (0, 1]")
    if noise_sd < 0:
        raise ValueError("noise_sd must be non-negative")
    out = []
    for p, rng in zip(ds.instances, _spawn(seed, len(ds))):
        n_in = max(1, int(round(keep_in * p.n_in)))
        n_out = max(1, int(round(keep_out * p.n_out)))
        idx_in = np.sort(rng.choice(p.n_in, n_in, replace=False)) if n_in < p.n_in else np.arange(p.n_in)
        if independent_masks or p.n_in != p.n_out:
            idx_out = np.sort(rng.choice(p.n_out, n_out, replace=False)) if n_out < p.n_out else np.arange(p.n_out)
        else:
            idx_out = idx_in[:n_out]
        f = p.f_in[idx_in]
        if noise_sd > 0:
            f = f + noise_sd * rng.standard_normal(f.shape)
        out.append(FunctionPair(p.x_in[idx_in], f, p.x_out[idx_out], p.y_out[idx_out]))
    return replace(ds, instances=out)


# --------------------------------------------------------------------------
# Binary container and CSV import
# --------------------------------------------------------------------------

MAGIC = b"DGFM"
VERSION = 1
_HEADER = struct.Struct("<4sHIIIQ")


def dumps(ds: Dataset) -> bytes:
    """Serialize to the little-endian ``DGFM`` container.

    Layout: magic, u16 version, u32 d, u32 d0, u32 d1, u64 count, f64[d, 2]
    bounding box, then per instance u64 N_in, f64 X_in[N_in, d],
    f64 F[N_in, d0], u64 N_out, f64 X_out[N_out, d], f64 Y[N_out, d1].
    """
    buf = io.BytesIO()
    buf.write(_HEADER.pack(MAGIC, VERSION, ds.d, ds.d_in, ds.d_out, len(ds)))
    buf.write(np.ascontiguousarray(ds.bounds, dtype="<f8").tobytes())
    for p in ds.instances:
        buf.write(struct.pack("<Q", p.n_in))
        buf.write(np.ascontiguousarray(p.x_in, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(p.f_in, dtype="<f8").tobytes())
        buf.write(struct.pack("<Q", p.n_out))
        buf.write(np.ascontiguousarray(p.x_out, dtype="<f8").tobytes())
        buf.write(np.ascontiguousarray(p.y_out, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(raw: bytes) -> Dataset:
    pos = 0

    def take(nbytes: int, what: str) -> bytes:
        nonlocal pos
        if pos + nbytes > len(raw):
            raise FormatError(f"truncated file while reading {what}", pos)
        chunk = raw[pos : pos + nbytes]
        pos += nbytes
        return chunk

    magic, version, d, d0, d1, count = _HEADER.unpack(take(_HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", 0)
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", 4)
    if d < 1 or d0 < 1 or d1 < 1:
        raise FormatError("dimensions must be positive", 6)

    def arr(rows: int, cols: int, what: str) -> np.ndarray:
        return np.frombuffer(take(8 * rows * cols, what), dtype="<f8").reshape(rows, cols).astype(np.float64)

    bounds = arr(d, 2, "bounding box")
    pairs = []
    for i in range(count):
        (n_in,) = struct.unpack("<Q", take(8, f"instance {i} N_in"))
        x_in = arr(n_in, d, f"instance {i} X_in")
        f_in = arr(n_in, d0, f"instance {i} F")
        (n_out,) = struct.unpack("<Q", take(8, f"instance {i} N_out"))
        x_out = arr(n_out, d, f"instance {i} X_out")
        y_out = arr(n_out, d1, f"instance {i} Y")
        pairs.append(FunctionPair(x_in, f_in, x_out, y_out))
    if pos != len(raw):
        raise FormatError("trailing bytes after last instance", pos)
    return Dataset(pairs, d, d0, d1, bounds)


def save(ds: Dataset, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(dumps(ds))


def load(path: str | os.PathLike) -> Dataset:
    with open(path, "rb") as fh:
        return loads(fh.read())


def _read_csv(path: str, prefix: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise FormatError(f"{path}: empty CSV", 0)
    header = [h.strip() for h in rows[0]]
    xcols = [i for i, h in enumerate(header) if h.startswith("x")]
    vcols = [i for i, h in enumerate(header) if h.startswith(prefix)]
    if not xcols or not vcols:
        raise FormatError(f"{path}: header needs x1.. and {prefix}1.. columns", 0)
    data = np.array([[float(r[i]) for i in range(len(header))] for r in rows[1:] if r], dtype=np.float64)
    if data.size == 0:
        raise FormatError(f"{path}: no data rows", 0)
    return data[:, xcols], data[:, vcols]


def load_csv_pair(in_path: str, out_path: str) -> FunctionPair:
    """One instance from an input CSV (``x1..xd, f1..fd0``) and an output CSV (``x1..xd, y1..yd1``)."""
    x_in, f_in = _read_csv(in_path, "f")
    x_out, y_out = _read_csv(out_path, "y")
    return FunctionPair(x_in, f_in, x_out, y_out)


def load_csv_dir(directory: str, bounds: Sequence[Sequence[float]] | None = None) -> Dataset:
    """Every ``<name>_in.csv`` / ``<name>_out.csv`` pair in ``directory``, sorted by name.

    Without explicit ``bounds`` the bounding box is the coordinate extent of
    all instances.
    """
    ins = sorted(glob.glob(os.path.join(directory, "*_in.csv")))
    if not ins:
        raise FormatError(f"{directory}: no *_in.csv files", 0)
    pairs = [load_csv_pair(p, p[: -len("_in.csv")] + "_out.csv") for p in ins]
    d = pairs[0].x_in.shape[1]
    if bounds is None:
        allx = np.concatenate([np.concatenate([p.x_in, p.x_out]) for p in pairs])
        bounds = np.stack([allx.min(0), allx.max(0)], axis=-1)
    return Dataset(pairs, d, pairs[0].f_in.shape[1], pairs[0].y_out.shape[1], np.asarray(bounds))
