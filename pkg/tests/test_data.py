import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dgpfm import data as D


def test_grf_reproducible_and_statistics():
    a = D.gen_grf_1d(64, seed=3)
    assert np.array_equal(a, D.gen_grf_1d(64, seed=3))
    assert not np.array_equal(a, D.gen_grf_1d(64, seed=4))
    with pytest.raises(ValueError):
        D.gen_grf_1d(8, seed=0)


def test_grf_pointwise_variance_and_mean():
    rng = np.random.default_rng(0)
    n_draws, max_mode = 100_000, 31
    x0 = 0.37
    vals = np.array([D.sample_grf_1d(rng, max_mode)(x0) for _ in range(n_draws)])
    var = D.grf_pointwise_variance(max_mode)
    # variance of the sample variance for Gaussian data is 2 var^2 / (n - 1)
    assert abs(vals.var(ddof=1) - var) < 3 * np.sqrt(2 * var**2 / (n_draws - 1))
    assert abs(vals.mean()) < 3 * np.sqrt(var / n_draws)


def test_grf_grid_draw_matches_field_evaluation():
    # the irfft path and the explicit trigonometric sum agree
    n = 32
    rng = np.random.default_rng(5)
    fld = D.sample_grf_1d(rng, n // 2 - 1)
    grid = D.gen_grf_1d(n, seed=5)
    assert np.allclose(grid, fld(np.arange(n) / n), atol=1e-12)


def test_antiderivative_constant_and_odd():
    x = np.linspace(0, 1, 33)
    assert np.allclose(D.antiderivative(np.ones_like, 33), x, atol=1e-15)
    u = D.antiderivative(lambda t: np.sin(2 * np.pi * t) + (t - 0.5) ** 3, 65)
    assert abs(u[-1]) < 1e-12


def fd4(u, h):
    """Fourth-order central differences inside, fourth-order one-sided at the ends."""
    d = np.empty_like(u)
    d[2:-2] = (u[:-4] - 8 * u[1:-3] + 8 * u[3:-1] - u[4:]) / (12 * h)
    for i in (0, 1):
        d[i] = (-25 * u[i] + 48 * u[i + 1] - 36 * u[i + 2] + 16 * u[i + 3] - 3 * u[i + 4]) / (12 * h)
        j = len(u) - 1 - i
        d[j] = (25 * u[j] - 48 * u[j - 1] + 36 * u[j - 2] - 16 * u[j - 3] + 3 * u[j - 4]) / (12 * h)
    return d


def test_antiderivative_derivative_recovers_input():
    ds = D.gen_antiderivative(5, 128, seed=0)
    for p in ds.instances:
        x, f, u = p.x_in[:, 0], p.f_in[:, 0], p.y_out[:, 0]
        assert np.abs(fd4(u, x[1] - x[0]) - f).max() < 1e-3
    assert ds.d == 1 and len(ds) == 5


def test_antiderivative_matches_closed_form():
    rng = np.random.default_rng(0)
    fld = D.sample_grf_1d(rng, 16)
    x = np.linspace(0, 1, 128)
    k = np.arange(1, 17)
    w = 2 * np.pi * k
    exact = fld.c0 * x + (np.sin(np.outer(x, w)) / w) @ fld.a + ((1 - np.cos(np.outer(x, w))) / w) @ fld.b
    assert np.abs(D.antiderivative(fld, 128) - exact).max() < 1e-8


def test_burgers_constant_state_is_steady():
    u = D.solve_burgers(np.full(64, 0.7), 0.1)
    assert np.allclose(u, 0.7, atol=1e-13)


def test_burgers_sine_grid_refinement():
    n = 128
    x = np.arange(n) / n
    coarse = D.solve_burgers(np.sin(2 * np.pi * x), 0.1)
    fine = D.solve_burgers(np.sin(2 * np.pi * np.arange(4 * n) / (4 * n)), 0.1)[::4]
    assert np.abs(coarse - fine).max() < 1e-5


def test_burgers_time_step_converged():
    n = 128
    u0 = D.gen_grf_1d(n, seed=2)
    u = D.solve_burgers(u0, 0.1)
    h = 1.0 / n
    dt = min(0.2 * h / np.abs(u0).max(), 1e-2)
    half = D.solve_burgers(u0, 0.1, dt=dt / 2)
    assert np.abs(u - half).max() < 1e-6


def test_burgers_energy_non_increasing():
    u0 = D.gen_grf_1d(64, seed=9)
    _, energy = D.solve_burgers(u0, 0.1, return_energy=True)
    assert np.all(np.diff(energy) <= 1e-12 * energy[0])


def test_burgers_refinement_ladder_monotone():
    rng = np.random.default_rng(1)
    fld = D.sample_grf_1d(rng, 20)
    ref = D.solve_burgers(fld(np.arange(512) / 512), 0.1)
    errs = []
    for n in (64, 128, 256):
        u = D.solve_burgers(fld(np.arange(n) / n), 0.1)
        errs.append(np.abs(u - ref[:: 512 // n]).max())
    assert errs[0] > errs[1] > errs[2]


def test_burgers_blowup_detected():
    with pytest.raises(D.GenerationError):
        D.solve_burgers(D.gen_grf_1d(64, seed=0) * 50, 1e-4, dt=0.05)
    with pytest.raises(ValueError):
        D.gen_burgers_1d(1, 64, nu=0.0)


def test_burgers_dataset_shape_and_determinism():
    a = D.gen_burgers_1d(3, 64, nu=0.1, seed=7)
    b = D.gen_burgers_1d(3, 64, nu=0.1, seed=7)
    assert D.dumps(a) == D.dumps(b)
    assert a[0].x_in[-1, 0] == 63 / 64


def test_poisson_eigenfunction():
    n = 33
    g = np.linspace(0, 1, n)
    X, Y = np.meshgrid(g, g, indexing="ij")
    f = np.sin(np.pi * X) * np.sin(np.pi * Y)
    u = D.solve_poisson_dirichlet(f)
    assert np.abs(u - f / (2 * np.pi**2)).max() < 1e-14


def test_poisson_boundary_and_laplacian_rate():
    errs, hs = [], []
    rng = np.random.default_rng(0)
    fld = D.sample_grf_2d(rng, 4)
    for n in (17, 33, 65):
        g = np.linspace(0, 1, n)
        X, Y = np.meshgrid(g, g, indexing="ij")
        f = fld(X, Y)
        u = D.solve_poisson_dirichlet(f)
        assert np.all(u[0] == 0) and np.all(u[-1] == 0) and np.all(u[:, 0] == 0) and np.all(u[:, -1] == 0)
        h = 1.0 / (n - 1)
        lap = (u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4 * u[1:-1, 1:-1]) / h**2
        errs.append(np.abs(-lap - f[1:-1, 1:-1]).max())
        hs.append(h)
    assert np.polyfit(np.log(hs), np.log(errs), 1)[0] >= 1.9


def test_poisson_dataset():
    ds = D.gen_poisson_2d(2, 9, seed=1)
    assert ds.d == 2 and ds[0].x_in.shape == (81, 2)
    assert D.dumps(ds) == D.dumps(D.gen_poisson_2d(2, 9, seed=1))


def test_corrupt_identity_and_masks():
    ds = D.gen_antiderivative(4, 64, seed=0)
    same = D.corrupt(ds, 1.0, 1.0, 0.0, seed=1)
    assert D.dumps(same) == D.dumps(ds)
    sub = D.corrupt(ds, 0.5, 0.5, 0.0, independent_masks=True, seed=1)
    for p in sub.instances:
        assert p.n_in == 32 and p.n_out == 32
        assert not np.array_equal(p.x_in, p.x_out)
    shared = D.corrupt(ds, 0.5, 0.5, 0.0, independent_masks=False, seed=1)
    assert all(np.array_equal(p.x_in, p.x_out) for p in shared.instances)
    with pytest.raises(ValueError):
        D.corrupt(ds, 0.0, 1.0)


def test_corrupt_noise_level():
    ds = D.gen_antiderivative(40, 128, seed=0)
    noisy = D.corrupt(ds, 1.0, 1.0, 0.1, seed=2)
    diff = np.concatenate([(a.f_in - b.f_in).ravel() for a, b in zip(noisy.instances, ds.instances)])
    assert abs(diff.std() - 0.1) < 0.005
    assert all(np.array_equal(a.y_out, b.y_out) for a, b in zip(noisy.instances, ds.instances))


def test_bounding_box_enforced():
    p = D.FunctionPair([0.0, 2.0], [1.0, 1.0], [0.5], [0.0])
    with pytest.raises(ValueError):
        D.Dataset([p], 1, 1, 1, np.array([[0.0, 1.0]]))


def test_save_load_round_trip(tmp_path):
    ds = D.corrupt(D.gen_poisson_2d(3, 6, seed=0), 0.7, 0.5, 0.1, seed=3)
    path = tmp_path / "d.dgfm"
    D.save(ds, path)
    back = D.load(path)
    assert D.dumps(back) == D.dumps(ds)
    for a, b in zip(ds.instances, back.instances):
        for name in ("x_in", "f_in", "x_out", "y_out"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
    assert np.array_equal(back.bounds, ds.bounds)


def test_format_errors_carry_offsets():
    raw = D.dumps(D.gen_antiderivative(2, 16, seed=0))
    with pytest.raises(D.FormatError) as info:
        D.loads(raw[:100])
    assert info.value.offset <= 100 and "offset" in str(info.value)
    with pytest.raises(D.FormatError) as info:
        D.loads(b"XXXX" + raw[4:])
    assert info.value.offset == 0
    with pytest.raises(D.FormatError):
        D.loads(raw + b"\0")
    bad_version = raw[:4] + (2).to_bytes(2, "little") + raw[6:]
    with pytest.raises(D.FormatError) as info:
        D.loads(bad_version)
    assert info.value.offset == 4


def test_csv_import(tmp_path):
    (tmp_path / "a_in.csv").write_text("x1,f1\n0.0,1.5\n1.0,-2.0\n")
    (tmp_path / "a_out.csv").write_text("x1,y1\n0.25,3.0\n0.75,4.0\n")
    ds = D.load_csv_dir(str(tmp_path))
    want = D.FunctionPair([0.0, 1.0], [1.5, -2.0], [0.25, 0.75], [3.0, 4.0])
    got = ds[0]
    for name in ("x_in", "f_in", "x_out", "y_out"):
        assert np.array_equal(getattr(got, name), getattr(want, name))
    assert np.array_equal(ds.bounds, [[0.0, 1.0]])
    (tmp_path / "b_in.csv").write_text("")
    (tmp_path / "b_out.csv").write_text("")
    with pytest.raises(D.FormatError):
        D.load_csv_dir(str(tmp_path))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), d=st.integers(1, 2))
def test_normalizer_round_trip(seed, d):
    rng = np.random.default_rng(seed)
    lo = rng.uniform(-5, 0, size=d)
    hi = lo + rng.uniform(0.5, 5, size=d)
    pairs = []
    for _ in range(3):
        x = lo + (hi - lo) * rng.uniform(size=(7, d))
        pairs.append(D.FunctionPair(x, rng.normal(3, 2, size=(7, 2)), x, rng.normal(-1, 4, size=7)))
    ds = D.Dataset(pairs, d, 2, 1, np.stack([lo, hi], -1))
    norm = D.Normalizer.fit(ds)
    p = ds[0]
    assert np.allclose(norm.x_inverse(norm.x(p.x_in)), p.x_in, atol=1e-12)
    assert np.allclose(norm.f_inverse(norm.f(p.f_in)), p.f_in, atol=1e-12)
    assert np.allclose(norm.y_inverse(norm.y(p.y_out)), p.y_out, atol=1e-12)
    nds = norm.apply_dataset(ds)
    allx = np.concatenate([q.x_in for q in nds.instances])
    assert allx.min() >= -1e-12 and allx.max() <= 1 + 1e-12
    again = D.Normalizer.from_dict(norm.to_dict())
    assert np.array_equal(again.y(p.y_out), norm.y(p.y_out))
