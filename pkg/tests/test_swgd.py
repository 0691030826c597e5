"""Sliced-transport optimizer: oracles for distances, gradients, subsets."""
import itertools
import math
import warnings

import numpy as np
import pytest

from stbntile import (
    EmptySubsetError,
    InvalidInputError,
    InvalidParameterError,
    OptimizerConfig,
    SliceDirection,
    TargetDensity,
    compose,
    estimate_gradient,
    filter_subset,
    folded_support,
    init_random,
    make_spatial_gaussian,
    make_taa_kernel,
    optimize,
    project,
    target_projection,
    w1d,
    w1d_gradient,
)
from stbntile import swgd
from stbntile.swgd import reflect_unit


def _kernel():
    return compose(ks=make_spatial_gaussian(), ka=make_taa_kernel(length=8))


# ---------------------------------------------------------------- w1d oracle

def _exhaustive_w(xs, ys):
    best = math.inf
    for perm in itertools.permutations(range(len(ys))):
        cost = sum((x - ys[p]) ** 2 for x, p in zip(xs, perm)) / len(xs)
        best = min(best, cost)
    return math.sqrt(best)


def test_w1d_equals_exhaustive_minimum():
    rng = np.random.default_rng(42)
    for _ in range(40):
        m = int(rng.integers(1, 7))
        xs = np.sort(rng.random(m))
        ys = np.sort(rng.random(m))
        assert abs(w1d(xs, ys) - _exhaustive_w(list(xs), list(ys))) < 1e-12


def test_w1d_zero_on_identical_sets():
    xs = np.sort(np.random.default_rng(0).random(9))
    assert w1d(xs, xs) == 0.0


def test_w1d_validates_inputs():
    with pytest.raises(InvalidInputError):
        w1d(np.array([0.1, 0.2]), np.array([0.1]))
    with pytest.raises(InvalidInputError):
        w1d(np.empty(0), np.empty(0))
    with pytest.raises(InvalidInputError):
        w1d(np.array([0.5, 0.1]), np.array([0.1, 0.5]))  # unsorted left side


# ---------------------------------------------------------------- subsets

def test_filter_subset_members_match_thresholded_fold():
    kernel = _kernel()
    tile = init_random((8, 8, 4), 1, 2, seed=2)
    offsets, weights = folded_support(kernel, tile.dims)
    center = (3, 5, 2)                      # (t, y, x)
    z = float(np.quantile(np.abs(weights), 0.7))
    sub = filter_subset(tile, kernel, center, z)
    want = set()
    for (dt, dy, dx), w in zip(offsets.tolist(), weights.tolist()):
        if abs(w) > z:
            want.add(((center[0] - dt) % 4, (center[1] - dy) % 8, (center[2] - dx) % 8))
    got = {tuple(c) for c in sub.cells.tolist()}
    assert got == want
    assert sub.size == len(want) * tile.spp


def test_filter_subset_empty_raises():
    kernel = _kernel()
    tile = init_random((8, 8, 4), 1, 2, seed=2)
    _, weights = folded_support(kernel, tile.dims)
    with pytest.raises(EmptySubsetError):
        filter_subset(tile, kernel, (0, 0, 0), float(np.abs(weights).max()))


def test_project_returns_sorted_projections():
    kernel = _kernel()
    tile = init_random((8, 8, 4), 1, 2, seed=2)
    sub = filter_subset(tile, kernel, (1, 1, 1), 1e-4)
    d = SliceDirection(np.array([0.6, -0.8]))
    xs = project(sub, d)
    assert xs.shape == (sub.size,)
    assert np.all(np.diff(xs) >= 0)
    payload = tile.samples.reshape(-1, 2)[sub.flat_members]
    np.testing.assert_allclose(xs, np.sort(payload @ np.array([0.6, -0.8])), atol=1e-12)


def test_target_projection_sorted_and_seeded():
    d = SliceDirection(np.array([1.0, 0.0]))
    dens = TargetDensity(dim=2)
    a = target_projection(12, d, dens, np.random.default_rng(3))
    b = target_projection(12, d, dens, np.random.default_rng(3))
    np.testing.assert_array_equal(a, b)
    assert np.all(np.diff(a) >= 0) and a.shape == (12,)


def test_slice_direction_requires_unit_norm():
    with pytest.raises(InvalidInputError):
        SliceDirection(np.array([0.5, 0.5]))
    SliceDirection(np.array([1.0, 0.0]))    # exact unit vector accepted


# ---------------------------------------------------------------- gradient

def test_gradient_matches_finite_differences():
    # mini version of the full check; the repository gate runs 100 subsets
    kernel = _kernel()
    tile = init_random((16, 16, 8), 1, 2, seed=3)
    payload = tile.samples.reshape(-1, 2)
    wmax = float(np.abs(folded_support(kernel, tile.dims)[1]).max())
    rng = np.random.default_rng(5)
    checked = 0
    h = 1e-6
    while checked < 10:
        c = (int(rng.integers(8)), int(rng.integers(16)), int(rng.integers(16)))
        z = float(rng.uniform(0, wmax))
        try:
            sub = filter_subset(tile, kernel, c, z)
        except EmptySubsetError:
            continue
        th = rng.standard_normal(2)
        th /= np.linalg.norm(th)
        d = SliceDirection(th)
        tgt = np.sort(rng.random(sub.size))
        g = w1d_gradient(sub, d, tgt)
        fd = np.zeros_like(g)
        for i in range(sub.size):
            for j in range(2):
                orig = payload[sub.flat_members[i], j]
                payload[sub.flat_members[i], j] = orig + h
                up = w1d(project(sub, d), tgt) ** 2
                payload[sub.flat_members[i], j] = orig - h
                dn = w1d(project(sub, d), tgt) ** 2
                payload[sub.flat_members[i], j] = orig
                fd[i, j] = (up - dn) / (2 * h)
        assert np.linalg.norm(fd - g) / np.linalg.norm(g) < 1e-4
        checked += 1


def test_gradient_points_toward_targets():
    # one member, one target: gradient of (x-y)^2 along theta is 2(x-y)theta
    kernel = compose(ks=make_spatial_gaussian(0.6))   # 3x3 at tight sigma
    tile = init_random((4, 4, 2), 1, 2, seed=1)
    _, weights = folded_support(kernel, tile.dims)
    z = float(np.sort(np.abs(weights))[-2])           # only the peak survives
    sub = filter_subset(tile, kernel, (0, 2, 2), z)
    assert sub.size == 1
    d = SliceDirection(np.array([1.0, 0.0]))
    x = float(tile.samples[0, 2, 2, 0, 0])
    tgt = np.array([x - 0.25])
    g = w1d_gradient(sub, d, tgt)
    np.testing.assert_allclose(g, [[2 * 0.25, 0.0]], atol=1e-12)


# ---------------------------------------------------------------- batches

def test_estimate_gradient_deterministic():
    kernel = _kernel()
    tile = init_random((8, 8, 4), 1, 2, seed=4)
    a = estimate_gradient(tile, kernel, 32, np.random.Generator(np.random.Philox(key=9)))
    b = estimate_gradient(tile, kernel, 32, np.random.Generator(np.random.Philox(key=9)))
    np.testing.assert_array_equal(a.gradient, b.gradient)
    assert a.mean_distance == b.mean_distance


def test_batch_backends_bitwise_equal(monkeypatch):
    if not swgd._HAVE_NUMBA:
        pytest.skip("compiled backend unavailable")
    kernel = _kernel()
    tile = init_random((8, 8, 4), 2, 3, seed=4)
    a = estimate_gradient(tile, kernel, 64, np.random.Generator(np.random.Philox(key=1)))
    monkeypatch.setattr(swgd, "_HAVE_NUMBA", False)
    b = estimate_gradient(tile, kernel, 64, np.random.Generator(np.random.Philox(key=1)))
    np.testing.assert_array_equal(a.gradient, b.gradient)
    assert a.mean_distance == b.mean_distance
    assert a.empty_subsets == b.empty_subsets


# ---------------------------------------------------------------- reflection

def test_reflect_unit_known_values():
    v = np.array([-0.1, 0.3, 1.2, 2.3, -1.7, 0.0])
    out = reflect_unit(v)
    np.testing.assert_allclose(out, [0.1, 0.3, 0.8, 0.3, 0.3, 0.0], atol=1e-12)


def test_reflect_unit_stays_below_one():
    v = np.array([1.0, 1.0 - 1e-18, 3.0, -1.0])
    out = reflect_unit(v)
    assert np.all(out >= 0.0) and np.all(out < 1.0)


def test_reflect_unit_preserves_uniformity():
    rng = np.random.default_rng(11)
    x = rng.uniform(-3, 5, size=200_000)
    r = reflect_unit(x)
    hist, _ = np.histogram(r, bins=20, range=(0, 1))
    assert hist.min() > 0.9 * len(x) / 20 and hist.max() < 1.1 * len(x) / 20


# ---------------------------------------------------------------- optimize

def test_optimize_zero_iterations_returns_init():
    kernel = _kernel()
    tile = init_random((8, 8, 4), 1, 2, seed=6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = optimize(tile, kernel, OptimizerConfig(iterations=0, seed=6))
    np.testing.assert_array_equal(res.tile.samples, tile.samples)
    assert res.log == []


def test_optimize_deterministic():
    kernel = _kernel()
    tile = init_random((8, 8, 4), 1, 2, seed=6)
    cfg = OptimizerConfig(iterations=5, batch_size=32, seed=6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = optimize(tile, kernel, cfg)
        b = optimize(tile, kernel, cfg)
    np.testing.assert_array_equal(a.tile.samples, b.tile.samples)
    assert [e.objective for e in a.log] == [e.objective for e in b.log]


def test_optimize_does_not_mutate_input():
    kernel = _kernel()
    tile = init_random((8, 8, 4), 1, 2, seed=6)
    before = tile.samples.copy()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        optimize(tile, kernel, OptimizerConfig(iterations=3, batch_size=16, seed=0))
    np.testing.assert_array_equal(tile.samples, before)


def test_lipschitz_scale_affects_log_not_samples():
    kernel = _kernel()
    tile = init_random((8, 8, 4), 1, 2, seed=6)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = optimize(tile, kernel, OptimizerConfig(iterations=4, batch_size=16, seed=1))
        b = optimize(tile, kernel, OptimizerConfig(iterations=4, batch_size=16, seed=1,
                                                   lipschitz_scale=2.5))
    np.testing.assert_array_equal(a.tile.samples, b.tile.samples)
    for ea, eb in zip(a.log, b.log):
        assert abs(eb.objective - 2.5 * ea.objective) < 1e-12


def test_optimize_warns_on_small_tile():
    kernel = _kernel()
    tile = init_random((8, 8, 4), 1, 2, seed=0)
    with pytest.warns(UserWarning, match="10x"):
        optimize(tile, kernel, OptimizerConfig(iterations=0, seed=0))


def test_optimize_callback_sees_every_iteration():
    kernel = _kernel()
    tile = init_random((8, 8, 4), 1, 2, seed=6)
    seen = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        optimize(tile, kernel, OptimizerConfig(iterations=4, batch_size=16, seed=0),
                 callback=lambda entry, work: seen.append(entry.iteration))
    assert seen == [0, 1, 2, 3]


def test_descent_on_fixed_targets():
    # repeated steps toward one fixed target set must shrink the distance
    kernel = _kernel()
    tile = init_random((16, 16, 8), 1, 2, seed=7)
    payload = tile.samples.reshape(-1, 2)
    sub = filter_subset(tile, kernel, (2, 4, 4), 5e-4)
    d = SliceDirection(np.array([0.6, 0.8]))
    tgt = np.sort(np.random.default_rng(1).random(sub.size))
    first = w1d(project(sub, d), tgt)
    for _ in range(200):
        payload[sub.flat_members] -= 0.5 * w1d_gradient(sub, d, tgt)
    assert w1d(project(sub, d), tgt) < 0.7 * first


def test_optimizer_config_validation():
    with pytest.raises(InvalidParameterError):
        OptimizerConfig(iterations=-1)
    with pytest.raises(InvalidParameterError):
        OptimizerConfig(batch_size=0)
    with pytest.raises(InvalidParameterError):
        OptimizerConfig(learning_rate=0.0)
    with pytest.raises(InvalidParameterError):
        OptimizerConfig(adam_beta1=1.0)
    with pytest.raises(InvalidParameterError):
        OptimizerConfig(lipschitz_scale=0.0)
