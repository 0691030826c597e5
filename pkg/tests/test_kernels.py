"""Kernel construction, composition, folding, and convolution contracts."""
import math

import numpy as np
import pytest

from stbntile import (
    InvalidInputError,
    InvalidParameterError,
    TableParseError,
    TableValidationError,
    TemporalPerceptKernel,
    compose,
    convolve_sequence,
    load_kernel_table,
    make_spatial_gaussian,
    make_taa_kernel,
    make_temporal_gaussian,
    make_temporal_percept,
    write_kernel_table,
)
from stbntile.kernels import causal_matrix, temporal_convolve_frames
from stbntile.sequences import FrameSequence
from stbntile.swgd import folded_support


# ---------------------------------------------------------------- spatial

def test_spatial_default_radius():
    # exp(-(r+1)^2 / (2*2.1^2)) drops below 0.2 of peak first at r=3:
    # exp(-16/8.82) = 0.163 < 0.2 while exp(-9/8.82) = 0.360 >= 0.2.
    ks = make_spatial_gaussian()
    assert ks.radius == 3
    assert ks.weights.shape == (7, 7)


def test_spatial_weights_match_formula():
    sigma = 2.1
    ks = make_spatial_gaussian(sigma)
    raw = np.array([[math.exp(-(dx * dx + dy * dy) / (2 * sigma * sigma))
                     for dx in range(-3, 4)] for dy in range(-3, 4)])
    np.testing.assert_allclose(ks.weights, raw / raw.sum(), rtol=0, atol=1e-15)
    assert abs(ks.weights.sum() - 1.0) < 1e-12


def test_spatial_radius_grows_with_sigma():
    assert make_spatial_gaussian(1.0).radius < make_spatial_gaussian(4.0).radius


def test_spatial_rejects_bad_params():
    with pytest.raises(InvalidParameterError):
        make_spatial_gaussian(0.0)
    with pytest.raises(InvalidParameterError):
        make_spatial_gaussian(2.1, truncation_threshold=0.0)
    with pytest.raises(InvalidParameterError):
        make_spatial_gaussian(2.1, truncation_threshold=1.5)


# ---------------------------------------------------------------- TAA

def test_taa_default_length_is_tail_cutoff():
    # smallest j with 0.8^j < 1e-3 is ceil(ln(1e-3)/ln(0.8)) = 31
    ka = make_taa_kernel()
    assert ka.length == 31


def test_taa_weights_renormalized_geometric():
    ka = make_taa_kernel(0.2, length=8)
    expect = 0.2 * 0.8 ** np.arange(8)
    expect /= expect.sum()
    np.testing.assert_allclose(ka.weights, expect, rtol=0, atol=1e-15)
    assert abs(ka.weights.sum() - 1.0) < 1e-12


def test_taa_rejects_bad_alpha():
    for alpha in (0.0, 1.5, -0.1):
        with pytest.raises(InvalidParameterError):
            make_taa_kernel(alpha)


# ---------------------------------------------------------------- percept

def test_percept_builtin_channels():
    kt = make_temporal_percept()
    sus = dict(kt.sustained)
    tra = dict(kt.transient)
    assert len(sus) == 8 and len(tra) == 8
    assert all(o <= 0 for o in sus) and all(o <= 0 for o in tra)
    assert abs(sum(sus.values()) - 1.0) < 1e-12
    assert abs(sum(tra.values())) < 1e-12          # transient channel has no DC
    assert abs(kt.dc_gain - 1.0) < 1e-12
    # sustained is a decaying exponential with rate dt/tau = 1/9
    w = np.array([sus[-j] for j in range(8)])
    np.testing.assert_allclose(w[1:] / w[:-1], math.exp(-1.0 / 9.0), atol=1e-12)


def test_percept_transient_gain_scales_channel():
    k1 = make_temporal_percept(transient_gain=1.0)
    k2 = make_temporal_percept(transient_gain=2.5)
    np.testing.assert_allclose(k2.transient_weights, 2.5 * k1.transient_weights)
    np.testing.assert_allclose(k2.sustained_weights, k1.sustained_weights)


def test_temporal_gaussian_symmetric():
    kt = make_temporal_gaussian()
    offs = kt.sustained_offsets
    assert offs.min() == -3 and offs.max() == 3
    assert not kt.causal
    w = dict(kt.sustained)
    for j in range(1, 4):
        assert abs(w[j] - w[-j]) < 1e-15
    assert kt.transient_offsets.size == 0


def test_percept_validators():
    with pytest.raises(InvalidParameterError):
        make_temporal_percept(frame_rate=0.0)
    # sustained must be nonnegative and normalized
    with pytest.raises(TableValidationError):
        TemporalPerceptKernel(
            frame_rate=60.0,
            sustained_offsets=np.array([0, -1]),
            sustained_weights=np.array([0.7, 0.7]),
            transient_offsets=np.empty(0, dtype=np.int64),
            transient_weights=np.empty(0),
            causal=True,
        )


# ---------------------------------------------------------------- composition

def _mini_percept(offsets, weights):
    return TemporalPerceptKernel(
        frame_rate=60.0,
        sustained_offsets=np.asarray(offsets, dtype=np.int64),
        sustained_weights=np.asarray(weights, dtype=np.float64),
        transient_offsets=np.empty(0, dtype=np.int64),
        transient_weights=np.empty(0),
        causal=True,
    )


def test_compose_convolves_temporal_taps():
    kt = _mini_percept([0, -1], [0.7, 0.3])
    ka = make_taa_kernel(0.4, length=2)     # weights [0.4, 0.24]/0.64 = [0.625, 0.375]
    k = compose(kt=kt, ka=ka)
    lags = dict(zip(k.t_lags.tolist(), k.weights[:, 0, 0].tolist()))
    assert set(lags) == {0, 1, 2}
    assert abs(lags[0] - 0.7 * 0.625) < 1e-12
    assert abs(lags[1] - (0.7 * 0.375 + 0.3 * 0.625)) < 1e-12
    assert abs(lags[2] - 0.3 * 0.375) < 1e-12
    assert abs(k.dc_gain - 1.0) < 1e-12


def test_compose_outer_product_with_spatial():
    ks = make_spatial_gaussian(1.0)
    ka = make_taa_kernel(0.2, length=3)
    k = compose(ks=ks, ka=ka)
    assert k.weights.shape == (3,) + ks.weights.shape
    for i in range(3):
        np.testing.assert_allclose(k.weights[i], ka.weights[i] * ks.weights, atol=1e-15)
    assert k.extent == (ks.weights.shape[1], ks.weights.shape[0], 3)


def test_compose_identity_is_delta():
    k = compose()
    assert k.weights.shape == (1, 1, 1)
    assert k.weights[0, 0, 0] == 1.0
    assert k.t_lags.tolist() == [0]


# ---------------------------------------------------------------- folding

def _brute_fold(kernel, dims):
    x, y, t = dims
    acc = {}
    kh, kw = kernel.weights.shape[1:]
    ry, rx = kh // 2, kw // 2
    for li, lag in enumerate(kernel.t_lags.tolist()):
        for dy in range(-ry, ry + 1):
            for dx in range(-rx, rx + 1):
                w = kernel.weights[li, dy + ry, dx + rx]
                key = (lag % t, dy % y, dx % x)
                acc[key] = acc.get(key, 0.0) + w
    return {k: v for k, v in acc.items() if v != 0.0}


def test_folded_support_matches_brute_force():
    ks = make_spatial_gaussian()
    k = compose(ks=ks, ka=make_taa_kernel(length=12))
    for dims in [(4, 4, 2), (32, 32, 8), (5, 7, 3)]:
        offsets, weights = folded_support(k, dims)
        got = {tuple(o): w for o, w in zip(offsets.tolist(), weights.tolist())}
        want = _brute_fold(k, dims)
        assert set(got) == set(want)
        for key in want:
            assert abs(got[key] - want[key]) < 1e-12


def test_folding_sums_aliased_taps():
    # 12 EMA taps on a 4-frame torus: folded weight at dt=0 sums taps 0,4,8.
    ka = make_taa_kernel(0.2, length=12)
    k = compose(ka=ka)
    offsets, weights = folded_support(k, (1, 1, 4))
    w = {o[0]: v for o, v in zip(offsets.tolist(), weights.tolist())}
    assert set(w) == {0, 1, 2, 3}
    expect = ka.weights[0] + ka.weights[4] + ka.weights[8]
    assert abs(w[0] - expect) < 1e-14


# ---------------------------------------------------------------- convolution

def test_toroidal_impulse_response_is_folded_kernel():
    ks = make_spatial_gaussian(1.2)
    k = compose(ks=ks, ka=make_taa_kernel(length=5))
    dims = (6, 5, 4)                       # (X, Y, T)
    values = np.zeros((4, 5, 6))
    values[1, 2, 3] = 1.0
    out = convolve_sequence(FrameSequence(values=values), k)
    offsets, weights = folded_support(k, dims)
    expect = np.zeros_like(values)
    for (dt, dy, dx), w in zip(offsets.tolist(), weights.tolist()):
        expect[(1 + dt) % 4, (2 + dy) % 5, (3 + dx) % 6] += w
    np.testing.assert_allclose(out.values, expect, atol=1e-12)


def test_toroidal_matches_tiled_brute_force():
    rng = np.random.default_rng(10)
    values = rng.standard_normal((6, 8, 8))
    ks = make_spatial_gaussian(1.0)
    k = compose(ks=ks, ka=make_taa_kernel(length=4))
    out = convolve_sequence(FrameSequence(values=values), k)
    big = np.tile(values, (3, 3, 3))
    kh, kw = ks.weights.shape
    ry, rx = kh // 2, kw // 2
    expect = np.zeros_like(values)
    for li, lag in enumerate(k.t_lags.tolist()):
        for dy in range(-ry, ry + 1):
            for dx in range(-rx, rx + 1):
                w = k.weights[li, dy + ry, dx + rx]
                expect += w * big[6 + np.arange(6) - lag][:, 8 + np.arange(8) - dy][:, :, 8 + np.arange(8) - dx]
    np.testing.assert_allclose(out.values, expect, atol=1e-10)


def test_causal_renormalized_passes_constants():
    kt = make_temporal_percept()
    values = np.full((10, 3, 3), 0.75)
    out = temporal_convolve_frames(values, -kt.sustained_offsets, kt.sustained_weights,
                                   renormalize=True)
    np.testing.assert_allclose(out, 0.75, atol=1e-12)


def test_causal_zero_pad_differs_early_matches_late():
    kt = make_temporal_percept()
    rng = np.random.default_rng(3)
    values = rng.standard_normal((12, 2, 2))
    lags, w = -kt.sustained_offsets, kt.sustained_weights
    renorm = temporal_convolve_frames(values, lags, w, renormalize=True)
    pad = temporal_convolve_frames(values, lags, w, renormalize=False)
    assert not np.allclose(renorm[0], pad[0])
    np.testing.assert_allclose(renorm[8:], pad[8:], atol=1e-12)


def test_transient_of_constant_vanishes_once_supported():
    kt = make_temporal_percept()
    values = np.full((12, 2, 2), 0.4)
    out = temporal_convolve_frames(values, -kt.transient_offsets, kt.transient_weights,
                                   renormalize=False)
    np.testing.assert_allclose(out[7:], 0.0, atol=1e-14)


def test_causal_matrix_agrees_with_frame_convolution():
    kt = make_temporal_percept()
    rng = np.random.default_rng(8)
    values = rng.standard_normal((10, 4, 4))
    for renorm, offs, w in [(True, kt.sustained_offsets, kt.sustained_weights),
                            (False, kt.transient_offsets, kt.transient_weights)]:
        lags = -offs
        direct = temporal_convolve_frames(values, lags, w, renormalize=renorm)
        mat = causal_matrix(lags, w, 10, renormalize=renorm)
        via_matrix = np.einsum("ts,shw->thw", mat, values)
        np.testing.assert_allclose(direct, via_matrix, atol=1e-12)


def test_convolve_sequence_rejects_short_sequences():
    k = compose(ks=make_spatial_gaussian(1.0), ka=make_taa_kernel(length=8),
                policy="causal-renormalized")
    with pytest.raises(InvalidInputError):
        convolve_sequence(FrameSequence(values=np.zeros((4, 4, 4))), k)


# ---------------------------------------------------------------- tables

def test_kernel_table_roundtrip(tmp_path):
    kt = make_temporal_percept()
    path = tmp_path / "resp.tbl"
    write_kernel_table(kt, path)
    back = load_kernel_table(path)
    assert back.frame_rate == kt.frame_rate
    for a, b in ((back.sustained, kt.sustained), (back.transient, kt.transient)):
        da, db = dict(a), dict(b)
        assert set(da) == set(db)
        for off in da:
            assert abs(da[off] - db[off]) < 1e-12
    assert back.causal == kt.causal


def test_kernel_table_parse_error_reports_line(tmp_path):
    path = tmp_path / "bad.tbl"
    path.write_text("channel sustained frame_rate 60\n0 0.5\n-1 oops\n")
    with pytest.raises(TableParseError) as err:
        load_kernel_table(path)
    assert "3" in str(err.value)


def test_kernel_table_frame_rate_mismatch(tmp_path):
    kt = make_temporal_percept(frame_rate=60.0)
    path = tmp_path / "resp.tbl"
    write_kernel_table(kt, path)
    with pytest.raises(TableValidationError):
        make_temporal_percept(frame_rate=30.0, source=path)


def test_kernel_table_rejects_unnormalized(tmp_path):
    path = tmp_path / "bad.tbl"
    path.write_text("channel sustained frame_rate 60\n0 0.5\n-1 0.2\n")
    with pytest.raises(TableValidationError):
        load_kernel_table(path)
