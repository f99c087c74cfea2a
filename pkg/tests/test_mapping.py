import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specal.core import ObservationSet, RankError, SensitivityTriplet, SpectralCurve, SpectralGrid
from specal.forward import SceneSpec, fluorescent_illuminant, linear_mapping, random_mapping, render
from specal.mapping import (
    InsufficientPeaksError,
    PixelToWavelengthMap,
    build_weight_matrix,
    estimate_map_peaks,
    find_peaks,
    fit_quadratic,
    icp_register,
    initial_icp_params,
    mapping_re,
)
from specal.scenes import make_scene

G = SpectralGrid()


# weight matrix

def test_row_one_hot_on_node():
    W = build_weight_matrix(PixelToWavelengthMap(0, 10.0, 400.0), np.arange(31), G).W
    np.testing.assert_array_equal(W, np.eye(31))


def test_row_midpoint():
    W = build_weight_matrix(PixelToWavelengthMap(0, 1.0, 405.0), [0], G).W
    np.testing.assert_allclose(W[0, :2], [0.5, 0.5])
    assert np.count_nonzero(W) == 2


def test_pseudo_inverse_identity():
    n = 10 * G.f
    W = build_weight_matrix(linear_mapping(G, n), np.arange(n), G).W
    pinv = np.linalg.solve(W.T @ W, W.T)
    np.testing.assert_allclose(pinv @ W, np.eye(G.f), atol=1e-8)


def test_out_of_range_rows_zero():
    wm = build_weight_matrix(PixelToWavelengthMap(0, 1.0, 390.0), np.arange(330), G)
    assert wm.out_of_range == 10 + 19
    assert not np.any(wm.W[:10]) and not np.any(wm.W[-19:])


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(40, 2000))
def test_weight_matrix_invariants(seed, n):
    m = random_mapping(G, n, seed)
    p = np.arange(n)
    W = build_weight_matrix(m, p, G).W
    lam = m(p)
    inside = (lam >= G.lambda_min) & (lam <= G.lambda_max)
    np.testing.assert_allclose(W[inside].sum(axis=1), 1.0, atol=1e-12)
    assert not np.any(W[~inside])
    assert np.all(np.count_nonzero(W, axis=1) <= 2)
    first = np.argmax(W[inside] > 0, axis=1)
    assert np.all(np.diff(first) >= 0)


# peaks

def test_find_peaks_two_bumps():
    assert [i for i, _ in find_peaks([0, 1, 0, 2, 0], 2)] == [1, 3]


def test_find_peaks_ramp_fails():
    with pytest.raises(InsufficientPeaksError):
        find_peaks(np.arange(10.0), 1)


def test_find_peaks_fluorescent_lines():
    e = fluorescent_illuminant(G, 0, lines_nm=(450, 560))
    idx = [i for i, _ in find_peaks(e.values, 2)]
    assert list(G.wavelengths[idx]) == [450.0, 560.0]


def _two_line_obs(mapping, n, lines, channel_lines=None):
    """Render a spiky spectrum through ``mapping`` with box-shaped channels around each line pair."""
    e = fluorescent_illuminant(G, 1, lines_nm=lines)
    s = np.zeros((G.f, 3))
    for k, (lo, hi) in enumerate(channel_lines or [(430, 480), (500, 570), (580, 640)]):
        s[(G.wavelengths >= lo) & (G.wavelengths <= hi), k] = 1.0
    s = np.maximum(s, 1e-3)
    trip = SensitivityTriplet.from_matrix(G, s)
    spec = SceneSpec(e, SpectralCurve(G, np.ones(G.f)), trip, mapping, n)
    return render(spec), e, trip


def test_peaks_recover_linear_map():
    truth = PixelToWavelengthMap(0.0, 0.5, 390.0)  # nodes every 20 pixels
    obs, e, s = _two_line_obs(truth, 700, (440, 460, 520, 550, 600, 620))
    est = estimate_map_peaks(obs, e, s)
    assert abs(est.a) < 1e-12
    assert abs(est.b - truth.b) < 1e-6 and abs(est.c - truth.c) < 1e-6


def test_peaks_known_quadratic(setup):
    for seed in range(5):
        sc = make_scene(setup, seed, illuminant="fluorescent", in_span=False, eta_form="direct")
        est = estimate_map_peaks(sc.obs, sc.spec.illuminant, setup.mean_sensitivity)
        assert mapping_re(est, sc.truth_mapping, sc.spec.pixels, G) <= 0.005


def test_peaks_degenerate_channels_rank_error():
    truth = PixelToWavelengthMap(0.0, 0.5, 390.0)
    same = [(430, 480)] * 3
    obs, e, s = _two_line_obs(truth, 700, (440, 460), channel_lines=same)
    with pytest.raises(RankError):
        estimate_map_peaks(obs, e, s)


def test_peaks_scale_invariant(setup):
    sc = make_scene(setup, 3, illuminant="fluorescent")
    a = estimate_map_peaks(sc.obs, sc.spec.illuminant, setup.mean_sensitivity)
    b = estimate_map_peaks(sc.obs.scaled(10.0), sc.spec.illuminant.scaled(10.0), setup.mean_sensitivity)
    assert a == b


def test_fit_quadratic_exact():
    m = PixelToWavelengthMap(-2e-5, 0.4, 380.0)
    p = np.array([10.0, 200, 400, 800, 950])
    est = fit_quadratic(p, m(p))
    np.testing.assert_allclose([est.a, est.b, est.c], [m.a, m.b, m.c], rtol=1e-9)


def test_fit_quadratic_needs_three_pixels():
    with pytest.raises(RankError):
        fit_quadratic([1, 1, 2, 2], [400, 400, 500, 500])


# ICP

def test_icp_init():
    assert initial_icp_params(310, 31) == (0.0, 0.1, 0.0)


def test_icp_fixed_point():
    # diffracted profile equal to the target curve, one pixel per grid node
    e = SpectralCurve(G, np.linspace(0.5, 1.0, G.f))
    s = SensitivityTriplet.from_matrix(G, np.column_stack([
        np.exp(-0.5 * ((G.wavelengths - mu) / 30) ** 2) for mu in (600, 530, 460)]))
    m_dif = e.values[:, None] * s.as_matrix()
    obs = ObservationSet(np.ones(3), m_dif)
    res = icp_register(obs, e, s, iters=5, init=(0.0, 1.0, 0.0))
    assert res.objective_after[-1] < 1e-20
    m = res.mapping
    np.testing.assert_allclose([m.a, m.b, m.c], [0.0, G.step, G.lambda_min], atol=1e-9)


def test_icp_inner_solve_optimal(setup):
    sc = make_scene(setup, 1, illuminant="led")
    res = icp_register(sc.obs, sc.spec.illuminant, setup.mean_sensitivity, iters=50)
    assert len(res.objective_after) == 50
    assert max(res.normal_residual) < 1e-10
    assert all(after <= before * (1 + 1e-12) for before, after in
               zip(res.objective_before, res.objective_after))


def test_icp_accuracy_with_true_sensitivity(setup):
    # with the exact template, only the interpolation gap remains
    sc = make_scene(setup, 2, illuminant="led", in_span=False, eta_form="direct")
    flat = SpectralCurve(G, np.ones(G.f))
    spec = SceneSpec(sc.spec.illuminant, flat, sc.spec.sensitivity, sc.truth_mapping, sc.spec.n)
    obs = render(spec)
    est = icp_register(obs, sc.spec.illuminant, sc.spec.sensitivity).mapping
    assert mapping_re(est, sc.truth_mapping, sc.spec.pixels, G) < 0.005


# mapping error

def test_mapping_re_examples():
    m = PixelToWavelengthMap(1e-5, 0.3, 400.0)
    p = np.arange(1000)
    assert mapping_re(m, m, p, G) == 0
    shifted = PixelToWavelengthMap(m.a, m.b, m.c + 3.0)
    assert mapping_re(shifted, m, p, G) == pytest.approx(0.01)


def test_mapping_re_two_pass_oracle():
    rng = np.random.default_rng(0)
    m = PixelToWavelengthMap(1e-5, 0.3, 400.0)
    est = PixelToWavelengthMap(*(np.array([m.a, m.b, m.c]) * (1 + rng.normal(0, 1e-3, 3))))
    p = np.arange(1000)
    total = 0.0
    for q in p:
        total += (est(q) - m(q)) ** 2
    assert mapping_re(est, m, p, G) == pytest.approx(np.sqrt(total / p.size) / 300.0, rel=1e-12)


def test_map_dict_round_trip():
    m = PixelToWavelengthMap(1e-5, 0.3, 400.0, origin=12.5)
    assert PixelToWavelengthMap.from_dict(m.to_dict()) == m
