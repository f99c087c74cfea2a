import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from specal.basis import fourier_basis, project, reconstruct
from specal.core import ConfigError, SensitivityTriplet, SpectralCurve, SpectralGrid
from specal.forward import (
    GratingGeometry,
    NoDiffractionError,
    SceneSpec,
    check_resolvance,
    fluorescent_illuminant,
    led_illuminant,
    linear_mapping,
    physical_mapping,
    random_mapping,
    render,
    render_diffracted,
    render_direct,
    synth_camera,
    synth_efficiency,
)
from specal.mapping import PixelToWavelengthMap, build_weight_matrix

G = SpectralGrid()
ONES = SpectralCurve(G, np.ones(G.f))


def scene(e=None, eta=None, s=None, mapping=None, n=400, **kw):
    s = synth_camera(G, 0) if s is None else s
    return SceneSpec(ONES if e is None else e, ONES if eta is None else eta, s,
                     linear_mapping(G, n) if mapping is None else mapping, n, **kw)


# direct

def test_direct_sifting():
    s = synth_camera(G, 1)
    for j in (0, 12, 30):
        e = SpectralCurve(G, np.eye(G.f)[j])
        np.testing.assert_allclose(render_direct(scene(e=e, s=s)), s.as_matrix()[j], atol=0)


def test_direct_zero_light():
    np.testing.assert_array_equal(render_direct(scene(e=SpectralCurve(G, np.zeros(G.f)))), 0)


def test_direct_flat_constant_channel():
    const = fourier_basis(G, 1).B[:, 0]
    s = SensitivityTriplet(SpectralCurve(G, const), SpectralCurve(G, const), SpectralCurve(G, const))
    assert render_direct(scene(s=s))[0] == G.f


# diffracted

def test_diffracted_node_aligned_is_e_times_s():
    # 10 pixels per 10 nm step: every 10th pixel lands exactly on a node
    n = 301
    mp = PixelToWavelengthMap(0.0, 1.0, 400.0)
    e = led_illuminant(G, 2)
    s = synth_camera(G, 2)
    sp = scene(e=e, s=s, mapping=mp, n=n)
    m = render_diffracted(sp, sp.weight_matrix())
    np.testing.assert_allclose(m[::10], e.values[:, None] * s.as_matrix(), rtol=1e-14, atol=1e-15)


def test_diffracted_zero_channel():
    s = synth_camera(G, 3).as_matrix()
    s[:, 1] = 0
    sp = scene(s=SensitivityTriplet.from_matrix(G, s))
    assert not np.any(render_diffracted(sp, sp.weight_matrix())[:, 1])


def test_diffracted_triple_loop_oracle():
    rng = np.random.default_rng(4)
    n = 60
    e = SpectralCurve(G, rng.uniform(0.1, 1, G.f))
    eta = SpectralCurve(G, rng.uniform(0.2, 1, G.f))
    s = SensitivityTriplet.from_matrix(G, rng.random((G.f, 3)))
    mp = random_mapping(G, n, seed=4)
    sp = SceneSpec(e, eta, s, mp, n)
    W = sp.weight_matrix().W
    out = render_diffracted(sp, W)
    oracle = np.zeros((n, 3))
    for p in range(n):
        for i in range(G.f):
            for c in range(3):
                oracle[p, c] += W[p, i] * e.values[i] * eta.values[i] * s.as_matrix()[i, c]
    np.testing.assert_allclose(out, oracle, rtol=1e-13, atol=1e-15)


def test_render_shapes_and_seeded_noise():
    sp = scene(noise_sigma=0.01, seed=5)
    a, b = render(sp), render(sp)
    np.testing.assert_array_equal(a.m_dif, b.m_dif)
    np.testing.assert_array_equal(a.m_dir, b.m_dir)
    clean = render(scene())
    ratio = a.m_dif[clean.m_dif > 1e-3] / clean.m_dif[clean.m_dif > 1e-3]
    assert 0.005 < np.std(ratio) < 0.015


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(0, 2**31 - 1))
def test_linear_in_sensitivity(seed1, seed2):
    s1, s2 = synth_camera(G, seed1), synth_camera(G, seed2)
    s12 = SensitivityTriplet.from_matrix(G, s1.as_matrix() + s2.as_matrix())
    e = led_illuminant(G, seed1)
    r = [render(scene(e=e, s=s)) for s in (s1, s2, s12)]
    np.testing.assert_allclose(r[2].m_dir, r[0].m_dir + r[1].m_dir, rtol=1e-12)
    np.testing.assert_allclose(r[2].m_dif, r[0].m_dif + r[1].m_dif, rtol=1e-12, atol=1e-15)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 100), st.integers(0, 1000))
def test_light_scale_ambiguity(alpha, seed):
    s = synth_camera(G, seed)
    e = led_illuminant(G, seed)
    base = render(scene(e=e, s=s))
    moved = render(scene(e=e.scaled(alpha), s=s.scaled(1 / alpha)))
    np.testing.assert_allclose(moved.m_dir, base.m_dir, rtol=1e-12)
    np.testing.assert_allclose(moved.m_dif, base.m_dif, rtol=1e-12, atol=1e-15)


def test_scene_validation():
    with pytest.raises(ConfigError):
        scene(n=31)
    with pytest.raises(ConfigError):
        scene(eta=SpectralCurve(G, np.r_[0.0, np.ones(30)]))
    with pytest.raises(ConfigError):
        scene(noise_sigma=-0.1)


# physical mapping

def test_physical_mapping_sin_range_and_fit():
    geom = GratingGeometry(slit_pitch=2.0e-6, order=1)
    phys = physical_mapping(geom, SpectralGrid(380, 720, 35))
    assert abs(phys.sin_range[0] - 0.190) <= 1e-3
    assert abs(phys.sin_range[1] - 0.360) <= 1e-3
    assert phys.max_fit_residual < 1.0  # sub-nm, far below the 10 nm grid step
    p = np.linspace(*phys.pixel_range, 500)
    assert np.all(phys.mapping.derivative(p) > 0)


def test_physical_mapping_near_axis_is_nearly_linear():
    geom = GratingGeometry(slit_pitch=1e-4, order=1, focal_px=1e5)
    phys = physical_mapping(geom, G)
    lo, hi = phys.pixel_range
    bend = abs(phys.mapping.a) * (hi - lo) ** 2
    assert bend < 1e-4 * G.span


def test_pixel_wavelength_inverse():
    geom = GratingGeometry()
    lam = np.linspace(400, 700, 11)
    np.testing.assert_allclose(geom.wavelength_of(geom.pixel_of(lam)), lam, rtol=1e-12)


def test_no_diffraction():
    with pytest.raises(NoDiffractionError):
        GratingGeometry(slit_pitch=5e-7).pixel_of([700])


def test_geometry_validation():
    with pytest.raises(ConfigError):
        GratingGeometry(order=2)
    with pytest.raises(ConfigError):
        GratingGeometry(center=(0, 0, -1))


# random mapping

def test_random_mapping_linear_special_case():
    m = linear_mapping(G, 1000)
    assert m.a == 0 and m.b == pytest.approx(G.span / 999)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.integers(32, 3000))
def test_random_mapping_monotone_and_covering(seed, n):
    m = random_mapping(G, n, seed)
    p = np.linspace(0, n - 1, 2000)
    assert np.all(m.derivative(p) > 0)
    assert m(0) <= G.lambda_min and m(n - 1) >= G.lambda_max


def test_random_mapping_deterministic():
    assert random_mapping(G, 1000, 9) == random_mapping(G, 1000, 9)


# efficiency

def test_efficiency_zero_harmonics_constant():
    eta = synth_efficiency(fourier_basis(G, 7), 1, harmonic_scale=0.0)
    assert np.ptp(eta.values) < 1e-12


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_efficiency_positive_and_in_span(seed, inverse):
    basis = fourier_basis(G, 7)
    eta = synth_efficiency(basis, seed, inverse=inverse)
    assert eta.values.min() > 0
    target = SpectralCurve(G, 1 / eta.values) if inverse else eta
    np.testing.assert_allclose(reconstruct(project(target, basis)).values, target.values, atol=1e-10)


# resolvance

def test_resolvance_examples():
    g720 = SpectralGrid(400, 720, 33)
    assert check_resolvance(GratingGeometry(slit_count=100), g720, 1000).resolvance_ok
    assert not check_resolvance(GratingGeometry(slit_count=71), g720, 1000).resolvance_ok
    r = check_resolvance(GratingGeometry(slit_count=10), g720, 1000)
    assert r.delta_lambda == pytest.approx(72.0) and not r.ok
    assert not check_resolvance(GratingGeometry(), G, G.f - 1).pixels_ok
    assert check_resolvance(GratingGeometry(slit_count=1250), G, 1000).ok


# synthetic spectra

def test_fluorescent_lines_on_nodes():
    e = fluorescent_illuminant(G, 0)
    for lam in (440, 460, 520, 550, 600, 620):
        i = int((lam - 400) / 10)
        assert e.values[i] > 5 * e.values[i - 1] and e.values[i] > 5 * e.values[i + 1]


def test_weight_matrix_from_scene():
    sp = scene()
    W = sp.weight_matrix()
    np.testing.assert_array_equal(W.W, build_weight_matrix(sp.mapping, sp.pixels, G).W)
