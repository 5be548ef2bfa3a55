import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stentgrowth import geometry as geo

DOM = geo.ReferenceDomain()
FLAT = geo.GeometryParams(geo.ReferenceDomain(), geo.StentParams(0.0, 50.0), geo.CenterlineParams(0.0, 4.0))


def test_stent_factor_at_first_tip():
    a, _ = geo.stent_factor(2.0, geo.StentParams(), DOM)
    assert a == pytest.approx(1.1 + 0.1 * np.exp(-450.0), abs=1e-15)


def test_stent_factor_at_midpoint_is_one():
    a, _ = geo.stent_factor(3.5, geo.StentParams(), DOM)
    assert a == pytest.approx(1.0, abs=1e-15)


def test_stent_map_transverse_scaling_keeps_axial():
    x = np.array([[2.0, 0.07], [3.5, -0.05]])
    y = geo.stent_map(x)
    assert np.array_equal(y[:, 0], x[:, 0])
    assert y[0, 1] == pytest.approx(0.077, rel=1e-12)


def test_stent_map_zero_amplitude_is_identity():
    x = np.random.default_rng(0).uniform([0, -0.1], [7, 0.1], (50, 2))
    assert np.array_equal(geo.stent_map(x, geo.StentParams(0.0, 50.0)), x)


def test_stenosis_map_examples():
    x = np.array([[1.3, 0.1, 0.0]])
    assert np.allclose(geo.stenosis_map(x, 0.5), [[1.3, 0.05, 0.0]])
    assert np.array_equal(geo.stenosis_map(x, 0.0), x)
    with pytest.raises(geo.GeometryError):
        geo.stenosis_map(x, 1.0)
    with pytest.raises(geo.GeometryError):
        geo.stenosis_map(x, -0.1)


def test_centerline_identity_at_midpoint():
    x = np.array([[3.5, 0.08], [3.5, -0.03]])
    assert np.allclose(geo.centerline_map(x), x, atol=1e-15)


def test_centerline_offset_point_3d():
    # x1 = 5.5 lies past the midpoint, so the curve bends in the x/z plane
    y = geo.centerline_map(np.array([[5.5, 0.0, 0.0]]))
    assert np.allclose(y, [[5.5, 0.0, 0.064]], atol=1e-15)
    y = geo.centerline_map(np.array([[1.5, 0.0, 0.0]]))
    assert np.allclose(y, [[1.5, 0.064, 0.0]], atol=1e-15)


def test_centerline_zero_coefficient_is_identity():
    x = np.random.default_rng(1).uniform([0, -0.1, -0.1], [7, 0.1, 0.1], (40, 3))
    assert np.allclose(geo.centerline_map(x, geo.CenterlineParams(0.0, 4.0)), x, atol=0)


def test_centerline_keeps_offset_normal_to_curve():
    # the transverse offset has length |x2| and is orthogonal to the tangent
    x1, s = 1.2, 0.07
    base = geo.centerline_map(np.array([[x1, 0.0]]))[0]
    off = geo.centerline_map(np.array([[x1, s]]))[0]
    t1 = 4e-3 * 4 * (x1 - 3.5) ** 3
    tangent = np.array([1.0, t1]) / np.hypot(1.0, t1)
    assert np.linalg.norm(off - base) == pytest.approx(s, rel=1e-12)
    assert abs(np.dot(off - base, tangent)) < 1e-15


def test_composite_identity():
    pts = geo.sample_points(DOM, 30, 7)
    m = geo.composite_map(pts, geo.ConstantProfile(0.0), FLAT)
    assert np.allclose(m.mapped, pts)
    assert np.allclose(m.F, np.eye(2))
    assert np.allclose(m.J, 1.0)


def test_composite_uniform_stenosis_jacobian():
    pts = geo.sample_points(DOM, 30, 7)
    m = geo.composite_map(pts, geo.ConstantProfile(0.5), FLAT)
    assert np.allclose(m.J, 0.5, atol=1e-15)


@pytest.mark.parametrize("c", [0.0, 0.3, 0.6, 0.9])
def test_jacobian_positive_dense_sampling(c):
    pts = geo.sample_points(DOM, 141, 21)
    assert geo.composite_map(pts, geo.ConstantProfile(c)).J.min() > 0.0


def test_jacobian_positive_for_varying_profiles():
    x1 = np.linspace(0.0, 7.0, 141)
    rng = np.random.default_rng(2)
    for _ in range(5):
        vals = rng.uniform(0.0, 0.9, (2, 141))
        prof = geo.WallNodeProfile(x1, vals)
        pts = geo.sample_points(DOM, 281, 11)
        assert geo.composite_map(pts, prof).J.min() > 0.0


def test_fd_gradient_matches_analytic():
    rng = np.random.default_rng(3)
    pts = rng.uniform([0.0, -0.1], [7.0, 0.1], (100, 2))
    prof = geo.FunctionProfile(lambda x: (0.3 * np.exp(-(x - 2.0) ** 2), -0.6 * (x - 2.0) * np.exp(-(x - 2.0) ** 2)))
    F = geo.composite_map(pts, prof).F
    Ffd = geo.fd_gradient(pts, prof)
    rel = np.linalg.norm(F - Ffd, axis=(1, 2)) / np.linalg.norm(F, axis=(1, 2))
    assert rel.max() < 1e-6


def test_fd_gradient_matches_analytic_3d():
    rng = np.random.default_rng(4)
    pts = rng.uniform([0.0, -0.07, -0.07], [7.0, 0.07, 0.07], (100, 3))
    params = geo.GeometryParams(geo.ReferenceDomain(dimension=3))
    prof = geo.ConstantProfile(0.2)
    F = geo.composite_map(pts, prof, params).F
    Ffd = geo.fd_gradient(pts, prof, params)
    # skip points straddling the plane switch at the midpoint
    keep = np.abs(pts[:, 0] - 3.5) > 1e-4
    rel = np.linalg.norm(F - Ffd, axis=(1, 2)) / np.linalg.norm(F, axis=(1, 2))
    assert rel[keep].max() < 1e-6


def test_three_dimensional_needs_axisymmetric_profile():
    params = geo.GeometryParams(geo.ReferenceDomain(dimension=3))
    with pytest.raises(geo.GeometryError):
        geo.composite_map(np.array([[1.0, 0.0, 0.0]]), geo.ConstantProfile(0.1, 0.2), params)


def test_two_wall_profile_moves_each_wall():
    prof = geo.ConstantProfile(0.2, 0.4)
    pts = np.array([[3.5, -0.1], [3.5, 0.1]])
    m = geo.composite_map(pts, prof, FLAT)
    assert m.mapped[0, 1] == pytest.approx(-0.08)
    assert m.mapped[1, 1] == pytest.approx(0.06)


def test_wall_node_profile_reproduces_quadratics():
    x1 = np.linspace(0.0, 7.0, 29)
    q = lambda x: 0.01 * x * (7.0 - x)
    prof = geo.WallNodeProfile(x1, np.vstack([q(x1), q(x1)]))
    xs = np.linspace(0.0, 7.0, 301)
    cl, cu, dcl, _ = prof.evaluate(xs)
    assert np.allclose(cl, q(xs), atol=1e-14)
    assert np.allclose(dcl, 0.01 * (7.0 - 2 * xs), atol=1e-12)


def test_invalid_domain_rejected():
    with pytest.raises(ValueError):
        geo.ReferenceDomain(stent_start=5.0, stent_end=2.0)
    with pytest.raises(ValueError):
        geo.StentParams(-0.1, 50.0)


@settings(max_examples=40, deadline=None)
@given(shift=st.floats(-1.0, 1.0), x1=st.floats(0.5, 6.5), rho=st.floats(0.0, 0.3))
def test_stent_factor_translation_invariant(shift, x1, rho):
    d0 = geo.ReferenceDomain(stent_start=2.0, stent_end=5.0, length=9.0)
    d1 = geo.ReferenceDomain(stent_start=2.0 + shift, stent_end=5.0 + shift, length=9.0)
    p = geo.StentParams(rho, 50.0)
    a0, _ = geo.stent_factor(x1, p, d0)
    a1, _ = geo.stent_factor(x1 + shift, p, d1)
    assert a1 == pytest.approx(a0, rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.0, 0.9), x1=st.floats(0.0, 7.0), x2=st.floats(-0.1, 0.1))
def test_jacobian_positive_property(c, x1, x2):
    m = geo.composite_map(np.array([[x1, x2]]), geo.ConstantProfile(c))
    assert m.J[0] > 0.0
