import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from conftest import surface_levels
from hmbounds.conformal import (MobiusParam, OptimizerConfig, angle_distortion,
                                balance_ball_center_of_mass, balance_center_of_mass,
                                conformal_factor_residual, conformal_volume_sup, image_area,
                                inverse_stereographic, mobius_apply, mobius_ball_apply,
                                mobius_conformal_factor, stereographic)
from hmbounds.errors import DomainError, MissingDensityError, NonBalanceableError, ParameterError
from hmbounds.mesh import SurfaceMesh, SurfaceSpec, build_surface


def build(kind, **params):
    return build_surface(SurfaceSpec(kind, params))


def sphere_points(rng, n, dim=3):
    x = rng.normal(size=(n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


_ball_vec = st.lists(st.floats(-0.55, 0.55), min_size=3, max_size=3)


def test_mobius_param_derived_scalars():
    p = MobiusParam([0.3, -0.4, 0.0])
    assert p.lam == pytest.approx(1 / math.sqrt(0.75), rel=1e-15)
    assert p.mu == pytest.approx((p.lam - 1) / 0.25, rel=1e-15)
    zero = MobiusParam(np.zeros(3))
    assert (zero.lam, zero.mu) == (1.0, 0.0)
    for bad in ([1.0, 0, 0], [0.8, 0.8, 0]):
        with pytest.raises(ParameterError):
            MobiusParam(bad)


def test_mobius_identity_and_fixed_point():
    x = sphere_points(np.random.default_rng(0), 50)
    assert np.array_equal(mobius_apply(MobiusParam(np.zeros(3)), x), x)
    assert np.allclose(mobius_apply(MobiusParam([0.5, 0, 0]), [1.0, 0, 0]), [1, 0, 0],
                       atol=1e-15)
    # the antipode of a/|a| is fixed as well
    assert np.allclose(mobius_apply(MobiusParam([0.5, 0, 0]), [-1.0, 0, 0]), [-1, 0, 0],
                       atol=1e-15)


def test_mobius_rejects_off_sphere_points():
    with pytest.raises(DomainError):
        mobius_apply(MobiusParam([0.1, 0, 0]), [1.0 + 1e-9, 0, 0])
    with pytest.raises(DomainError):
        mobius_apply(MobiusParam([0.1, 0, 0, 0]), [1.0, 0, 0])


@settings(max_examples=50)
@given(_ball_vec, st.integers(0, 2 ** 31 - 1))
def test_mobius_preserves_sphere_and_inverts(a, seed):
    p = MobiusParam(a)
    x = sphere_points(np.random.default_rng(seed), 40)
    y = mobius_apply(p, x)
    assert np.max(np.abs(np.linalg.norm(y, axis=1) - 1)) < 1e-10
    back = mobius_apply(p.inverse(), y, tol=1e-10)
    assert np.max(np.abs(back - x)) < 1e-9


@settings(max_examples=30)
@given(_ball_vec, st.integers(0, 2 ** 31 - 1))
def test_mobius_is_conformal_with_stated_factor(a, seed):
    # stretch of a tangent vector matches e^{rho}
    p = MobiusParam(a)
    rng = np.random.default_rng(seed)
    x = sphere_points(rng, 10)
    t = rng.normal(size=x.shape)
    t -= np.einsum("ij,ij->i", t, x)[:, None] * x
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    h = 1e-6
    xs = (x + h * t) / np.linalg.norm(x + h * t, axis=1, keepdims=True)
    stretch = np.linalg.norm(mobius_apply(p, xs, tol=1e-9) - mobius_apply(p, x), axis=1) / \
        np.linalg.norm(xs - x, axis=1)
    assert np.allclose(stretch ** 2, mobius_conformal_factor(p, x), rtol=1e-4)


def test_stereographic_conventions():
    assert np.allclose(stereographic([0.0, 0.0]), [0, 0, -1])
    assert np.allclose(stereographic([1e8, 0.0]), [0, 0, 1], atol=1e-7)
    theta = np.linspace(0, 2 * np.pi, 17)
    circle = np.column_stack([np.cos(theta), np.sin(theta)])
    assert np.allclose(stereographic(circle)[:, 2], 0.0, atol=1e-15)
    with pytest.raises(DomainError):
        inverse_stereographic([0.0, 0.0, 1.0])


@settings(max_examples=50)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=3))
def test_stereographic_round_trip(x):
    x = np.asarray(x)
    y = stereographic(x)
    assert abs(np.linalg.norm(y) - 1) < 1e-12
    assert np.allclose(inverse_stereographic(y), x, rtol=1e-12, atol=1e-12)


def test_balanced_clouds_need_no_map():
    mesh = build("icosphere", subdiv=2)
    assert balance_center_of_mass(mesh.vertices, np.ones(mesh.n_vertices)).norm < 1e-12
    p = balance_center_of_mass(np.array([[0.0, 0, 1], [0, 0, -1]]), [1.0, 1.0])
    assert p.norm == 0.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_balancing_rechecks_the_moment(seed):
    rng = np.random.default_rng(seed)
    x = sphere_points(rng, 60)
    w = rng.uniform(0.1, 3.0, size=60)
    p = balance_center_of_mass(x, w)
    assert np.linalg.norm(w @ mobius_apply(p, x, tol=1e-9)) / w.sum() < 1e-8
    b = balance_ball_center_of_mass(x, w)
    assert np.linalg.norm(w @ mobius_ball_apply(b, x)) / w.sum() < 1e-8


def test_balancing_a_point_mass_fails():
    x = np.array([[0.0, 0, 1]] * 5 + [[1.0, 0, 0]])
    with pytest.raises(NonBalanceableError):
        balance_center_of_mass(x, [1, 1, 1, 1, 1, 0])
    with pytest.raises(ParameterError):
        balance_center_of_mass(x, -np.ones(6))


def test_ball_automorphism_preserves_the_sphere():
    x = sphere_points(np.random.default_rng(2), 30)
    a = np.array([0.2, -0.5, 0.1])
    y = mobius_ball_apply(a, x)
    assert np.allclose(np.linalg.norm(y, axis=1), 1.0)
    assert np.allclose(mobius_ball_apply(a, a), 0.0)


@settings(max_examples=12, deadline=None)
@given(st.lists(st.floats(-0.52, 0.52), min_size=3, max_size=3))
def test_full_sphere_image_area_is_mobius_invariant(a):
    mesh = build("icosphere", subdiv=4)
    area = image_area(mesh, mobius_apply(MobiusParam(a), mesh.vertices, tol=1e-9))
    assert area == pytest.approx(4 * math.pi, rel=1e-12)


def test_conformal_volume_of_round_sphere():
    mesh = build("icosphere", subdiv=2)
    est = conformal_volume_sup(mesh, mesh.vertices, OptimizerConfig(n_starts=3, maxiter=60))
    assert est.value == pytest.approx(4 * math.pi, rel=1e-12)
    assert est.value >= est.area_at_origin
    lines = est.trace_csv().splitlines()
    assert lines[0] == "start,iterate,abs_a,area"
    assert len(lines) == len(est.optimizer_trace) + 1


def test_conformal_volume_of_tiny_cap_stays_in_bounds():
    # one small geodesic disk around the south pole, covered once
    mesh = build("disk", rings=4)
    phi = stereographic(0.05 * mesh.vertices)
    est = conformal_volume_sup(mesh, phi, OptimizerConfig(n_starts=4, maxiter=200))
    assert est.area_at_origin == pytest.approx(math.pi * 0.1 ** 2, rel=0.05)
    assert est.area_at_origin < est.value < 4 * math.pi
    assert est.value > 2 * math.pi  # the optimizer does open the cap up
    assert est.argmax_a.norm > 0.9


def test_conformal_volume_invariant_under_rotation():
    cl = build("clifford_torus", n_grid=12)
    Q = np.linalg.qr(np.random.default_rng(5).normal(size=(4, 4)))[0]
    opts = OptimizerConfig(n_starts=3, maxiter=300)
    a = conformal_volume_sup(cl, cl.vertices, opts)
    b = conformal_volume_sup(cl, cl.vertices @ Q.T, opts)
    assert b.value == pytest.approx(a.value, rel=1e-8)
    assert a.argmax_a.norm < 1e-3


def test_conformal_volume_rejects_bad_maps():
    mesh = build("icosphere", subdiv=1)
    with pytest.raises(DomainError):
        conformal_volume_sup(mesh, mesh.vertices[:-1])
    with pytest.raises(DomainError):
        conformal_volume_sup(mesh, 2 * mesh.vertices)


def test_conformal_factor_residual_unit_sphere_stereographic():
    rel = [conformal_factor_residual(m, c=0).relative
           for m in surface_levels("icosphere", 3, subdiv=2)]
    assert rel[0] > rel[1] > rel[2]


def test_conformal_factor_residual_constant_factor_cancels():
    cl = build("clifford_torus", n_grid=12)
    res = conformal_factor_residual(cl, c=1)
    assert np.max(np.abs(res.values)) < 1e-12
    sph = build("icosphere", subdiv=2)
    great = SurfaceMesh(np.column_stack([sph.vertices, np.zeros(sph.n_vertices)]), sph.triangles)
    assert np.max(np.abs(conformal_factor_residual(great, c=1).values)) < 1e-12


def test_conformal_factor_residual_poincare_sphere():
    res = conformal_factor_residual(build("poincare_sphere", hyp_radius=1.0, subdiv=4), c=-1)
    assert res.relative < 0.05


def test_conformal_factor_residual_errors():
    with pytest.raises(MissingDensityError):
        conformal_factor_residual(build("icosphere", radius=0.5, subdiv=1), c=-1)
    mesh = build("icosphere", subdiv=1)
    with pytest.raises(ParameterError):
        conformal_factor_residual(mesh, c=2)
    with pytest.raises(ParameterError):
        conformal_factor_residual(mesh, rho=np.zeros(mesh.n_vertices))


def test_angle_distortion():
    mesh = build("disk", rings=3)
    x = mesh.vertices
    assert np.max(np.abs(angle_distortion(mesh, x))) < 1e-12
    R = Rotation.from_euler("z", 0.7).as_matrix()[:2, :2]
    assert np.max(np.abs(angle_distortion(mesh, 2.5 * x @ R.T + 1.0))) < 1e-12
    stretched = angle_distortion(mesh, x * np.array([2.0, 1.0]))
    assert np.allclose(stretched, 1.0)
