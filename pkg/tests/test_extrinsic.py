import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from conftest import surface_levels
from hmbounds.errors import DomainError, GeometryError, MissingDensityError, ShapeError
from hmbounds.mesh import SurfaceMesh, SurfaceSpec, build_surface, mixed_vertex_areas
from hmbounds.extrinsic import (SymTensorField, h_boundary, h_t_vector, hsiung_minkowski_residual,
                                hyperbolic_convert, identity_tensor, mean_curvature_field,
                                newton_tensor, reilly_rhs, sphere_mean_curvature)


def build(kind, **params):
    return build_surface(SurfaceSpec(kind, params))


@pytest.fixture(scope="module")
def sphere():
    mesh = build("icosphere", subdiv=4)
    return mesh, mean_curvature_field(mesh)


def _ellipsoid_mean_curvature(x, axes):
    # |H| = h^3 (a^2 + b^2 + c^2 - |x|^2) / (2 a^2 b^2 c^2), h the support-function inverse
    a2 = np.asarray(axes, float) ** 2
    h = 1.0 / np.sqrt((x ** 2 / a2 ** 2).sum(1))
    return h ** 3 * (a2.sum() - (x ** 2).sum(1)) / (2 * a2.prod())


def test_unit_sphere_mean_curvature_points_inward(sphere):
    mesh, curv = sphere
    assert np.max(np.linalg.norm(curv.mean_curvature + mesh.vertices, axis=1)) < 0.01
    # quadric fit: O(h^2) bias, about 0.5% at subdiv 4
    assert np.allclose(curv.H_r[:, 1], 1.0, atol=0.01)
    assert np.allclose(curv.H_r[:, 2], 1.0, atol=0.02)
    # outward normal, S = I
    assert np.allclose(curv.unit_normal, mesh.vertices, atol=0.01)
    assert np.allclose(curv.shape_operator, np.eye(2), atol=0.01)


def test_hypersurface_consistency(sphere):
    _, curv = sphere
    assert np.allclose(np.linalg.norm(curv.mean_curvature, axis=1), np.abs(curv.H_r[:, 1]),
                       atol=0.01)
    assert np.allclose(curv.H_r[:, 2], np.linalg.det(curv.shape_operator), rtol=1e-12)


def test_ellipsoid_mean_curvature_oracle():
    axes = (2.0, 1.0, 1.0)
    mesh = build("ellipsoid", a=2.0, b=1.0, c=1.0, subdiv=5)
    curv = mean_curvature_field(mesh)
    x = mesh.vertices
    exact = _ellipsoid_mean_curvature(x, axes)
    away = np.abs(x[:, 0]) < 1.8  # umbilics at the tips of the long axis
    assert np.max(np.abs(curv.H_r[away, 1] - exact[away]) / exact[away]) < 0.02
    w = mixed_vertex_areas(mesh)
    cot = np.linalg.norm(curv.mean_curvature, axis=1)
    assert math.sqrt(w @ (cot - exact) ** 2 / (w @ exact ** 2)) < 0.02


def test_clifford_torus_mean_curvature():
    # the product grid is symmetric enough that the cotangent H is exact
    for n in (16, 32):
        mesh = build("clifford_torus", n_grid=n)
        H = mean_curvature_field(mesh).mean_curvature
        assert np.max(np.abs(np.linalg.norm(H, axis=1) - 1.0)) < 1e-12
        # minimal in S^3: only the position component survives
        assert np.max(np.linalg.norm(sphere_mean_curvature(mesh), axis=1)) < 1e-12


def test_mean_curvature_rejects_boundary_mesh():
    with pytest.raises(DomainError):
        mean_curvature_field(build("disk", rings=2))


def test_newton_tensors_on_sphere(sphere):
    mesh, curv = sphere
    T0 = newton_tensor(curv, 0)
    assert np.array_equal(T0.tensor, np.repeat(np.eye(2)[None], mesh.n_vertices, axis=0))
    assert np.array_equal(T0.divergence_residual, np.zeros(mesh.n_vertices))
    assert np.array_equal(T0.trace, np.full(mesh.n_vertices, 2.0))
    T1 = newton_tensor(curv, 1, mesh)
    assert np.allclose(T1.tensor, np.eye(2), atol=0.01)
    # umbilic region: T_1 = H_1 I
    assert np.allclose(T1.tensor, curv.H_r[:, 1, None, None] * np.eye(2), atol=1e-3)
    assert np.allclose(T1.trace, 2 * curv.H_r[:, 1], rtol=1e-12)
    for r in (-1, 2):
        with pytest.raises(DomainError):
            newton_tensor(curv, r)


def test_newton_tensor_divergence_shrinks_on_torus():
    norms = []
    for mesh in surface_levels("torus_rev", 3, R=2.0, r=1.0, nu=32, nv=16):
        T1 = newton_tensor(mean_curvature_field(mesh), 1, mesh)
        w = mixed_vertex_areas(mesh)
        norms.append(math.sqrt(w @ T1.divergence_residual ** 2))
    assert norms[0] > norms[1] > norms[2]
    assert norms[1] / norms[2] > 3  # second order on the regular parameter grid


def test_h_t_vector(sphere):
    mesh, curv = sphere
    HI = h_t_vector(curv, identity_tensor(curv))
    assert np.array_equal(HI, 2 * curv.mean_curvature)
    assert np.max(np.linalg.norm(HI + 2 * mesh.vertices, axis=1)) < 0.02
    H1 = h_t_vector(curv, newton_tensor(curv, 1))
    assert np.max(np.linalg.norm(H1 + 2 * mesh.vertices, axis=1)) < 0.03
    zero = SymTensorField(np.zeros((mesh.n_vertices, 2, 2)), curv.frames,
                          np.zeros(mesh.n_vertices))
    assert np.array_equal(h_t_vector(curv, zero), np.zeros_like(mesh.vertices))
    small = mean_curvature_field(build("icosphere", subdiv=1))
    with pytest.raises(ShapeError):
        h_t_vector(small, identity_tensor(curv))


def test_hsiung_minkowski_examples():
    mesh = build("icosphere", subdiv=3)
    curv = mean_curvature_field(mesh)
    total = 8 * math.pi
    assert abs(hsiung_minkowski_residual(mesh, identity_tensor(curv), curv)) < 1e-10 * total
    zero = SymTensorField(np.zeros((mesh.n_vertices, 2, 2)), curv.frames,
                          np.zeros(mesh.n_vertices))
    assert hsiung_minkowski_residual(mesh, zero, curv) == 0.0
    with pytest.raises(DomainError):
        hsiung_minkowski_residual(build("disk", rings=2), zero)


def test_hsiung_minkowski_ellipsoid_fine():
    mesh = build("ellipsoid", a=2.0, b=1.0, c=1.0, subdiv=5)
    curv = mean_curvature_field(mesh)
    T1 = newton_tensor(curv, 1)
    w = mixed_vertex_areas(mesh)
    for T in (identity_tensor(curv), T1):
        assert abs(hsiung_minkowski_residual(mesh, T, curv)) / (w @ T.trace) < 0.05


def test_reilly_rhs_examples():
    assert reilly_rhs(build("icosphere", subdiv=4), 0) == pytest.approx(2.0, rel=1e-3)
    assert reilly_rhs(build("clifford_torus", n_grid=32), 1) == pytest.approx(2.0, rel=1e-3)
    target = 2.0 / math.sinh(1.0) ** 2
    assert reilly_rhs(build("poincare_sphere", hyp_radius=1.0, subdiv=4), -1) == \
        pytest.approx(target, rel=5e-3)


def test_reilly_rhs_errors():
    with pytest.raises(GeometryError):
        reilly_rhs(build("icosphere", radius=2.0, subdiv=1), 1)
    with pytest.raises(MissingDensityError):
        reilly_rhs(build("icosphere", radius=0.5, subdiv=1), -1)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=3, max_size=3), st.integers(0, 2 ** 31 - 1))
def test_reilly_rhs_rigid_motion_invariance(shift, seed):
    mesh = build("ellipsoid", subdiv=2)
    base = reilly_rhs(mesh, 0)
    R = Rotation.random(random_state=seed).as_matrix()
    moved = SurfaceMesh(mesh.vertices @ R.T + np.asarray(shift), mesh.triangles)
    assert reilly_rhs(moved, 0) == pytest.approx(base, rel=1e-9)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_reilly_rhs_rotation_invariance_in_space_forms(seed):
    R = Rotation.random(random_state=seed).as_matrix()
    ball = build("poincare_sphere", hyp_radius=1.0, subdiv=2)
    turned = SurfaceMesh(ball.vertices @ R.T, ball.triangles, density=ball.density)
    assert reilly_rhs(turned, -1) == pytest.approx(reilly_rhs(ball, -1), rel=1e-6)
    cl = build("clifford_torus", n_grid=12)
    Q = np.linalg.qr(np.random.default_rng(seed).normal(size=(4, 4)))[0]
    turned = SurfaceMesh(cl.vertices @ Q.T, cl.triangles)
    assert reilly_rhs(turned, 1) == pytest.approx(reilly_rhs(cl, 1), rel=1e-9)


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_hyperbolic_geodesic_sphere_curvature(r):
    errs = []
    for mesh in surface_levels("poincare_sphere", 3, hyp_radius=r, subdiv=2):
        assert np.allclose(np.linalg.norm(mesh.vertices, axis=1), math.tanh(r / 2))
        curv = hyperbolic_convert(mesh)
        errs.append(np.max(np.abs(np.linalg.norm(curv.mean_curvature, axis=1)
                                  - 1 / math.tanh(r))))
    assert errs[0] > errs[1] > errs[2] and errs[2] < 1e-3


def test_hyperbolic_curvature_diverges_for_small_spheres():
    vals = [np.linalg.norm(hyperbolic_convert(build("poincare_sphere", hyp_radius=r, subdiv=3))
                           .mean_curvature, axis=1).mean() for r in (0.4, 0.2, 0.1)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] * 0.1 == pytest.approx(1.0, rel=0.01)


def test_hyperbolic_convert_with_unit_density_is_euclidean():
    mesh = build("icosphere", radius=0.5, subdiv=2)
    flat = mesh.with_density(np.ones(mesh.n_vertices))
    a, b = mean_curvature_field(mesh), hyperbolic_convert(flat)
    assert np.array_equal(a.mean_curvature, b.mean_curvature)
    assert np.array_equal(a.shape_operator, b.shape_operator)


def test_hyperbolic_convert_errors():
    with pytest.raises(MissingDensityError):
        hyperbolic_convert(build("icosphere", radius=0.5, subdiv=1))
    mesh = build("icosphere", radius=1.5, subdiv=1)
    with pytest.raises(DomainError):
        hyperbolic_convert(mesh.with_density(np.ones(mesh.n_vertices)))


def test_curvature_csv_columns():
    curv = mean_curvature_field(build("icosphere", subdiv=1))
    lines = curv.to_csv().splitlines()
    assert lines[0] == "vertex,H_x0,H_x1,H_x2,H_1,H_2"
    assert len(lines) == curv.n_vertices + 1
    first = [float(v) for v in lines[1].split(",")]
    assert first[1:4] == pytest.approx(curv.mean_curvature[0], rel=0, abs=0)


@pytest.mark.parametrize("kind,params,loop_curvatures", [
    ("disk", {"rings": 8}, [1.0]),
    ("disk", {"radius": 0.25, "rings": 8}, [4.0]),
    ("annulus", {"inner_radius": 0.5, "rings": 8}, [1.0, 2.0]),
])
def test_boundary_curvature_of_circles(kind, params, loop_curvatures):
    mesh = build(kind, **params)
    bc = h_boundary(mesh)
    kappa = np.linalg.norm(bc.vectors, axis=1)
    radii = np.linalg.norm(mesh.vertices[bc.vertex_ids], axis=1)
    for k in loop_curvatures:
        on_loop = np.isclose(radii, 1 / k)
        assert on_loop.any()
        assert np.allclose(kappa[on_loop], k, rtol=5e-3)
    outer = np.isclose(radii, radii.max())
    # outer circle curves toward the centre
    assert np.allclose(bc.vectors[outer], -mesh.vertices[bc.vertex_ids[outer]] / radii.max() ** 2,
                       rtol=5e-3, atol=1e-9)


def test_boundary_curvature_needs_a_boundary():
    with pytest.raises(DomainError):
        h_boundary(build("icosphere", subdiv=1))
