"""Discrete extrinsic geometry of closed surfaces and boundary curves.

Conventions
-----------
* ``mean_curvature`` is the vector H with ``Delta x = 2 H`` (Euclidean case),
  computed as ``-(1/2) A^{-1} K x`` with ``A`` the mixed Voronoi vertex areas
  of the induced metric; the unit sphere gives ``H = -x``. All vertex
  integrals in this module use the same weights.
* ``unit_normal`` is outward for counterclockwise triangles.
* ``shape_operator`` is taken with respect to the inward normal, so the unit
  sphere has ``S = I`` and ``H_1 = tr S / 2 = 1``. It is stored in the
  per-vertex orthonormal tangent frame ``frames`` (shape (N, n, 2)).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateTensorError, DomainError, GeometryError, MissingDensityError, \
    ParameterError, ShapeError
from .mesh import SurfaceMesh, mixed_vertex_areas, poincare_density, triangle_areas
from .spectral import M_DIM, stiffness_matrix, triangle_gradients


@dataclass(frozen=True, eq=False)
class CurvatureField:
    """Per-vertex curvature data.

    Attributes
    ----------
    mean_curvature : (N, n) mean-curvature vectors
    H_r : (N, 3) columns H_0 = 1, H_1 = tr S / 2, H_2 = det S (NaN when no shape operator)
    frames : (N, n, 2) orthonormal tangent frames
    shape_operator : (N, 2, 2) or None (hypersurfaces only)
    unit_normal : (N, n) or None (hypersurfaces only)
    """

    mean_curvature: np.ndarray
    H_r: np.ndarray
    frames: np.ndarray
    shape_operator: np.ndarray | None = None
    unit_normal: np.ndarray | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.mean_curvature)

    def to_csv(self) -> str:
        """CSV with columns vertex, H_x0..H_x{n-1}, H_1, H_2."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.mean_curvature.shape[1]
        w.writerow(["vertex"] + [f"H_x{k}" for k in range(n)] + ["H_1", "H_2"])
        for i in range(self.n_vertices):
            w.writerow([i] + [repr(float(v)) for v in self.mean_curvature[i]]
                       + [repr(float(self.H_r[i, 1])), repr(float(self.H_r[i, 2]))])
        return buf.getvalue()


@dataclass(frozen=True, eq=False)
class SymTensorField:
    """Symmetric tangent (1,1)-tensor per vertex, stored in the curvature frames.

    ``newton_order`` is 0 or 1 for Newton transformations and None otherwise.
    ``divergence_residual`` is the per-vertex magnitude of the tangential part
    of ``L_T x``, which equals div T in the smooth setting.
    """

    tensor: np.ndarray
    frames: np.ndarray
    divergence_residual: np.ndarray
    newton_order: int | None = None

    @property
    def trace(self) -> np.ndarray:
        return np.trace(self.tensor, axis1=1, axis2=2)

    @property
    def is_identity(self) -> bool:
        return self.newton_order == 0 or bool(np.all(self.tensor == np.eye(2)))

    def ambient(self) -> np.ndarray:
        """Per-vertex tensors lifted to the ambient space, shape (N, n, n)."""
        return np.einsum("vai,vij,vbj->vab", self.frames, self.tensor, self.frames)


def _vertex_normals(mesh: SurfaceMesh) -> np.ndarray:
    v, t = mesh.vertices, mesh.triangles
    fn = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
    vn = np.zeros_like(v)
    for k in range(3):
        np.add.at(vn, t[:, k], fn)
    return vn / np.linalg.norm(vn, axis=1, keepdims=True)


def _frames_from_normals(nrm: np.ndarray) -> np.ndarray:
    ref = np.zeros_like(nrm)
    ref[np.arange(len(nrm)), np.argmin(np.abs(nrm), axis=1)] = 1.0
    e1 = np.cross(nrm, ref)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.cross(nrm, e1)
    return np.stack([e1, e2], axis=2)


def tangent_frames(mesh: SurfaceMesh) -> np.ndarray:
    """Orthonormal tangent frames (N, n, 2) from area-weighted face tangent projectors."""
    if mesh.ambient_dim == 3:
        return _frames_from_normals(_vertex_normals(mesh))
    grads, areas = triangle_gradients(mesh.vertices, mesh.triangles)
    v, t = mesh.vertices, mesh.triangles
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    # face projector onto span(e1, e2) is sum_k e_k grad_k^T restricted to the plane
    P = np.einsum("fi,fj->fij", e1, grads[:, 1]) + np.einsum("fi,fj->fij", e2, grads[:, 2])
    P = 0.5 * (P + np.transpose(P, (0, 2, 1))) * areas[:, None, None]
    acc = np.zeros((mesh.n_vertices, mesh.ambient_dim, mesh.ambient_dim))
    for k in range(3):
        np.add.at(acc, t[:, k], P)
    _, vecs = np.linalg.eigh(acc)
    return vecs[:, :, -2:][:, :, ::-1]


def _two_ring_pairs(mesh: SurfaceMesh):
    n = mesh.n_vertices
    e = mesh.edges
    A = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    A = (A + A.T + sp.identity(n)).tocsr()
    R = (A @ A).tocoo()
    keep = R.row != R.col
    return R.row[keep], R.col[keep]


def _quadric_shape_operator(mesh: SurfaceMesh, normals: np.ndarray, frames: np.ndarray):
    rows, cols = _two_ring_pairs(mesh)
    q = mesh.vertices[cols] - mesh.vertices[rows]
    u = np.einsum("ij,ij->i", q, frames[rows, :, 0])
    v = np.einsum("ij,ij->i", q, frames[rows, :, 1])
    w = np.einsum("ij,ij->i", q, normals[rows])
    design = np.stack([0.5 * u * u, u * v, 0.5 * v * v, u, v], axis=1)
    n = mesh.n_vertices
    AtA = np.zeros((n, 5, 5))
    Atw = np.zeros((n, 5))
    np.add.at(AtA, rows, np.einsum("ki,kj->kij", design, design))
    np.add.at(Atw, rows, design * w[:, None])
    coef = np.linalg.solve(AtA, Atw[:, :, None])[:, :, 0]
    a, b, c, d, e = coef.T
    first = np.stack([np.stack([1 + d * d, d * e], -1), np.stack([d * e, 1 + e * e], -1)], -2)
    second = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)
    second /= np.sqrt(1 + d * d + e * e)[:, None, None]
    S = -np.linalg.solve(first, second)
    return 0.5 * (S + np.transpose(S, (0, 2, 1)))


def _euclidean_mean_curvature(mesh: SurfaceMesh) -> np.ndarray:
    K = stiffness_matrix(mesh)
    areas = mixed_vertex_areas(mesh)
    return -(K @ mesh.vertices) / (M_DIM * areas[:, None])


def mean_curvature_field(mesh: SurfaceMesh) -> CurvatureField:
    """Mean curvature from the cotangent operator; shape operator by 2-ring quadric fit in R^3.

    The induced Euclidean metric is used regardless of ``mesh.density``; see
    :func:`hyperbolic_convert` for the ball-model metric.
    """
    if not mesh.is_closed:
        raise DomainError("mean_curvature_field needs a closed mesh; use h_boundary for the boundary")
    H = _euclidean_mean_curvature(mesh)
    n = mesh.n_vertices
    Hr = np.full((n, 3), np.nan)
    Hr[:, 0] = 1.0
    if mesh.ambient_dim == 3:
        normals = _vertex_normals(mesh)
        frames = _frames_from_normals(normals)
        S = _quadric_shape_operator(mesh, normals, frames)
        Hr[:, 1] = 0.5 * np.trace(S, axis1=1, axis2=2)
        Hr[:, 2] = np.linalg.det(S)
        return CurvatureField(H, Hr, frames, S, normals)
    Hr[:, 1] = np.linalg.norm(H, axis=1)
    return CurvatureField(H, Hr, tangent_frames(mesh))


def _face_tensors(mesh: SurfaceMesh, ambient_vertex_tensors: np.ndarray) -> np.ndarray:
    t = mesh.triangles
    avg = ambient_vertex_tensors[t].mean(axis=1)
    grads, _ = triangle_gradients(mesh.vertices, t)
    v = mesh.vertices
    e1 = v[t[:, 1]] - v[t[:, 0]]
    e2 = v[t[:, 2]] - v[t[:, 0]]
    P = np.einsum("fi,fj->fij", e1, grads[:, 1]) + np.einsum("fi,fj->fij", e2, grads[:, 2])
    P = 0.5 * (P + np.transpose(P, (0, 2, 1)))
    return np.einsum("fij,fjk,fkl->fil", P, avg, P)


def operator_L_T(mesh: SurfaceMesh, T: SymTensorField) -> sp.csr_matrix:
    """Stiffness matrix of u -> -div(T grad u) with T averaged per triangle and projected to it."""
    return stiffness_matrix(mesh, _face_tensors(mesh, T.ambient()))


def _divergence_residual(mesh: SurfaceMesh, tensor: np.ndarray, frames: np.ndarray) -> np.ndarray:
    probe = SymTensorField(tensor, frames, np.zeros(len(tensor)))
    KT = operator_L_T(mesh, probe)
    areas = mixed_vertex_areas(mesh)
    LTx = -(KT @ mesh.vertices) / areas[:, None]
    tangential = np.einsum("vai,va->vi", frames, LTx)
    return np.linalg.norm(tangential, axis=1)


def newton_tensor(curv: CurvatureField, r: int, mesh: SurfaceMesh | None = None) -> SymTensorField:
    """Newton transformation ``T_0 = I`` or ``T_1 = (tr S) I - S``.

    The divergence residual of ``T_1`` needs the mesh; ``T_0`` is divergence
    free exactly and reports zeros.
    """
    if r not in (0, 1):
        raise DomainError(f"Newton transformations available for r in {{0, 1}}, got {r}")
    n = curv.n_vertices
    if r == 0:
        return SymTensorField(np.repeat(np.eye(2)[None], n, axis=0), curv.frames, np.zeros(n), 0)
    if curv.shape_operator is None:
        raise DomainError("T_1 needs a hypersurface shape operator")
    S = curv.shape_operator
    T = np.trace(S, axis1=1, axis2=2)[:, None, None] * np.eye(2) - S
    if mesh is None:
        res = np.full(n, np.nan)
    else:
        res = _divergence_residual(mesh, T, curv.frames)
    return SymTensorField(T, curv.frames, res, 1)


def identity_tensor(curv: CurvatureField) -> SymTensorField:
    return newton_tensor(curv, 0)


def h_t_vector(curv: CurvatureField, T: SymTensorField) -> np.ndarray:
    """Generalised mean curvature ``H_T = sum_i A(T e_i, e_i)`` per vertex.

    For ``T = I`` this is exactly ``2 * mean_curvature`` (the same discrete
    operator); otherwise ``-tr(T S) nu`` with the outward normal ``nu``.
    """
    if T.tensor.shape[0] != curv.n_vertices:
        raise ShapeError("tensor field and curvature field live on different meshes")
    if T.is_identity:
        return M_DIM * curv.mean_curvature
    if curv.shape_operator is None:
        raise DomainError("H_T for T != I needs a hypersurface shape operator")
    tr_ts = np.einsum("vij,vji->v", T.tensor, curv.shape_operator)
    return -tr_ts[:, None] * curv.unit_normal


def _euclidean_areas(mesh: SurfaceMesh) -> np.ndarray:
    return mixed_vertex_areas(mesh)


def hsiung_minkowski_residual(mesh: SurfaceMesh, T: SymTensorField,
                              curv: CurvatureField | None = None) -> float:
    """``int <x, H_T> + int tr T`` with the lumped induced-metric mass."""
    if not mesh.is_closed:
        raise DomainError("the integral identity needs a closed mesh")
    curv = mean_curvature_field(mesh) if curv is None else curv
    HT = h_t_vector(curv, T)
    w = _euclidean_areas(mesh)
    return float(w @ np.einsum("vi,vi->v", mesh.vertices, HT) + w @ T.trace)


def sphere_mean_curvature(mesh: SurfaceMesh, tol: float = 1e-6) -> np.ndarray:
    """Mean curvature vector of a surface on the unit sphere, relative to the sphere."""
    norms = np.linalg.norm(mesh.vertices, axis=1)
    if np.max(np.abs(norms - 1)) > tol:
        raise GeometryError("vertices are not on the unit sphere")
    return _euclidean_mean_curvature(mesh) + mesh.vertices


def _poincare_sigma(mesh: SurfaceMesh):
    """log of the ambient conformal factor and its coordinate gradient; zero for density 1."""
    if mesh.density is None:
        raise MissingDensityError("the ball-model conversion needs the mesh density")
    x = mesh.vertices
    if np.any(np.einsum("ij,ij->i", x, x) >= 1.0):
        raise DomainError("vertices must lie in the open unit ball")
    if np.all(mesh.density == 1.0):
        return np.zeros(len(x)), np.zeros_like(x)
    if not np.allclose(mesh.density, poincare_density(x), rtol=1e-8, atol=0):
        raise DomainError("density is not the Poincare-ball conformal factor")
    r2 = np.einsum("ij,ij->i", x, x)
    return np.log(2.0 / (1.0 - r2)), 2.0 * x / (1.0 - r2)[:, None]


def hyperbolic_convert(mesh: SurfaceMesh, curv: CurvatureField | None = None) -> CurvatureField:
    """Curvature of a ball-model surface in the hyperbolic metric.

    With ``sigma`` the log conformal factor of the ambient metric and
    ``sigma_n`` its outward normal derivative:
    ``H_n -> e^{-sigma} (H_n - sigma_n)`` and ``S -> e^{-sigma} (S + sigma_n I)``
    (S w.r.t. the inward normal). ``mean_curvature`` is returned as the
    hyperbolic normal component times the Euclidean unit normal, so its
    Euclidean length is the hyperbolic length.
    """
    if mesh.ambient_dim != 3:
        raise DomainError("ball-model conversion implemented for surfaces in R^3")
    sigma, grad = _poincare_sigma(mesh)
    curv = mean_curvature_field(mesh) if curv is None else curv
    if not np.any(sigma):
        return curv
    nu = curv.unit_normal
    sigma_n = np.einsum("vi,vi->v", grad, nu)
    scale = np.exp(-sigma)
    Hn = np.einsum("vi,vi->v", curv.mean_curvature, nu)
    Hn_hyp = scale * (Hn - sigma_n)
    S = scale[:, None, None] * (curv.shape_operator + sigma_n[:, None, None] * np.eye(2))
    Hr = np.column_stack([np.ones(len(S)), 0.5 * np.trace(S, axis1=1, axis2=2), np.linalg.det(S)])
    return CurvatureField(Hn_hyp[:, None] * nu, Hr, curv.frames, S, nu)


def reilly_rhs(mesh: SurfaceMesh, c: float) -> float:
    """``(2 / V) int (c + |H|^2)`` in the space form of curvature ``c``.

    * ``c = 0``: induced Euclidean metric, cotangent H.
    * ``c = 1``: vertices on the unit sphere; H is the component tangent to the sphere.
    * ``c = -1``: Poincare-ball mesh with density; H and the area use the hyperbolic metric.
    """
    if not mesh.is_closed:
        raise DomainError("reilly_rhs needs a closed mesh")
    if c == 0:
        if mesh.density is not None:
            raise DomainError("c = 0 uses the induced Euclidean metric; mesh carries a density")
        H = _euclidean_mean_curvature(mesh)
        w = _euclidean_areas(mesh)
    elif c == 1:
        if mesh.density is not None:
            raise DomainError("c = 1 uses the induced spherical metric; mesh carries a density")
        H = sphere_mean_curvature(mesh)
        w = _euclidean_areas(mesh)
    elif c == -1:
        if mesh.density is None:
            raise MissingDensityError("c = -1 needs the Poincare-ball density")
        H = hyperbolic_convert(mesh).mean_curvature
        w = mixed_vertex_areas(mesh) * mesh.density
    else:
        raise ParameterError(f"c must be one of 0, 1, -1, got {c}")
    integrand = c + np.einsum("vi,vi->v", H, H)
    return float(M_DIM * (w @ integrand) / w.sum())


class BoundaryCurvature(NamedTuple):
    vertex_ids: np.ndarray
    vectors: np.ndarray
    weights: np.ndarray


def h_boundary(mesh: SurfaceMesh) -> BoundaryCurvature:
    """Curvature vectors of the boundary loops from circumscribed circles of consecutive vertices.

    ``weights`` are the lumped boundary lengths (half the adjacent edge
    lengths) in the induced metric.
    """
    if mesh.is_closed:
        raise DomainError("mesh has no boundary")
    if mesh.ambient_dim not in (2, 3):
        raise DomainError("boundary curvature supported in R^2 and R^3")
    ids, vecs, wts = [], [], []
    for loop in mesh.boundary_loops:
        if len(loop) < 3:
            raise GeometryError("boundary loop with fewer than 3 vertices")
        p = mesh.vertices[loop]
        a = np.roll(p, 1, axis=0) - p
        b = np.roll(p, -1, axis=0) - p
        aa = np.einsum("ij,ij->i", a, a)
        bb = np.einsum("ij,ij->i", b, b)
        ab = np.einsum("ij,ij->i", a, b)
        det = aa * bb - ab * ab
        flat = det <= 1e-14 * aa * bb
        det_safe = np.where(flat, 1.0, det)
        s = 0.5 * bb * (aa - ab) / det_safe
        t = 0.5 * aa * (bb - ab) / det_safe
        centre = s[:, None] * a + t[:, None] * b
        r2 = np.einsum("ij,ij->i", centre, centre)
        kappa = np.where(flat[:, None], 0.0, centre / np.where(flat, 1.0, r2)[:, None])
        ids.append(loop)
        vecs.append(kappa)
        wts.append(0.5 * (np.sqrt(aa) + np.sqrt(bb)))
    return BoundaryCurvature(np.concatenate(ids), np.vstack(vecs), np.concatenate(wts))


def require_nonzero(field: np.ndarray, weights: np.ndarray, tol: float = 1e-10) -> None:
    """Raise DegenerateTensorError when an H_T field vanishes in the weighted L2 sense."""
    if float(weights @ np.einsum("vi,vi->v", field, field)) <= tol * weights.sum():
        raise DegenerateTensorError("H_T vanishes identically; the extrinsic bound is degenerate")


__all__ = [
    "CurvatureField", "SymTensorField", "BoundaryCurvature", "mean_curvature_field",
    "newton_tensor", "identity_tensor", "h_t_vector", "hsiung_minkowski_residual", "reilly_rhs",
    "hyperbolic_convert", "h_boundary", "sphere_mean_curvature", "tangent_frames",
    "operator_L_T", "triangle_areas", "require_nonzero",
]
