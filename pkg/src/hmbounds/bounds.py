"""Both sides of each harmonic-mean eigenvalue inequality on a concrete mesh, with verdicts.

Every evaluator returns a :class:`BoundReport`. Verdicts compare the two sides
with a resolution-dependent tolerance ``C * h`` (``h`` the largest metric edge
length) because conforming elements overestimate eigenvalues at first order:

* ``violated-beyond-tolerance`` iff ``lhs > rhs * (1 + tol)``
* ``holds-at-equality`` iff ``|relative_gap| <= tol``
* ``holds`` otherwise
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .conformal import ConformalVolumeEstimate
from .errors import GeometryError, ParameterError
from .extrinsic import CurvatureField, SymTensorField, h_boundary, h_t_vector, \
    mean_curvature_field, reilly_rhs, require_nonzero, sphere_mean_curvature
from .mesh import SurfaceMesh, mesh_size, mixed_vertex_areas, topology
from .spectral import M_DIM, FemMatrices, Spectrum, assemble_fem, harmonic_mean, \
    triangle_gradients

HOLDS = "holds"
EQUALITY = "holds-at-equality"
VIOLATED = "violated-beyond-tolerance"

THEOREMS = (
    "neumann_conformal", "neumann_genus", "steklov_genus", "steklov_genus_strict",
    "steklov_relconf", "reilly", "ext_closed", "ext_closed_sphere", "ext_closed_newton",
    "ext_steklov",
)

# tolerance = C * h. Equality-case gaps shrink like h^2, so C only has to cover the
# coarsest level; the T_1 tensor needs more because its curvature comes from a quadric fit.
# The Neumann constant also has to stay below the rho = 0.3 z conformal sphere's gap / h (about 0.07).
TOLERANCE_CONSTANTS = {
    "neumann_conformal": 0.065,
    "neumann_genus": 0.065,
    "steklov_genus": 0.1,
    "steklov_genus_strict": 0.1,
    "steklov_relconf": 0.1,
    "reilly": 0.05,
    "ext_closed": 0.05,
    "ext_closed_sphere": 0.05,
    "ext_closed_newton": 0.5,
    "ext_steklov": 0.05,
}


def verdict_for(lhs: float, rhs: float, tol: float) -> str:
    if lhs > rhs * (1.0 + tol):
        return VIOLATED
    gap = (rhs - lhs) / rhs
    return EQUALITY if abs(gap) <= tol else HOLDS


def tolerance_for(theorem_id: str, h: float) -> float:
    return TOLERANCE_CONSTANTS[theorem_id] * h


@dataclass(frozen=True)
class EqualityDiagnostics:
    """Numerical proxies for the equality conditions; inapplicable entries are None."""

    eigenvalue_spread: float
    curvature_constancy: float | None = None
    predicted_radius: float | None = None
    measured_radius: float | None = None
    trace_T_constancy: float | None = None
    takahashi_residual: float | None = None
    boundary_sphericity: float | None = None
    branch: str | None = None

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class BoundReport:
    theorem_id: str
    lhs: float
    rhs: float
    relative_gap: float
    tolerance: float
    verdict: str
    diagnostics: EqualityDiagnostics
    mesh_meta: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def h(self) -> float:
        return float(self.mesh_meta.get("h", float("nan")))

    def to_dict(self) -> dict:
        return {
            "theorem_id": self.theorem_id, "lhs": self.lhs, "rhs": self.rhs,
            "relative_gap": self.relative_gap, "tolerance": self.tolerance,
            "verdict": self.verdict, "diagnostics": self.diagnostics.to_dict(),
            "mesh_meta": self.mesh_meta, "extra": self.extra,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def csv_row(self) -> str:
        """One CSV line: theorem_id, h, lhs, rhs, gap, verdict."""
        buf = io.StringIO()
        csv.writer(buf, lineterminator="").writerow(
            [self.theorem_id, repr(self.h), repr(self.lhs), repr(self.rhs),
             repr(self.relative_gap), self.verdict])
        return buf.getvalue()


CSV_HEADER = "theorem_id,h,lhs,rhs,gap,verdict"


def report_from_dict(d: dict) -> BoundReport:
    return BoundReport(d["theorem_id"], d["lhs"], d["rhs"], d["relative_gap"], d["tolerance"],
                       d["verdict"], EqualityDiagnostics(**d["diagnostics"]), d["mesh_meta"],
                       d["extra"])


def _mesh_meta(mesh: SurfaceMesh) -> dict:
    return {"h": mesh_size(mesh), "vertices": mesh.n_vertices, "triangles": len(mesh.triangles)}


def _harmonic_context(spectrum: Spectrum) -> dict:
    k = min(4, spectrum.count)
    vals = spectrum.nonzero(k)
    means = [harmonic_mean(vals[:j]) for j in range(1, k + 1)]
    return {"harmonic_means": means, "first_leq_pair": bool(means[0] <= means[1] + 1e-15)}


def _make(theorem_id, lhs, rhs, mesh, spectrum, diag, **extra):
    meta = _mesh_meta(mesh)
    tol = tolerance_for(theorem_id, meta["h"])
    gap = (rhs - lhs) / rhs
    info = _harmonic_context(spectrum)
    info.update(extra)
    return BoundReport(theorem_id, float(lhs), float(rhs), float(gap), float(tol),
                       verdict_for(lhs, rhs, tol), diag, meta, info)


def _lhs_pair(spectrum: Spectrum) -> float:
    return harmonic_mean(spectrum.nonzero(M_DIM))


def _fem(mesh, fem):
    return assemble_fem(mesh) if fem is None else fem


# ----------------------------------------------------------------------------
# diagnostics

def fit_sphere(points: np.ndarray):
    """Algebraic least-squares sphere ``|x|^2 = 2 c.x + k``; returns (centre, radius)."""
    A = np.column_stack([2 * points, np.ones(len(points))])
    rhs = np.einsum("ij,ij->i", points, points)
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    centre = sol[:-1]
    return centre, float(math.sqrt(max(sol[-1] + centre @ centre, 0.0)))


def _relative_std(values, weights):
    mean = (weights @ values) / weights.sum()
    if mean == 0:
        return 0.0
    var = (weights @ (values - mean) ** 2) / weights.sum()
    return float(math.sqrt(max(var, 0.0)) / abs(mean))


def _hyperbolic_radius(centre, radius):
    d = float(np.linalg.norm(centre))
    s1, s2 = d - radius, d + radius
    if not (-1 < s1 < 1 and -1 < s2 < 1):
        return None
    return float(math.atanh(s2) - math.atanh(s1))


def _takahashi(mesh, fem, lam1, positions):
    w = np.asarray(fem.mass.sum(axis=1)).ravel()
    x = positions - (w @ positions) / w.sum()
    Mx = fem.mass @ x
    return float(np.linalg.norm(fem.stiffness @ x - lam1 * Mx) / np.linalg.norm(lam1 * Mx))


def equality_diagnostics(spectrum: Spectrum, mesh: SurfaceMesh, context: str, c: float = 0,
                         fem: FemMatrices | None = None, T: SymTensorField | None = None,
                         curv: CurvatureField | None = None) -> EqualityDiagnostics:
    """Equality-case proxies: spectral spread, predicted and measured radii, Takahashi residual.

    ``c`` is the curvature of the ambient space form used for the radius
    formulas (the ``ext_closed_sphere`` context implies ``c = 1``).
    """
    vals = spectrum.nonzero(M_DIM)
    lam1 = float(vals[0])
    spread = float(np.max(np.abs(vals - lam1)) / lam1)
    if spectrum.kind == "steklov":
        bc = h_boundary(mesh)
        pts = mesh.vertices[bc.vertex_ids]
        centre, _ = fit_sphere(pts)
        target = 1.0 / lam1
        dev = (np.linalg.norm(pts - centre, axis=1) - target) / target
        sph = float(math.sqrt((bc.weights @ dev ** 2) / bc.weights.sum()))
        return EqualityDiagnostics(spread, predicted_radius=target, boundary_sphericity=sph,
                                   measured_radius=float(np.mean(np.linalg.norm(pts - centre, axis=1))))
    if context == "ext_closed_sphere":
        c = 1
    fem = _fem(mesh, fem)
    r0 = math.sqrt(M_DIM / lam1)
    branch = None
    predicted = None
    if c == 0:
        predicted = r0
    elif c == 1:
        if abs(r0 - 1.0) <= 1e-3:
            branch, predicted = "minimal-in-sphere", math.pi / 2
        elif r0 < 1.0:
            predicted = math.asin(r0)
        else:
            branch = "radius-infeasible"
    elif c == -1:
        predicted = math.asinh(r0)
    centre, radius = fit_sphere(mesh.vertices)
    if c == 0:
        measured = radius
    elif c == 1:
        measured = math.asin(min(radius, 1.0))
    else:
        measured = _hyperbolic_radius(centre, radius)
    w = mixed_vertex_areas(mesh)
    constancy = None
    if mesh.is_closed and mesh.ambient_dim in (3, 4) and mesh.density is None:
        if curv is None and mesh.ambient_dim == 3:
            curv = mean_curvature_field(mesh)
        H = sphere_mean_curvature(mesh) if c == 1 else (
            curv.mean_curvature if curv is not None else mean_curvature_field(mesh).mean_curvature)
        h2 = np.einsum("vi,vi->v", H, H)
        constancy = _relative_std(np.sqrt(h2) if c == 0 else c + h2, w)
    tak = _takahashi(mesh, fem, lam1, mesh.vertices) if mesh.is_closed else None
    trc = _relative_std(T.trace, w) if T is not None else None
    return EqualityDiagnostics(spread, constancy, predicted, measured, trc, tak, None, branch)


# ----------------------------------------------------------------------------
# Neumann bounds

def bound_neumann_conformal(mesh: SurfaceMesh, vc_estimate: ConformalVolumeEstimate,
                            spectrum: Spectrum, fem: FemMatrices | None = None) -> BoundReport:
    """``h(lam_1, lam_2) <= 2 V_c / V`` with the supplied conformal-volume estimate."""
    if not mesh.is_closed:
        raise GeometryError("the conformal bound needs a closed surface")
    fem = _fem(mesh, fem)
    rhs = M_DIM * vc_estimate.value / fem.area
    diag = equality_diagnostics(spectrum, mesh, "neumann_conformal", fem=fem)
    return _make("neumann_conformal", _lhs_pair(spectrum), rhs, mesh, spectrum, diag,
                 advisory=not vc_estimate.certified, conformal_volume=vc_estimate.value)


def bound_genus_neumann(mesh: SurfaceMesh, spectrum: Spectrum,
                        fem: FemMatrices | None = None) -> BoundReport:
    """``h(lam_1, lam_2) <= (8 pi / V) floor((genus + 3) / 2)``."""
    info = topology(mesh)
    if info.boundary_components:
        raise GeometryError("the genus bound needs a closed surface")
    fem = _fem(mesh, fem)
    factor = (info.genus + 3) // 2
    rhs = 8 * math.pi * factor / fem.area
    diag = equality_diagnostics(spectrum, mesh, "neumann_genus", fem=fem)
    return _make("neumann_genus", _lhs_pair(spectrum), rhs, mesh, spectrum, diag,
                 genus=info.genus, integer_factor=factor)


def bound_reilly(mesh: SurfaceMesh, c: float, spectrum: Spectrum,
                 fem: FemMatrices | None = None) -> BoundReport:
    """``h(lam_1, lam_2) <= (2 / V) int (c + |H|^2)`` in the space form of curvature ``c``."""
    rhs = reilly_rhs(mesh, c)
    fem = _fem(mesh, fem)
    diag = equality_diagnostics(spectrum, mesh, "reilly", c=c, fem=fem)
    return _make("reilly", _lhs_pair(spectrum), rhs, mesh, spectrum, diag, c=c)


def bound_ext_closed(mesh: SurfaceMesh, T: SymTensorField, ambient: str, spectrum: Spectrum,
                     curv: CurvatureField | None = None) -> BoundReport:
    """Extrinsic bound with a divergence-free tensor ``T``.

    ``euclidean``: ``h (int tr T)^2 <= 2 V int |H_T|^2``.
    ``sphere``: ``h (int tr T)^2 <= 2 V int (|H_T|^2 + (tr T)^2)`` (T = I only).
    A first Newton transformation is reported as ``ext_closed_newton`` in the
    normalisation ``h (int H_1)^2 <= 2 V int H_2^2``, i.e. both sides divided by 4.
    """
    if ambient not in ("euclidean", "sphere"):
        raise ParameterError(f"ambient must be 'euclidean' or 'sphere', got {ambient!r}")
    if not mesh.is_closed:
        raise GeometryError("the extrinsic closed bound needs a closed surface")
    curv = mean_curvature_field(mesh) if curv is None else curv
    w = mixed_vertex_areas(mesh)
    V = w.sum()
    trT = T.trace
    if ambient == "sphere":
        if not T.is_identity:
            raise ParameterError("the spherical extrinsic bound supports T = I only")
        HT = M_DIM * sphere_mean_curvature(mesh)
        integrand = np.einsum("vi,vi->v", HT, HT) + trT ** 2
        theorem = "ext_closed_sphere"
    else:
        HT = h_t_vector(curv, T)
        require_nonzero(HT, w)
        integrand = np.einsum("vi,vi->v", HT, HT)
        theorem = "ext_closed_newton" if T.newton_order == 1 else "ext_closed"
    scale = 0.25 if theorem == "ext_closed_newton" else 1.0
    hm = _lhs_pair(spectrum)
    lhs = scale * hm * (w @ trT) ** 2
    rhs = scale * M_DIM * V * (w @ integrand)
    diag = equality_diagnostics(spectrum, mesh, theorem, c=1 if ambient == "sphere" else 0,
                                T=T, curv=curv if mesh.ambient_dim == 3 else None)
    return _make(theorem, lhs, rhs, mesh, spectrum, diag, ambient=ambient,
                 newton_order=T.newton_order)


# ----------------------------------------------------------------------------
# Steklov bounds

def bound_steklov_genus(mesh: SurfaceMesh, spectrum: Spectrum,
                        fem: FemMatrices | None = None) -> tuple[BoundReport, BoundReport]:
    """``h(s_1, s_2) L <= 2 pi (genus + k)`` and the strict ``< 8 pi (genus + 1)``.

    The strict report carries ``extra['strict_ok']``: the gap must exceed the tolerance.
    """
    info = topology(mesh)
    if info.boundary_components == 0:
        raise GeometryError("Steklov bounds need a nonempty boundary")
    fem = _fem(mesh, fem)
    lhs = _lhs_pair(spectrum) * fem.boundary_length
    diag = equality_diagnostics(spectrum, mesh, "steklov_genus", fem=fem)
    r1 = _make("steklov_genus", lhs, 2 * math.pi * (info.genus + info.boundary_components),
               mesh, spectrum, diag, genus=info.genus, boundary_components=info.boundary_components)
    r2 = _make("steklov_genus_strict", lhs, 8 * math.pi * (info.genus + 1), mesh, spectrum, diag,
               genus=info.genus)
    r2.extra["strict_ok"] = bool(r2.relative_gap > r2.tolerance)
    return r1, r2


def planar_image_area(mesh: SurfaceMesh, image: np.ndarray) -> float:
    """Unsigned area of the piecewise-linear image, counted with multiplicity."""
    _, areas = triangle_gradients(np.asarray(image, dtype=float), mesh.triangles)
    return float(areas.sum())


def bound_steklov_relconf(mesh: SurfaceMesh, map_to_ball: np.ndarray, spectrum: Spectrum,
                          fem: FemMatrices | None = None, tol: float = 1e-8,
                          distortion_threshold: float = 0.5) -> BoundReport:
    """``h(s_1, s_2) L <= 2 V(phi(M))`` for a supplied map with boundary on the unit sphere.

    The right side uses the image area of this map (labelled map-specific). For
    planar maps onto the disk the image area with multiplicity is invariant
    under disk automorphisms, so no supremum is needed. The report is marked
    advisory when the largest per-triangle angle distortion exceeds
    ``distortion_threshold``.
    """
    from .conformal import angle_distortion

    phi = np.asarray(map_to_ball, dtype=float)
    fem = _fem(mesh, fem)
    b = fem.boundary
    dev = np.abs(np.linalg.norm(phi[b], axis=1) - 1.0)
    if np.any(dev > tol):
        raise GeometryError(f"boundary images are off the unit sphere by up to {dev.max():.3e}")
    if np.any(np.linalg.norm(phi, axis=1) > 1 + tol):
        raise GeometryError("map leaves the closed unit ball")
    lhs = _lhs_pair(spectrum) * fem.boundary_length
    rhs = M_DIM * planar_image_area(mesh, phi)
    distortion = float(np.max(angle_distortion(mesh, phi))) if phi.shape[1] == 2 else float("nan")
    diag = equality_diagnostics(spectrum, mesh, "steklov_relconf", fem=fem)
    return _make("steklov_relconf", lhs, rhs, mesh, spectrum, diag, rhs_label="map-specific",
                 max_angle_distortion=distortion,
                 advisory=bool(distortion > distortion_threshold))


def bound_ext_steklov(mesh: SurfaceMesh, spectrum: Spectrum,
                      fem: FemMatrices | None = None) -> BoundReport:
    """``h(s_1, s_2) <= 2 V int_{boundary} |H|^2 / L^2`` with H the boundary curvature vector."""
    if mesh.density is not None:
        raise GeometryError("the extrinsic Steklov bound is stated for the induced metric")
    fem = _fem(mesh, fem)
    bc = h_boundary(mesh)
    L = bc.weights.sum()
    integral = bc.weights @ np.einsum("vi,vi->v", bc.vectors, bc.vectors)
    rhs = M_DIM * fem.area * integral / L ** 2
    diag = equality_diagnostics(spectrum, mesh, "ext_steklov", fem=fem)
    return _make("ext_steklov", _lhs_pair(spectrum), rhs, mesh, spectrum, diag)
