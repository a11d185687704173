"""Triangulated model surfaces immersed in R^n, n in {2, 3, 4}.

Meshes are flat index arrays. Boundary loops are derived from the oriented
triangles at construction time, so every loop keeps the domain on its left.
An optional per-vertex ``density`` stores the conformal factor e^{2 rho} of the
metric relative to the metric induced from the ambient Euclidean space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, NamedTuple

import numpy as np

from .errors import ConstructionError, ParameterError, TopologyError

MESH_FORMAT = "hmbounds.mesh"
MESH_FORMAT_VERSION = 1

_AREA_EPS = 1e-14

# Default parameters per builder kind. Anything not listed is rejected.
_KIND_DEFAULTS: dict[str, dict[str, Any]] = {
    "icosphere": {"radius": 1.0, "subdiv": 3, "center": (0.0, 0.0, 0.0)},
    "ellipsoid": {"a": 2.0, "b": 1.0, "c": 1.0, "subdiv": 3},
    "torus_rev": {"R": 2.0, "r": 1.0, "nu": 32, "nv": 16},
    "clifford_torus": {"n_grid": 32},
    "disk": {"rings": 8, "radius": 1.0},
    "annulus": {"inner_radius": 0.5, "rings": 8},
    "ellipse": {"a": 2.0, "b": 1.0, "rings": 8},
    "half_disk": {"rings": 8},
    "poincare_sphere": {"hyp_radius": 1.0, "subdiv": 3},
    "mobius_pullback_sphere": {"a_param": 0.4, "subdiv": 3},
    "conformal_sphere": {"rho_coeffs": (0.0, 0.0, 0.3), "subdiv": 3},
}

PLANAR_KINDS = frozenset({"disk", "annulus", "ellipse", "half_disk"})


@dataclass(frozen=True)
class SurfaceSpec:
    """Provenance of a mesh: builder kind plus its parameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in _KIND_DEFAULTS:
            raise ParameterError(f"unknown surface kind {self.kind!r}")
        unknown = set(self.params) - set(_KIND_DEFAULTS[self.kind])
        if unknown:
            raise ParameterError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        merged = dict(_KIND_DEFAULTS[self.kind])
        merged.update(self.params)
        object.__setattr__(self, "params", merged)
        _validate_params(self.kind, merged)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": _jsonable(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "SurfaceSpec":
        return cls(data["kind"], dict(data.get("params", {})))


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _validate_params(kind: str, p: dict) -> None:
    def positive(name):
        if not p[name] > 0:
            raise ParameterError(f"{kind}: {name} must be positive, got {p[name]}")

    def at_least(name, lo):
        if int(p[name]) != p[name] or p[name] < lo:
            raise ParameterError(f"{kind}: {name} must be an integer >= {lo}, got {p[name]}")

    if kind in ("icosphere", "ellipsoid", "poincare_sphere", "mobius_pullback_sphere",
                "conformal_sphere"):
        at_least("subdiv", 1)
    if kind == "icosphere":
        positive("radius")
        if len(p["center"]) != 3:
            raise ParameterError("icosphere: center must have 3 components")
    elif kind == "ellipsoid":
        for name in "abc":
            positive(name)
    elif kind == "torus_rev":
        positive("r")
        if not p["R"] > p["r"]:
            raise ParameterError("torus_rev: need R > r > 0")
        at_least("nu", 3)
        at_least("nv", 3)
    elif kind == "clifford_torus":
        at_least("n_grid", 3)
    elif kind == "disk":
        at_least("rings", 1)
        positive("radius")
    elif kind == "annulus":
        at_least("rings", 1)
        if not 0 < p["inner_radius"] < 1:
            raise ParameterError("annulus: need 0 < inner_radius < 1")
    elif kind == "ellipse":
        at_least("rings", 1)
        positive("a")
        positive("b")
    elif kind == "half_disk":
        at_least("rings", 1)
    elif kind == "poincare_sphere":
        positive("hyp_radius")
    elif kind == "mobius_pullback_sphere":
        norm = float(np.linalg.norm(_mobius_vector(p["a_param"])))
        if not 0 < norm < 1:
            raise ParameterError("mobius_pullback_sphere: need 0 < |a_param| < 1")
    elif kind == "conformal_sphere":
        if len(p["rho_coeffs"]) > 9:
            raise ParameterError("conformal_sphere: at most 9 rho coefficients")


class TopologyInfo(NamedTuple):
    euler_char: int
    genus: int
    boundary_components: int


class Measure(NamedTuple):
    area: float
    boundary_length: float
    centroid: np.ndarray


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Indexed triangle mesh in R^n with optional conformal density.

    Parameters
    ----------
    vertices : (V, n) array
    triangles : (F, 3) int array, counterclockwise w.r.t. the outward side
    boundary_loops : tuple of int arrays, derived from ``triangles`` when omitted
    density : (V,) array or None
        Per-vertex e^{2 rho}; the metric is ``density * induced``.
    spec : SurfaceSpec or None
        Builder provenance, used by :func:`refine` to reproject new vertices.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_loops: tuple = None
    density: np.ndarray | None = None
    spec: SurfaceSpec | None = None

    def __post_init__(self):
        verts = np.array(self.vertices, dtype=float)
        tris = np.array(self.triangles, dtype=np.int64).reshape(-1, 3)
        if verts.ndim != 2 or verts.shape[1] not in (2, 3, 4):
            raise ConstructionError(f"vertices must be (V, n) with n in 2..4, got {verts.shape}")
        if tris.size and (tris.min() < 0 or tris.max() >= len(verts)):
            raise ConstructionError("triangle index out of range")
        verts.setflags(write=False)
        tris.setflags(write=False)
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "triangles", tris)
        if self.density is not None:
            dens = np.array(self.density, dtype=float).reshape(-1)
            if dens.shape != (len(verts),):
                raise ConstructionError("density must have one value per vertex")
            dens.setflags(write=False)
            object.__setattr__(self, "density", dens)
        if self.boundary_loops is None:
            loops = _boundary_loops(tris)
        else:
            loops = tuple(np.array(l, dtype=np.int64) for l in self.boundary_loops)
        for loop in loops:
            loop.setflags(write=False)
        object.__setattr__(self, "boundary_loops", loops)

    @property
    def ambient_dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def is_closed(self) -> bool:
        return len(self.boundary_loops) == 0

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted, shape (E, 2)."""
        e = np.sort(_directed_edges(self.triangles), axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        if not self.boundary_loops:
            return np.zeros(0, dtype=np.int64)
        return np.unique(np.concatenate(self.boundary_loops))

    @cached_property
    def triangle_areas(self) -> np.ndarray:
        """Areas of the triangles in the induced (Euclidean) metric."""
        return triangle_areas(self.vertices, self.triangles)

    def with_density(self, density) -> "SurfaceMesh":
        return SurfaceMesh(self.vertices, self.triangles, self.boundary_loops, density, self.spec)

    def with_vertices(self, vertices) -> "SurfaceMesh":
        """Same connectivity, new positions; provenance is dropped."""
        return SurfaceMesh(vertices, self.triangles, self.boundary_loops, self.density, None)


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p0, p1, p2 = (vertices[triangles[:, k]] for k in range(3))
    e1, e2 = p1 - p0, p2 - p0
    g11 = np.einsum("ij,ij->i", e1, e1)
    g22 = np.einsum("ij,ij->i", e2, e2)
    g12 = np.einsum("ij,ij->i", e1, e2)
    return 0.5 * np.sqrt(np.maximum(g11 * g22 - g12 * g12, 0.0))


def _directed_edges(tris: np.ndarray) -> np.ndarray:
    return np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])


def _boundary_loops(tris: np.ndarray) -> tuple:
    directed = _directed_edges(tris)
    key = np.sort(directed, axis=1)
    _, inverse, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bnd = directed[counts[inverse.reshape(-1)] == 1]
    if len(bnd) == 0:
        return ()
    nxt: dict[int, int] = {}
    for a, b in bnd:
        if int(a) in nxt:
            raise TopologyError(f"vertex {int(a)} starts two boundary edges (non-manifold)")
        nxt[int(a)] = int(b)
    loops = []
    remaining = set(nxt)
    while remaining:
        start = min(remaining)
        loop = [start]
        remaining.discard(start)
        v = nxt[start]
        while v != start:
            if v not in remaining:
                raise TopologyError("boundary edges do not close into simple loops")
            loop.append(v)
            remaining.discard(v)
            v = nxt[v]
        loops.append(np.array(loop, dtype=np.int64))
    return tuple(loops)


def validate_mesh(mesh: SurfaceMesh) -> None:
    """Raise if any SurfaceMesh invariant fails (edge incidence, orientation, areas, density)."""
    directed = _directed_edges(mesh.triangles)
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    if np.any(dcounts > 1):
        raise TopologyError("a directed edge appears twice: inconsistent orientation or non-manifold")
    _, ucounts = np.unique(np.sort(directed, axis=1), axis=0, return_counts=True)
    if np.any(ucounts > 2):
        raise TopologyError("an edge is shared by more than two triangles")
    areas = mesh.triangle_areas
    bad = np.flatnonzero(areas <= _AREA_EPS)
    if len(bad):
        raise ConstructionError(f"triangle {int(bad[0])} has non-positive area")
    if mesh.density is not None and np.any(mesh.density <= 0):
        raise ConstructionError("density must be strictly positive")


# ----------------------------------------------------------------------------
# builders

def _icosahedron():
    t = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array([
        [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
        [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
        [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
    ], dtype=float)
    f = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _midpoint_subdivide(verts, tris):
    """4-to-1 split; returns new vertices, triangles and the parent edge of each new vertex."""
    nv = len(verts)
    directed = _directed_edges(tris)
    key = np.sort(directed, axis=1)
    uniq, inverse = np.unique(key, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    mids = 0.5 * (verts[uniq[:, 0]] + verts[uniq[:, 1]])
    nf = len(tris)
    m01 = nv + inverse[:nf]
    m12 = nv + inverse[nf:2 * nf]
    m20 = nv + inverse[2 * nf:]
    t0, t1, t2 = tris[:, 0], tris[:, 1], tris[:, 2]
    new_tris = np.concatenate([
        np.stack([t0, m01, m20], axis=1),
        np.stack([t1, m12, m01], axis=1),
        np.stack([t2, m20, m12], axis=1),
        np.stack([m01, m12, m20], axis=1),
    ])
    return np.vstack([verts, mids]), new_tris, uniq


def _unit_icosphere(subdiv):
    v, f = _icosahedron()
    for _ in range(subdiv):
        v, f, _ = _midpoint_subdivide(v, f)
        v = v / np.linalg.norm(v, axis=1, keepdims=True)
    return v, f


def _periodic_grid(nu, nv):
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    a = (i * nv + j).ravel()
    b = (((i + 1) % nu) * nv + j).ravel()
    c = (((i + 1) % nu) * nv + (j + 1) % nv).ravel()
    d = (i * nv + (j + 1) % nv).ravel()
    tris = np.concatenate([np.stack([a, b, c], 1), np.stack([a, c, d], 1)])
    u = 2 * np.pi * np.arange(nu) / nu
    w = 2 * np.pi * np.arange(nv) / nv
    uu, ww = np.meshgrid(u, w, indexing="ij")
    return uu.ravel(), ww.ravel(), tris


def _stitch(inner, inner_ang, outer, outer_ang, closed):
    """Zip two angularly sorted vertex rows into CCW triangles."""
    inner, outer = list(inner), list(outer)
    ia, oa = list(inner_ang), list(outer_ang)
    if closed:
        inner.append(inner[0])
        ia.append(ia[0] + 2 * np.pi)
        outer.append(outer[0])
        oa.append(oa[0] + 2 * np.pi)
    tris = []
    i = j = 0
    while i < len(inner) - 1 or j < len(outer) - 1:
        advance_outer = i == len(inner) - 1 or (j < len(outer) - 1 and oa[j + 1] <= ia[i + 1])
        if advance_outer:
            tris.append((inner[i], outer[j], outer[j + 1]))
            j += 1
        else:
            tris.append((inner[i], outer[j], inner[i + 1]))
            i += 1
    return tris


def _disk_rings(rings):
    """Hexagonal unit-disk triangulation: ring k carries 6k vertices."""
    verts = [(0.0, 0.0)]
    tris = []
    prev, prev_ang = [0], None
    for k in range(1, rings + 1):
        n = 6 * k
        ang = 2 * np.pi * np.arange(n) / n
        ids = list(range(len(verts), len(verts) + n))
        r = k / rings
        verts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
        if k == 1:
            tris.extend((0, ids[q], ids[(q + 1) % n]) for q in range(n))
        else:
            tris.extend(_stitch(prev, prev_ang, ids, ang, closed=True))
        prev, prev_ang = ids, ang
    return np.array(verts), np.array(tris, dtype=np.int64)


def _annulus_rings(eps, rings):
    dr = (1.0 - eps) / rings
    verts, tris = [], []
    prev = prev_ang = None
    for k in range(rings + 1):
        r = eps + dr * k
        n = max(6, int(round(2 * np.pi * r / dr)))
        ang = 2 * np.pi * np.arange(n) / n
        ids = list(range(len(verts), len(verts) + n))
        verts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
        if prev is not None:
            tris.extend(_stitch(prev, prev_ang, ids, ang, closed=True))
        prev, prev_ang = ids, ang
    return np.array(verts), np.array(tris, dtype=np.int64)


def _half_disk_rings(rings):
    verts = [(0.0, 0.0)]
    tris = []
    prev, prev_ang = [0], None
    for k in range(1, rings + 1):
        n = 3 * k + 1
        ang = np.pi * np.arange(n) / (n - 1)
        ids = list(range(len(verts), len(verts) + n))
        r = k / rings
        verts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
        if k == 1:
            tris.extend((0, ids[q], ids[q + 1]) for q in range(n - 1))
        else:
            tris.extend(_stitch(prev, prev_ang, ids, ang, closed=False))
        prev, prev_ang = ids, ang
    return np.array(verts), np.array(tris, dtype=np.int64)


def _mobius_vector(a_param):
    a = np.atleast_1d(np.asarray(a_param, dtype=float))
    if a.size == 1:
        return np.array([0.0, 0.0, float(a[0])])
    return a


def poincare_density(x: np.ndarray) -> np.ndarray:
    """Conformal factor (2 / (1 - |x|^2))^2 of the Poincare ball metric."""
    r2 = np.einsum("ij,ij->i", x, x)
    return (2.0 / (1.0 - r2)) ** 2


def mobius_density(a: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Factor e^{2 rho} with gamma_a^* h = e^{2 rho} h on the unit sphere."""
    a = np.asarray(a, dtype=float)
    return (1.0 - a @ a) / (1.0 + x @ a) ** 2


def _rho_monomials(x):
    x1, x2, x3 = x[:, 0], x[:, 1], x[:, 2]
    return np.stack([x1, x2, x3, x1 * x1, x2 * x2, x3 * x3, x1 * x2, x2 * x3, x3 * x1], axis=1)


def conformal_sphere_rho(coeffs, x: np.ndarray) -> np.ndarray:
    """Log conformal factor rho(x) as a polynomial of degree <= 2 in the coordinates."""
    c = np.zeros(9)
    c[: len(coeffs)] = coeffs
    return _rho_monomials(x) @ c


def _analytic_density(spec: SurfaceSpec, verts: np.ndarray):
    p = spec.params
    if spec.kind == "poincare_sphere":
        return poincare_density(verts)
    if spec.kind == "mobius_pullback_sphere":
        return mobius_density(_mobius_vector(p["a_param"]), verts)
    if spec.kind == "conformal_sphere":
        return np.exp(2.0 * conformal_sphere_rho(p["rho_coeffs"], verts))
    return None


def _torus_angles(v: np.ndarray, R: float):
    phi = np.arctan2(v[:, 1], v[:, 0])
    theta = np.arctan2(v[:, 2], np.hypot(v[:, 0], v[:, 1]) - R)
    return phi, theta


def _mid_angle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.arctan2(np.sin(a) + np.sin(b), np.cos(a) + np.cos(b))


def _project_closed(spec: SurfaceSpec, v: np.ndarray, parents: np.ndarray | None = None
                    ) -> np.ndarray:
    p = spec.params
    kind = spec.kind
    if kind == "icosphere":
        c = np.asarray(p["center"], dtype=float)
        d = v - c
        return c + p["radius"] * d / np.linalg.norm(d, axis=1, keepdims=True)
    if kind in ("mobius_pullback_sphere", "conformal_sphere"):
        return v / np.linalg.norm(v, axis=1, keepdims=True)
    if kind == "poincare_sphere":
        r0 = math.tanh(p["hyp_radius"] / 2.0)
        return r0 * v / np.linalg.norm(v, axis=1, keepdims=True)
    if kind == "ellipsoid":
        axes = np.array([p["a"], p["b"], p["c"]], dtype=float)
        u = v / axes
        return axes * u / np.linalg.norm(u, axis=1, keepdims=True)
    if kind == "torus_rev":
        R, r = p["R"], p["r"]
        phi, theta = _torus_angles(v, R)
        if parents is not None:
            # parameter-space midpoints keep the refined mesh a regular grid
            new = np.arange(len(v) - len(parents), len(v))
            phi[new] = _mid_angle(phi[parents[:, 0]], phi[parents[:, 1]])
            theta[new] = _mid_angle(theta[parents[:, 0]], theta[parents[:, 1]])
        ring = R + r * np.cos(theta)
        return np.stack([ring * np.cos(phi), ring * np.sin(phi), r * np.sin(theta)], axis=1)
    if kind == "clifford_torus":
        s = 1.0 / math.sqrt(2.0)
        a = v[:, :2] / np.linalg.norm(v[:, :2], axis=1, keepdims=True)
        b = v[:, 2:] / np.linalg.norm(v[:, 2:], axis=1, keepdims=True)
        return s * np.hstack([a, b])
    raise ConstructionError(f"no closed-surface projection for {kind}")


def _project_boundary(spec: SurfaceSpec, v: np.ndarray, new_ids, parents) -> np.ndarray:
    """Move new boundary midpoints of planar domains back onto the analytic boundary curve."""
    p = spec.params
    v = v.copy()
    tol = 1e-9
    for vid, (i, j) in zip(new_ids, parents):
        pi, pj, q = v[i], v[j], v[vid]
        if spec.kind == "disk":
            R = p["radius"]
            if abs(np.linalg.norm(pi) - R) < tol * R and abs(np.linalg.norm(pj) - R) < tol * R:
                v[vid] = R * q / np.linalg.norm(q)
        elif spec.kind == "annulus":
            for R in (p["inner_radius"], 1.0):
                if abs(np.linalg.norm(pi) - R) < tol and abs(np.linalg.norm(pj) - R) < tol:
                    v[vid] = R * q / np.linalg.norm(q)
        elif spec.kind == "ellipse":
            axes = np.array([p["a"], p["b"]])
            ui, uj, uq = pi / axes, pj / axes, q / axes
            if abs(np.linalg.norm(ui) - 1) < tol and abs(np.linalg.norm(uj) - 1) < tol:
                v[vid] = axes * uq / np.linalg.norm(uq)
        elif spec.kind == "half_disk":
            on_arc = abs(np.linalg.norm(pi) - 1) < tol and abs(np.linalg.norm(pj) - 1) < tol
            if on_arc and not (abs(pi[1]) < tol and abs(pj[1]) < tol):
                v[vid] = q / np.linalg.norm(q)
    return v


def build_surface(spec: SurfaceSpec) -> SurfaceMesh:
    """Construct the mesh described by ``spec``; vertices sit exactly on the analytic locus."""
    p = spec.params
    kind = spec.kind
    if kind in ("icosphere", "ellipsoid", "poincare_sphere", "mobius_pullback_sphere",
                "conformal_sphere"):
        v, f = _unit_icosphere(int(p["subdiv"]))
        if kind == "icosphere":
            v = np.asarray(p["center"], dtype=float) + p["radius"] * v
        elif kind == "ellipsoid":
            v = v * np.array([p["a"], p["b"], p["c"]], dtype=float)
        elif kind == "poincare_sphere":
            v = math.tanh(p["hyp_radius"] / 2.0) * v
    elif kind == "torus_rev":
        R, r = p["R"], p["r"]
        u, w, f = _periodic_grid(int(p["nu"]), int(p["nv"]))
        ring = R + r * np.cos(w)
        v = np.stack([ring * np.cos(u), ring * np.sin(u), r * np.sin(w)], axis=1)
    elif kind == "clifford_torus":
        n = int(p["n_grid"])
        u, w, f = _periodic_grid(n, n)
        v = np.stack([np.cos(u), np.sin(u), np.cos(w), np.sin(w)], axis=1) / math.sqrt(2.0)
    elif kind == "disk":
        v, f = _disk_rings(int(p["rings"]))
        v = p["radius"] * v
    elif kind == "ellipse":
        v, f = _disk_rings(int(p["rings"]))
        v = v * np.array([p["a"], p["b"]], dtype=float)
    elif kind == "annulus":
        v, f = _annulus_rings(float(p["inner_radius"]), int(p["rings"]))
    elif kind == "half_disk":
        v, f = _half_disk_rings(int(p["rings"]))
    else:  # pragma: no cover - rejected by SurfaceSpec
        raise ParameterError(kind)
    mesh = SurfaceMesh(v, f, density=_analytic_density(spec, v), spec=spec)
    validate_mesh(mesh)
    return mesh


def refine(mesh: SurfaceMesh) -> SurfaceMesh:
    """Split every triangle 4-to-1 at edge midpoints.

    With a retained provenance spec, new vertices are projected back onto the
    analytic surface (or boundary curve for planar domains) and the density is
    re-evaluated from its closed form; otherwise the density is interpolated.
    """
    v, f, parents = _midpoint_subdivide(mesh.vertices, mesh.triangles)
    spec = mesh.spec
    nv_old = mesh.n_vertices
    density = None
    if spec is not None:
        if spec.kind in PLANAR_KINDS:
            bset = set(mesh.boundary_vertices.tolist())
            edge_counts = _edge_counts(mesh.triangles, parents)
            on_bnd = [k for k, (i, j) in enumerate(parents)
                      if edge_counts[k] == 1 and i in bset and j in bset]
            v = _project_boundary(spec, v, [nv_old + k for k in on_bnd],
                                  [tuple(parents[k]) for k in on_bnd])
        else:
            v = _project_closed(spec, v, parents)
            v[:nv_old] = mesh.vertices
        density = _analytic_density(spec, v)
    if density is None and mesh.density is not None:
        density = np.concatenate([mesh.density,
                                  0.5 * (mesh.density[parents[:, 0]] + mesh.density[parents[:, 1]])])
    return SurfaceMesh(v, f, density=density, spec=spec)


def _edge_counts(tris, uniq_edges):
    key = np.sort(_directed_edges(tris), axis=1)
    _, counts = np.unique(key, axis=0, return_counts=True)
    # np.unique in _midpoint_subdivide used the same sort order
    assert len(counts) == len(uniq_edges)
    return counts


def topology(mesh: SurfaceMesh) -> TopologyInfo:
    validate_mesh(mesh)
    V = mesh.n_vertices
    used = np.unique(mesh.triangles)
    if len(used) != V:
        raise TopologyError("mesh has isolated vertices")
    chi = V - len(mesh.edges) + len(mesh.triangles)
    k = len(mesh.boundary_loops)
    twice_genus = 2 - chi - k
    if twice_genus < 0 or twice_genus % 2:
        raise TopologyError(f"euler characteristic {chi} with {k} boundary loops is not orientable-surface data")
    return TopologyInfo(int(chi), int(twice_genus // 2), int(k))


def vertex_masses(mesh: SurfaceMesh) -> np.ndarray:
    """Lumped metric area per vertex (density treated as piecewise linear)."""
    tris = mesh.triangles
    areas = mesh.triangle_areas
    if mesh.density is None:
        w = np.repeat(areas[:, None] / 3.0, 3, axis=1)
    else:
        d = mesh.density[tris]
        w = areas[:, None] * (d + d.sum(axis=1, keepdims=True)) / 12.0
    return np.bincount(tris.ravel(), weights=w.ravel(), minlength=mesh.n_vertices)


def mixed_vertex_areas(mesh: SurfaceMesh) -> np.ndarray:
    """Voronoi areas per vertex, with the usual half/quarter split on obtuse triangles.

    Induced (Euclidean) metric; sums to the total mesh area.
    """
    v, t = mesh.vertices, mesh.triangles
    area = mesh.triangle_areas
    P = [v[t[:, k]] for k in range(3)]
    dots = [np.einsum("ij,ij->i", P[(k + 1) % 3] - P[k], P[(k + 2) % 3] - P[k]) for k in range(3)]
    cots = [d / (2 * area) for d in dots]
    obtuse = [d < 0 for d in dots]
    any_obtuse = obtuse[0] | obtuse[1] | obtuse[2]
    out = np.zeros(mesh.n_vertices)
    for k in range(3):
        i, j = (k + 1) % 3, (k + 2) % 3
        e_kj = np.einsum("ij,ij->i", P[j] - P[k], P[j] - P[k])
        e_ki = np.einsum("ij,ij->i", P[i] - P[k], P[i] - P[k])
        voronoi = (e_kj * cots[i] + e_ki * cots[j]) / 8.0
        val = np.where(any_obtuse, np.where(obtuse[k], area / 2, area / 4), voronoi)
        np.add.at(out, t[:, k], val)
    return out


def boundary_edges(mesh: SurfaceMesh) -> np.ndarray:
    """Directed boundary edges (i, j) following the loops."""
    if not mesh.boundary_loops:
        return np.zeros((0, 2), dtype=np.int64)
    return np.concatenate([np.stack([l, np.roll(l, -1)], axis=1) for l in mesh.boundary_loops])


def metric_edge_lengths(mesh: SurfaceMesh, edges: np.ndarray | None = None) -> np.ndarray:
    edges = mesh.edges if edges is None else edges
    lengths = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
    if mesh.density is not None:
        s = np.sqrt(mesh.density)
        lengths = lengths * 0.5 * (s[edges[:, 0]] + s[edges[:, 1]])
    return lengths


def mesh_size(mesh: SurfaceMesh) -> float:
    """Maximum metric edge length h."""
    return float(metric_edge_lengths(mesh).max())


def measure(mesh: SurfaceMesh) -> Measure:
    masses = vertex_masses(mesh)
    area = float(masses.sum())
    be = boundary_edges(mesh)
    blen = float(metric_edge_lengths(mesh, be).sum()) if len(be) else 0.0
    centroid = masses @ mesh.vertices / area
    return Measure(area, blen, centroid)


# ----------------------------------------------------------------------------
# serialization

def mesh_to_dict(mesh: SurfaceMesh) -> dict:
    return {
        "format": MESH_FORMAT,
        "version": MESH_FORMAT_VERSION,
        "ambient_dim": mesh.ambient_dim,
        "vertices": mesh.vertices.tolist(),
        "triangles": mesh.triangles.tolist(),
        "boundary_loops": [l.tolist() for l in mesh.boundary_loops],
        "density": None if mesh.density is None else mesh.density.tolist(),
        "spec": None if mesh.spec is None else mesh.spec.to_dict(),
    }


def mesh_from_dict(data: dict) -> SurfaceMesh:
    if data.get("format") != MESH_FORMAT:
        raise ValueError(f"not a mesh document: format={data.get('format')!r}")
    if data.get("version") != MESH_FORMAT_VERSION:
        raise ValueError(f"unsupported mesh format version {data.get('version')}")
    verts = np.array(data["vertices"], dtype=float).reshape(-1, data["ambient_dim"])
    spec = None if data["spec"] is None else SurfaceSpec.from_dict(data["spec"])
    return SurfaceMesh(verts, np.array(data["triangles"], dtype=np.int64).reshape(-1, 3),
                       tuple(data["boundary_loops"]), data["density"], spec)


def mesh_to_json(mesh: SurfaceMesh) -> str:
    return json.dumps(mesh_to_dict(mesh))


def mesh_from_json(text: str) -> SurfaceMesh:
    return mesh_from_dict(json.loads(text))
