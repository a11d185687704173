"""Scenario definitions, the built-in registry, and the explicit maps they use.

A scenario pairs a surface recipe with the theorems to evaluate on it and the
number of uniform refinements to run. Maps are referred to by name so that a
scenario serializes to plain JSON.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conformal import OptimizerConfig
from .errors import ParameterError
from .mesh import PLANAR_KINDS, SurfaceMesh, SurfaceSpec

MAX_LEVELS = 6

# theorem id -> whether the surface must be closed
CLOSED_THEOREMS = {"neumann_conformal", "neumann_genus", "reilly", "ext_closed",
                   "ext_closed_sphere", "ext_closed_newton"}
BOUNDARY_THEOREMS = {"steklov_genus", "steklov_genus_strict", "steklov_relconf", "ext_steklov"}

SPHERE_MAPS = ("radial",)
BALL_MAPS = ("radial", "identity", "fold", "cayley")


@dataclass(frozen=True)
class Scenario:
    """One row of the verification matrix.

    Parameters
    ----------
    name : str
    surface : SurfaceSpec
        Recipe for the coarsest mesh; level ``j`` is ``j`` uniform refinements of it.
    theorems : tuple of str
        Theorem ids from :data:`hmbounds.bounds.THEOREMS`.
    refinement_levels : int
        Number of levels, between 1 and :data:`MAX_LEVELS`.
    eigen_count : int
        Eigenpairs to compute, the zero mode included; at least 3.
    seed : int
    optimizer : OptimizerConfig or None
        Used by ``neumann_conformal``.
    c : float
        Ambient curvature for ``reilly``.
    sphere_map : str
        Map used by the conformal-volume optimizer and the test-function chain.
    ball_map : str
        Map onto the unit disk used by ``steklov_relconf`` and the Steklov chain.
    """

    name: str
    surface: SurfaceSpec
    theorems: tuple[str, ...]
    refinement_levels: int = 3
    eigen_count: int = 5
    seed: int = 0
    optimizer: OptimizerConfig | None = None
    c: float = 0.0
    sphere_map: str = "radial"
    ball_map: str = "radial"

    def __post_init__(self):
        from .bounds import THEOREMS

        if not self.name:
            raise ParameterError("scenario name must be nonempty")
        unknown = [t for t in self.theorems if t not in THEOREMS]
        if unknown:
            raise ParameterError(f"unknown theorem ids {unknown}")
        if not 1 <= self.refinement_levels <= MAX_LEVELS:
            raise ParameterError(f"refinement_levels must be in [1, {MAX_LEVELS}]")
        if self.eigen_count < 3:
            raise ParameterError("eigen_count must be at least m + 1 = 3")
        if self.c not in (0, 1, -1):
            raise ParameterError("c must be 0, 1 or -1")
        if self.sphere_map not in SPHERE_MAPS:
            raise ParameterError(f"unknown sphere map {self.sphere_map!r}")
        if self.ball_map not in BALL_MAPS:
            raise ParameterError(f"unknown ball map {self.ball_map!r}")
        planar = self.surface.kind in PLANAR_KINDS
        wrong = (CLOSED_THEOREMS if planar else BOUNDARY_THEOREMS).intersection(self.theorems)
        if wrong:
            raise ParameterError(f"theorems {sorted(wrong)} do not apply to {self.surface.kind}")

    @property
    def closed(self) -> bool:
        return self.surface.kind not in PLANAR_KINDS

    def with_overrides(self, levels: int | None = None, seed: int | None = None) -> "Scenario":
        kw = asdict_shallow(self)
        if levels is not None:
            kw["refinement_levels"] = levels
        if seed is not None:
            kw["seed"] = seed
            if self.optimizer is not None:
                kw["optimizer"] = OptimizerConfig(**{**self.optimizer.to_dict(), "seed": seed})
        return Scenario(**kw)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "surface": self.surface.to_dict(),
            "theorems": list(self.theorems),
            "refinement_levels": self.refinement_levels,
            "eigen_count": self.eigen_count,
            "seed": self.seed,
            "optimizer": None if self.optimizer is None else self.optimizer.to_dict(),
            "c": self.c,
            "sphere_map": self.sphere_map,
            "ball_map": self.ball_map,
        }


def asdict_shallow(s: Scenario) -> dict:
    return {f: getattr(s, f) for f in s.__dataclass_fields__}


def scenario_from_dict(d: dict) -> Scenario:
    """Inverse of :meth:`Scenario.to_dict`; missing optional keys take defaults."""
    try:
        spec = SurfaceSpec.from_dict(d["surface"])
        opt = d.get("optimizer")
        return Scenario(
            name=d["name"], surface=spec, theorems=tuple(d["theorems"]),
            refinement_levels=int(d.get("refinement_levels", 3)),
            eigen_count=int(d.get("eigen_count", 5)), seed=int(d.get("seed", 0)),
            optimizer=None if opt is None else OptimizerConfig(**opt),
            c=d.get("c", 0.0), sphere_map=d.get("sphere_map", "radial"),
            ball_map=d.get("ball_map", "radial"))
    except (KeyError, TypeError) as exc:
        raise ParameterError(f"malformed scenario entry: {exc}") from exc


# ----------------------------------------------------------------------------
# maps

def sphere_map(mesh: SurfaceMesh, name: str = "radial") -> np.ndarray:
    """Map a closed mesh to the unit sphere of its ambient space.

    ``radial`` normalises the position vector, which is the identity on meshes
    already on a unit sphere (the Clifford torus, the Mobius and conformal
    spheres).
    """
    x = np.asarray(mesh.vertices, dtype=float)
    r = np.linalg.norm(x, axis=1)
    if np.any(r < 1e-12):
        raise ParameterError("radial map is undefined at the origin")
    return x / r[:, None]


def _radial_to_disk(mesh: SurfaceMesh) -> np.ndarray:
    """Scale each ray so the outer boundary lands on the unit circle (star-shaped domains)."""
    x = np.array(mesh.vertices, dtype=float)
    kind, p = mesh.spec.kind, mesh.spec.params
    if kind == "ellipse":
        s = np.sqrt((x[:, 0] / p["a"]) ** 2 + (x[:, 1] / p["b"]) ** 2)
        r = np.linalg.norm(x, axis=1)
        out = np.zeros_like(x)
        nz = r > 0
        out[nz] = x[nz] * (s[nz] / r[nz])[:, None]
        return _snap(mesh, out)
    if kind == "disk":
        return _snap(mesh, x / p["radius"])
    raise ParameterError(f"no radial disk map for {kind}")


def _snap(mesh: SurfaceMesh, image: np.ndarray) -> np.ndarray:
    b = mesh.boundary_vertices
    image[b] /= np.linalg.norm(image[b], axis=1, keepdims=True)
    return image


def fold_map(mesh: SurfaceMesh) -> np.ndarray:
    """Annulus ``rho < |x| < 1`` onto the disk: identity outside ``sqrt(rho)``, inversion inside.

    Both boundary circles go to the unit circle; the image covers the annulus
    ``sqrt(rho) < |y| < 1`` twice. Each piece is conformal (the inversion reverses
    orientation).
    """
    rho = mesh.spec.params["inner_radius"]
    x = np.array(mesh.vertices, dtype=float)
    r = np.linalg.norm(x, axis=1)
    s = np.maximum(r, rho / r)
    return _snap(mesh, x * (s / r)[:, None])


def cayley_map(mesh: SurfaceMesh) -> np.ndarray:
    """Upper half-disk onto the disk: ``z -> ((1 + z)/(1 - z))^2`` then the Cayley transform."""
    x = np.array(mesh.vertices, dtype=float)
    z = x[:, 0] + 1j * x[:, 1]
    corner = np.abs(z - 1.0) < 1e-12
    zz = np.where(corner, 0.0, z)
    w = ((1 + zz) / (1 - zz)) ** 2
    d = (w - 1j) / (w + 1j)
    d[corner] = 1.0
    return _snap(mesh, np.column_stack([d.real, d.imag]))


def ball_map(mesh: SurfaceMesh, name: str) -> np.ndarray:
    """Map a planar domain into the closed unit disk with boundary on the unit circle."""
    if name == "fold":
        return fold_map(mesh)
    if name == "cayley":
        return cayley_map(mesh)
    if name == "identity":
        return _snap(mesh, np.array(mesh.vertices, dtype=float))
    return _radial_to_disk(mesh)


# ----------------------------------------------------------------------------
# registry

_NEUMANN_EQ = ("neumann_conformal", "neumann_genus", "reilly", "ext_closed")
_STEKLOV_ALL = ("steklov_genus", "steklov_genus_strict", "steklov_relconf", "ext_steklov")
_FAST_OPT = OptimizerConfig(n_starts=4, maxiter=200)


def _builtin() -> tuple[Scenario, ...]:
    S = SurfaceSpec
    return (
        Scenario("sphere-equalities", S("icosphere", {"subdiv": 3}), _NEUMANN_EQ,
                 optimizer=_FAST_OPT),
        Scenario("sphere-newton", S("icosphere", {"subdiv": 3}), ("ext_closed_newton",)),
        Scenario("scaled-sphere", S("icosphere", {"radius": 2.0, "subdiv": 2}),
                 ("neumann_genus", "reilly", "ext_closed")),
        Scenario("ellipsoid-strict", S("ellipsoid", {"a": 2.0, "b": 1.0, "c": 1.0, "subdiv": 2}),
                 _NEUMANN_EQ + ("ext_closed_newton",), optimizer=_FAST_OPT),
        Scenario("torus-rev", S("torus_rev", {"R": 2.0, "r": 1.0, "nu": 32, "nv": 16}),
                 ("neumann_genus", "reilly", "ext_closed", "ext_closed_newton")),
        Scenario("clifford", S("clifford_torus", {"n_grid": 16}),
                 ("neumann_conformal", "neumann_genus", "reilly", "ext_closed_sphere"),
                 c=1.0, optimizer=_FAST_OPT),
        Scenario("poincare-sphere", S("poincare_sphere", {"hyp_radius": 1.0, "subdiv": 2}),
                 ("neumann_conformal", "neumann_genus", "reilly"), c=-1.0, optimizer=_FAST_OPT),
        Scenario("mobius-pullback", S("mobius_pullback_sphere", {"a_param": 0.4, "subdiv": 2}),
                 ("neumann_conformal", "neumann_genus"), optimizer=_FAST_OPT),
        Scenario("conformal-sphere",
                 S("conformal_sphere", {"rho_coeffs": (0.0, 0.0, 0.3), "subdiv": 2}),
                 ("neumann_conformal", "neumann_genus"), optimizer=_FAST_OPT),
        Scenario("disk-steklov", S("disk", {"rings": 4}), _STEKLOV_ALL, eigen_count=4,
                 ball_map="identity"),
        Scenario("small-disk", S("disk", {"rings": 4, "radius": 0.5}), _STEKLOV_ALL,
                 eigen_count=4, ball_map="radial"),
        Scenario("annulus", S("annulus", {"inner_radius": 0.5, "rings": 4}), _STEKLOV_ALL,
                 eigen_count=4, ball_map="fold"),
        Scenario("ellipse", S("ellipse", {"a": 2.0, "b": 1.0, "rings": 4}),
                 ("steklov_genus", "steklov_genus_strict", "ext_steklov"), eigen_count=4),
        Scenario("half-disk", S("half_disk", {"rings": 4}), _STEKLOV_ALL, eigen_count=4,
                 ball_map="cayley"),
    )


REGISTRY: dict[str, Scenario] = {s.name: s for s in _builtin()}


def get_scenario(name: str) -> Scenario:
    try:
        return REGISTRY[name]
    except KeyError:
        raise ParameterError(f"unknown scenario {name!r}; see list-scenarios") from None
