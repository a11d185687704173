"""Möbius maps of spheres and balls, stereographic projection, balancing and conformal volume.

The Möbius map attached to ``a`` in the open unit ball of R^{n+1} is

    gamma_a(x) = (x + (mu f + lam) a) / (lam (1 + f)),   f = <x, a>,

with ``lam = (1 - |a|^2)^{-1/2}`` and ``mu = (lam - 1) / |a|^2``. It pushes
mass toward ``a / |a|``; ``gamma_{-a}`` is its inverse and the pullback of the
round metric is ``(1 - |a|^2) / (1 + <x, a>)^2`` times the round metric.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as so

from .errors import DomainError, MissingDensityError, NonBalanceableError, ParameterError
from .mesh import SurfaceMesh, mixed_vertex_areas, poincare_density
from .spectral import M_DIM, assemble_fem, vertex_weights

SPHERE_TOL = 1e-12
BALANCE_TARGET = 1e-8


@dataclass(frozen=True, eq=False)
class MobiusParam:
    """Parameter ``a`` of gamma_a with the derived ``lam`` and ``mu``."""

    a: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).ravel()
        if not np.linalg.norm(a) < 1.0:
            raise ParameterError(f"Möbius parameter must satisfy |a| < 1, got |a| = {np.linalg.norm(a)}")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.a))

    @property
    def lam(self) -> float:
        return 1.0 / math.sqrt(1.0 - float(self.a @ self.a))

    @property
    def mu(self) -> float:
        a2 = float(self.a @ self.a)
        return 0.0 if a2 == 0.0 else (self.lam - 1.0) / a2

    def inverse(self) -> "MobiusParam":
        return MobiusParam(-self.a)

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "lambda": self.lam, "mu": self.mu}


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x[None, :] if x.ndim == 1 else x, x.ndim == 1


def mobius_apply(p: MobiusParam, x, tol: float = SPHERE_TOL) -> np.ndarray:
    """Apply gamma_a to points on the unit sphere (shape (d,) or (N, d))."""
    pts, single = _as_points(x)
    if pts.shape[1] != p.a.size:
        raise DomainError(f"points live in R^{pts.shape[1]}, parameter in R^{p.a.size}")
    dev = np.abs(np.linalg.norm(pts, axis=1) - 1.0)
    if np.any(dev > tol):
        raise DomainError(f"points are off the unit sphere by up to {dev.max():.3e}")
    if not np.any(p.a):
        out = pts.copy()
    else:
        f = pts @ p.a
        lam, mu = p.lam, p.mu
        out = (pts + (mu * f + lam)[:, None] * p.a) / (lam * (1.0 + f))[:, None]
    return out[0] if single else out


def mobius_conformal_factor(p: MobiusParam, x) -> np.ndarray:
    """Factor ``e^{2 rho}`` with ``gamma_a^* h = e^{2 rho} h`` at points of the sphere."""
    pts, single = _as_points(x)
    out = (1.0 - p.a @ p.a) / (1.0 + pts @ p.a) ** 2
    return out[0] if single else out


def mobius_ball_apply(a, x) -> np.ndarray:
    """Ball automorphism sending ``a`` to the origin; preserves the unit sphere.

    ``phi_a(x) = ((1 - |a|^2)(x - a) - |x - a|^2 a) / (1 - 2<x, a> + |x|^2 |a|^2)``.
    """
    a = np.asarray(a, dtype=float)
    pts, single = _as_points(x)
    if not np.linalg.norm(a) < 1.0:
        raise ParameterError("ball automorphism needs |a| < 1")
    a2 = a @ a
    d = pts - a
    num = (1.0 - a2) * d - np.einsum("ij,ij->i", d, d)[:, None] * a
    den = 1.0 - 2.0 * pts @ a + np.einsum("ij,ij->i", pts, pts) * a2
    out = num / den[:, None]
    return out[0] if single else out


def stereographic(x) -> np.ndarray:
    """Inverse of the projection from the north pole: R^n -> S^n, origin to the south pole."""
    pts, single = _as_points(x)
    r2 = np.einsum("ij,ij->i", pts, pts)
    out = np.column_stack([2.0 * pts, r2 - 1.0]) / (r2 + 1.0)[:, None]
    return out[0] if single else out


def inverse_stereographic(y, pole_tol: float = 1e-12) -> np.ndarray:
    """Projection from the north pole S^n -> R^n."""
    pts, single = _as_points(y)
    denom = 1.0 - pts[:, -1]
    if np.any(denom <= pole_tol):
        raise DomainError("stereographic projection is undefined at the north pole")
    out = pts[:, :-1] / denom[:, None]
    return out[0] if single else out


def stereographic_factor(x):
    """``rho`` and its gradient for the stereographic metric ``(2 / (1 + |x|^2))^2`` on R^n."""
    pts = np.asarray(x, dtype=float)
    r2 = np.einsum("ij,ij->i", pts, pts)
    return np.log(2.0 / (1.0 + r2)), -2.0 * pts / (1.0 + r2)[:, None]


def ball_to_sphere_factor(x):
    """``rho`` and its coordinate gradient for ``stereographic^* h = e^{2 rho} g_hyp`` on the ball."""
    pts = np.asarray(x, dtype=float)
    r2 = np.einsum("ij,ij->i", pts, pts)
    rho = np.log((1.0 - r2) / (1.0 + r2))
    grad = (-2.0 / (1.0 - r2) - 2.0 / (1.0 + r2))[:, None] * pts
    return rho, grad


# ----------------------------------------------------------------------------
# balancing

def _to_ball(z, cap=1.0):
    r = np.linalg.norm(z)
    return z.copy() if r == 0 else cap * math.tanh(r) * z / r


def _from_ball(a, cap=1.0):
    r = np.linalg.norm(a)
    return a.copy() if r == 0 else math.atanh(min(r / cap, 1 - 1e-16)) * a / r


def _damped_balance(moment, dim, max_iter, target):
    """Damped quasi-Newton iteration on ``moment(a) = 0`` over the open ball.

    The step is ``-J0^{-1} moment(a)`` with ``J0`` a finite-difference Jacobian
    refreshed every few iterations; the damping ``s`` grows after a decrease
    and halves otherwise.
    """
    a = np.zeros(dim)
    b = moment(a)
    best_a, best = a, np.linalg.norm(b)
    s = 1.0
    J = None
    for it in range(max_iter):
        if best < target:
            break
        if J is None or it % 10 == 0:
            eps = 1e-7
            J = np.column_stack([(moment(a + eps * e) - b) / eps for e in np.eye(dim)])
        try:
            step = -np.linalg.solve(J, b)
        except np.linalg.LinAlgError:
            step = -b
        while s > 1e-12:
            cand = a + s * step
            if np.linalg.norm(cand) < 1.0 - 1e-12:
                bc = moment(cand)
                if np.linalg.norm(bc) < np.linalg.norm(b):
                    a, b = cand, bc
                    s = min(1.0, 2.0 * s)
                    break
            s *= 0.5
        else:
            J = None
            s = 1.0
            if np.linalg.norm(b) >= best:
                break
        if np.linalg.norm(b) < best:
            best_a, best = a, np.linalg.norm(b)
    return best_a, best


def _balance(apply, points, weights, max_iter, target):
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float).ravel()
    if len(w) != len(pts):
        raise ParameterError("one weight per point required")
    if np.any(w < 0) or not w.sum() > 0:
        raise ParameterError("weights must be nonnegative with positive sum")
    support = pts[w > 0]
    if np.max(np.linalg.norm(support - support[0], axis=1)) < 1e-12:
        raise NonBalanceableError("all mass sits at one point; no balancing map exists")
    wn = w / w.sum()
    dim = pts.shape[1]

    def moment(a):
        return wn @ apply(a, pts)

    a, best = _damped_balance(moment, dim, max_iter, target)
    if best >= target:
        sol = so.root(lambda z: moment(_to_ball(z)), _from_ball(a), method="hybr",
                      options={"xtol": 1e-14})
        cand = _to_ball(sol.x)
        if np.linalg.norm(cand) < 1 and np.linalg.norm(moment(cand)) < best:
            a, best = cand, np.linalg.norm(moment(cand))
    if not best < target:
        raise NonBalanceableError(f"balancing stalled with moment norm {best:.3e}")
    return a, best


def balance_center_of_mass(points, weights, max_iter: int = 500,
                           target: float = BALANCE_TARGET) -> MobiusParam:
    """Find ``a`` with ``sum_i w_i gamma_a(x_i) = 0`` for points on the unit sphere.

    The result is re-checked: the weighted moment of the mapped points is below
    ``target`` relative to the total weight.
    """
    pts = np.asarray(points, dtype=float)
    mobius_apply(MobiusParam(np.zeros(pts.shape[1])), pts, tol=1e-9)
    a, _ = _balance(lambda a, x: mobius_apply(MobiusParam(a), x, tol=1e-9), pts, weights,
                    max_iter, target)
    return MobiusParam(a)


def balance_ball_center_of_mass(points, weights, max_iter: int = 500,
                                target: float = BALANCE_TARGET) -> np.ndarray:
    """Find a ball automorphism ``phi_a`` balancing weighted points of the unit sphere."""
    pts = np.asarray(points, dtype=float)
    if np.max(np.abs(np.linalg.norm(pts, axis=1) - 1)) > 1e-9:
        raise DomainError("boundary points must lie on the unit sphere")
    a, _ = _balance(lambda a, x: mobius_ball_apply(a, x), pts, weights, max_iter, target)
    return a


def grid_balance_oracle(points, weights, spacing: float = 0.01, coarse: float = 0.05,
                        radius: float = 0.95) -> np.ndarray:
    """Brute-force minimiser of the moment norm over a lattice in the 3-ball.

    A coarse lattice over the whole ball locates the basin; a fine lattice of
    ``spacing`` around the coarse winner gives the answer.
    """
    pts = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    wn = w / w.sum()

    def best_on(grid):
        vals = np.array([np.linalg.norm(wn @ mobius_apply(MobiusParam(a), pts, tol=1e-9))
                         for a in grid])
        return grid[np.argmin(vals)]

    axis = np.arange(-radius, radius + 1e-12, coarse)
    G = np.array(np.meshgrid(*[axis] * pts.shape[1], indexing="ij")).reshape(pts.shape[1], -1).T
    G = G[np.linalg.norm(G, axis=1) < radius]
    centre = best_on(G)
    fine = np.arange(-coarse, coarse + 1e-12, spacing)
    F = np.array(np.meshgrid(*[fine] * pts.shape[1], indexing="ij")).reshape(pts.shape[1], -1).T
    F = centre + F
    F = F[np.linalg.norm(F, axis=1) < 1.0]
    return best_on(F)


# ----------------------------------------------------------------------------
# conformal volume

def spherical_triangle_areas(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Areas of geodesic triangles with unit-vector corners, in any ambient dimension."""
    ab = np.einsum("ij,ij->i", a, b)
    bc = np.einsum("ij,ij->i", b, c)
    ca = np.einsum("ij,ij->i", c, a)
    gram = 1 + 2 * ab * bc * ca - ab ** 2 - bc ** 2 - ca ** 2
    return 2.0 * np.arctan2(np.sqrt(np.maximum(gram, 0.0)), 1.0 + ab + bc + ca)


def image_area(mesh: SurfaceMesh, sphere_points: np.ndarray) -> float:
    """Area of the mesh image on the unit sphere, triangle by triangle (with multiplicity)."""
    t = mesh.triangles
    return float(spherical_triangle_areas(sphere_points[t[:, 0]], sphere_points[t[:, 1]],
                                          sphere_points[t[:, 2]]).sum())


@dataclass(frozen=True)
class OptimizerConfig:
    n_starts: int = 8
    start_radius: float = 0.5
    eps: float = 1e-3
    seed: int = 0
    maxiter: int = 400
    xatol: float = 1e-7
    fatol: float = 1e-12
    agree_rtol: float = 1e-6
    degree_bound: int | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True, eq=False)
class ConformalVolumeEstimate:
    """Best pushed-forward area over the sampled Möbius maps.

    ``certified`` is True when the best point is interior to the cap and at
    least two starts agree on the optimum value.
    """

    value: float
    argmax_a: MobiusParam
    optimizer_trace: list = field(default_factory=list)
    resolution: dict = field(default_factory=dict)
    area_at_origin: float = float("nan")
    certified: bool = False

    def trace_csv(self) -> str:
        """CSV with columns start, iterate, abs_a, area."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["start", "iterate", "abs_a", "area"])
        for start, it, a, area in self.optimizer_trace:
            w.writerow([start, it, repr(float(np.linalg.norm(a))), repr(float(area))])
        return buf.getvalue()


def conformal_volume_sup(mesh: SurfaceMesh, map_to_sphere: np.ndarray,
                         opts: OptimizerConfig | None = None) -> ConformalVolumeEstimate:
    """Maximise the image area of ``gamma_a o map`` over ``|a| <= 1 - eps``.

    Multi-start Nelder-Mead in the variable ``z`` with
    ``a = (1 - eps) tanh(|z|) z / |z|``; starts are the origin and
    ``n_starts`` seeded random points at ``|a| = start_radius``.
    """
    opts = OptimizerConfig() if opts is None else opts
    phi = np.asarray(map_to_sphere, dtype=float)
    if phi.shape[0] != mesh.n_vertices:
        raise DomainError("map must have one point per vertex")
    mobius_apply(MobiusParam(np.zeros(phi.shape[1])), phi, tol=1e-9)
    dim = phi.shape[1]
    cap = 1.0 - opts.eps
    trace = []

    def area_at(a):
        return image_area(mesh, mobius_apply(MobiusParam(a), phi, tol=1e-9))

    rng = np.random.default_rng(opts.seed)
    dirs = rng.standard_normal((opts.n_starts, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    starts = [np.zeros(dim)] + [opts.start_radius * d for d in dirs]
    area0 = area_at(np.zeros(dim))
    results = []
    for k, a0 in enumerate(starts):
        z0 = _from_ball(a0, cap)
        iterates = []

        def cb(zk, iterates=iterates):
            a = _to_ball(zk, cap)
            iterates.append((a, area_at(a)))

        # simplex scaled to the start so the origin start explores all directions
        simplex = np.vstack([z0, z0 + 0.1 * np.eye(dim)])
        res = so.minimize(lambda z: -area_at(_to_ball(z, cap)), z0, method="Nelder-Mead",
                          callback=cb,
                          options={"maxiter": opts.maxiter, "xatol": opts.xatol,
                                   "fatol": opts.fatol, "initial_simplex": simplex})
        a_best = _to_ball(res.x, cap)
        results.append((-res.fun, a_best))
        trace.append((k, 0, a0, area_at(a0)))
        trace.extend((k, i + 1, a, v) for i, (a, v) in enumerate(iterates))
    values = np.array([r[0] for r in results])
    best = int(np.argmax(values))
    value, a_best = results[best]
    if value < area0:
        value, a_best = area0, np.zeros(dim)
    agree = np.sum(np.abs(values - value) <= opts.agree_rtol * abs(value)) >= 2
    interior = np.linalg.norm(a_best) < cap - 1e-3
    certified = bool(agree and interior)
    if opts.degree_bound is not None and value > 4 * math.pi * opts.degree_bound * (1 + 1e-9):
        certified = False
    resolution = {"vertices": mesh.n_vertices, "triangles": len(mesh.triangles),
                  "optimizer": opts.to_dict()}
    return ConformalVolumeEstimate(float(value), MobiusParam(a_best), trace, resolution,
                                   float(area0), certified)


# ----------------------------------------------------------------------------
# conformal-factor identity

@dataclass(frozen=True, eq=False)
class ConformalFactorResidual:
    """Per-vertex residual of the conformal-factor identity and its weighted RMS."""

    values: np.ndarray
    factor: np.ndarray
    weights: np.ndarray

    @property
    def l2_norm(self) -> float:
        w = self.weights
        return float(math.sqrt((w @ self.values ** 2) / w.sum()))

    @property
    def mean_factor(self) -> float:
        return float((self.weights @ self.factor) / self.weights.sum())

    @property
    def relative(self) -> float:
        return self.l2_norm / self.mean_factor


def conformal_factor_residual(mesh: SurfaceMesh, rho=None, c: float = 0, grad_rho=None
                              ) -> ConformalFactorResidual:
    """Residual ``e^{2 rho} - [(|H|^2 + c) - Delta rho - |(grad rho)^perp - H|^2]`` (surfaces).

    ``rho`` is the log factor of a conformal immersion of the ambient space
    form into the round sphere. ``c`` selects the ambient:

    * ``0``: Euclidean R^3; default rho is the stereographic factor.
    * ``-1``: Poincare ball, which the mesh density must carry; default rho is
      the factor of the ball seen as a spherical cap.
    * ``1``: the unit sphere (mesh on it, any codimension); default rho is 0.

    ``grad_rho`` is the ambient coordinate gradient, shape (N, n); the normal
    part is taken in the ambient metric.
    """
    from .extrinsic import hyperbolic_convert, mean_curvature_field, sphere_mean_curvature

    x = mesh.vertices
    if c not in (0, 1, -1):
        raise ParameterError(f"c must be one of 0, 1, -1, got {c}")
    if rho is None:
        if c == 0:
            rho, grad_rho = stereographic_factor(x)
        elif c == -1:
            rho, grad_rho = ball_to_sphere_factor(x)
        else:
            rho, grad_rho = np.zeros(len(x)), np.zeros_like(x)
    rho = np.asarray(rho, dtype=float)
    if grad_rho is None:
        raise ParameterError("grad_rho is required with an explicit rho")
    grad_rho = np.asarray(grad_rho, dtype=float)
    fem = assemble_fem(mesh)
    w_fem = vertex_weights(fem.mass)
    factor = np.exp(2.0 * rho)
    if c == -1:
        if mesh.density is None:
            raise MissingDensityError("c = -1 needs the Poincare-ball density on the mesh")
        curv = hyperbolic_convert(mesh)
        nu = curv.unit_normal
        sigma = 0.5 * np.log(mesh.density)
        Hn = np.einsum("vi,vi->v", curv.mean_curvature, nu)
        grad_n = np.exp(-sigma) * np.einsum("vi,vi->v", grad_rho, nu)
        lap = -(fem.stiffness @ rho) / w_fem
        H2 = Hn ** 2
        perp_minus_H2 = (grad_n - Hn) ** 2
        weights = mixed_vertex_areas(mesh) * mesh.density
    else:
        if mesh.density is not None:
            raise ParameterError("c in {0, 1} uses the induced metric; mesh carries a density")
        lap = -(fem.stiffness @ rho) / w_fem
        weights = mixed_vertex_areas(mesh)
        if c == 0:
            curv = mean_curvature_field(mesh)
            H = curv.mean_curvature
            frames = curv.frames
            radial = None
        else:
            H = sphere_mean_curvature(mesh)
            frames = mean_curvature_field(mesh).frames
            radial = x / np.linalg.norm(x, axis=1, keepdims=True)
        coeff = np.einsum("vai,va->vi", frames, grad_rho)
        perp = grad_rho - np.einsum("vai,vi->va", frames, coeff)
        if radial is not None:
            perp = perp - np.einsum("vi,vi->v", perp, radial)[:, None] * radial
        H2 = np.einsum("vi,vi->v", H, H)
        diff = perp - H
        perp_minus_H2 = np.einsum("vi,vi->v", diff, diff)
    values = factor - ((H2 + c) - (2.0 / M_DIM) * lap - perp_minus_H2)
    return ConformalFactorResidual(values, factor, weights)


def angle_distortion(mesh: SurfaceMesh, image: np.ndarray) -> np.ndarray:
    """Per-triangle conformal distortion ``(s1 / s2) - 1`` of the affine map to ``image``.

    ``s1 >= s2`` are the singular values of the map between the source and
    image triangles; 0 means the triangle map is a similarity.
    """
    t = mesh.triangles
    src = mesh.vertices
    e1 = src[t[:, 1]] - src[t[:, 0]]
    e2 = src[t[:, 2]] - src[t[:, 0]]
    f1 = image[t[:, 1]] - image[t[:, 0]]
    f2 = image[t[:, 2]] - image[t[:, 0]]
    G = np.stack([np.stack([np.einsum("ij,ij->i", e1, e1), np.einsum("ij,ij->i", e1, e2)], -1),
                  np.stack([np.einsum("ij,ij->i", e1, e2), np.einsum("ij,ij->i", e2, e2)], -1)], -2)
    H = np.stack([np.stack([np.einsum("ij,ij->i", f1, f1), np.einsum("ij,ij->i", f1, f2)], -1),
                  np.stack([np.einsum("ij,ij->i", f1, f2), np.einsum("ij,ij->i", f2, f2)], -1)], -2)
    ev = np.linalg.eigvals(np.linalg.solve(G, H)).real
    ev = np.sort(np.maximum(ev, 0.0), axis=1)
    return np.sqrt(ev[:, 1] / np.maximum(ev[:, 0], 1e-300)) - 1.0


def check_density_matches(mesh: SurfaceMesh) -> None:
    """Raise if a ball-model mesh's density is not the Poincare factor."""
    if mesh.density is None:
        raise MissingDensityError("mesh has no density")
    if not np.allclose(mesh.density, poincare_density(mesh.vertices), rtol=1e-8, atol=0):
        raise DomainError("density is not the Poincare-ball factor")
