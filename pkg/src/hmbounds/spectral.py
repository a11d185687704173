"""First-order finite elements, Neumann and Steklov spectra, and discrete test-function chains.

The discrete pencils are ``K u = lam M u`` (Neumann) and the Dirichlet-to-Neumann
Schur complement ``S u_b = sigma B u_b`` (Steklov). ``K`` is positive
semidefinite, so reported eigenvalues are nonnegative (the analyst's sign
convention ``Delta u = -lam u``).
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import AssemblyError, DomainError, EigenSolverError, RankError, ShapeError
from .mesh import SurfaceMesh, boundary_edges, mesh_size, vertex_masses

M_DIM = 2
DENSE_LIMIT = 1200
CLUSTER_RTOL = 1e-8
EIGVEC_MAGIC = b"HMBEIG01"


@dataclass(frozen=True, eq=False)
class FemMatrices:
    """Galerkin matrices of the Dirichlet energy and the L2 products on M and on its boundary.

    ``stiffness`` never depends on the density (conformal invariance of the
    Dirichlet energy in dimension two); ``mass`` and ``boundary_mass`` carry
    the density and its square root respectively.
    """

    stiffness: sp.csr_matrix
    mass: sp.csr_matrix
    boundary_mass: sp.csr_matrix
    interior: np.ndarray
    boundary: np.ndarray
    mass_kind: str = "lumped"

    @property
    def n(self) -> int:
        return self.stiffness.shape[0]

    @property
    def area(self) -> float:
        return float(self.mass.sum())

    @property
    def boundary_length(self) -> float:
        return float(self.boundary_mass.sum())


def triangle_gradients(vertices: np.ndarray, triangles: np.ndarray):
    """Ambient gradients of the three barycentric hat functions on each triangle.

    Returns ``(grads, areas)`` with ``grads`` of shape (F, 3, n). Works in any
    ambient dimension through the triangle's Gram matrix.
    """
    p0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - p0
    e2 = vertices[triangles[:, 2]] - p0
    g11 = np.einsum("ij,ij->i", e1, e1)
    g12 = np.einsum("ij,ij->i", e1, e2)
    g22 = np.einsum("ij,ij->i", e2, e2)
    det = g11 * g22 - g12 * g12
    areas = 0.5 * np.sqrt(np.maximum(det, 0.0))
    bad = np.flatnonzero(areas <= 1e-14 * np.maximum(g11 + g22, 1e-300))
    if len(bad):
        raise AssemblyError(f"triangle {int(bad[0])} is degenerate (zero area)")
    inv11, inv12, inv22 = g22 / det, -g12 / det, g11 / det
    grad1 = inv11[:, None] * e1 + inv12[:, None] * e2
    grad2 = inv12[:, None] * e1 + inv22[:, None] * e2
    grads = np.stack([-grad1 - grad2, grad1, grad2], axis=1)
    return grads, areas


def _assemble_pairs(triangles, local, n):
    """Scatter per-triangle 3x3 blocks ``local`` (F, 3, 3) into a sparse n x n matrix."""
    rows = np.repeat(triangles, 3, axis=1).ravel()
    cols = np.tile(triangles, (1, 3)).ravel()
    return sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def stiffness_matrix(mesh: SurfaceMesh, tensors: np.ndarray | None = None) -> sp.csr_matrix:
    """Cotangent stiffness; with per-triangle ambient tensors (F, n, n), the matrix of div(T grad u)."""
    grads, areas = triangle_gradients(mesh.vertices, mesh.triangles)
    if tensors is None:
        local = np.einsum("fik,fjk->fij", grads, grads)
    else:
        local = np.einsum("fik,fkl,fjl->fij", grads, tensors, grads)
    local *= areas[:, None, None]
    K = _assemble_pairs(mesh.triangles, local, mesh.n_vertices)
    return 0.5 * (K + K.T)


def _consistent_mass(mesh: SurfaceMesh) -> sp.csr_matrix:
    tris = mesh.triangles
    areas = mesh.triangle_areas
    d = np.ones(tris.shape) if mesh.density is None else mesh.density[tris]
    local = np.empty((len(tris), 3, 3))
    for a in range(3):
        for b in range(3):
            if a == b:
                others = d.sum(axis=1) - d[:, a]
                local[:, a, a] = areas * (d[:, a] / 10.0 + others / 30.0)
            else:
                c = 3 - a - b
                local[:, a, b] = areas * (d[:, a] / 30.0 + d[:, b] / 30.0 + d[:, c] / 60.0)
    return _assemble_pairs(tris, local, mesh.n_vertices)


def _boundary_mass(mesh: SurfaceMesh, kind: str) -> sp.csr_matrix:
    n = mesh.n_vertices
    be = boundary_edges(mesh)
    if len(be) == 0:
        return sp.csr_matrix((n, n))
    i, j = be[:, 0], be[:, 1]
    L = np.linalg.norm(mesh.vertices[i] - mesh.vertices[j], axis=1)
    s = np.ones(n) if mesh.density is None else np.sqrt(mesh.density)
    si, sj = s[i], s[j]
    if kind == "lumped":
        diag = np.bincount(i, L * (2 * si + sj) / 6.0, n) + np.bincount(j, L * (2 * sj + si) / 6.0, n)
        return sp.diags(diag).tocsr()
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([i, j, j, i])
    off = L * (si + sj) / 12.0
    vals = np.concatenate([L * (3 * si + sj) / 12.0, L * (3 * sj + si) / 12.0, off, off])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def assemble_fem(mesh: SurfaceMesh, mass_kind: str = "lumped") -> FemMatrices:
    """Assemble stiffness, mass and boundary mass.

    Parameters
    ----------
    mesh : SurfaceMesh
    mass_kind : {"lumped", "consistent"}
        The lumped mass is diagonal; both converge at first order.
    """
    if mass_kind not in ("lumped", "consistent"):
        raise ValueError(f"mass_kind must be 'lumped' or 'consistent', got {mass_kind!r}")
    K = stiffness_matrix(mesh)
    if mass_kind == "lumped":
        M = sp.diags(vertex_masses(mesh)).tocsr()
    else:
        M = _consistent_mass(mesh)
    B = _boundary_mass(mesh, mass_kind)
    bnd = mesh.boundary_vertices
    interior = np.setdiff1d(np.arange(mesh.n_vertices), bnd)
    return FemMatrices(K, M, B, interior, bnd, mass_kind)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Lowest eigenpairs of a symmetric pencil, ascending.

    ``eigenvectors`` are full-length columns normalised in the pencil's
    right-hand matrix (mass for Neumann, boundary mass for Steklov; Steklov
    columns are discrete harmonic extensions of the boundary modes).
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual_norms: np.ndarray
    kind: str
    metadata: dict = field(default_factory=dict)

    @property
    def count(self) -> int:
        """Number of nonzero eigenvalues requested (the zero mode is extra)."""
        return len(self.eigenvalues) - 1

    def nonzero(self, k: int) -> np.ndarray:
        """The first ``k`` eigenvalues after the zero mode."""
        if k > self.count:
            raise ValueError(f"spectrum holds {self.count} nonzero eigenvalues, asked for {k}")
        return self.eigenvalues[1 : k + 1]

    def clusters(self, rtol: float = CLUSTER_RTOL) -> list[list[int]]:
        """Index groups of eigenvalues equal within ``rtol`` relative."""
        groups = [[0]]
        for i in range(1, len(self.eigenvalues)):
            prev = self.eigenvalues[groups[-1][-1]]
            cur = self.eigenvalues[i]
            if abs(cur - prev) <= rtol * max(abs(cur), abs(prev), 1e-300):
                groups[-1].append(i)
            else:
                groups.append([i])
        return groups

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "eigenvalues": self.eigenvalues.tolist(),
            "residual_norms": self.residual_norms.tolist(),
            "clusters": self.clusters(),
            "metadata": self.metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def spectrum_from_json(text: str, eigenvectors: np.ndarray | None = None) -> Spectrum:
    d = json.loads(text)
    vals = np.array(d["eigenvalues"], dtype=float)
    vecs = np.zeros((0, len(vals))) if eigenvectors is None else eigenvectors
    return Spectrum(vals, vecs, np.array(d["residual_norms"]), d["kind"], d["metadata"])


def write_eigenvectors(path, spectrum: Spectrum) -> None:
    """Binary dump: 8-byte magic, uint64 rows, uint64 cols, float64 column-major data, little endian."""
    vecs = np.asarray(spectrum.eigenvectors, dtype="<f8")
    rows, cols = vecs.shape
    with open(path, "wb") as fh:
        fh.write(EIGVEC_MAGIC)
        fh.write(struct.pack("<QQ", rows, cols))
        fh.write(np.asfortranarray(vecs).tobytes(order="F"))


def read_eigenvectors(path) -> np.ndarray:
    with open(path, "rb") as fh:
        if fh.read(8) != EIGVEC_MAGIC:
            raise ValueError(f"{path} is not an eigenvector dump")
        rows, cols = struct.unpack("<QQ", fh.read(16))
        data = np.frombuffer(fh.read(8 * rows * cols), dtype="<f8")
    return data.reshape((rows, cols), order="F").astype(float)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(vecs) > (1 - 1e-9) * np.abs(vecs).max(axis=0), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _residuals(K, B, vals, vecs):
    R = K @ vecs - (B @ vecs) * vals
    return np.linalg.norm(R, axis=0) / np.linalg.norm(vecs, axis=0)


def _certify(K, B, vals, vecs, tol, kind, meta):
    res = _residuals(K, B, vals, vecs)
    scale = abs(K).sum(axis=0).max() + np.abs(vals) * abs(B).sum(axis=0).max()
    meta = dict(meta, tol=tol)
    if np.any(res > tol * np.asarray(scale).ravel()):
        raise EigenSolverError(f"{kind} eigenpair residuals above tolerance", res)
    return Spectrum(vals, vecs, res, kind, meta)


def neumann_spectrum(fem: FemMatrices, count: int, tol: float = 1e-8, seed: int = 0) -> Spectrum:
    """The ``count + 1`` lowest eigenpairs of ``K u = lam M u``.

    The natural boundary condition needs no row elimination. Small problems
    use a dense solve; larger ones use shift-invert Lanczos with a negative
    shift (so ``K - shift M`` is positive definite) and a seeded start vector,
    followed by a Rayleigh-Ritz cleanup on the returned subspace.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    K, M = fem.stiffness, fem.mass
    n = K.shape[0]
    k = count + 1
    if k >= n:
        raise ValueError(f"count {count} too large for {n} vertices")
    if n <= DENSE_LIMIT:
        vals, vecs = sla.eigh(K.toarray(), M.toarray(), subset_by_index=[0, k - 1])
        meta = {"solver": "dense"}
    else:
        shift = -0.1 * 4 * math.pi / fem.area
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            _, V = spla.eigsh(K.tocsc(), k=k, M=M.tocsc(), sigma=shift, which="LM", v0=v0,
                              maxiter=50 * n)
        except spla.ArpackNoConvergence as exc:
            raise EigenSolverError("shift-invert Lanczos did not converge",
                                   np.full(k, np.inf)) from exc
        Kr = V.T @ (K @ V)
        Mr = V.T @ (M @ V)
        vals, C = sla.eigh(0.5 * (Kr + Kr.T), 0.5 * (Mr + Mr.T))
        vecs = V @ C
        meta = {"solver": "shift-invert", "shift": shift, "seed": seed}
    vals = np.maximum(vals, 0.0) if vals[0] > -1e-10 else vals
    vecs = _fix_signs(vecs)
    return _certify(K, M, vals, vecs, tol, "neumann", dict(meta, mass_kind=fem.mass_kind))


def dtn_matrix(fem: FemMatrices):
    """Dense Schur complement ``K_bb - K_bi K_ii^{-1} K_ib`` and the interior extension operator."""
    b, i = fem.boundary, fem.interior
    K = fem.stiffness.tocsr()
    Kbb = K[b][:, b].toarray()
    if len(i) == 0:
        return Kbb, np.zeros((0, len(b)))
    Kii = K[i][:, i].tocsc()
    Kib = K[i][:, b].toarray()
    try:
        lu = spla.splu(Kii)
    except RuntimeError as exc:
        raise AssemblyError("interior stiffness block is singular") from exc
    ext = -lu.solve(Kib)
    if not np.all(np.isfinite(ext)):
        raise AssemblyError("interior stiffness block is singular")
    S = Kbb + Kib.T @ ext
    return 0.5 * (S + S.T), ext


def harmonic_extension(fem: FemMatrices, boundary_values: np.ndarray) -> np.ndarray:
    """Full-length discrete harmonic extensions of boundary data (shape (nb,) or (nb, k))."""
    _, ext = dtn_matrix(fem)
    return _extend(fem, ext, boundary_values)


def _extend(fem, ext, ub):
    ub = np.asarray(ub, dtype=float)
    out = np.zeros((fem.n,) + ub.shape[1:])
    out[fem.boundary] = ub
    out[fem.interior] = ext @ ub
    return out


def steklov_spectrum(fem: FemMatrices, count: int, tol: float = 1e-8) -> Spectrum:
    """The ``count + 1`` lowest Steklov eigenpairs via the dense Dirichlet-to-Neumann matrix."""
    if count < 1:
        raise ValueError("count must be >= 1")
    nb = len(fem.boundary)
    if nb == 0:
        raise DomainError("Steklov problem needs a nonempty boundary")
    if count + 1 > nb:
        raise ValueError(f"count {count} too large for {nb} boundary vertices")
    S, ext = dtn_matrix(fem)
    Bbb = fem.boundary_mass.tocsr()[fem.boundary][:, fem.boundary].toarray()
    vals, Ub = sla.eigh(S, Bbb, subset_by_index=[0, count])
    vals = np.maximum(vals, 0.0) if vals[0] > -1e-10 else vals
    Ub = _fix_signs(Ub)
    vecs = _extend(fem, ext, Ub)
    meta = {"solver": "dense-dtn", "mass_kind": fem.mass_kind, "boundary_vertices": int(nb)}
    return _certify(fem.stiffness, fem.boundary_mass, vals, vecs, tol, "steklov", meta)


def harmonic_mean(values) -> float:
    """k divided by the sum of reciprocals of k positive numbers."""
    vals = np.asarray(values, dtype=float).ravel()
    if vals.size == 0:
        raise DomainError("harmonic mean of an empty list")
    if np.any(~(vals > 0)):
        raise DomainError("harmonic mean needs strictly positive entries")
    return float(vals.size / np.sum(1.0 / vals))


def _check_rank(trials, inner, rtol=1e-10):
    G = trials.T @ (inner @ trials)
    G = 0.5 * (G + G.T)
    basis = []
    for j in range(G.shape[0]):
        # squared norm of member j after projecting out the span of earlier members
        if basis:
            idx = np.array(basis)
            coef = np.linalg.lstsq(G[np.ix_(idx, idx)], G[idx, j], rcond=None)[0]
            resid = G[j, j] - G[j, idx] @ coef
        else:
            resid = G[j, j]
        if resid <= rtol * max(G[j, j], 1e-300):
            raise RankError(f"trial {j} lies in the span of the previous trials", member=j)
        basis.append(j)


def orthogonalize_against(trials: np.ndarray, spectrum: Spectrum, inner) -> np.ndarray:
    """Rotate a trial family so member A is orthogonal to eigenvectors 1..A-1.

    With ``D[A, B] = <trial_A, u_{B+1}>`` and ``D = Q R``, the rotated family
    ``trials @ Q`` has the upper-triangular matrix ``R`` in place of ``D``.
    ``Q`` is orthogonal, so the pointwise sum of squares of the family is
    preserved. Column signs are chosen so ``diag(R) >= 0``; a family that
    already satisfies the condition comes back unchanged.

    Parameters
    ----------
    trials : (N, p) array
    spectrum : Spectrum with at least p - 1 nonzero modes
    inner : (N, N) matrix of the inner product (mass or boundary mass)
    """
    trials = np.asarray(trials, dtype=float)
    if trials.ndim != 2 or trials.shape[0] != spectrum.eigenvectors.shape[0]:
        raise ShapeError("trials must be (N, p) on the spectrum's mesh")
    p = trials.shape[1]
    if p - 1 > spectrum.count:
        raise ShapeError(f"need {p - 1} nonzero eigenvectors, spectrum has {spectrum.count}")
    _check_rank(trials, inner)
    if p == 1:
        return trials.copy()
    U = spectrum.eigenvectors[:, 1:p]
    D = trials.T @ (inner @ U)
    Q, R = np.linalg.qr(D, mode="complete")
    signs = np.ones(p)
    diag = np.diag(R)
    signs[: len(diag)] = np.where(diag < 0, -1.0, 1.0)
    return trials @ (Q * signs)


# ----------------------------------------------------------------------------
# test-function chain

@dataclass(frozen=True)
class ChainStep:
    """One inequality ``lhs <= rhs`` of the chain; ``slack = rhs - lhs``."""

    name: str
    lhs: float
    rhs: float
    slack: float
    relative_slack: float


@dataclass(frozen=True)
class ChainReport:
    """Discrete slacks of every step from the Rayleigh bounds to the harmonic-mean bound.

    ``conformal_defect`` is the relative excess of the discrete energy of the
    balanced map over twice the area of its piecewise-linear image; it is
    nonnegative and vanishes only for maps that are conformal on every triangle.
    """

    mode: str
    steps: tuple
    tolerance: float
    h: float
    mean_bound: float
    harmonic_mean: float
    balance_moment: float
    conformal_defect: float

    def min_relative_slack(self) -> float:
        return min(s.relative_slack for s in self.steps)

    def all_nonnegative(self, tol: float | None = None) -> bool:
        tol = self.tolerance if tol is None else tol
        return all(s.relative_slack >= -tol for s in self.steps)

    def all_tight(self, tol: float | None = None) -> bool:
        tol = self.tolerance if tol is None else tol
        return all(abs(s.relative_slack) <= tol for s in self.steps)

    def step(self, name: str) -> ChainStep:
        for s in self.steps:
            if s.name == name:
                return s
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode, "tolerance": self.tolerance, "h": self.h,
            "mean_bound": self.mean_bound, "harmonic_mean": self.harmonic_mean,
            "balance_moment": self.balance_moment, "conformal_defect": self.conformal_defect,
            "steps": [s.__dict__ for s in self.steps],
        }


CHAIN_TOL_CONSTANT = 0.2


def _step(name, lhs, rhs, scale):
    slack = float(rhs - lhs)
    return ChainStep(name, float(lhs), float(rhs), slack, slack / scale if scale else slack)


def pl_image_area(mesh: SurfaceMesh, values: np.ndarray) -> float:
    """Area of the piecewise-linear image of ``mesh`` under vertex values ``values`` (N, d)."""
    grads, areas = triangle_gradients(values, mesh.triangles)
    del grads
    return float(areas.sum())


def _grouping_steps(energies, weights, eigs, m, split, scale):
    """Tail- and head-grouping steps shared by both modes.

    ``split`` is the number of head indices kept with their own eigenvalue;
    the tail takes ``eigs[split:]`` bounded below by ``eigs[m - 1]``. Returns
    the new steps and the mean energy ``F``.
    """
    lam_m = eigs[m - 1]
    S1 = np.sum(energies / eigs)
    S2 = np.sum(energies[:split] / eigs[:split]) + np.sum(energies[split:]) / lam_m
    F = np.sum(energies) / m
    S3 = F * np.sum(1.0 / eigs[:m])
    return [
        _step("volume_split", weights, S1, scale),
        _step("tail_grouping", S1, S2, scale),
        _step("head_grouping", S2, S3, scale),
    ], F


def variational_chain_report(mesh: SurfaceMesh, sphere_map: np.ndarray, spectrum: Spectrum,
                             mode: str = "neumann", fem: FemMatrices | None = None,
                             tolerance: float | None = None,
                             balance: bool = True) -> ChainReport:
    """Evaluate every step of the test-function argument on a concrete map.

    Parameters
    ----------
    mesh : SurfaceMesh
    sphere_map : (N, d) array
        Neumann: vertex images on the unit sphere S^{d-1}. Steklov: vertex
        images in the closed unit ball B^d with boundary vertices on its sphere.
    spectrum : Spectrum of the matching kind on the same mesh.
    mode : {"neumann", "steklov"}
    tolerance : float, optional
        Defaults to ``CHAIN_TOL_CONSTANT * h``.
    balance : bool
        Apply the centre-of-mass normalisation before orthogonalising.

    Notes
    -----
    Slacks are ``rhs - lhs`` of each step, relative to the step's natural
    scale (the energy for Rayleigh steps, the volume for the grouping steps,
    the harmonic mean for the final step).
    """
    from .conformal import balance_ball_center_of_mass, balance_center_of_mass, mobius_apply, \
        mobius_ball_apply

    if mode not in ("neumann", "steklov"):
        raise ValueError(f"mode must be 'neumann' or 'steklov', got {mode!r}")
    phi = np.asarray(sphere_map, dtype=float)
    if phi.ndim != 2 or phi.shape[0] != mesh.n_vertices:
        raise ShapeError(f"sphere_map must be ({mesh.n_vertices}, d), got {phi.shape}")
    if spectrum.eigenvectors.shape[0] != mesh.n_vertices:
        raise ShapeError("spectrum was computed on a different mesh")
    if spectrum.kind != mode:
        raise ShapeError(f"{mode} chain needs a {mode} spectrum, got {spectrum.kind}")
    fem = assemble_fem(mesh) if fem is None else fem
    K = fem.stiffness
    m = M_DIM
    d = phi.shape[1]
    h = mesh_size(mesh)
    tol = CHAIN_TOL_CONSTANT * h if tolerance is None else tolerance

    if mode == "neumann":
        inner = fem.mass
        if balance:
            p = balance_center_of_mass(phi, vertex_weights(fem.mass))
            phi = mobius_apply(p, phi)
        moment = np.linalg.norm(phi.T @ (inner @ np.ones(len(phi)))) / fem.area
        n_eigs = d
    else:
        inner = fem.boundary_mass
        b = fem.boundary
        if balance:
            w = vertex_weights(fem.boundary_mass)[b]
            a = balance_ball_center_of_mass(phi[b], w)
            phi = mobius_ball_apply(a, phi)
        moment = np.linalg.norm(phi.T @ (inner @ np.ones(len(phi)))) / fem.boundary_length
        n_eigs = d
    if spectrum.count < max(n_eigs, m):
        raise ShapeError(f"chain needs {max(n_eigs, m)} nonzero eigenvalues, spectrum has "
                         f"{spectrum.count}")
    phi = orthogonalize_against(phi, spectrum, inner)
    eigs = spectrum.eigenvalues[1 : n_eigs + 1]
    weights = np.einsum("ia,ia->a", phi, inner @ phi)
    energies = np.einsum("ia,ia->a", phi, K @ phi)
    steps = []
    if mode == "neumann":
        volume = fem.area
        for A in range(d):
            steps.append(_step(f"rayleigh[{A + 1}]", eigs[A] * weights[A], energies[A],
                               energies[A]))
        grouping, F = _grouping_steps(energies, weights.sum(), eigs, m, m, volume)
        steps.extend(grouping)
        hm = harmonic_mean(eigs[:m])
        steps.append(_step("holder", F, F, volume))
        steps.append(_step("final", hm, m * F / volume, hm))
        mean_bound = m * F / volume
    else:
        volume = fem.boundary_length
        ext = harmonic_extension(fem, phi[fem.boundary])
        ext_energies = np.einsum("ia,ia->a", ext, K @ ext)
        for A in range(d):
            steps.append(_step(f"extension[{A + 1}]", ext_energies[A], energies[A], energies[A]))
        for A in range(d):
            steps.append(_step(f"rayleigh[{A + 1}]", eigs[A] * weights[A], ext_energies[A],
                               max(ext_energies[A], 1e-300)))
        grouping, F = _grouping_steps(energies, weights.sum(), eigs, m, m - 1, volume)
        steps.extend(grouping)
        hm = harmonic_mean(eigs[:m])
        steps.append(_step("holder", F, F, volume))
        steps.append(_step("final", hm * volume, m * F, hm * volume))
        mean_bound = m * F / volume
    image = pl_image_area(mesh, phi)
    defect = (0.5 * energies.sum() - image) / image
    return ChainReport(mode, tuple(steps), float(tol), h, float(mean_bound), hm, float(moment),
                       float(defect))


def vertex_weights(matrix) -> np.ndarray:
    """Row sums of a mass-type matrix: the lumped quadrature weight of each vertex."""
    return np.asarray(matrix.sum(axis=1)).ravel()
