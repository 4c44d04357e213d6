"""Lowest-order Nedelec (Whitney) edge elements for

    curl(beta^-1 curl E) - kappa E = J_S,   E x n = 0 on the boundary.

The basis function of the edge a->b is  lam_a grad(lam_b) - lam_b grad(lam_a),
whose tangential line integral along a->b is one.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .mesh import LOCAL_EDGES, EdgeNumbering, TetMesh

ELIMINATE = "eliminate-boundary"
KEEP_ALL = "keep-all"
BC_MODES = (ELIMINATE, KEEP_ALL)

DENSE_CAP = 5000


class AssemblyError(ValueError):
    pass


class SingularSystemError(ArithmeticError):
    """Raised when a dense factorization finds A numerically singular,
    typically because kappa sits on a discrete curl-curl eigenvalue."""


@dataclass(frozen=True)
class MaterialParams:
    """kappa and a per-region magnetic parameter beta.

    beta is either one positive number or a mapping region tag -> beta.
    """
    kappa: complex
    beta: float | Mapping[int, float] = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kappa", complex(self.kappa))
        if self.kappa == 0:
            raise AssemblyError("kappa must be nonzero")
        betas = self.beta.values() if isinstance(self.beta, Mapping) else [self.beta]
        if any(not (float(b) > 0) for b in betas):
            raise AssemblyError("beta must be positive on every region")

    @classmethod
    def from_frequency(cls, omega, alpha, chi, beta=1.0):
        """kappa = omega^2 (alpha + i chi / omega)."""
        return cls(omega ** 2 * alpha + 1j * omega * chi, beta)

    def beta_of(self, regions: np.ndarray) -> np.ndarray:
        if isinstance(self.beta, Mapping):
            try:
                return np.array([float(self.beta[int(r)]) for r in regions])
            except KeyError as exc:
                raise AssemblyError(f"no beta given for region {exc.args[0]}") from None
        return np.full(len(regions), float(self.beta))


@dataclass(frozen=True)
class LocalMatrices:
    curl_curl: np.ndarray
    mass: np.ndarray


@dataclass(frozen=True)
class DofGeometry:
    """A point (edge midpoint) and an axis-aligned box (the edge's extent)
    per DOF, used for geometric clustering."""
    points: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        for name in ("points", "lo", "hi"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    def __len__(self):
        return len(self.points)

    def subset(self, idx):
        return DofGeometry(self.points[idx], self.lo[idx], self.hi[idx])


@dataclass(frozen=True, eq=False)
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_map: np.ndarray = None
    bc_mode: str = KEEP_ALL
    geometry: DofGeometry | None = field(default=None)

    def __post_init__(self):
        A = sp.csr_matrix(self.matrix, dtype=complex)
        b = np.asarray(self.rhs, dtype=complex).ravel()
        if A.shape[0] != A.shape[1]:
            raise AssemblyError("system matrix must be square")
        if len(b) != A.shape[0]:
            raise AssemblyError(f"rhs has length {len(b)}, matrix dimension is {A.shape[0]}")
        if A.shape[0] == 0:
            raise AssemblyError("empty system")
        object.__setattr__(self, "matrix", A)
        object.__setattr__(self, "rhs", b)
        if self.dof_map is None:
            object.__setattr__(self, "dof_map", np.arange(A.shape[0]))
        if self.geometry is not None and len(self.geometry) != A.shape[0]:
            raise AssemblyError("geometry does not match system dimension")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()


def barycentric_gradients(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of the four barycentric coordinates and signed volumes.

    coords: (..., 4, 3). Returns grads (..., 4, 3) and volumes (...).
    """
    coords = np.asarray(coords, dtype=float)
    d = coords[..., 1:, :] - coords[..., :1, :]          # rows: x_i - x_0
    vol = np.linalg.det(d) / 6.0
    _check_tets(coords, vol)
    g123 = np.linalg.inv(d).swapaxes(-1, -2)             # grad lam_1..3
    g0 = -g123.sum(axis=-2, keepdims=True)
    return np.concatenate([g0, g123], axis=-2), vol


def _check_tets(coords, vol):
    a, b = LOCAL_EDGES.T
    diam = np.linalg.norm(coords[..., a, :] - coords[..., b, :], axis=-1).max(axis=-1)
    bad = np.abs(vol) < 1e-14 * diam ** 3
    if np.any(bad):
        raise AssemblyError(f"degenerate tetrahedron (index {int(np.argmax(bad))})")


def local_matrices_batch(coords: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Element curl-curl and mass matrices for many tets, (T, 6, 6) each.

    Local edges follow LOCAL_EDGES with direction a->b for a < b. Integrals
    are exact: curls are constant and the mass integrand is quadratic.
    """
    coords = np.asarray(coords, dtype=float)
    g, vol = barycentric_gradients(coords)
    vol = np.abs(vol)
    a, b = LOCAL_EDGES.T
    curl = 2.0 * np.cross(g[:, a], g[:, b])                       # (T, 6, 3)
    K = vol[:, None, None] * np.einsum("tik,tjk->tij", curl, curl)

    G = np.einsum("tik,tjk->tij", g, g)                          # grad lam_i . grad lam_j
    lam = (np.ones((4, 4)) + np.eye(4)) / 20.0                   # int lam_i lam_j / |T|
    ia, ib = a[:, None], b[:, None]
    ja, jb = a[None, :], b[None, :]
    M = (lam[ia, ja] * G[:, ib, jb] - lam[ia, jb] * G[:, ib, ja]
         - lam[ib, ja] * G[:, ia, jb] + lam[ib, jb] * G[:, ia, ja])
    M = vol[:, None, None] * M
    # exact symmetry independent of summation order inside einsum
    K = 0.5 * (K + K.swapaxes(1, 2))
    M = 0.5 * (M + M.swapaxes(1, 2))
    return K, M


def local_matrices(coords) -> LocalMatrices:
    K, M = local_matrices_batch(np.asarray(coords, dtype=float)[None])
    return LocalMatrices(K[0], M[0])


def local_load(coords: np.ndarray) -> np.ndarray:
    """Integral of each local basis function over the tet, (T, 6, 3)."""
    g, vol = barycentric_gradients(coords)
    a, b = LOCAL_EDGES.T
    return (np.abs(vol)[:, None, None] / 4.0) * (g[:, b] - g[:, a])


def edge_geometry(mesh: TetMesh, edges: EdgeNumbering) -> DofGeometry:
    p0 = mesh.vertices[edges.edges[:, 0]]
    p1 = mesh.vertices[edges.edges[:, 1]]
    return DofGeometry(0.5 * (p0 + p1), np.minimum(p0, p1), np.maximum(p0, p1))


def _source_per_tet(source, regions):
    if source is None:
        return np.zeros((len(regions), 3))
    if isinstance(source, Mapping):
        out = np.zeros((len(regions), 3), dtype=complex)
        for tag, vec in source.items():
            out[regions == int(tag)] = np.asarray(vec, dtype=complex)
        return out
    vec = np.asarray(source, dtype=complex)
    if vec.shape != (3,):
        raise AssemblyError("J_S must be a 3-vector or a mapping region -> 3-vector")
    return np.broadcast_to(vec, (len(regions), 3))


def assemble(mesh: TetMesh, edges: EdgeNumbering, mat: MaterialParams,
             source=None, bc_mode: str = ELIMINATE) -> SparseSystem:
    """A = sum beta^-1 K_T - kappa sum M_T and b_j = int J_S . Phi_j.

    source: constant 3-vector, or {region tag: 3-vector} (missing regions get
    zero). bc_mode ELIMINATE drops boundary edges (E x n = 0 imposed
    strongly), KEEP_ALL keeps every edge.
    """
    if not isinstance(mat, MaterialParams):
        raise AssemblyError("mat must be MaterialParams")
    if mat.kappa == 0:
        raise AssemblyError("kappa must be nonzero")
    if bc_mode not in BC_MODES:
        raise AssemblyError(f"bc_mode must be one of {BC_MODES}")

    coords = mesh.vertices[mesh.tets]
    K, M = local_matrices_batch(coords)
    beta = mat.beta_of(mesh.regions)
    S = edges.tet_signs.astype(float)
    SS = S[:, :, None] * S[:, None, :]
    loc = (SS * K / beta[:, None, None]) - mat.kappa * (SS * M)

    J = _source_per_tet(source, mesh.regions)
    bl = S * np.einsum("tik,tk->ti", local_load(coords), J)

    ne = edges.n_edges
    rows = np.repeat(edges.tet_edges, 6, axis=1).ravel()
    cols = np.tile(edges.tet_edges, (1, 6)).ravel()
    A = sp.coo_matrix((loc.ravel(), (rows, cols)), shape=(ne, ne)).tocsr()
    A.sum_duplicates()
    b = np.zeros(ne, dtype=complex)
    np.add.at(b, edges.tet_edges.ravel(), bl.ravel())

    if bc_mode == ELIMINATE:
        active = np.nonzero(~edges.boundary_mask)[0]
    else:
        active = np.arange(ne)
    if len(active) == 0:
        raise AssemblyError("no active degrees of freedom")
    A = A[active][:, active]
    # exact complex symmetry regardless of duplicate-summation order
    A = ((A + A.T) * 0.5).tocsr()
    A.sort_indices()
    geom = edge_geometry(mesh, edges).subset(active)
    return SparseSystem(A, b[active], active, bc_mode, geom)


def matvec(sys: SparseSystem, x) -> np.ndarray:
    x = np.asarray(x)
    if x.shape != (sys.dim,):
        raise ValueError(f"expected a vector of length {sys.dim}, got shape {x.shape}")
    return sys.matrix @ x


def dense_solve(sys: SparseSystem, cap: int = DENSE_CAP, rcond_tol: float = 1e-13) -> np.ndarray:
    """Dense pivoted LU solve, used as a reference.

    Raises SingularSystemError when the reciprocal condition number estimate
    drops below rcond_tol.
    """
    if sys.dim > cap:
        raise ValueError(f"dense solve capped at {cap} unknowns (got {sys.dim})")
    A = sys.dense()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    anorm = np.abs(A).sum(axis=0).max()
    gecon = scipy.linalg.get_lapack_funcs("gecon", (lu,))
    rcond, info = gecon(lu, anorm, norm="1")
    if not np.isfinite(rcond) or rcond < rcond_tol:
        raise SingularSystemError(f"matrix is numerically singular (rcond={rcond:.2e})")
    return scipy.linalg.lu_solve((lu, piv), sys.rhs)


def curl_curl_eigenvalues(mesh: TetMesh, edges: EdgeNumbering, bc_mode=ELIMINATE, beta=1.0):
    """Generalised eigenvalues of K v = lambda M v (small meshes only)."""
    sysK = assemble(mesh, edges, MaterialParams(-1.0, beta), None, bc_mode)
    sysM = assemble(mesh, edges, MaterialParams(1.0, beta), None, bc_mode)
    # A(kappa) = K - kappa M  =>  K = (A(-1) + A(1)) / 2, M = (A(-1) - A(1)) / 2
    K = ((sysK.matrix + sysM.matrix) * 0.5).toarray().real
    M = ((sysK.matrix - sysM.matrix) * 0.5).toarray().real
    return scipy.linalg.eigh(K, M, eigvals_only=True)
