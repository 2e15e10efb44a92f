"""Fine-grid finite element kernels.

P1 vector elements on triangles, degree-2 quadrature, stabilized equal-order
local Stokes solves on subdomains, and the two linear-algebra primitives the
rest of the code relies on: a sparse direct saddle-point solve and a dense
symmetric generalized eigensolve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateElement, DimensionMismatch, NotPositiveDefinite, SingularSystem
from .geometry import subdomain_boundary

STAB_COEFF = 0.05           # Brezzi-Pitkaranta pressure stabilization, times h_T^2
_GAUSS = 0.5 / np.sqrt(3.0)  # 2-point Gauss offset on the unit interval


# ---------------------------------------------------------------------------
# element kernels
# ---------------------------------------------------------------------------

def p1_gradients(coords):
    """Constant P1 shape gradients and area of one triangle.

    coords: (3, 2). Returns (grads (3, 2), area).
    """
    (x0, y0), (x1, y1), (x2, y2) = coords
    det = (x1 - x0) * (y2 - y0) - (x2 - x0) * (y1 - y0)
    area = 0.5 * det
    if area <= 0:
        raise DegenerateElement(f"triangle area {area:.3e} <= 0")
    grads = np.array([[y1 - y2, x2 - x1],
                      [y2 - y0, x0 - x2],
                      [y0 - y1, x1 - x0]]) / det
    return grads, area


def element_laplacian(coords):
    """6x6 vector grad-grad matrix, dof order (n0x, n0y, n1x, n1y, n2x, n2y)."""
    grads, area = p1_gradients(coords)
    ks = area * (grads @ grads.T)
    return np.kron(ks, np.eye(2))


def element_divergence(coords):
    """Row r with r @ v = -integral of div v over the triangle (P1 v, exact)."""
    grads, area = p1_gradients(coords)
    return -area * grads.reshape(-1)


def element_mass_scalar(coords):
    """3x3 P1 scalar mass matrix (exact)."""
    _, area = p1_gradients(coords)
    return area / 12.0 * (np.ones((3, 3)) + np.eye(3))


def tri_quadrature(coords):
    """Degree-2 rule: edge midpoints, equal weights area/3."""
    _, area = p1_gradients(coords)
    pts = 0.5 * (coords + np.roll(coords, -1, axis=0))
    w = np.full(3, area / 3.0)
    return pts, w


def edge_gauss(pa, pb):
    """2-point Gauss nodes and weights on a segment (exact for cubics)."""
    pa, pb = np.asarray(pa, float), np.asarray(pb, float)
    mid = 0.5 * (pa + pb)
    half = 0.5 * (pb - pa)
    pts = np.array([mid - 2 * _GAUSS * half, mid + 2 * _GAUSS * half])
    length = np.hypot(*(pb - pa))
    return pts, np.full(2, 0.5 * length)


# vectorized variants over many triangles ------------------------------------

def all_gradients(nodes, tris):
    """Gradients (M,3,2) and areas (M,) for a batch of triangles."""
    p = nodes[tris]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    det = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    if np.any(det <= 0):
        raise DegenerateElement("non-positive triangle area in batch")
    g = np.empty((len(tris), 3, 2))
    g[:, 0, 0] = p[:, 1, 1] - p[:, 2, 1]
    g[:, 0, 1] = p[:, 2, 0] - p[:, 1, 0]
    g[:, 1, 0] = p[:, 2, 1] - p[:, 0, 1]
    g[:, 1, 1] = p[:, 0, 0] - p[:, 2, 0]
    g[:, 2, 0] = p[:, 0, 1] - p[:, 1, 1]
    g[:, 2, 1] = p[:, 1, 0] - p[:, 0, 0]
    g /= det[:, None, None]
    return g, 0.5 * det


def _coo(rows, cols, vals, shape):
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=shape).tocsr()


def assemble_vector_laplacian(nodes, tris, vdof, n_dofs):
    """Sparse grad-grad matrix; vdof (M,6) maps element dofs to globals (-1 drops)."""
    g, area = all_gradients(nodes, tris)
    ks = np.einsum("tid,tjd,t->tij", g, g, area)
    kv = np.zeros((len(tris), 6, 6))
    kv[:, 0::2, 0::2] = ks
    kv[:, 1::2, 1::2] = ks
    rows = np.repeat(vdof[:, :, None], 6, axis=2)
    cols = np.repeat(vdof[:, None, :], 6, axis=1)
    mask = (rows >= 0) & (cols >= 0)
    return _coo(rows[mask], cols[mask], kv[mask], (n_dofs, n_dofs))


def assemble_vector_mass(nodes, tris, vdof, n_dofs):
    """Sparse P1 vector mass matrix (exact integration)."""
    _, area = all_gradients(nodes, tris)
    ms = (np.ones((3, 3)) + np.eye(3))[None] * (area[:, None, None] / 12.0)
    mv = np.zeros((len(tris), 6, 6))
    mv[:, 0::2, 0::2] = ms
    mv[:, 1::2, 1::2] = ms
    rows = np.repeat(vdof[:, :, None], 6, axis=2)
    cols = np.repeat(vdof[:, None, :], 6, axis=1)
    mask = (rows >= 0) & (cols >= 0)
    return _coo(rows[mask], cols[mask], mv[mask], (n_dofs, n_dofs))


# ---------------------------------------------------------------------------
# local Stokes solves (snapshot kernels)
# ---------------------------------------------------------------------------

@dataclass
class FineFunction:
    """P1 vector field on a subdomain: nodal values over a node id list."""

    node_ids: np.ndarray     # (n,) global mesh node ids
    values: np.ndarray       # (n, 2)
    support: np.ndarray      # fine triangle ids

    def __post_init__(self):
        if self.values.shape != (len(self.node_ids), 2):
            raise DimensionMismatch(
                f"values shape {self.values.shape} vs {len(self.node_ids)} nodes")


@dataclass
class LocalStokesProblem:
    """Dirichlet-driven Stokes problem on a set of fine triangles.

    The divergence constant c is computed from the boundary data, never
    supplied: c |D| = integral of g.n over the subdomain boundary.
    """

    mesh: object
    tris: np.ndarray
    g_values: np.ndarray      # (k, 2) data at the subdomain boundary nodes
    c: float = None

    def __post_init__(self):
        self.tris = np.asarray(self.tris, np.int64)
        factor = LocalStokesFactor(self.mesh, self.tris)
        if self.g_values.shape != (len(factor.boundary_nodes), 2):
            raise DimensionMismatch(
                f"boundary data shape {self.g_values.shape}, expected "
                f"({len(factor.boundary_nodes)}, 2)")
        self._factor = factor
        self.c = float(factor.compatibility_constants(self.g_values[:, :, None])[0])


class _SubdomainOperator:
    """Shared numbering / boundary machinery for local solves on a subdomain."""

    def __init__(self, mesh, tris):
        self.mesh = mesh
        self.tris = np.asarray(tris, np.int64)
        tri_nodes = mesh.triangles[self.tris]
        self.node_ids = np.unique(tri_nodes.ravel())
        self.n_loc = len(self.node_ids)
        loc = np.full(mesh.n_nodes, -1, np.int64)
        loc[self.node_ids] = np.arange(self.n_loc)
        self._loc = loc
        self._ltris = loc[tri_nodes]

        bedges, bnormals, bnodes = subdomain_boundary(mesh, self.tris)
        self.boundary_nodes = bnodes
        self._bedges = bedges
        self._bnormals = bnormals
        bset = np.zeros(self.n_loc, bool)
        bset[loc[bnodes]] = True
        self.free = np.flatnonzero(~bset)          # local interior node ids
        self.fixed = loc[bnodes]                   # local boundary node ids
        fdof = np.concatenate([2 * self.free, 2 * self.free + 1])
        fdof.sort()
        cdof = np.concatenate([2 * self.fixed, 2 * self.fixed + 1])
        cdof.sort()
        self._fdof, self._cdof = fdof, cdof
        self._grads, areas = all_gradients(mesh.nodes, mesh.triangles[self.tris])
        self._areas = areas
        self.area = float(areas.sum())
        # a split subdomain leaves a pressure constant per piece undetermined
        rows = np.repeat(np.arange(len(self.tris)), 3)
        adj = sp.coo_matrix((np.ones(rows.size), (rows, self._ltris.ravel())),
                            shape=(len(self.tris), self.n_loc))
        n_comp = connected_components((adj.T @ adj) > 0, directed=False)[0]
        if n_comp != 1:
            raise SingularSystem(
                f"subdomain splits into {n_comp} disconnected components")

    def _vdof(self):
        vdof = np.empty((len(self.tris), 6), np.int64)
        vdof[:, 0::2] = 2 * self._ltris
        vdof[:, 1::2] = 2 * self._ltris + 1
        return vdof

    def _flatten_boundary(self, g_cols):
        order = np.argsort(np.concatenate([2 * self.fixed, 2 * self.fixed + 1]))
        return np.concatenate([g_cols[:, 0, :], g_cols[:, 1, :]], axis=0)[order]

    def compatibility_constants(self, g_cols):
        """c per column: (1/|D|) * boundary integral of g.n (P1-exact)."""
        e = self.mesh.edges[self._bedges]
        la = self._loc[e[:, 0]]
        lb = self._loc[e[:, 1]]
        pts = self.mesh.nodes[e]
        lens = np.hypot(*(pts[:, 1] - pts[:, 0]).T)
        bmap = np.full(self.n_loc, -1, np.int64)
        bmap[self.fixed] = np.arange(len(self.fixed))
        ga = g_cols[bmap[la]]
        gb = g_cols[bmap[lb]]
        flux = np.einsum("e,ed,edk->k", 0.5 * lens, self._bnormals, ga + gb)
        return flux / self.area


class LocalStokesFactor(_SubdomainOperator):
    """Factorized stabilized P1/P1 Stokes operator on a subdomain.

    Dirichlet data lives on the boundary nodes of the triangle set (holes and
    outer boundary included); equal-order P1 pressure with Brezzi-Pitkaranta
    stabilization and a scalar zero-mean pressure multiplier. Factor once,
    solve many boundary data sets.
    """

    def __init__(self, mesh, tris):
        super().__init__(mesh, tris)
        g, area = self._grads, self._areas
        ltris = self._ltris
        h_t = np.sqrt(2.0 * area)                  # element size for stabilization
        A = assemble_vector_laplacian(mesh.nodes, mesh.triangles[self.tris],
                                      self._vdof(), 2 * self.n_loc)
        # pressure-velocity coupling: rows P1 pressure nodes, b(v,q) = -int q div v
        ks = np.einsum("tid,t->tid", g, area)      # area * grad(phi_i)
        bvals = -np.repeat(ks, 3, axis=0).reshape(len(self.tris), 3, 3, 2) / 3.0
        prow = np.repeat(ltris[:, :, None], 3, axis=2)
        vcol = np.empty((len(self.tris), 3, 3, 2), np.int64)
        vcol[..., 0] = 2 * ltris[:, None, :]
        vcol[..., 1] = 2 * ltris[:, None, :] + 1
        B = _coo(np.repeat(prow[..., None], 2, axis=3), vcol, bvals,
                 (self.n_loc, 2 * self.n_loc))
        # pressure stabilization and mean
        kp = np.einsum("tid,tjd,t->tij", g, g, area * STAB_COEFF * h_t ** 2)
        C = _coo(np.repeat(ltris[:, :, None], 3, axis=2),
                 np.repeat(ltris[:, None, :], 3, axis=1), kp,
                 (self.n_loc, self.n_loc))
        mvec = np.zeros(self.n_loc)
        np.add.at(mvec, ltris.ravel(), np.repeat(area / 3.0, 3))
        A = A.tocsc()
        B = B.tocsc()
        fdof, cdof = self._fdof, self._cdof
        self._A_fc = A[fdof][:, cdof]
        self._B_c = B[:, cdof]
        nf = len(fdof)
        kkt = sp.bmat([
            [A[fdof][:, fdof], B[:, fdof].T, None],
            [B[:, fdof], -C, mvec[:, None]],
            [None, mvec[None, :], None],
        ], format="csc")
        try:
            self._lu = spla.splu(kkt)
        except RuntimeError as exc:
            raise SingularSystem(f"local Stokes operator is singular: {exc}") from exc
        self._nf = nf
        self._mvec = mvec

    def solve_columns(self, g_cols):
        """Solve for a batch of boundary data.

        g_cols: (n_boundary_nodes, 2, k). Returns (u (n_loc, 2, k),
        p_tri (n_tris, k), c (k,)).
        """
        k = g_cols.shape[2]
        c = self.compatibility_constants(g_cols)
        gflat = self._flatten_boundary(g_cols)
        rhs = np.zeros((self._nf + self.n_loc + 1, k))
        rhs[:self._nf] = -self._A_fc @ gflat
        rhs[self._nf:self._nf + self.n_loc] = -self._B_c @ gflat - self._mvec[:, None] * c
        sol = self._lu.solve(rhs)
        u = np.zeros((2 * self.n_loc, k))
        u[self._fdof] = sol[:self._nf]
        u[self._cdof] = gflat
        p_nodal = sol[self._nf:self._nf + self.n_loc]
        p_tri = p_nodal[self._ltris].mean(axis=1)
        return u.reshape(self.n_loc, 2, k), p_tri, c


def solve_local_stokes(problem):
    """Solve one Dirichlet-driven local Stokes problem.

    Returns (FineFunction velocity, per-triangle pressure values). The
    pressure has zero mean over the subdomain; the velocity matches the
    boundary data exactly at boundary nodes.
    """
    factor = problem._factor
    u, p_tri, _ = factor.solve_columns(problem.g_values[:, :, None])
    vel = FineFunction(factor.node_ids, u[:, :, 0], problem.tris)
    return vel, p_tri[:, 0]


class HarmonicExtensionFactor(_SubdomainOperator):
    """Local solves with a single constant pressure per subdomain.

    A block-constant pressure drops out of the momentum equation, so each
    velocity component extends the boundary data discretely harmonically;
    the mean-divergence constraint holds automatically because the
    compatibility constant is computed from the same data. This is the
    kernel behind the snapshot problems: the coarse systems only ever see
    one pressure value per block, and snapshot interiors must match that
    operator for the reduced space to capture the reference fields.
    """

    def __init__(self, mesh, tris):
        super().__init__(mesh, tris)
        A = assemble_vector_laplacian(mesh.nodes, mesh.triangles[self.tris],
                                      self._vdof(), 2 * self.n_loc).tocsc()
        self._A_fc = A[self._fdof][:, self._cdof]
        try:
            self._lu = spla.splu(A[self._fdof][:, self._fdof])
        except RuntimeError as exc:
            raise SingularSystem(f"disconnected subdomain: {exc}") from exc

    def solve_columns(self, g_cols):
        """Harmonic extension of a batch of boundary data (see class note)."""
        k = g_cols.shape[2]
        c = self.compatibility_constants(g_cols)
        gflat = self._flatten_boundary(g_cols)
        sol = self._lu.solve(-(self._A_fc @ gflat))
        u = np.zeros((2 * self.n_loc, k))
        u[self._fdof] = sol
        u[self._cdof] = gflat
        return u.reshape(self.n_loc, 2, k), np.zeros((len(self.tris), k)), c


# ---------------------------------------------------------------------------
# linear algebra contracts
# ---------------------------------------------------------------------------

def sparse_saddle_solve(A, B, rhs, gauge=None):
    """Direct solve of the KKT system [[A, B^T], [B, 0]].

    With `gauge` (a vector on the constraint space) the system is bordered by
    one extra scalar unknown enforcing gauge . y = 0:
        [[A, B^T, 0], [B, 0, g], [0, g^T, 0]].
    rhs is the full right-hand side of the (bordered) system. Returns the full
    solution vector; raises SingularSystem when the factorization fails or the
    residual exceeds 1e-10 times the rhs norm.
    """
    A = sp.csr_matrix(A)
    B = sp.csr_matrix(B)
    if gauge is None:
        kkt = sp.bmat([[A, B.T], [B, None]], format="csc")
    else:
        g = np.asarray(gauge, float).reshape(-1, 1)
        kkt = sp.bmat([[A, B.T, None],
                       [B, None, sp.csc_matrix(g)],
                       [None, sp.csc_matrix(g.T), None]], format="csc")
    rhs = np.asarray(rhs, float)
    if rhs.shape[0] != kkt.shape[0]:
        raise DimensionMismatch(f"rhs length {rhs.shape[0]} vs system {kkt.shape[0]}")
    try:
        lu = spla.splu(kkt)
    except RuntimeError as exc:
        raise SingularSystem(_diagnose_singular(A, B, str(exc))) from exc
    x = lu.solve(rhs)
    scale = np.linalg.norm(rhs)
    if scale == 0:
        return np.zeros_like(rhs)
    res = np.linalg.norm(kkt @ x - rhs)
    if not np.isfinite(res) or res > 1e-10 * scale:
        raise SingularSystem(
            _diagnose_singular(A, B, f"residual {res:.3e} vs rhs norm {scale:.3e}"))
    return x


def _diagnose_singular(A, B, detail):
    msg = f"saddle-point solve failed ({detail})"
    if B.shape[0] <= 2000:
        sv = np.linalg.svd(B.toarray(), compute_uv=False)
        rank = int((sv > 1e-12 * max(sv[0], 1e-300)).sum())
        if rank < B.shape[0]:
            msg += (f"; constraint block is rank deficient: rank {rank} of "
                    f"{B.shape[0]} rows (missing gauge or dependent constraints)")
        else:
            msg += "; constraint block has full row rank (check the A block)"
    return msg


def dense_generalized_eigensolve(A, S):
    """Solve A phi = lambda S phi for symmetric A and SPD S.

    Returns (eigenvalues ascending, eigenvectors S-orthonormal as columns).
    """
    A = np.asarray(A, float)
    S = np.asarray(S, float)
    if A.shape != S.shape or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f"pencil shapes {A.shape} vs {S.shape}")
    n = A.shape[0]
    try:
        L = np.linalg.cholesky(S)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(f"S is not positive definite: {exc}") from exc
    piv = np.diag(L) ** 2
    if piv.min() <= 1e-12 * np.trace(S) / n:
        raise NotPositiveDefinite(
            f"smallest Cholesky pivot {piv.min():.3e} below tolerance "
            f"{1e-12 * np.trace(S) / n:.3e}")
    w, v = sla.eigh(A, S)
    return w, v
