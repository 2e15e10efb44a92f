"""Hybridized DG forms over coarse-block velocity spaces.

The broken velocity space holds one P1 copy of each fine node per coarse
block that touches it (hole-boundary nodes are constrained out). All bilinear
forms are assembled once as sparse operators on that space; a coarse space
given by per-block coefficient columns enters through congruence products.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DimensionMismatch, InvariantViolation
from .femcore import all_gradients, assemble_vector_laplacian

_G1, _G2 = 0.5 - 0.5 / np.sqrt(3.0), 0.5 + 0.5 / np.sqrt(3.0)   # Gauss on [0, 1]


class BrokenSpace:
    """V_h^DG: per-block continuous P1, discontinuous across coarse edges."""

    def __init__(self, mesh, partition):
        self.mesh = mesh
        self.partition = partition
        perf = mesh.node_on_perforation()
        self.block_nodes = []     # sorted node ids per block
        self.node_dof = []        # per block: x-dof per node, -1 on holes
        self.offsets = np.zeros(partition.n_blocks + 1, np.int64)
        for b, tris in enumerate(partition.block_tris):
            nodes = np.unique(mesh.triangles[tris].ravel())
            free = ~perf[nodes]
            dofs = np.full(len(nodes), -1, np.int64)
            dofs[free] = self.offsets[b] + 2 * np.arange(int(free.sum()))
            self.block_nodes.append(nodes)
            self.node_dof.append(dofs)
            self.offsets[b + 1] = self.offsets[b] + 2 * int(free.sum())
        self.n_dofs = int(self.offsets[-1])
        # per-triangle global velocity dofs (x dof; y is +1)
        xd = np.full((mesh.n_triangles, 3), -1, np.int64)
        for b, tris in enumerate(partition.block_tris):
            conn = mesh.triangles[tris]
            pos = np.searchsorted(self.block_nodes[b], conn)
            xd[tris] = self.node_dof[b][pos]
        self.tri_xdof = xd
        self._grads, self._areas = all_gradients(mesh.nodes, mesh.triangles)

    def dofs_of(self, block, nodes):
        """x-dofs of `nodes` inside `block` (-1 for hole nodes)."""
        pos = np.searchsorted(self.block_nodes[block], nodes)
        return self.node_dof[block][pos]

    def tri_vdof(self, tris=None):
        """(k, 6) element dof maps (x0, y0, x1, y1, x2, y2), -1 drops."""
        xd = self.tri_xdof if tris is None else self.tri_xdof[tris]
        vd = np.empty(xd.shape[:1] + (6,), np.int64)
        vd[:, 0::2] = xd
        vd[:, 1::2] = np.where(xd >= 0, xd + 1, -1)
        return vd

    def interpolate(self, fun):
        """Nodal interpolation of a callable (pts (k,2) -> (k,2)) per block."""
        coeffs = np.zeros(self.n_dofs)
        for b, nodes in enumerate(self.block_nodes):
            vals = np.asarray(fun(self.mesh.nodes[nodes]), float)
            d = self.node_dof[b]
            ok = d >= 0
            coeffs[d[ok]] = vals[ok, 0]
            coeffs[d[ok] + 1] = vals[ok, 1]
        return coeffs

    def block_values(self, coeffs, block):
        """(n_block_nodes, 2) nodal values of a coefficient vector in a block."""
        d = self.node_dof[block]
        vals = np.zeros((len(d), 2))
        ok = d >= 0
        vals[ok, 0] = coeffs[d[ok]]
        vals[ok, 1] = coeffs[d[ok] + 1]
        return vals


@dataclass
class BlockSpace:
    """Coarse velocity space: per-block coefficient columns in broken dofs.

    P is the sparse (n_fine_dofs, dim) prolongation; identity when the space
    is the full broken space itself.
    """

    broken: BrokenSpace
    P: object                     # sparse matrix or None for identity
    block_cols: np.ndarray        # (n_blocks,) columns per block
    col_offsets: np.ndarray       # (n_blocks + 1,)
    meta: dict = field(default_factory=dict)

    @classmethod
    def identity(cls, broken):
        nb = broken.partition.n_blocks
        cols = np.array([broken.offsets[b + 1] - broken.offsets[b] for b in range(nb)])
        return cls(broken, None, cols, np.concatenate([[0], np.cumsum(cols)]))

    @classmethod
    def from_columns(cls, broken, columns, meta=None):
        """columns: per block, array (n_block_free_dofs, L_b) of coefficients."""
        nb = broken.partition.n_blocks
        if len(columns) != nb:
            raise DimensionMismatch(f"{len(columns)} column blocks for {nb} blocks")
        cols = np.array([c.shape[1] for c in columns])
        off = np.concatenate([[0], np.cumsum(cols)])
        rows, ccols, vals = [], [], []
        for b, c in enumerate(columns):
            nb_dofs = broken.offsets[b + 1] - broken.offsets[b]
            if c.shape[0] != nb_dofs:
                raise DimensionMismatch(
                    f"block {b}: {c.shape[0]} rows vs {nb_dofs} block dofs")
            r = np.arange(broken.offsets[b], broken.offsets[b + 1])
            rows.append(np.repeat(r, c.shape[1]))
            ccols.append(np.tile(np.arange(off[b], off[b + 1]), nb_dofs))
            vals.append(c.ravel())
        P = sp.coo_matrix((np.concatenate(vals),
                           (np.concatenate(rows), np.concatenate(ccols))),
                          shape=(broken.n_dofs, int(off[-1]))).tocsc()
        return cls(broken, P, cols, off, meta or {})

    @property
    def dim(self):
        return int(self.col_offsets[-1])

    def check_independence(self, tol=1e-12):
        """Per-block coefficient Gram must be numerically nonsingular."""
        for b in range(len(self.block_cols)):
            if self.block_cols[b] == 0:
                continue
            C = self.P[self.broken.offsets[b]:self.broken.offsets[b + 1],
                       self.col_offsets[b]:self.col_offsets[b + 1]].toarray()
            w = np.linalg.eigvalsh(C.T @ C)
            if w[0] <= tol * max(w[-1], 1e-300):
                raise InvariantViolation(
                    f"block {b}: dependent basis columns (gram ratio {w[0] / w[-1]:.2e})")

    def restrict(self, matrix):
        return matrix if self.P is None else self.P.T @ matrix @ self.P

    def restrict_rows(self, matrix):
        return matrix if self.P is None else matrix @ self.P

    def restrict_vec(self, vec):
        return vec if self.P is None else self.P.T @ vec

    def downscale(self, coeffs):
        """Fine broken coefficients of a coarse coefficient vector."""
        coeffs = np.asarray(coeffs, float)
        if coeffs.shape[0] != self.dim:
            raise DimensionMismatch(f"{coeffs.shape[0]} coefficients vs dim {self.dim}")
        return coeffs.copy() if self.P is None else self.P @ coeffs


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------

def const_field(vec):
    v = np.asarray(vec, float)

    def fun(pts):
        return np.broadcast_to(v, (len(pts), 2)).copy()
    return fun


@dataclass
class StokesProblem:
    """Body force and boundary data with the outer-boundary classification."""

    f: object
    g_dirichlet: object
    g_neumann: object
    outer: str = "dirichlet"         # classification of the outer boundary
    label: str = "custom"

    def __post_init__(self):
        if self.outer not in ("dirichlet", "neumann"):
            raise InvariantViolation(f"outer boundary kind '{self.outer}'")

    @classmethod
    def example1(cls):
        """Lid-driven sweep: f = 0, u = (1, 0) on the outer boundary."""
        zero = const_field((0.0, 0.0))
        return cls(zero, const_field((1.0, 0.0)), zero, "dirichlet", "example1")

    @classmethod
    def example2(cls):
        """Body force f = (1, 1), zero-traction outer boundary."""
        zero = const_field((0.0, 0.0))
        return cls(const_field((1.0, 1.0)), zero, zero, "neumann", "example2")


# ---------------------------------------------------------------------------
# fine-operator assembly
# ---------------------------------------------------------------------------

class FineOperators:
    """All DG operators on the broken space for one problem configuration.

    Pieces are kept separate so the penalty weight can vary:
        a(gamma) = volume - consistency + (gamma / h) * jump
    The A-norm Gram uses the jump mass over *all* coarse edges regardless of
    the boundary classification.
    """

    def __init__(self, broken, problem):
        self.broken = broken
        self.problem = problem
        mesh = broken.mesh
        part = broken.partition
        self.h = mesh.h
        self.volume = assemble_vector_laplacian(
            mesh.nodes, mesh.triangles, broken.tri_vdof(), broken.n_dofs)
        self._assemble_edges()
        self._assemble_bdg()

    def a_matrix(self, gamma):
        return (self.volume - self.consistency + (gamma / self.h) * self.jump).tocsr()

    def norm_matrix(self):
        """Gram matrix of the energy norm: grad-grad + (1/h) * all-edge jumps."""
        return (self.volume + (1.0 / self.h) * self.jump_all).tocsr()

    # -- edge terms ---------------------------------------------------------

    def _edge_sides(self, edge):
        """Per fine edge: (a, b, tri_plus, tri_minus) node/triangle ids."""
        mesh = self.broken.mesh
        part = self.broken.partition
        fe = edge.fine_edges
        ab = mesh.edges[fe]
        et = mesh.edge_tris()[fe]
        blk = part.block_of_tri
        if edge.is_boundary:
            tplus = np.where(et[:, 0] >= 0, et[:, 0], et[:, 1])
            return ab[:, 0], ab[:, 1], tplus, None
        first_plus = blk[et[:, 0]] == edge.plus_block
        tplus = np.where(first_plus, et[:, 0], et[:, 1])
        tminus = np.where(first_plus, et[:, 1], et[:, 0])
        if not (np.all(blk[tplus] == edge.plus_block)
                and np.all(blk[tminus] == edge.minus_block)):
            raise InvariantViolation("coarse edge chain crosses unexpected blocks")
        return ab[:, 0], ab[:, 1], tplus, tminus

    def _assemble_edges(self):
        broken = self.broken
        mesh = broken.mesh
        part = broken.partition
        grads, _ = broken._grads, broken._areas
        n = broken.n_dofs
        jr, jc, jv = [], [], []          # penalty/consistency edges
        ar, ac, av = [], [], []          # all edges (norm Gram)
        cr, cc, cv = [], [], []          # consistency
        neumann = self.problem.outer == "neumann"
        self.edge_active = []            # carries penalty + consistency terms
        for edge in part.edges:
            active = not (edge.is_boundary and neumann)
            self.edge_active.append(active)
            a, b, tp, tm = self._edge_sides(edge)
            lens = edge.fine_lengths
            nrm = edge.fine_normals
            sides = [(1.0, edge.plus_block, tp)]
            if tm is not None:
                sides.append((-1.0, edge.minus_block, tm))
            w_avg = 1.0 if tm is None else 0.5
            # trace dofs per side (x dofs; block is constant along the chain)
            tr = [(s, broken.dofs_of(blk, a), broken.dofs_of(blk, b))
                  for s, blk, _tris in sides]
            # jump mass: sum_e |e|/6 [2 1; 1 2] on each component
            for s1, da1, db1 in tr:
                for s2, da2, db2 in tr:
                    for (r_, c_, wgt) in ((da1, da2, 2.0), (da1, db2, 1.0),
                                          (db1, da2, 1.0), (db1, db2, 2.0)):
                        val = s1 * s2 * wgt * lens / 6.0
                        for comp in (0, 1):
                            ok = (r_ >= 0) & (c_ >= 0)
                            ar.append(r_[ok] + comp)
                            ac.append(c_[ok] + comp)
                            av.append(val[ok])
                            if active:
                                jr.append(r_[ok] + comp)
                                jc.append(c_[ok] + comp)
                                jv.append(val[ok])
            if not active:
                continue
            # consistency: int_e {grad(u) n} . [v], both symmetrized orders
            for sg, gblk, gtris in sides:         # gradient side (weight w_avg)
                gn = np.einsum("tid,td->ti", grads[gtris], nrm)   # (k, 3)
                gdof = broken.dofs_of(gblk, mesh.triangles[gtris])          # (k, 3)
                for st, da, db in tr:             # trace side (sign st)
                    for tdof in (da, db):
                        val = w_avg * st * 0.5 * lens[:, None] * gn        # (k, 3)
                        rows = np.repeat(tdof[:, None], 3, axis=1)
                        ok = (rows >= 0) & (gdof >= 0)
                        for comp in (0, 1):
                            cr.append(rows[ok] + comp)
                            cc.append(gdof[ok] + comp)
                            cv.append(val[ok])

        def build(r, c, v):
            if not r:
                return sp.csr_matrix((n, n))
            return sp.coo_matrix((np.concatenate(v),
                                  (np.concatenate(r), np.concatenate(c))),
                                 shape=(n, n)).tocsr()

        self.jump = build(jr, jc, jv)
        self.jump_all = build(ar, ac, av)
        cons = build(cr, cc, cv)
        self.consistency = cons + cons.T

    # -- constraint block and loads ------------------------------------------

    def _assemble_bdg(self):
        broken = self.broken
        mesh = broken.mesh
        part = broken.partition
        grads, areas = broken._grads, broken._areas
        n_p, n_e = part.n_blocks, part.n_edges
        rows, cols, vals = [], [], []
        # element rows: -int_K div v
        vdof = broken.tri_vdof()
        dv = -(grads * areas[:, None, None]).reshape(-1, 6)
        r = np.repeat(part.block_of_tri[:, None], 6, axis=1)
        ok = vdof >= 0
        rows.append(r[ok])
        cols.append(vdof[ok])
        vals.append(dv[ok])
        # edge rows: int_E [v].n with the stored orientation
        for j, edge in enumerate(part.edges):
            a, b, tp, tm = self._edge_sides(edge)
            lens = edge.fine_lengths
            nrm = edge.fine_normals
            sides = [(1.0, edge.plus_block)]
            if tm is not None:
                sides.append((-1.0, edge.minus_block))
            for s, blk in sides:
                for nodes in (a, b):
                    d = broken.dofs_of(blk, nodes)
                    w = s * 0.5 * lens
                    for comp in (0, 1):
                        ok = d >= 0
                        rows.append(np.full(int(ok.sum()), n_p + j))
                        cols.append(d[ok] + comp)
                        vals.append(w[ok] * nrm[ok, comp])
        self.bdg = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_p + n_e, broken.n_dofs)).tocsr()
        self.gauge = np.concatenate([part.block_areas(), np.zeros(n_e)])

    def rhs(self, gamma):
        """(rhs_u, rhs_p) for the stored problem at penalty weight gamma."""
        broken = self.broken
        mesh = broken.mesh
        part = broken.partition
        prob = self.problem
        rhs_u = np.zeros(broken.n_dofs)
        rhs_p = np.zeros(part.n_blocks + part.n_edges)
        # volume load by degree-2 quadrature (edge midpoints)
        areas = broken._areas
        conn = mesh.triangles
        xd = broken.tri_xdof
        p = mesh.nodes[conn]
        for q in range(3):
            pts = 0.5 * (p[:, q] + p[:, (q + 1) % 3])
            fv = np.asarray(prob.f(pts), float) * (areas / 3.0)[:, None]
            for loc in (q, (q + 1) % 3):
                d = xd[:, loc]
                ok = d >= 0
                np.add.at(rhs_u, d[ok], 0.5 * fv[ok, 0])
                np.add.at(rhs_u, d[ok] + 1, 0.5 * fv[ok, 1])
        # boundary terms
        grads = broken._grads
        for j, edge in enumerate(part.edges):
            if not edge.is_boundary:
                continue
            a, b, tp, _ = self._edge_sides(edge)
            lens = edge.fine_lengths
            nrm = edge.fine_normals
            blk = edge.plus_block
            pa, pb = mesh.nodes[a], mesh.nodes[b]
            q1 = pa + _G1 * (pb - pa)
            q2 = pa + _G2 * (pb - pa)
            if prob.outer == "dirichlet":
                g1, g2 = prob.g_dirichlet(q1), prob.g_dirichlet(q2)
                # penalty load (gamma/h) int g.v and edge-row inflow int g.n
                for nodes, w1, w2 in ((a, 1 - _G1, 1 - _G2), (b, _G1, _G2)):
                    d = broken.dofs_of(blk, nodes)
                    load = 0.5 * lens[:, None] * (w1 * g1 + w2 * g2)
                    ok = d >= 0
                    np.add.at(rhs_u, d[ok], gamma / self.h * load[ok, 0])
                    np.add.at(rhs_u, d[ok] + 1, gamma / self.h * load[ok, 1])
                # consistency load: -int ((grad v) n) . g
                gn = np.einsum("tid,td->ti", grads[tp], nrm)
                gint = 0.5 * lens[:, None] * (g1 + g2)        # int_e g
                gdof = broken.dofs_of(blk, conn[tp])
                contrib = -gn[:, :, None] * gint[:, None, :]  # (k, 3, 2)
                ok = gdof >= 0
                np.add.at(rhs_u, gdof[ok], contrib[ok][:, 0])
                np.add.at(rhs_u, gdof[ok] + 1, contrib[ok][:, 1])
                rhs_p[part.n_blocks + j] = float(
                    (0.5 * lens[:, None] * (g1 + g2) * nrm).sum())
            else:
                gn1, gn2 = prob.g_neumann(q1), prob.g_neumann(q2)
                for nodes, w1, w2 in ((a, 1 - _G1, 1 - _G2), (b, _G1, _G2)):
                    d = broken.dofs_of(blk, nodes)
                    load = 0.5 * lens[:, None] * (w1 * gn1 + w2 * gn2)
                    ok = d >= 0
                    np.add.at(rhs_u, d[ok], load[ok, 0])
                    np.add.at(rhs_u, d[ok] + 1, load[ok, 1])
        return rhs_u, rhs_p


# ---------------------------------------------------------------------------
# spec-level entry points
# ---------------------------------------------------------------------------

@dataclass
class HybridSystem:
    """Assembled coarse saddle-point system."""

    A: object
    B: object
    rhs_u: np.ndarray
    rhs_p: np.ndarray
    gauge: np.ndarray
    gamma: float
    n_u: int
    n_p: int
    n_ph: int


def assemble_a_dg(space, gamma, operators=None, problem=None):
    """a_DG matrix on a BlockSpace (volume - consistency + penalty)."""
    if gamma <= 0:
        raise InvariantViolation("penalty gamma must be positive")
    ops = operators or FineOperators(space.broken, problem or StokesProblem.example1())
    return space.restrict(ops.a_matrix(gamma))


def assemble_b_dg(space, operators=None, problem=None):
    """Constraint block: one row per coarse element, one per coarse edge."""
    ops = operators or FineOperators(space.broken, problem or StokesProblem.example1())
    return space.restrict_rows(ops.bdg)


def assemble_rhs(problem, space, gamma, operators=None):
    """(rhs_u, rhs_p) for a problem on a BlockSpace."""
    ops = operators or FineOperators(space.broken, problem)
    ru, rp = ops.rhs(gamma)
    return space.restrict_vec(ru), rp


def assemble_system(space, problem, gamma, operators=None):
    """Full HybridSystem for a coarse space."""
    ops = operators or FineOperators(space.broken, problem)
    A = space.restrict(ops.a_matrix(gamma))
    B = space.restrict_rows(ops.bdg)
    ru, rp = ops.rhs(gamma)
    part = space.broken.partition
    return HybridSystem(A, B, space.restrict_vec(ru), rp, ops.gauge, gamma,
                        space.dim, part.n_blocks, part.n_edges)


def edge_jump_integral(space, edge, u_coeffs, v_coeffs):
    """int_E [u].[v] by 2-point Gauss per fine edge (exact for P1 traces)."""
    broken = space.broken
    mesh = broken.mesh
    u_f = space.downscale(np.asarray(u_coeffs, float))
    v_f = space.downscale(np.asarray(v_coeffs, float))
    fe = edge.fine_edges
    ab = mesh.edges[fe]

    def trace(coeffs, block):
        d = broken.dofs_of(block, ab)          # (k, 2) x-dofs
        out = np.zeros((len(fe), 2, 2))
        ok = d >= 0
        out[..., 0][ok] = coeffs[d[ok]]
        out[..., 1][ok] = coeffs[d[ok] + 1]
        return out

    ju = trace(u_f, edge.plus_block)
    jv = trace(v_f, edge.plus_block)
    if not edge.is_boundary:
        ju = ju - trace(u_f, edge.minus_block)
        jv = jv - trace(v_f, edge.minus_block)
    lens = edge.fine_lengths
    m_aa = (ju[:, 0] * jv[:, 0]).sum(axis=1)
    m_bb = (ju[:, 1] * jv[:, 1]).sum(axis=1)
    m_ab = (ju[:, 0] * jv[:, 1]).sum(axis=1) + (ju[:, 1] * jv[:, 0]).sum(axis=1)
    return float((lens / 6.0 * (2 * m_aa + 2 * m_bb + m_ab)).sum())
