"""Per-block snapshot spaces from local Stokes solves.

Standard snapshots drive each boundary node of a block with per-component
unit data; oversampled snapshots solve on an enlarged neighborhood and are
deduplicated by POD (and optionally restricted to the block); randomized
snapshots use seeded Gaussian boundary data on the enlarged neighborhood.
Hole-boundary nodes always carry homogeneous data and generate no columns.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import EmptyAfterPOD, InvariantViolation
from .femcore import HarmonicExtensionFactor, assemble_vector_laplacian, assemble_vector_mass
from .geometry import expand_block, subdomain_boundary

MODES = ("standard", "oversampled_restricted", "oversampled_unrestricted", "randomized")


@dataclass
class SnapshotSpace:
    """Velocity snapshot columns of one block.

    columns are nodal coefficients (2 * len(node_ids), k), node-major
    (x0, y0, x1, y1, ...) over `node_ids`; `support` is 'K' when they live on
    the block itself and 'K+' on the oversampled neighborhood.
    """

    block_id: int
    mode: str
    support: str
    tris: np.ndarray
    node_ids: np.ndarray
    columns: np.ndarray
    div_constants: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.columns.shape[1]


def _delta_columns(factor, perf_mask):
    """Per-node, per-component unit boundary data, skipping hole nodes.

    Returns (g (nb, 2, k), labels list of (node, comp)).
    """
    drive = np.flatnonzero(~perf_mask[factor.boundary_nodes])
    k = 2 * len(drive)
    g = np.zeros((len(factor.boundary_nodes), 2, k))
    labels = []
    for j, row in enumerate(drive):
        g[row, 0, 2 * j] = 1.0
        g[row, 1, 2 * j + 1] = 1.0
        labels.append((int(factor.boundary_nodes[row]), 0))
        labels.append((int(factor.boundary_nodes[row]), 1))
    return g, labels


def build_standard_snapshots(mesh, partition, block):
    """Delta-boundary snapshots on one coarse block."""
    tris = partition.block_tris[block]
    factor = HarmonicExtensionFactor(mesh, tris)
    g, labels = _delta_columns(factor, mesh.node_on_perforation())
    u, _, c = factor.solve_columns(g)
    cols = u.reshape(2 * factor.n_loc, -1)
    return SnapshotSpace(block, "standard", "K", tris, factor.node_ids, cols, c,
                         {"labels": labels})


def build_oversampled_snapshots(mesh, partition, block, layers, restrict=True,
                                pod_tol=1e-10):
    """Delta snapshots on the enlarged block, POD-deduplicated.

    With restrict=True the columns are truncated to the block's own nodes
    (and re-orthonormalized there, which removes dependence created by the
    truncation); otherwise they keep the enlarged support for the
    oversampled spectral reduction.
    """
    if layers < 1:
        raise InvariantViolation("oversampling needs at least one layer")
    tris = expand_block(mesh, partition.block_tris[block], layers)
    factor = HarmonicExtensionFactor(mesh, tris)
    g, _ = _delta_columns(factor, mesh.node_on_perforation())
    u, _, c = factor.solve_columns(g)
    cols = u.reshape(2 * factor.n_loc, -1)
    cols, c = pod_orthonormalize(mesh, tris, factor.node_ids, cols, c, pod_tol)
    if not restrict:
        return SnapshotSpace(block, "oversampled_unrestricted", "K+", tris,
                             factor.node_ids, cols, c, {"layers": layers})
    tris_k = partition.block_tris[block]
    nodes_k = np.unique(mesh.triangles[tris_k].ravel())
    sel = np.searchsorted(factor.node_ids, nodes_k)
    rows = np.empty(2 * len(nodes_k), np.int64)
    rows[0::2] = 2 * sel
    rows[1::2] = 2 * sel + 1
    cols_k = cols[rows]
    cols_k, c = pod_orthonormalize(mesh, tris_k, nodes_k, cols_k, c, pod_tol)
    return SnapshotSpace(block, "oversampled_restricted", "K", tris_k, nodes_k,
                         cols_k, c, {"layers": layers})


def build_randomized_snapshots(mesh, partition, block, layers, count, seed):
    """Gaussian-boundary snapshots on the enlarged block, seed-deterministic."""
    if count < 1:
        raise InvariantViolation("randomized snapshot count must be >= 1")
    tris = expand_block(mesh, partition.block_tris[block], max(layers, 0)) \
        if layers > 0 else partition.block_tris[block]
    factor = HarmonicExtensionFactor(mesh, tris)
    perf = mesh.node_on_perforation()
    drive = ~perf[factor.boundary_nodes]
    rng = np.random.default_rng((int(seed), int(block)))
    g = np.zeros((len(factor.boundary_nodes), 2, count))
    g[drive] = rng.standard_normal((int(drive.sum()), 2, count))
    u, _, c = factor.solve_columns(g)
    cols = u.reshape(2 * factor.n_loc, -1)
    return SnapshotSpace(block, "randomized", "K+" if layers > 0 else "K", tris,
                         factor.node_ids, cols, c,
                         {"layers": layers, "count": count, "seed": seed})


def pod_orthonormalize(mesh, tris, node_ids, columns, div_constants, tol):
    """Orthonormalize columns in the H1 inner product, dropping tiny modes.

    Keeps singular values above tol times the largest; returned columns are
    orthonormal in the gradient-plus-L2 Gram on the support to roundoff.
    """
    n = len(node_ids)
    loc = np.full(mesh.n_nodes, -1, np.int64)
    loc[node_ids] = np.arange(n)
    lt = loc[mesh.triangles[tris]]
    vdof = np.empty((len(tris), 6), np.int64)
    vdof[:, 0::2] = 2 * lt
    vdof[:, 1::2] = 2 * lt + 1
    W = assemble_vector_laplacian(mesh.nodes, mesh.triangles[tris], vdof, 2 * n) \
        + assemble_vector_mass(mesh.nodes, mesh.triangles[tris], vdof, 2 * n)
    L = np.linalg.cholesky(W.toarray())
    _, sv, vt = np.linalg.svd(L.T @ columns, full_matrices=False)
    keep = sv > tol * sv[0]
    if not keep.any():
        raise EmptyAfterPOD("all snapshot modes fall below the POD tolerance")
    v = vt[keep].T / sv[keep]
    return columns @ v, div_constants @ v


def snapshot_boundary_mass(mesh, tris, node_ids):
    """Sparse boundary-trace vector mass on the subdomain node layout."""
    n = len(node_ids)
    bedges, _, _ = subdomain_boundary(mesh, tris)
    loc = np.full(mesh.n_nodes, -1, np.int64)
    loc[node_ids] = np.arange(n)
    e = loc[mesh.edges[bedges]]
    pts = mesh.nodes[mesh.edges[bedges]]
    lens = np.hypot(*(pts[:, 1] - pts[:, 0]).T)
    rows, cols, vals = [], [], []
    for (i, j, w) in ((0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)):
        for comp in (0, 1):
            rows.append(2 * e[:, i] + comp)
            cols.append(2 * e[:, j] + comp)
            vals.append(w * lens / 6.0)
    return sp.coo_matrix((np.concatenate(vals),
                          (np.concatenate(rows), np.concatenate(cols))),
                         shape=(2 * n, 2 * n)).tocsr()
