"""Spectral reduction of snapshot spaces into per-block offline bases.

The per-block pencil pairs the snapshot-projected stiffness against the
boundary trace mass weighted by 1/H; the eigenvectors of the smallest
eigenvalues recombine the snapshots into the coarse velocity basis.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dgform import BlockSpace
from .errors import DimensionMismatch, EdgeRankWarning, NotPositiveDefinite
from .femcore import assemble_vector_laplacian, dense_generalized_eigensolve
from .snapshots import snapshot_boundary_mass


@dataclass
class OfflineBasis:
    """Reduced velocity basis of one block (columns over node_ids layout)."""

    block_id: int
    eigenvalues: np.ndarray
    columns: np.ndarray          # (2 * len(node_ids), L)
    node_ids: np.ndarray
    provenance: dict = field(default_factory=dict)
    dropped: int = 0


def _stiffness(mesh, tris, node_ids):
    n = len(node_ids)
    loc = np.full(mesh.n_nodes, -1, np.int64)
    loc[node_ids] = np.arange(n)
    lt = loc[mesh.triangles[tris]]
    vdof = np.empty((len(tris), 6), np.int64)
    vdof[:, 0::2] = 2 * lt
    vdof[:, 1::2] = 2 * lt + 1
    return assemble_vector_laplacian(mesh.nodes, mesh.triangles[tris], vdof, 2 * n)


def block_pencil(mesh, partition, snap):
    """(A, S) of the spectral problem on the snapshot's own support."""
    K = _stiffness(mesh, snap.tris, snap.node_ids)
    Mb = snapshot_boundary_mass(mesh, snap.tris, snap.node_ids)
    psi = snap.columns
    A = psi.T @ (K @ psi)
    S = psi.T @ (Mb @ psi) / partition.H
    return 0.5 * (A + A.T), 0.5 * (S + S.T)


def _decomposition(mesh, partition, snap):
    # cached: reducing the same snapshots at several L reuses one eigensolve
    if "pencil_eig" not in snap.meta:
        A, S = block_pencil(mesh, partition, snap)
        try:
            w, v = dense_generalized_eigensolve(A, S)
        except NotPositiveDefinite as exc:
            raise NotPositiveDefinite(
                f"block {snap.block_id}: snapshot traces are numerically dependent "
                f"({exc}); raise pod_tol") from exc
        snap.meta["pencil_eig"] = (w, v)
    return snap.meta["pencil_eig"]


def reduce_block(mesh, partition, snap, L):
    """Offline basis of one block from snapshots supported on the block."""
    if snap.support != "K":
        raise DimensionMismatch("snapshots live on K+; use reduce_block_oversampled")
    if L > snap.dim:
        raise DimensionMismatch(f"L = {L} exceeds snapshot dimension {snap.dim}")
    w, v = _decomposition(mesh, partition, snap)
    cols = snap.columns @ v[:, :L]
    return OfflineBasis(snap.block_id, w[:L], cols, snap.node_ids,
                        {"mode": snap.mode, "L": int(L)})


def reduce_block_oversampled(mesh, partition, snap, L, gram_tol=1e-12):
    """Spectral problem on the enlarged support, then restriction to the block.

    Columns that become dependent after restriction are dropped (prefix order
    preserved) and the drop count recorded.
    """
    if snap.support != "K+":
        raise DimensionMismatch("snapshots are already restricted; use reduce_block")
    if L > snap.dim:
        raise DimensionMismatch(f"L = {L} exceeds snapshot dimension {snap.dim}")
    w, v = _decomposition(mesh, partition, snap)
    cols_plus = snap.columns @ v[:, :L]
    tris_k = partition.block_tris[snap.block_id]
    nodes_k = np.unique(mesh.triangles[tris_k].ravel())
    sel = np.searchsorted(snap.node_ids, nodes_k)
    rows = np.empty(2 * len(nodes_k), np.int64)
    rows[0::2] = 2 * sel
    rows[1::2] = 2 * sel + 1
    cols = cols_plus[rows]
    keep, dropped = [], 0
    for j in range(cols.shape[1]):
        trial = cols[:, keep + [j]]
        g = trial.T @ trial
        ev = np.linalg.eigvalsh(g)
        if ev[0] > gram_tol * max(ev[-1], 1e-300):
            keep.append(j)
        else:
            dropped += 1
    return OfflineBasis(snap.block_id, w[:L][keep], cols[:, keep], nodes_k,
                        {"mode": snap.mode, "L": int(L)}, dropped)


def reduce_any(mesh, partition, snap, L):
    """Dispatch on the snapshot support."""
    if snap.support == "K+":
        return reduce_block_oversampled(mesh, partition, snap, L)
    return reduce_block(mesh, partition, snap, L)


def assemble_global_offline(broken, bases):
    """Concatenate per-block bases into a BlockSpace.

    Verifies per block that the edge-normal mean map of the basis has full
    row rank over the block's coarse edges; failure is a warning carried in
    the space metadata, not an error.
    """
    part = broken.partition
    if len(bases) != part.n_blocks:
        raise DimensionMismatch(f"{len(bases)} bases for {part.n_blocks} blocks")
    columns = []
    for b, basis in enumerate(bases):
        if basis.block_id != b:
            raise DimensionMismatch("bases out of block order")
        nodes = broken.block_nodes[b]
        if not np.array_equal(nodes, basis.node_ids):
            raise DimensionMismatch(f"block {b}: basis nodes do not match the block")
        dofs = broken.node_dof[b]
        free = dofs >= 0
        rows = np.empty(2 * int(free.sum()), np.int64)
        sel = np.flatnonzero(free)
        rows[0::2] = 2 * sel
        rows[1::2] = 2 * sel + 1
        columns.append(basis.columns[rows])
    space = BlockSpace.from_columns(broken, columns)
    space.check_independence()
    min_sv = _edge_mean_rank(broken, space)
    space.meta["edge_mean_min_sv"] = min_sv
    space.meta["eigenvalues"] = [b.eigenvalues for b in bases]
    bad = [b for b, sv in enumerate(min_sv) if sv[1] < 1e-10 * max(sv[0], 1e-300)]
    space.meta["edge_rank_warn"] = bad
    if bad:
        warnings.warn(
            f"edge-normal mean matrix is rank deficient on blocks {bad[:8]}"
            + ("..." if len(bad) > 8 else ""), EdgeRankWarning)
    return space


def _edge_mean_rank(broken, space):
    """Per block: (largest, smallest) singular value of int_E phi . n."""
    part = broken.partition
    mesh = broken.mesh
    out = []
    for b, eids in enumerate(part.block_edges()):
        L = space.block_cols[b]
        if L == 0 or not eids:
            out.append((0.0, 0.0))
            continue
        cols = space.P[broken.offsets[b]:broken.offsets[b + 1],
                       space.col_offsets[b]:space.col_offsets[b + 1]].toarray()
        M = np.zeros((len(eids), L))
        for r, ei in enumerate(eids):
            edge = part.edges[ei]
            sign = 1.0 if edge.plus_block == b else -1.0
            d = broken.dofs_of(b, mesh.edges[edge.fine_edges]) - broken.offsets[b]
            w = 0.5 * edge.fine_lengths[:, None] * edge.fine_normals
            for k in (0, 1):
                ok = d[:, k] >= 0
                M[r] += sign * (w[ok, 0] @ cols[d[ok, k]]
                                + w[ok, 1] @ cols[d[ok, k] + 1])
        sv = np.linalg.svd(M, compute_uv=False)
        out.append((float(sv[0]), float(sv[-1] if len(sv) >= len(eids) else 0.0)))
    return out
