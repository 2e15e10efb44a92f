"""Meshing of perforated unit-square domains.

Builds a structured fine triangulation fitted to circular holes, the coarse
partition into triangular or rectangular blocks, the coarse edge skeleton
with fixed normals, and oversampled block neighborhoods. Also reads/writes
the native ASCII mesh format and imports Gmsh v2 files.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import CircleTooSmall, InvariantViolation, ParseError, SnapDegeneracy

# edge markers
MARK_INTERIOR = 0
MARK_DIRICHLET = 1   # outer boundary (default classification)
MARK_NEUMANN = 2
MARK_PERFORATION = 3

_AREA_TOL_FACTOR = 1e-10   # degenerate-triangle threshold, times h^2
_GEOM_EPS = 1e-12


@dataclass(frozen=True)
class PerforationSet:
    """Disjoint circular holes strictly inside the unit square.

    circles: sequence of (cx, cy, r).
    """

    circles: tuple

    def __post_init__(self):
        circles = tuple(tuple(map(float, c)) for c in self.circles)
        object.__setattr__(self, "circles", circles)
        for cx, cy, r in circles:
            if r <= 0:
                raise InvariantViolation(f"circle radius must be positive, got {r}")
            if cx - r <= 0 or cx + r >= 1 or cy - r <= 0 or cy + r >= 1:
                raise InvariantViolation(
                    f"circle ({cx}, {cy}, r={r}) is not strictly inside the unit square")
        arr = np.asarray(circles, float)
        for i in range(len(arr)):
            for j in range(i + 1, len(arr)):
                gap = np.hypot(*(arr[i, :2] - arr[j, :2])) - arr[i, 2] - arr[j, 2]
                if gap <= 0:
                    raise InvariantViolation(f"circles {i} and {j} overlap (gap {gap:.3e})")

    def as_array(self):
        return np.asarray(self.circles, float).reshape(-1, 3)

    def __len__(self):
        return len(self.circles)


class FineMesh:
    """Conforming triangulation of the perforated domain.

    nodes        : (N, 2) float coordinates
    triangles    : (M, 3) int node triples, counterclockwise
    edges        : (E, 2) int node pairs, each sorted, lexicographically ordered
    edge_markers : (E,) uint8, MARK_* values
    h            : nominal fine mesh size
    """

    def __init__(self, nodes, triangles, edges, edge_markers, h):
        self.nodes = np.ascontiguousarray(nodes, float)
        self.triangles = np.ascontiguousarray(triangles, np.int64)
        self.edges = np.ascontiguousarray(edges, np.int64)
        self.edge_markers = np.ascontiguousarray(edge_markers, np.uint8)
        self.h = float(h)
        self._edge_tris = None
        self._areas = None
        self._edge_index = None
        self._n2t = None

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def tri_areas(self):
        """Signed triangle areas (positive for CCW)."""
        if self._areas is None:
            p = self.nodes[self.triangles]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            self._areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return self._areas

    def edge_tris(self):
        """(E, 2) adjacent triangle ids per edge; -1 where absent."""
        if self._edge_tris is None:
            idx = self.edge_index()
            et = np.full((len(self.edges), 2), -1, np.int64)
            tris = self.triangles
            for t in range(tris.shape[0]):
                a, b, c = tris[t]
                for u, v in ((a, b), (b, c), (c, a)):
                    e = idx[(u, v) if u < v else (v, u)]
                    if et[e, 0] < 0:
                        et[e, 0] = t
                    else:
                        et[e, 1] = t
            self._edge_tris = et
        return self._edge_tris

    def edge_index(self):
        """dict (lo, hi) node pair -> edge id."""
        if self._edge_index is None:
            self._edge_index = {(int(a), int(b)): i for i, (a, b) in enumerate(self.edges)}
        return self._edge_index

    def node_on_perforation(self):
        """Boolean mask of nodes incident to a perforation-marked edge."""
        mask = np.zeros(self.n_nodes, bool)
        perf = self.edges[self.edge_markers == MARK_PERFORATION]
        mask[perf.ravel()] = True
        return mask

    def content_hash(self):
        """Stable hex digest of the mesh arrays (cache key component)."""
        hsh = hashlib.sha256()
        for a in (self.nodes, self.triangles, self.edges, self.edge_markers):
            hsh.update(np.ascontiguousarray(a).tobytes())
        hsh.update(repr(self.h).encode())
        return hsh.hexdigest()[:16]


@dataclass
class CoarseEdge:
    """One coarse edge: a chain of fine edges with a fixed orientation.

    `normal` is the nominal unit normal pointing from the plus block into the
    minus block (outward on boundary edges). `fine_normals` holds the true
    per-fine-edge unit normals oriented to agree with it; they differ from
    the nominal one only where a hole bends the chain.
    """

    fine_edges: np.ndarray          # ids into mesh.edges
    normal: np.ndarray              # (2,) unit, nominal
    plus_block: int
    minus_block: int                # -1 on the domain boundary
    is_boundary: bool
    length: float
    fine_normals: np.ndarray = None   # (k, 2)
    fine_lengths: np.ndarray = None   # (k,)


class CoarsePartition:
    """Coarse blocks (sets of fine triangles), coarse edges, oversampling."""

    def __init__(self, mesh, block_of_tri, n_blocks, H, block_shape, edges):
        self.mesh = mesh
        self.block_of_tri = np.ascontiguousarray(block_of_tri, np.int64)
        self.n_blocks = int(n_blocks)
        self.H = float(H)
        self.block_shape = block_shape
        self.edges = edges                       # list[CoarseEdge]
        self.oversample_layers = 0
        self.block_tris = [np.flatnonzero(self.block_of_tri == b) for b in range(n_blocks)]
        self.oversampled_tris = list(self.block_tris)
        self._block_edges = None

    @property
    def n_edges(self):
        return len(self.edges)

    @property
    def n_interior_edges(self):
        return sum(1 for e in self.edges if not e.is_boundary)

    def block_areas(self):
        areas = self.mesh.tri_areas()
        return np.array([areas[t].sum() for t in self.block_tris])

    def block_edges(self):
        """Per block: list of coarse edge ids on its boundary."""
        if self._block_edges is None:
            be = [[] for _ in range(self.n_blocks)]
            for i, e in enumerate(self.edges):
                be[e.plus_block].append(i)
                if e.minus_block >= 0:
                    be[e.minus_block].append(i)
            self._block_edges = be
        return self._block_edges

    def edge_lengths(self):
        return np.array([e.length for e in self.edges])


# ---------------------------------------------------------------------------
# structured generation
# ---------------------------------------------------------------------------

def _hash01(i, j):
    # deterministic pseudo-random in [0, 1) from two ints
    return float(np.sin(12.9898 * (i + 1) + 78.233 * (j + 1)) * 43758.5453 % 1.0)


# incenters of the two half-square coarse triangles, as cell fractions
_INCENTER_LOWER = (1.0 / np.sqrt(2.0), 1.0 - 1.0 / np.sqrt(2.0))
_INCENTER_UPPER = (1.0 - 1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0))


def preset_perforations(name):
    """Return (PerforationSet, block_shape, default_refinement) for a preset."""
    if name == "small_inclusions":
        H = 0.1
        circles = []
        for i in range(10):
            for j in range(10):
                for t, (fx, fy) in enumerate((_INCENTER_LOWER, _INCENTER_UPPER)):
                    if (3 * i + 5 * j + 4 * t) % 9 < 2:
                        r = 0.006 + 0.0018 * _hash01(i + 11 * t, j)
                        circles.append(((i + fx) * H, (j + fy) * H, r))
        return PerforationSet(tuple(circles)), "triangular", 18
    if name == "multi_size":
        H = 0.1
        big = [(0.3, 0.3, 0.068), (0.7, 0.3, 0.058), (0.3, 0.7, 0.062), (0.7, 0.7, 0.07)]
        circles = list(big)
        for i in range(10):
            for j in range(10):
                if (2 * i + 3 * j) % 5 >= 2:
                    continue
                cx, cy = (i + 0.5) * H, (j + 0.5) * H
                r = 0.006 + 0.0025 * _hash01(j, i)
                if all(np.hypot(cx - bx, cy - by) > br + r + 0.03 for bx, by, br in big):
                    circles.append((cx, cy, r))
        return PerforationSet(tuple(circles)), "rectangular", 22
    raise ParseError(f"unknown preset '{name}'")


def generate_perforated_mesh(perforations, H, refinement, block_shape="triangular"):
    """Structured fine mesh of the unit square minus circular holes.

    The background grid has square cells of size h = H / refinement, each
    split along its up-right diagonal. Triangles whose centroid falls inside
    a circle are removed and the remaining near-circle nodes are snapped onto
    the circle; nodes on the coarse skeleton move along their line so coarse
    edges stay unions of whole fine edges.

    Returns (FineMesh, CoarsePartition).
    """
    nH = int(round(1.0 / H))
    if abs(nH * H - 1.0) > 1e-12:
        raise InvariantViolation(f"coarse size H={H} does not divide the unit square")
    refinement = int(refinement)
    if refinement < 2:
        raise InvariantViolation("refinement must be >= 2")
    if block_shape not in ("triangular", "rectangular"):
        raise InvariantViolation(f"unknown block shape '{block_shape}'")
    n = nH * refinement
    h = 1.0 / n
    circles = perforations.as_array()
    if len(circles) and circles[:, 2].min() <= h:
        bad = circles[:, 2].min()
        raise CircleTooSmall(f"circle radius {bad:.4g} not resolvable at h={h:.4g}"
                             " (diameter must exceed 2h)")

    # lattice nodes and triangles
    xs = np.linspace(0.0, 1.0, n + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    def nid(ix, iy):
        return iy * (n + 1) + ix

    ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ix, iy = ix.ravel(), iy.ravel()
    v00 = iy * (n + 1) + ix
    v10 = v00 + 1
    v01 = v00 + (n + 1)
    v11 = v01 + 1
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * n * n, 3), np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    # coarse block of every triangle
    cx, cy = ix // refinement, iy // refinement
    if block_shape == "rectangular":
        blk = cy * nH + cx
        block_of_tri = np.repeat(blk, 2)
        n_blocks = nH * nH
    else:
        lx, ly = ix - cx * refinement, iy - cy * refinement
        cell = cy * nH + cx
        low_blk = np.where(lx >= ly, 2 * cell, 2 * cell + 1)      # lower tri of the cell
        up_blk = np.where(lx > ly, 2 * cell, 2 * cell + 1)        # upper tri of the cell
        block_of_tri = np.empty(2 * n * n, np.int64)
        block_of_tri[0::2] = low_blk
        block_of_tri[1::2] = up_blk
        n_blocks = 2 * nH * nH

    # remove triangles with centroid inside a hole
    cent = nodes[triangles].mean(axis=1)
    removed_by = np.full(len(triangles), -1, np.int64)
    for k, (ccx, ccy, r) in enumerate(circles):
        inside = (cent[:, 0] - ccx) ** 2 + (cent[:, 1] - ccy) ** 2 < r * r
        removed_by[inside] = k
    keep = removed_by < 0
    if len(circles):
        removed_any = np.zeros(len(circles), bool)
        removed_any[removed_by[~keep]] = True

    # node classification on the coarse skeleton (pre-snap lattice indexing)
    all_ix = np.tile(np.arange(n + 1), n + 1)
    all_iy = np.repeat(np.arange(n + 1), n + 1)
    on_v = all_ix % refinement == 0
    on_h = all_iy % refinement == 0
    corner = on_v & on_h
    on_d = np.zeros(nodes.shape[0], bool)
    if block_shape == "triangular":
        on_d = (all_ix % refinement) == (all_iy % refinement)
        on_d &= ~corner
    line_dir = np.zeros((nodes.shape[0], 2))
    line_dir[on_v & ~corner] = (0.0, 1.0)
    line_dir[on_h & ~corner] = (1.0, 0.0)
    line_dir[on_d] = (1.0 / np.sqrt(2.0), 1.0 / np.sqrt(2.0))
    on_line = (on_v | on_h | on_d) & ~corner

    # Fit the hole boundaries: project rim nodes (corners of removed triangles
    # that survive) and nodes within h/2 of a circle onto the circle, sliding
    # along skeleton lines where the chain must stay intact. Sliver triangles
    # whose three projected vertices land on the circle collapse; those are
    # removed and the rim re-derived until the mesh is clean.
    snapped_to = np.full(nodes.shape[0], -1, np.int64)
    merge = np.arange(nodes.shape[0])
    if len(circles):
        d = np.hypot(nodes[:, 0, None] - circles[None, :, 0],
                     nodes[:, 1, None] - circles[None, :, 1])
        gap = np.abs(d - circles[None, :, 2])
        nearest = np.argmin(gap, axis=1)
        near = gap[np.arange(len(nodes)), nearest] < 0.5 * h
        while True:
            used_nodes = np.zeros(nodes.shape[0], bool)
            used_nodes[triangles[keep].ravel()] = True
            rim = np.zeros(nodes.shape[0], bool)
            rim[triangles[~keep].ravel()] = True
            rim &= used_nodes
            new_nodes = nodes.copy()
            snapped_to[:] = -1
            for v in np.flatnonzero(used_nodes & (rim | near)):
                k = int(nearest[v])
                ccx, ccy, r = circles[k]
                p = nodes[v]
                if corner[v]:
                    # pinned; fine only when it already sits on the circle
                    if rim[v] and abs(np.hypot(*(p - (ccx, ccy))) - r) > 1e-12 * r:
                        raise InvariantViolation(
                            f"perforation {k} reaches the pinned coarse corner "
                            f"node at {tuple(p)}")
                    continue
                target = None
                if on_line[v]:
                    # slide along the skeleton line so coarse chains stay
                    # straight; grazing circles fall back to radial (rim only)
                    dvec = line_dir[v]
                    w = p - (ccx, ccy)
                    b = np.dot(w, dvec)
                    disc = b * b - (np.dot(w, w) - r * r)
                    if disc >= 0:
                        root = np.sqrt(disc)
                        t = -b + root if abs(-b + root) <= abs(-b - root) else -b - root
                        if abs(t) <= h:
                            target = p + t * dvec
                    if target is None and not rim[v]:
                        continue
                if target is None:
                    dist = np.hypot(*(p - (ccx, ccy)))
                    if dist < _GEOM_EPS:
                        raise SnapDegeneracy(f"node coincides with center of hole {k}")
                    target = (ccx, ccy) + (r / dist) * (p - (ccx, ccy))
                new_nodes[v] = target
                snapped_to[v] = k
            # nodes projected onto the same circle point become one node
            # (happens on lattice rays through a circle center)
            merge = np.arange(nodes.shape[0])
            snapped = np.flatnonzero(snapped_to >= 0)
            if len(snapped):
                key = np.round(new_nodes[snapped] / (1e-9 * h)).astype(np.int64)
                seen = {}
                for v, kk in zip(snapped, map(tuple, key)):
                    if kk in seen:
                        merge[v] = seen[kk]
                    else:
                        seen[kk] = v
            tri_m = merge[triangles[keep]]
            squeezed = (tri_m[:, 0] == tri_m[:, 1]) | (tri_m[:, 1] == tri_m[:, 2]) \
                | (tri_m[:, 2] == tri_m[:, 0])
            p = new_nodes[tri_m]
            d1 = p[:, 1] - p[:, 0]
            d2 = p[:, 2] - p[:, 0]
            areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
            bad = (areas < _AREA_TOL_FACTOR * h * h) & ~squeezed
            collapsed = bad & (snapped_to[triangles[keep]] >= 0).all(axis=1)
            drop = squeezed | collapsed
            if not drop.any():
                if bad.any():
                    t = int(np.argmin(areas))
                    raise SnapDegeneracy(
                        f"snapping produced triangle with area {areas[t]:.3e} < 1e-10 h^2")
                nodes = new_nodes
                break
            dropped = np.flatnonzero(keep)[drop]
            removed_any[nearest[triangles[dropped][:, 0]]] = True
            keep[dropped] = False
        for k in range(len(circles)):
            if not removed_any[k] and not np.any(snapped_to == k):
                raise CircleTooSmall(
                    f"circle {k} encloses no triangle centroid and cuts no edge")
    else:
        used_nodes = np.zeros(nodes.shape[0], bool)
        used_nodes[triangles[keep].ravel()] = True

    triangles = merge[triangles[keep]]
    block_of_tri = block_of_tri[keep]
    used_nodes = np.zeros(nodes.shape[0], bool)
    used_nodes[triangles.ravel()] = True

    # drop orphan nodes, renumber
    remap_final = np.full(nodes.shape[0], -1, np.int64)
    kept_nodes = np.flatnonzero(used_nodes)
    remap_final[kept_nodes] = np.arange(len(kept_nodes))
    nodes = nodes[kept_nodes]
    triangles = remap_final[triangles]
    remap = remap_final[merge]   # lattice id -> final id, through merges

    edges, edge_markers = _build_edges(nodes, triangles)
    mesh = FineMesh(nodes, triangles, edges, edge_markers, h)
    validate_mesh(mesh, perforations)

    coarse_edges = _build_coarse_edges(mesh, block_of_tri, nH, refinement, block_shape,
                                       remap, nid)
    part = CoarsePartition(mesh, block_of_tri, n_blocks, H, block_shape, coarse_edges)
    validate_partition(part)
    return mesh, part


def _build_edges(nodes, triangles):
    """Unique sorted edges with markers derived from adjacency and position."""
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    markers = np.full(len(edges), MARK_INTERIOR, np.uint8)
    bnd = counts == 1
    on_box = np.zeros(len(edges), bool)
    for dim in (0, 1):
        for val in (0.0, 1.0):
            hit = (np.abs(nodes[edges[:, 0], dim] - val) < _GEOM_EPS) & \
                  (np.abs(nodes[edges[:, 1], dim] - val) < _GEOM_EPS)
            on_box |= hit
    markers[bnd & on_box] = MARK_DIRICHLET
    markers[bnd & ~on_box] = MARK_PERFORATION
    return edges, markers


def _build_coarse_edges(mesh, block_of_tri, nH, refinement, block_shape, remap, nid):
    """Enumerate coarse skeleton segments and their surviving fine-edge chains."""
    idx = mesh.edge_index()
    et = mesh.edge_tris()
    cent = mesh.nodes[mesh.triangles].mean(axis=1)
    segs = []   # (old lattice node pairs, normal, is_boundary)
    r = refinement
    sq2 = np.sqrt(2.0)
    for i in range(nH + 1):
        for j in range(nH):
            pairs = [(nid(i * r, j * r + t), nid(i * r, j * r + t + 1)) for t in range(r)]
            if i == 0:
                segs.append((pairs, np.array([-1.0, 0.0]), True))
            elif i == nH:
                segs.append((pairs, np.array([1.0, 0.0]), True))
            else:
                segs.append((pairs, np.array([1.0, 0.0]), False))
    for j in range(nH + 1):
        for i in range(nH):
            pairs = [(nid(i * r + t, j * r), nid(i * r + t + 1, j * r)) for t in range(r)]
            if j == 0:
                segs.append((pairs, np.array([0.0, -1.0]), True))
            elif j == nH:
                segs.append((pairs, np.array([0.0, 1.0]), True))
            else:
                segs.append((pairs, np.array([0.0, 1.0]), False))
    if block_shape == "triangular":
        for j in range(nH):
            for i in range(nH):
                pairs = [(nid(i * r + t, j * r + t), nid(i * r + t + 1, j * r + t + 1))
                         for t in range(r)]
                segs.append((pairs, np.array([1.0 / sq2, -1.0 / sq2]), False))

    coarse_edges = []
    for pairs, normal, is_bnd in segs:
        ids = []
        for a, b in pairs:
            na, nb = remap[a], remap[b]
            if na < 0 or nb < 0:
                continue
            key = (int(na), int(nb)) if na < nb else (int(nb), int(na))
            e = idx.get(key)
            if e is None:
                continue
            t0, t1 = et[e]
            if is_bnd:
                if t1 >= 0 or mesh.edge_markers[e] == MARK_PERFORATION:
                    continue
            elif t1 < 0:
                # one side eaten by a hole: this fine edge is hole rim now
                continue
            ids.append(e)
        if not ids:
            continue
        ids = np.asarray(ids, np.int64)
        plus, minus = _edge_sides(mesh, et, cent, ids, normal, block_of_tri, is_bnd)
        pts = mesh.nodes[mesh.edges[ids]]
        tang = pts[:, 1] - pts[:, 0]
        lengths = np.hypot(tang[:, 0], tang[:, 1])
        fine_normals = np.column_stack([tang[:, 1], -tang[:, 0]]) / lengths[:, None]
        flip = fine_normals @ normal < 0
        fine_normals[flip] = -fine_normals[flip]
        coarse_edges.append(CoarseEdge(ids, normal, plus, minus, is_bnd,
                                       float(lengths.sum()), fine_normals, lengths))
    return coarse_edges


def _edge_sides(mesh, et, cent, ids, normal, block_of_tri, is_bnd):
    """Identify the plus/minus blocks of a chain (normal points plus -> minus)."""
    mid = 0.5 * (mesh.nodes[mesh.edges[ids, 0]] + mesh.nodes[mesh.edges[ids, 1]])
    plus = minus = None
    for e, m in zip(ids, mid):
        for t in et[e]:
            if t < 0:
                continue
            side = np.dot(cent[t] - m, normal)
            b = int(block_of_tri[t])
            if side > 0:
                if minus is None:
                    minus = b
                elif minus != b:
                    raise InvariantViolation("inconsistent minus block along coarse edge")
            else:
                if plus is None:
                    plus = b
                elif plus != b:
                    raise InvariantViolation("inconsistent plus block along coarse edge")
    if plus is None:
        raise InvariantViolation("coarse edge chain with no plus-side triangle")
    if is_bnd:
        return plus, -1
    if minus is None:
        raise InvariantViolation("interior coarse edge with a single adjacent block")
    return plus, minus


def _node_to_tris(mesh):
    if getattr(mesh, "_n2t", None) is None:
        n2t = [[] for _ in range(mesh.n_nodes)]
        for t, tri in enumerate(mesh.triangles):
            for v in tri:
                n2t[v].append(t)
        mesh._n2t = n2t
    return mesh._n2t


def expand_block(mesh, tris, layers):
    """Grow a triangle set by `layers` rings of vertex-adjacent triangles."""
    n2t = _node_to_tris(mesh)
    cur = set(int(t) for t in tris)
    for _ in range(int(layers)):
        verts = set(int(v) for t in cur for v in mesh.triangles[t])
        nxt = set(cur)
        for v in verts:
            nxt.update(n2t[v])
        if nxt == cur:
            break
        cur = nxt
    return np.array(sorted(cur), np.int64)


def build_oversampled(partition, layers):
    """Extend every block by `layers` rings of vertex-adjacent fine triangles.

    Returns a new CoarsePartition sharing the mesh, with oversampled_tris set.
    """
    layers = int(layers)
    if layers < 0:
        raise InvariantViolation("layers must be >= 0")
    mesh = partition.mesh
    part = CoarsePartition(mesh, partition.block_of_tri, partition.n_blocks,
                           partition.H, partition.block_shape, partition.edges)
    part.oversample_layers = layers
    if layers == 0:
        return part
    part.oversampled_tris = [expand_block(mesh, tris, layers)
                             for tris in partition.block_tris]
    return part


def subdomain_boundary(mesh, tris):
    """Boundary edges of a triangle set, with outward normals.

    Returns (edge_ids, normals (k,2), nodes) where nodes are the unique
    boundary node ids in ascending order.
    """
    tris = np.asarray(tris, np.int64)
    inside = np.zeros(mesh.n_triangles, bool)
    inside[tris] = True
    et = mesh.edge_tris()
    t0, t1 = et[:, 0], et[:, 1]
    in0 = inside[t0] & (t0 >= 0)
    in1 = (t1 >= 0) & inside[np.maximum(t1, 0)]
    on_bnd = (in0 & ~in1) | (~in0 & in1)
    edge_ids = np.flatnonzero(on_bnd)
    normals = np.empty((len(edge_ids), 2))
    cent = mesh.nodes[mesh.triangles].mean(axis=1)
    for i, e in enumerate(edge_ids):
        t = t0[e] if in0[e] else t1[e]
        a, b = mesh.edges[e]
        pa, pb = mesh.nodes[a], mesh.nodes[b]
        tang = pb - pa
        nrm = np.array([tang[1], -tang[0]])
        nrm /= np.hypot(*nrm)
        if np.dot(cent[t] - 0.5 * (pa + pb), nrm) > 0:
            nrm = -nrm
        normals[i] = nrm
    nodes = np.unique(mesh.edges[edge_ids].ravel())
    return edge_ids, normals, nodes


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def validate_mesh(mesh, perforations=None):
    """Check FineMesh invariants; raise InvariantViolation on failure."""
    areas = mesh.tri_areas()
    if np.any(areas <= 0):
        raise InvariantViolation(f"non-positive triangle area (min {areas.min():.3e})")
    # conformity: rebuild edge multiplicities from the triangles
    e = np.concatenate([mesh.triangles[:, [0, 1]], mesh.triangles[:, [1, 2]],
                        mesh.triangles[:, [2, 0]]])
    e.sort(axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise InvariantViolation("non-conforming mesh: an edge is shared by > 2 triangles")
    if len(uniq) != len(mesh.edges):
        raise InvariantViolation("edge list does not match the triangulation")
    marked_interior = mesh.edge_markers == MARK_INTERIOR
    if not np.array_equal(marked_interior, counts == 2):
        raise InvariantViolation("interior markers disagree with edge adjacency counts")
    if perforations is not None and len(perforations):
        circles = perforations.as_array()
        d = np.hypot(mesh.nodes[:, 0, None] - circles[None, :, 0],
                     mesh.nodes[:, 1, None] - circles[None, :, 1])
        if np.any(d < circles[None, :, 2] * (1 - 1e-12) - 1e-14):
            raise InvariantViolation("a node lies strictly inside a perforation")
        perf_nodes = np.unique(mesh.edges[mesh.edge_markers == MARK_PERFORATION].ravel())
        if len(perf_nodes):
            gap = np.abs(d[perf_nodes] - circles[None, :, 2]).min(axis=1)
            tol = 1e-12 * circles[:, 2].max()
            if np.any(gap > tol):
                raise InvariantViolation(
                    f"perforation edge endpoint off its circle by {gap.max():.3e}")


def validate_partition(partition):
    """Check CoarsePartition invariants."""
    mesh = partition.mesh
    counts = np.bincount(partition.block_of_tri, minlength=partition.n_blocks)
    if np.any(counts == 0):
        raise InvariantViolation(f"empty coarse block {int(np.argmin(counts))}")
    if partition.block_of_tri.shape[0] != mesh.n_triangles:
        raise InvariantViolation("block map does not cover the fine triangles")
    total = mesh.tri_areas().sum()
    if abs(partition.block_areas().sum() - total) > 1e-12 * total:
        raise InvariantViolation("block areas do not sum to the domain area")
    for i, e in enumerate(partition.edges):
        if not e.is_boundary and (e.minus_block < 0 or e.plus_block < 0):
            raise InvariantViolation(f"interior coarse edge {i} lacks two adjacent blocks")


# ---------------------------------------------------------------------------
# native mesh format and Gmsh import
# ---------------------------------------------------------------------------

def write_native(path, mesh, block_of_tri=None):
    """Write the native ASCII format ($Nodes / $Triangles / $Edges)."""
    blocks = block_of_tri if block_of_tri is not None else np.zeros(mesh.n_triangles, int)
    lines = ["$Nodes", str(mesh.n_nodes)]
    for i, (x, y) in enumerate(mesh.nodes, start=1):
        lines.append(f"{i} {float(x)!r} {float(y)!r}")
    lines.append("$EndNodes")
    lines += ["$Triangles", str(mesh.n_triangles)]
    for i, ((a, b, c), blk) in enumerate(zip(mesh.triangles, blocks), start=1):
        lines.append(f"{i} {a + 1} {b + 1} {c + 1} {blk}")
    lines.append("$EndTriangles")
    lines += ["$Edges", str(len(mesh.edges))]
    for i, ((a, b), m) in enumerate(zip(mesh.edges, mesh.edge_markers), start=1):
        lines.append(f"{i} {a + 1} {b + 1} {m}")
    lines.append("$EndEdges")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def import_mesh(path):
    """Read a mesh file (native or Gmsh v2 ASCII) and validate invariants."""
    mesh, _ = read_native(path)
    return mesh


def read_native(path):
    """Parse a mesh file; returns (FineMesh, block_of_tri or None)."""
    with open(path) as f:
        raw = f.read().splitlines()
    if any(l.strip() == "$MeshFormat" for l in raw[:5]):
        mesh = _read_gmsh(raw)
        return mesh, None
    sections = {}
    lineno = 0
    i = 0
    try:
        while i < len(raw):
            line = raw[i].strip()
            lineno = i + 1
            if not line:
                i += 1
                continue
            if not line.startswith("$") or line.startswith("$End"):
                raise ParseError(f"unexpected content '{line}'", lineno)
            name = line[1:]
            count = int(raw[i + 1])
            rows = [raw[i + 2 + k].split() for k in range(count)]
            end = raw[i + 2 + count].strip()
            if end != f"$End{name}":
                raise ParseError(f"missing $End{name}", i + 3 + count)
            sections[name] = rows
            i += 3 + count
    except (IndexError, ValueError) as exc:
        raise ParseError(str(exc), lineno) from exc
    for req in ("Nodes", "Triangles", "Edges"):
        if req not in sections:
            raise ParseError(f"missing ${req} section")
    try:
        nodes = np.array([[float(r[1]), float(r[2])] for r in sections["Nodes"]])
        tris = np.array([[int(r[1]) - 1, int(r[2]) - 1, int(r[3]) - 1]
                         for r in sections["Triangles"]], np.int64)
        blocks = np.array([int(r[4]) for r in sections["Triangles"]], np.int64)
        edges = np.array([[int(r[1]) - 1, int(r[2]) - 1] for r in sections["Edges"]],
                         np.int64)
        markers = np.array([int(r[3]) for r in sections["Edges"]], np.uint8)
    except (IndexError, ValueError) as exc:
        raise ParseError(f"malformed record: {exc}") from exc
    edges_sorted = np.sort(edges, axis=1)
    order = np.lexsort((edges_sorted[:, 1], edges_sorted[:, 0]))
    lengths = np.hypot(*(nodes[edges_sorted[:, 1]] - nodes[edges_sorted[:, 0]]).T)
    h = float(np.median(lengths))
    mesh = FineMesh(nodes, tris, edges_sorted[order], markers[order], h)
    validate_mesh(mesh)
    return mesh, blocks


def _read_gmsh(raw):
    """Minimal Gmsh v2 ASCII reader (nodes, triangles, marked line elements)."""
    def section(name):
        try:
            a = raw.index(f"${name}")
            b = raw.index(f"$End{name}")
        except ValueError:
            raise ParseError(f"missing ${name} section") from None
        return raw[a + 1:b]

    nodes_raw = section("Nodes")
    count = int(nodes_raw[0])
    tag2idx, coords = {}, []
    for row in nodes_raw[1:1 + count]:
        parts = row.split()
        tag2idx[int(parts[0])] = len(coords)
        coords.append((float(parts[1]), float(parts[2])))
    elems_raw = section("Elements")
    count = int(elems_raw[0])
    tris, line_marks = [], {}
    for row in elems_raw[1:1 + count]:
        parts = [int(p) for p in row.split()]
        etype, ntags = parts[1], parts[2]
        phys = parts[3] if ntags else 0
        conn = parts[3 + ntags:]
        if etype == 2:
            tris.append([tag2idx[c] for c in conn])
        elif etype == 1:
            a, b = sorted(tag2idx[c] for c in conn)
            line_marks[(a, b)] = phys
    nodes = np.asarray(coords)
    tris = np.asarray(tris, np.int64)
    # enforce CCW
    p = nodes[tris]
    flip = ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 1, 1] - p[:, 0, 1]) * (p[:, 2, 0] - p[:, 0, 0])) < 0
    tris[flip] = tris[flip][:, [0, 2, 1]]
    edges, markers = _build_edges(nodes, tris)
    for i, (a, b) in enumerate(edges):
        m = line_marks.get((int(a), int(b)))
        if m is not None and 0 <= m <= 3:
            markers[i] = m
    lengths = np.hypot(*(nodes[edges[:, 1]] - nodes[edges[:, 0]]).T)
    mesh = FineMesh(nodes, tris, edges, markers, float(np.median(lengths)))
    validate_mesh(mesh)
    return mesh
