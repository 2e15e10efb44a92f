import numpy as np
import pytest

from msstokes.errors import CircleTooSmall, InvariantViolation, ParseError
from msstokes.geometry import (FineMesh, MARK_DIRICHLET, MARK_PERFORATION,
                               PerforationSet, build_oversampled, expand_block,
                               generate_perforated_mesh, import_mesh,
                               preset_perforations, read_native, validate_mesh,
                               write_native)


def test_unperforated_counts():
    mesh, part = generate_perforated_mesh(PerforationSet(()), 0.5, 2, "rectangular")
    assert part.n_blocks == 4
    assert mesh.n_triangles == 32
    assert (mesh.edge_markers == MARK_PERFORATION).sum() == 0


def test_single_hole_removal_oracle():
    # brute-force point-in-circle over the background grid: every triangle
    # with centroid inside the circle is removed; removed triangles with
    # centroid outside are collapse slivers whose vertices all hug the circle
    cx, cy, r = 0.5, 0.5, 0.1
    mesh, part = generate_perforated_mesh(PerforationSet(((cx, cy, r),)),
                                          0.1, 8, "rectangular")
    assert (mesh.edge_markers == MARK_PERFORATION).sum() > 0
    n, h = 80, 1.0 / 80
    xs = np.linspace(0, 1, n + 1)
    cents = []
    for iy in range(n):
        for ix in range(n):
            q = [(xs[ix], xs[iy]), (xs[ix + 1], xs[iy]),
                 (xs[ix + 1], xs[iy + 1]), (xs[ix], xs[iy + 1])]
            cents.append(np.mean([q[0], q[1], q[2]], axis=0))
            cents.append(np.mean([q[0], q[2], q[3]], axis=0))
    cents = np.asarray(cents)
    inside = (cents[:, 0] - cx) ** 2 + (cents[:, 1] - cy) ** 2 < r * r
    # surviving centroids stay out of the hole (snapped triangles hug it)
    got = mesh.nodes[mesh.triangles].mean(axis=1)
    dist = np.hypot(got[:, 0] - cx, got[:, 1] - cy)
    assert dist.min() > r - 0.5 * h
    # count: all inside-centroid triangles removed; extra removals are slivers
    n_removed = 2 * n * n - mesh.n_triangles
    assert n_removed >= inside.sum()
    assert n_removed - inside.sum() <= 12
    # perforation endpoints sit on the circle
    perf_nodes = np.unique(mesh.edges[mesh.edge_markers == MARK_PERFORATION])
    d = np.hypot(mesh.nodes[perf_nodes, 0] - cx, mesh.nodes[perf_nodes, 1] - cy)
    assert np.abs(d - r).max() <= 1e-12 * r


def test_circle_too_small():
    with pytest.raises(CircleTooSmall):
        generate_perforated_mesh(PerforationSet(((0.52, 0.52, 0.01),)),
                                 0.5, 4, "rectangular")


def test_perforation_set_invariants():
    with pytest.raises(InvariantViolation):
        PerforationSet(((0.05, 0.5, 0.1),))          # touches the boundary
    with pytest.raises(InvariantViolation):
        PerforationSet(((0.4, 0.4, 0.1), (0.5, 0.4, 0.05)))   # overlap
    with pytest.raises(InvariantViolation):
        PerforationSet(((0.5, 0.5, -0.1),))


def test_partition_area_sum(perforated):
    mesh, part = perforated
    total = mesh.tri_areas().sum()
    assert abs(part.block_areas().sum() - total) <= 1e-12 * total


def test_generation_deterministic():
    ps = PerforationSet(TESTC)
    a = generate_perforated_mesh(ps, 0.25, 8, "triangular")
    b = generate_perforated_mesh(ps, 0.25, 8, "triangular")
    assert np.array_equal(a[0].nodes, b[0].nodes)
    assert np.array_equal(a[0].triangles, b[0].triangles)
    assert np.array_equal(a[0].edges, b[0].edges)


TESTC = ((0.4268, 0.3232, 0.045), (0.6768, 0.8232, 0.045))


def test_oversampling_zero_layers(perforated):
    mesh, part = perforated
    over = build_oversampled(part, 0)
    for a, b in zip(over.oversampled_tris, part.block_tris):
        assert np.array_equal(a, b)


def test_oversampling_adjacency_oracle(unit_square):
    mesh, part = unit_square
    over = build_oversampled(part, 1)
    # brute force: triangles sharing a vertex with the block
    for b in (0, 3):
        nodes = set(mesh.triangles[part.block_tris[b]].ravel())
        expect = sorted(t for t in range(mesh.n_triangles)
                        if nodes & set(mesh.triangles[t]))
        assert np.array_equal(over.oversampled_tris[b], expect)
        assert set(part.block_tris[b]) <= set(over.oversampled_tris[b])


def test_oversampling_four_layers(perforated):
    mesh, part = perforated
    over = build_oversampled(part, 4)
    grown = [len(o) > len(k) for o, k in zip(over.oversampled_tris, part.block_tris)]
    assert all(grown)
    one = expand_block(mesh, part.block_tris[0], 1)
    four = expand_block(mesh, part.block_tris[0], 4)
    assert set(one) < set(four)


def test_native_roundtrip(tmp_path, perforated):
    mesh, part = perforated
    path = tmp_path / "mesh.msh"
    write_native(path, mesh, part.block_of_tri)
    back, blocks = read_native(path)
    assert np.array_equal(back.nodes, mesh.nodes)
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.array_equal(back.edges, mesh.edges)
    assert np.array_equal(back.edge_markers, mesh.edge_markers)
    assert np.array_equal(blocks, part.block_of_tri)


def test_import_two_triangle_square(tmp_path):
    path = tmp_path / "square.msh"
    path.write_text("\n".join([
        "$Nodes", "4", "1 0.0 0.0", "2 1.0 0.0", "3 1.0 1.0", "4 0.0 1.0",
        "$EndNodes",
        "$Triangles", "2", "1 1 2 3 0", "2 1 3 4 0", "$EndTriangles",
        "$Edges", "5", "1 1 2 1", "2 2 3 1", "3 3 4 1", "4 4 1 1", "5 1 3 0",
        "$EndEdges", ""]))
    mesh = import_mesh(path)
    assert mesh.n_nodes == 4
    assert mesh.n_triangles == 2
    assert (mesh.edge_markers != 0).sum() == 4


def test_import_duplicate_triangle_rejected(tmp_path):
    path = tmp_path / "bad.msh"
    path.write_text("\n".join([
        "$Nodes", "4", "1 0.0 0.0", "2 1.0 0.0", "3 1.0 1.0", "4 0.0 1.0",
        "$EndNodes",
        "$Triangles", "3", "1 1 2 3 0", "2 1 3 4 0", "3 1 2 3 0",
        "$EndTriangles",
        "$Edges", "5", "1 1 2 1", "2 2 3 1", "3 3 4 1", "4 4 1 1", "5 1 3 0",
        "$EndEdges", ""]))
    with pytest.raises(InvariantViolation):
        import_mesh(path)


def test_import_parse_error(tmp_path):
    path = tmp_path / "broken.msh"
    path.write_text("$Nodes\n2\n1 0.0\n")
    with pytest.raises(ParseError):
        import_mesh(path)


def test_gmsh_import(tmp_path):
    path = tmp_path / "square.gmsh"
    path.write_text("\n".join([
        "$MeshFormat", "2.2 0 8", "$EndMeshFormat",
        "$Nodes", "4", "1 0.0 0.0 0", "2 1.0 0.0 0", "3 1.0 1.0 0",
        "4 0.0 1.0 0", "$EndNodes",
        "$Elements", "6",
        "1 2 1 0 1 2 3", "2 2 1 0 1 3 4",
        "3 1 1 1 1 2", "4 1 1 1 2 3", "5 1 1 1 3 4", "6 1 1 1 4 1",
        "$EndElements", ""]))
    mesh = import_mesh(path)
    assert mesh.n_triangles == 2
    assert (mesh.edge_markers == MARK_DIRICHLET).sum() == 4


def test_preset_small_inclusions_dimension():
    ps, shape, refinement = preset_perforations("small_inclusions")
    assert shape == "triangular"
    mesh, part = generate_perforated_mesh(ps, 0.1, refinement, shape)
    perf = mesh.node_on_perforation()
    ndofs = sum(2 * int((~perf[np.unique(mesh.triangles[t].ravel())]).sum())
                for t in part.block_tris)
    system = ndofs + part.n_blocks + part.n_edges + 1
    # fine-system size lands in the expected order of magnitude
    assert 4e4 < system < 1.2e5


def test_preset_multi_size_dimension():
    ps, shape, refinement = preset_perforations("multi_size")
    assert shape == "rectangular"
    mesh, part = generate_perforated_mesh(ps, 0.1, refinement, shape)
    perf = mesh.node_on_perforation()
    ndofs = sum(2 * int((~perf[np.unique(mesh.triangles[t].ravel())]).sum())
                for t in part.block_tris)
    assert 5e4 < ndofs + part.n_blocks + part.n_edges + 1 < 1.6e5


def test_hole_rim_at_pinned_corner_rejected():
    # hole rim reaching a coarse corner node that is off the circle cannot be
    # fitted (corners never move); the generator refuses loudly
    with pytest.raises(InvariantViolation, match="corner"):
        generate_perforated_mesh(PerforationSet(((0.35, 0.3, 0.045),)),
                                 0.1, 4, "rectangular")


def test_validate_rejects_inverted():
    nodes = np.array([[0.0, 0], [1.0, 0], [0.0, 1]])
    tris = np.array([[0, 2, 1]])
    edges = np.array([[0, 1], [0, 2], [1, 2]])
    with pytest.raises(InvariantViolation):
        validate_mesh(FineMesh(nodes, tris, edges, np.array([1, 1, 1]), 1.0))
