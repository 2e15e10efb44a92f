import numpy as np
import pytest

from msstokes.errors import (DegenerateElement, DimensionMismatch,
                             NotPositiveDefinite, SingularSystem)
from msstokes.femcore import (HarmonicExtensionFactor, LocalStokesFactor,
                              LocalStokesProblem, dense_generalized_eigensolve,
                              edge_gauss, element_divergence, element_laplacian,
                              solve_local_stokes, sparse_saddle_solve,
                              tri_quadrature)
from msstokes.geometry import PerforationSet, generate_perforated_mesh

RNG = np.random.default_rng(42)


def random_triangle():
    while True:
        p = RNG.uniform(-1, 1, (3, 2))
        d1, d2 = p[1] - p[0], p[2] - p[0]
        area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
        if area > 0.05:
            return p


# -- element kernels ---------------------------------------------------------

def test_laplacian_constant_kernel():
    K = element_laplacian(np.array([[0.0, 0], [1, 0], [0, 1]]))
    assert np.abs(K.sum(axis=1)).max() < 1e-14
    w = np.linalg.eigvalsh(K)
    assert (np.abs(w) < 1e-12).sum() == 2      # exactly the two constant modes
    assert w[2] > 1e-10


def test_laplacian_quadrature_oracle():
    # brute-force integration of grad(phi_i) : grad(phi_j) at quadrature points
    for _ in range(5):
        coords = random_triangle()
        K = element_laplacian(coords)
        pts, w = tri_quadrature(coords)
        from msstokes.femcore import p1_gradients
        g, _ = p1_gradients(coords)
        brute = np.zeros((6, 6))
        for q, wq in zip(pts, w):
            for i in range(3):
                for j in range(3):
                    val = wq * (g[i] @ g[j])
                    brute[2 * i, 2 * j] += val
                    brute[2 * i + 1, 2 * j + 1] += val
        assert np.abs(K - brute).max() < 1e-14


def test_laplacian_scale_invariance():
    coords = random_triangle()
    assert np.allclose(element_laplacian(coords), element_laplacian(2 * coords),
                       rtol=0, atol=1e-13)


def test_laplacian_degenerate():
    with pytest.raises(DegenerateElement):
        element_laplacian(np.array([[0.0, 0], [1, 0], [2, 0]]))


def test_divergence_constant_field():
    r = element_divergence(random_triangle())
    v = np.tile([0.3, -0.7], 3)
    assert abs(r @ v) < 1e-14


def test_divergence_linear_field():
    r = element_divergence(np.array([[0.0, 0], [1, 0], [0, 1]]))
    coords = np.array([[0.0, 0], [1, 0], [0, 1]])
    v = np.zeros(6)
    v[0::2] = coords[:, 0]          # v = (x, 0), div = 1
    assert abs(r @ v - (-0.5)) < 1e-14


def test_divergence_theorem_oracle():
    # - int div v equals - int_bnd v.n for P1, via 2-point edge quadrature
    for _ in range(5):
        coords = random_triangle()
        r = element_divergence(coords)
        v = RNG.standard_normal(6)
        vn = 0.0
        for i in range(3):
            a, b = coords[i], coords[(i + 1) % 3]
            tang = b - a
            nrm = np.array([tang[1], -tang[0]])
            nrm /= np.hypot(*nrm)
            if np.dot(coords[(i + 2) % 3] - a, nrm) > 0:
                nrm = -nrm
            pts, w = edge_gauss(a, b)
            for q, wq in zip(pts, w):
                lam = np.hypot(*(q - a)) / np.hypot(*(b - a))
                val = (1 - lam) * v[2 * i:2 * i + 2] \
                    + lam * v[2 * ((i + 1) % 3):2 * ((i + 1) % 3) + 2]
                vn += wq * (val @ nrm)
        assert abs(r @ v + vn) < 1e-13


# -- local Stokes solves -----------------------------------------------------

def square_factor(refinement):
    mesh, _ = generate_perforated_mesh(PerforationSet(()), 1.0, refinement,
                                       "rectangular")
    tris = np.arange(mesh.n_triangles)
    return mesh, LocalStokesFactor(mesh, tris)


def test_local_stokes_zero_data():
    mesh, fac = square_factor(4)
    prob = LocalStokesProblem(mesh, fac.tris,
                              np.zeros((len(fac.boundary_nodes), 2)))
    u, p = solve_local_stokes(prob)
    assert np.abs(u.values).max() == 0.0
    assert np.abs(p).max() == 0.0
    assert prob.c == 0.0


def test_local_stokes_rigid_translation():
    mesh, fac = square_factor(6)
    g = np.tile([1.0, 0.0], (len(fac.boundary_nodes), 1))
    prob = LocalStokesProblem(mesh, fac.tris, g)
    u, p = solve_local_stokes(prob)
    assert np.abs(u.values - [1.0, 0.0]).max() < 1e-10
    assert np.abs(p).max() < 1e-9
    assert abs(prob.c) < 1e-12


def test_local_stokes_poiseuille_convergence():
    # analytic solution u = (y(1-y), 0), p = -2x + 1
    errs = []
    for refinement in (8, 16, 32):
        mesh, fac = square_factor(refinement)
        yb = mesh.nodes[fac.boundary_nodes, 1]
        g = np.column_stack([yb * (1 - yb), np.zeros(len(yb))])
        u, _, _ = fac.solve_columns(g[:, :, None])
        exact = np.column_stack([
            mesh.nodes[fac.node_ids, 1] * (1 - mesh.nodes[fac.node_ids, 1]),
            np.zeros(fac.n_loc)])
        from msstokes.femcore import assemble_vector_mass
        loc = np.full(mesh.n_nodes, -1, np.int64)
        loc[fac.node_ids] = np.arange(fac.n_loc)
        lt = loc[mesh.triangles]
        vd = np.empty((mesh.n_triangles, 6), np.int64)
        vd[:, 0::2] = 2 * lt
        vd[:, 1::2] = 2 * lt + 1
        M = assemble_vector_mass(mesh.nodes, mesh.triangles, vd, 2 * fac.n_loc)
        d = (u[:, :, 0] - exact).reshape(-1)
        errs.append(np.sqrt(d @ (M @ d)))
    orders = [np.log2(errs[k] / errs[k + 1]) for k in range(2)]
    assert min(orders) >= 1.9


def test_local_stokes_linearity():
    mesh, fac = square_factor(4)
    nb = len(fac.boundary_nodes)
    g1 = RNG.standard_normal((nb, 2))
    g2 = RNG.standard_normal((nb, 2))
    u1, _, _ = fac.solve_columns(g1[:, :, None])
    u2, _, _ = fac.solve_columns(g2[:, :, None])
    u12, _, _ = fac.solve_columns((g1 + g2)[:, :, None])
    assert np.abs(u12 - u1 - u2).max() < 1e-10


def test_local_stokes_gauge_and_compatibility():
    mesh, fac = square_factor(6)
    nb = len(fac.boundary_nodes)
    g = RNG.standard_normal((nb, 2))
    prob = LocalStokesProblem(mesh, fac.tris, g)
    _, p_tri = solve_local_stokes(prob)
    areas = mesh.tri_areas()
    assert abs(p_tri @ areas) < 1e-12 * np.abs(p_tri).max()
    # c |D| equals the boundary integral of g.n
    flux = fac.compatibility_constants(g[:, :, None])[0] * fac.area
    assert abs(prob.c * fac.area - flux) < 1e-12 * max(abs(flux), 1)
    # mean divergence of the solution matches (P1-exact)
    u, _, c = fac.solve_columns(g[:, :, None])
    from msstokes.femcore import all_gradients
    grads, tarea = all_gradients(mesh.nodes, mesh.triangles)
    loc = np.full(mesh.n_nodes, -1, np.int64)
    loc[fac.node_ids] = np.arange(fac.n_loc)
    vals = u[:, :, 0][loc[mesh.triangles]]
    div = np.einsum("tid,tid->t", grads, vals)
    assert abs(div @ tarea - flux) < 1e-10 * max(abs(flux), 1)


def test_harmonic_extension_matches_boundary_and_compat():
    mesh, _ = generate_perforated_mesh(PerforationSet(()), 1.0, 6, "rectangular")
    fac = HarmonicExtensionFactor(mesh, np.arange(mesh.n_triangles))
    nb = len(fac.boundary_nodes)
    g = RNG.standard_normal((nb, 2))
    u, p, c = fac.solve_columns(g[:, :, None])
    loc = np.full(mesh.n_nodes, -1, np.int64)
    loc[fac.node_ids] = np.arange(fac.n_loc)
    assert np.abs(u[loc[fac.boundary_nodes], :, 0] - g).max() < 1e-14
    assert np.abs(p).max() == 0.0
    g0 = np.tile([0.0, 1.0], (nb, 1))
    u0, _, c0 = fac.solve_columns(g0[:, :, None])
    assert np.abs(u0[:, 0, 0]).max() < 1e-12
    assert np.abs(u0[:, 1, 0] - 1).max() < 1e-12
    assert abs(c0[0]) < 1e-12


# -- linear algebra contracts ------------------------------------------------

def test_local_stokes_disconnected_subdomain():
    mesh, _ = generate_perforated_mesh(PerforationSet(()), 0.25, 4,
                                       "rectangular")
    _, part = generate_perforated_mesh(PerforationSet(()), 0.25, 4,
                                       "rectangular")
    tris = np.concatenate([part.block_tris[0], part.block_tris[10]])
    with pytest.raises(SingularSystem):
        LocalStokesFactor(mesh, tris)


def test_saddle_solve_tiny_oracle():
    x = sparse_saddle_solve(np.eye(2), np.array([[1.0, 1.0]]),
                            np.array([1.0, 0.0, 0.0]))
    kkt = np.array([[1, 0, 1], [0, 1, 1], [1, 1, 0]], float)
    assert np.abs(x - np.linalg.solve(kkt, [1, 0, 0])).max() < 1e-12


def test_saddle_solve_zero_rhs():
    x = sparse_saddle_solve(np.eye(3), np.array([[1.0, 2.0, 3.0]]), np.zeros(4))
    assert np.all(x == 0)


def test_saddle_solve_dense_oracle():
    n, m = 50, 12
    X = RNG.standard_normal((n, n))
    A = X @ X.T + n * np.eye(n)
    B = RNG.standard_normal((m, n))
    rhs = RNG.standard_normal(n + m)
    x = sparse_saddle_solve(A, B, rhs)
    kkt = np.block([[A, B.T], [B, np.zeros((m, m))]])
    assert np.abs(x - np.linalg.solve(kkt, rhs)).max() < 1e-10


def test_saddle_solve_singular_diagnosis():
    B = np.array([[1.0, 1.0], [1.0, 1.0]])     # rank-deficient constraints
    with pytest.raises(SingularSystem) as err:
        sparse_saddle_solve(np.eye(2), B, np.ones(4))
    assert "rank" in str(err.value)


def test_saddle_solve_with_gauge():
    A = np.diag([2.0, 3.0])
    B = np.array([[1.0, -1.0]])
    g = np.array([1.0])
    x = sparse_saddle_solve(A, B, np.array([1.0, 2.0, 0.5, 0.0]), gauge=g)
    kkt = np.array([[2, 0, 1, 0], [0, 3, -1, 0], [1, -1, 0, 1], [0, 0, 1, 0]],
                   float)
    assert np.abs(x - np.linalg.solve(kkt, [1, 2, 0.5, 0])).max() < 1e-12


def test_eigensolve_diagonal():
    w, v = dense_generalized_eigensolve(np.diag([2.0, 1.0]), np.eye(2))
    assert np.allclose(w, [1.0, 2.0])


def test_eigensolve_identity_pencil():
    X = RNG.standard_normal((5, 5))
    S = X @ X.T + 5 * np.eye(5)
    w, _ = dense_generalized_eigensolve(S, S)
    assert np.abs(w - 1).max() < 1e-12


def test_eigensolve_char_poly_oracle():
    n = 8
    X = RNG.standard_normal((n, n))
    A = X + X.T
    Y = RNG.standard_normal((n, n))
    S = Y @ Y.T + n * np.eye(n)
    w, v = dense_generalized_eigensolve(A, S)
    assert np.all(np.diff(w) >= -1e-12)
    assert np.abs(v.T @ S @ v - np.eye(n)).max() < 1e-9
    # roots of det(A - t S) via exact polynomial interpolation
    ts = np.linspace(w.min() - 1, w.max() + 1, n + 1)
    dets = [np.linalg.det(A - t * S) for t in ts]
    roots = np.sort(np.roots(np.polyfit(ts, dets, n)))
    assert np.abs(roots - w).max() < 1e-8
    res = np.abs(A @ v - S @ v * w).max(axis=0)
    scale = np.linalg.norm(A) + np.abs(w) * np.linalg.norm(S)
    assert np.all(res <= 1e-9 * scale)


def test_eigensolve_not_positive_definite():
    with pytest.raises(NotPositiveDefinite):
        dense_generalized_eigensolve(np.eye(2), np.diag([1.0, -1.0]))
    with pytest.raises(NotPositiveDefinite):
        dense_generalized_eigensolve(np.eye(2), np.diag([1.0, 1e-16]))


def test_eigensolve_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        dense_generalized_eigensolve(np.eye(2), np.eye(3))
