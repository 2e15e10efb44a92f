"""Acceptance suite: one test per criterion, each printing a pass/fail line.

The expensive fixture reproduces the study matrix (both domain presets, both
examples, standard and oversampled snapshots, 4..32 basis functions) at the
presets' default refinements; the remaining criteria run on small meshes.
Run with `pytest tests/test_acceptance.py -v -s` to see the lines live.
"""

import time
import warnings

import numpy as np
import pytest

from msstokes.analysis import NormCache, compute_errors
from msstokes.dgform import (BrokenSpace, FineOperators, StokesProblem,
                             const_field)
from msstokes.femcore import LocalStokesFactor, assemble_vector_mass
from msstokes.geometry import (PerforationSet, generate_perforated_mesh,
                               preset_perforations)
from msstokes.mssolver import solve_multiscale, solve_reference
from msstokes.offline import assemble_global_offline, block_pencil, reduce_any, \
    reduce_block
from msstokes.snapshots import (SnapshotSpace, build_oversampled_snapshots,
                                build_standard_snapshots)
from msstokes.verification import (coercivity_scan, galerkin_residuals,
                                   infsup_constant)

M_OFF = (4, 8, 16, 32)


def _report(criterion, ok, detail):
    print(f"\ncriterion {criterion}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, detail


@pytest.fixture(scope="session")
def study_matrix():
    """reports[preset][example][mode][m_off] -> ErrorReport."""
    reports = {}
    for preset in ("small_inclusions", "multi_size"):
        ps, shape, refinement = preset_perforations(preset)
        mesh, part = generate_perforated_mesh(ps, 0.1, refinement, shape)
        broken = BrokenSpace(mesh, part)
        t0 = time.time()
        snaps = {
            "standard": [build_standard_snapshots(mesh, part, b)
                         for b in range(part.n_blocks)],
            "oversampled": [build_oversampled_snapshots(mesh, part, b, 4,
                                                        restrict=False)
                            for b in range(part.n_blocks)],
        }
        print(f"\n[{preset}] snapshots built in {time.time() - t0:.0f}s")
        reports[preset] = {}
        for example in ("example1", "example2"):
            problem = getattr(StokesProblem, example)()
            ops = FineOperators(broken, problem)
            norms = NormCache(broken, ops, 4.0)
            ref = solve_reference(mesh, part, problem, 4.0, broken, ops)
            per_mode = {}
            for mode, ss in snaps.items():
                per_L = {}
                for L in M_OFF:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        bases = [reduce_any(mesh, part, s, min(L, s.dim))
                                 for s in ss]
                        space = assemble_global_offline(broken, bases)
                    sol = solve_multiscale(space, problem, 4.0, ops)
                    rep = compute_errors(sol, ref, norms)
                    rep.m_off = L
                    per_L[L] = rep
                per_mode[mode] = per_L
            reports[preset][example] = per_mode
            print(f"[{preset}/{example}] e_L2 std: "
                  + " ".join(f"{per_mode['standard'][L].e_u_l2:.2f}"
                             for L in M_OFF))
    return reports


def test_criterion_1_zero_data():
    t0 = time.time()
    ps, shape, refinement = preset_perforations("small_inclusions")
    mesh, part = generate_perforated_mesh(ps, 0.1, refinement, shape)
    zero = const_field((0.0, 0.0))
    prob = StokesProblem(zero, zero, zero, "dirichlet", "zero")
    sol = solve_reference(mesh, part, prob, 4.0)
    umax, pmax = np.abs(sol.u).max(), np.abs(sol.p).max()
    elapsed = time.time() - t0
    _report(1, umax <= 1e-12 and pmax <= 1e-12 and elapsed < 60,
            f"zero data gives |u|={umax:.1e}, |p|={pmax:.1e} in {elapsed:.1f}s")


def test_criterion_2_mass_conservation(study_matrix):
    worst = 0.0
    where = ""
    for preset, by_example in study_matrix.items():
        for example, by_mode in by_example.items():
            for mode, by_L in by_mode.items():
                for L, rep in by_L.items():
                    if rep.conservation_max > worst:
                        worst = rep.conservation_max
                        where = f"{preset}/{example}/{mode}/m_off={L}"
    _report(2, worst <= 1e-12,
            f"max block-flux residual {worst:.2e} (at {where})")


def test_criterion_3_error_decay_trend(study_matrix):
    by_L = study_matrix["small_inclusions"]["example1"]["standard"]
    l2_8, l2_16 = by_L[8].e_u_l2, by_L[16].e_u_l2
    dgs = [by_L[L].e_u_dg for L in M_OFF]
    mono = all(dgs[k + 1] <= dgs[k] + 1e-8 for k in range(3))
    ok = l2_8 < 15.0 and l2_16 < 7.0 and mono
    _report(3, ok,
            f"e_L2 at 8/16 basis = {l2_8:.2f}%/{l2_16:.2f}% "
            f"(need <15/<7); e_DG {' -> '.join(f'{d:.2f}' for d in dgs)}"
            f" nonincreasing={mono}")


def test_criterion_4_oversampling_benefit(study_matrix):
    failures = []
    for preset, by_example in study_matrix.items():
        for example, by_mode in by_example.items():
            for L in (16, 32):
                std = by_mode["standard"][L]
                os4 = by_mode["oversampled"][L]
                if os4.e_u_dg > std.e_u_dg:
                    failures.append(f"{preset}/{example}/m{L}: e_DG "
                                    f"{os4.e_u_dg:.2f} > {std.e_u_dg:.2f}")
                if os4.e_p_l2 > std.e_p_l2:
                    failures.append(f"{preset}/{example}/m{L}: e_p "
                                    f"{os4.e_p_l2:.2f} > {std.e_p_l2:.2f}")
    _report(4, not failures,
            "oversampling never worse in e_DG/e_p at 16 and 32 basis"
            if not failures else "; ".join(failures))


def test_criterion_5_galerkin_orthogonality(perforated_setup):
    mesh, part, broken, ops, problem, ref = perforated_setup
    snaps = [build_standard_snapshots(mesh, part, b)
             for b in range(part.n_blocks)]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        bases = [reduce_any(mesh, part, s, min(16, s.dim)) for s in snaps]
        space = assemble_global_offline(broken, bases)
    sol = solve_multiscale(space, problem, 4.0, ops)
    res = galerkin_residuals(sol, ref, ops, 4.0)
    _report(5, res.max() <= 1e-8,
            f"max scaled residual {res.max():.2e} over {space.dim} basis vectors")


def test_criterion_6_coercivity_scan(unit_square, perforated):
    details, ok = [], True
    for label, (mesh, part) in (("unperforated", unit_square),
                                ("perforated", perforated)):
        broken = BrokenSpace(mesh, part)
        ops = FineOperators(broken, StokesProblem.example1())
        lo4, _ = coercivity_scan(broken, ops, 4.0, n_samples=100, seed=0)
        a4, a8 = ops.a_matrix(4.0), ops.a_matrix(8.0)
        gram = ops.norm_matrix()
        rng = np.random.default_rng(0)
        grow = True
        for _ in range(100):
            v = rng.standard_normal(broken.n_dofs)
            denom = v @ (gram @ v)
            grow &= (v @ (a8 @ v)) / denom >= (v @ (a4 @ v)) / denom - 1e-13
        ok &= lo4 > 0 and grow
        details.append(f"{label}: min ratio {lo4:.3f}, doubling-monotone={grow}")
    _report(6, ok, "; ".join(details))


def test_criterion_7_infsup_floor(perforated_setup):
    mesh, part, broken, ops, problem, ref = perforated_setup
    snaps = [build_standard_snapshots(mesh, part, b)
             for b in range(part.n_blocks)]
    betas = {}
    for L in (8, 16, 32):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            bases = [reduce_any(mesh, part, s, min(L, s.dim)) for s in snaps]
            space = assemble_global_offline(broken, bases)
        betas[L] = infsup_constant(space, ops)[0]
    spread = max(betas.values()) / min(betas.values())
    ok = min(betas.values()) > 1e-3 and spread < 5.0
    _report(7, ok, "beta = " + ", ".join(f"{L}:{b:.4f}"
                                         for L, b in betas.items())
            + f"; spread x{spread:.2f}")


def test_criterion_8_local_solver_oracle():
    errs = []
    for refinement in (8, 16, 32):
        mesh, _ = generate_perforated_mesh(PerforationSet(()), 1.0, refinement,
                                           "rectangular")
        fac = LocalStokesFactor(mesh, np.arange(mesh.n_triangles))
        yb = mesh.nodes[fac.boundary_nodes, 1]
        g = np.column_stack([yb * (1 - yb), np.zeros(len(yb))])
        u, _, _ = fac.solve_columns(g[:, :, None])
        exact = np.column_stack([
            mesh.nodes[fac.node_ids, 1] * (1 - mesh.nodes[fac.node_ids, 1]),
            np.zeros(fac.n_loc)])
        loc = np.full(mesh.n_nodes, -1, np.int64)
        loc[fac.node_ids] = np.arange(fac.n_loc)
        lt = loc[mesh.triangles]
        vd = np.empty((mesh.n_triangles, 6), np.int64)
        vd[:, 0::2] = 2 * lt
        vd[:, 1::2] = 2 * lt + 1
        M = assemble_vector_mass(mesh.nodes, mesh.triangles, vd, 2 * fac.n_loc)
        d = (u[:, :, 0] - exact).reshape(-1)
        errs.append(float(np.sqrt(d @ (M @ d))))
    orders = [np.log2(errs[k] / errs[k + 1]) for k in range(2)]
    _report(8, min(orders) >= 1.9,
            f"Poiseuille L2 orders {orders[0]:.3f}, {orders[1]:.3f} (need >= 1.9)")


def test_criterion_9_eigensolver_oracle(perforated):
    mesh, part = perforated
    snap = build_standard_snapshots(mesh, part, 6)
    small = SnapshotSpace(snap.block_id, snap.mode, snap.support, snap.tris,
                          snap.node_ids, snap.columns[:, 0::2][:, :8],
                          snap.div_constants[0::2][:8])
    A, S = block_pencil(mesh, part, small)
    w = reduce_block(mesh, part, small, 8).eigenvalues
    mid, half = 0.5 * (w.min() + w.max()), 0.6 * (w.max() - w.min()) + 1.0
    ts = np.linspace(-1, 1, 9)
    dets = [np.linalg.det(A - (mid + half * t) * S) for t in ts]
    roots = mid + half * np.sort(np.roots(np.polyfit(ts, dets, 8)))
    err = np.abs(roots - w).max() / max(abs(w).max(), 1.0)
    ascending = bool(np.all(np.diff(w) >= -1e-12))
    import scipy.linalg as sla
    full = reduce_block(mesh, part, snap, snap.dim)
    angle = sla.subspace_angles(full.columns, snap.columns).max()
    ok = err < 1e-8 and ascending and angle < 1e-8
    _report(9, ok, f"char-poly deviation {err:.2e}, ascending={ascending}, "
            f"full-selection principal angle {angle:.2e}")


def test_criterion_10_study_determinism(tmp_path):
    from msstokes.cli import main
    cfg = tmp_path / "study.toml"
    cfg.write_text(f"""
preset = "custom"
circles = [[0.4268, 0.3232, 0.045]]
block_shape = "triangular"
H = 0.25
refinement = 6
example = "example1"
m_off = [4, 8]
out = "{tmp_path / 'a'}"
""")
    assert main(["study", "--config", str(cfg)]) == 0
    first = (tmp_path / "a" / "study.csv").read_bytes()
    assert main(["study", "--config", str(cfg)]) == 0
    second = (tmp_path / "a" / "study.csv").read_bytes()
    _report(10, first == second,
            f"repeated study produced byte-identical CSV ({len(first)} bytes)")
