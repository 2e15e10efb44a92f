"""Error norms, conservation audits, and the convergence-study driver."""

from __future__ import annotations

import io
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .dgform import BrokenSpace, FineOperators, StokesProblem
from .errors import MeshMismatch
from .femcore import assemble_vector_mass
from .geometry import subdomain_boundary
from .mssolver import solve_multiscale, solve_reference
from .offline import assemble_global_offline, reduce_any
from .snapshots import (build_oversampled_snapshots, build_randomized_snapshots,
                        build_standard_snapshots)

CSV_HEADER = "m_off,dof,e_u_l2,e_u_dg,e_u_h1,e_p_l2,conservation_max"


@dataclass
class ErrorReport:
    """Relative errors in percent plus the conservation audit maximum."""

    m_off: int
    dof: int
    e_u_l2: float
    e_u_dg: float
    e_u_h1: float
    e_p_l2: float
    conservation_max: float
    config: dict = field(default_factory=dict)

    def csv_row(self):
        nums = [self.e_u_l2, self.e_u_dg, self.e_u_h1, self.e_p_l2,
                self.conservation_max]
        return "%d,%d,%s" % (self.m_off, self.dof,
                             ",".join("%.12g" % v for v in nums))


class NormCache:
    """Mass/energy Gram matrices of one broken space, built once."""

    def __init__(self, broken, operators, gamma):
        self.broken = broken
        self.mass = assemble_vector_mass(broken.mesh.nodes, broken.mesh.triangles,
                                         broken.tri_vdof(), broken.n_dofs)
        self.h1 = (operators.volume + self.mass).tocsr()
        self.a_dg = operators.a_matrix(gamma)

    def l2(self, u):
        return float(np.sqrt(max(u @ (self.mass @ u), 0.0)))

    def h1_broken(self, u):
        return float(np.sqrt(max(u @ (self.h1 @ u), 0.0)))

    def dg_energy(self, u):
        return float(u @ (self.a_dg @ u))


def compute_errors(solution, reference, norms=None, operators=None, gamma=None):
    """ErrorReport of a multiscale solution against the reference.

    Velocity errors are relative L2, broken H1, and DG-energy norms of the
    difference of the downscaled fields; the pressure error compares element
    values against the cell-averaged reference pressure (already element-wise
    constant here).
    """
    broken = reference.broken
    if solution.broken is not broken and (
            solution.broken.mesh is not broken.mesh
            or solution.broken.partition is not broken.partition):
        raise MeshMismatch("solutions live on different meshes/partitions")
    if norms is None:
        gamma = gamma if gamma is not None else reference.meta.get("gamma", 4.0)
        ops = operators or FineOperators(broken, StokesProblem.example1())
        norms = NormCache(broken, ops, gamma)
    d = reference.u - solution.u
    ref_l2 = norms.l2(reference.u)
    ref_h1 = norms.h1_broken(reference.u)
    ref_dg = norms.dg_energy(reference.u)
    e_l2 = 100.0 * norms.l2(d) / ref_l2
    e_h1 = 100.0 * norms.h1_broken(d) / ref_h1
    e_dg = 100.0 * np.sqrt(max(norms.dg_energy(d), 0.0) / ref_dg)
    part = broken.partition
    w = part.block_areas()
    p_ref = reference.p
    dp = p_ref - solution.p
    denom = np.sqrt(max((p_ref ** 2) @ w, 1e-300))
    e_p = 100.0 * np.sqrt(max((dp ** 2) @ w, 0.0)) / denom
    flux, inflow = audit_conservation(solution, part)
    cons = float(np.abs(flux).max())
    dof = (solution.space.dim if solution.space.P is not None else broken.n_dofs)
    dof += part.n_blocks + part.n_interior_edges
    m_off = int(np.max(solution.space.block_cols)) if solution.space.P is not None else 0
    return ErrorReport(m_off, int(dof), e_l2, e_dg, e_h1, e_p, cons)


def audit_conservation(solution, partition):
    """Per-block boundary flux of the downscaled velocity, by edge quadrature.

    Returns (flux, dirichlet_inflow) arrays over blocks. The flux integrates
    u.n over the whole block boundary with outward normals (hole arcs carry
    zero velocity); the element constraint rows force it to vanish, so its
    magnitude is the conservation residual. dirichlet_inflow reports the part
    of the flux crossing the outer boundary for the balance statement.
    """
    mesh = partition.mesh
    broken = solution.broken
    flux = np.zeros(partition.n_blocks)
    inflow = np.zeros(partition.n_blocks)
    outer = np.zeros(len(mesh.edges), bool)
    for e in partition.edges:
        if e.is_boundary:
            outer[e.fine_edges] = True
    for b, tris in enumerate(partition.block_tris):
        bedges, normals, _ = subdomain_boundary(mesh, tris)
        vals = broken.block_values(solution.u, b)
        pos = np.searchsorted(broken.block_nodes[b], mesh.edges[bedges])
        va, vb = vals[pos[:, 0]], vals[pos[:, 1]]
        pts = mesh.nodes[mesh.edges[bedges]]
        lens = np.hypot(*(pts[:, 1] - pts[:, 0]).T)
        contrib = 0.5 * lens * ((va + vb) * normals).sum(axis=1)
        flux[b] = contrib.sum()
        inflow[b] = contrib[outer[bedges]].sum()
    return flux, inflow


def run_study(mesh, partition, problem, gamma=4.0, m_off=(4, 8, 16, 32),
              layers=4, pod_tol=1e-10, seed=0, snapshot_modes=("standard",
                                                               "oversampled"),
              randomized_count=None, progress=None):
    """Error table over basis counts and snapshot modes.

    The reference is solved once; snapshots are built once per mode and the
    per-block eigendecompositions are reused across basis counts, so rows at
    different m_off use nested offline spaces. Returns a list of (mode,
    ErrorReport) in deterministic order.
    """
    broken = BrokenSpace(mesh, partition)
    ops = FineOperators(broken, problem)
    norms = NormCache(broken, ops, gamma)
    log = progress or (lambda msg: None)
    t0 = time.time()
    reference = solve_reference(mesh, partition, problem, gamma, broken, ops)
    log(f"reference solved: dims {reference.meta['dims']} "
        f"({time.time() - t0:.1f}s)")
    rows = []
    for mode in snapshot_modes:
        t0 = time.time()
        snaps = build_snapshots(mesh, partition, mode, layers, pod_tol, seed,
                                max(m_off), randomized_count)
        log(f"{mode} snapshots built ({time.time() - t0:.1f}s)")
        for L in m_off:
            t0 = time.time()
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                bases = [reduce_any(mesh, partition, s, min(int(L), s.dim))
                         for s in snaps]
                space = assemble_global_offline(broken, bases)
            sol = solve_multiscale(space, problem, gamma, ops)
            rep = compute_errors(sol, reference, norms)
            rep.m_off = int(L)
            rep.config = {"mode": mode, "gamma": gamma, "layers": layers,
                          "pod_tol": pod_tol, "seed": seed,
                          "edge_rank_warn": space.meta.get("edge_rank_warn", [])}
            rows.append((mode, rep))
            log(f"  m_off={L}: e_L2={rep.e_u_l2:.2f}% e_DG={rep.e_u_dg:.2f}% "
                f"e_p={rep.e_p_l2:.2f}% cons={rep.conservation_max:.2e} "
                f"({time.time() - t0:.1f}s)")
    return rows, reference


def build_snapshots(mesh, partition, mode, layers, pod_tol, seed, max_m_off,
                    randomized_count=None, workers=1):
    """Per-block snapshot spaces for one mode.

    "oversampled" uses the enlarged-domain spectral route (unrestricted);
    "oversampled_restricted" restricts the snapshots before reduction.
    Blocks are independent; `workers` > 1 builds them from a thread pool
    (results are collected in block order, so the output is deterministic).
    """
    if mode == "standard":
        build = lambda b: build_standard_snapshots(mesh, partition, b)
    elif mode in ("oversampled", "oversampled_unrestricted"):
        build = lambda b: build_oversampled_snapshots(
            mesh, partition, b, layers, restrict=False, pod_tol=pod_tol)
    elif mode == "oversampled_restricted":
        build = lambda b: build_oversampled_snapshots(
            mesh, partition, b, layers, restrict=True, pod_tol=pod_tol)
    elif mode == "randomized":
        count = randomized_count or (int(max_m_off) + 4)
        build = lambda b: build_randomized_snapshots(
            mesh, partition, b, layers, count, seed)
    else:
        raise ValueError(f"unknown snapshot mode '{mode}'")
    blocks = range(partition.n_blocks)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(build, blocks))
    return [build(b) for b in blocks]


def study_csv(rows):
    """Render study rows as the CSV table (deterministic bytes)."""
    out = io.StringIO()
    out.write(CSV_HEADER + "\n")
    for mode, rep in rows:
        out.write(rep.csv_row() + "\n")
    return out.getvalue()


def study_manifest(rows, config_echo, config_hash, timings=None):
    """JSON manifest with the configuration echo and per-row metadata."""
    payload = {
        "config": config_echo,
        "config_hash": config_hash,
        "rows": [
            {"mode": mode, "m_off": rep.m_off, "dof": rep.dof,
             "e_u_l2": rep.e_u_l2, "e_u_dg": rep.e_u_dg, "e_u_h1": rep.e_u_h1,
             "e_p_l2": rep.e_p_l2, "conservation_max": rep.conservation_max,
             "edge_rank_warn": rep.config.get("edge_rank_warn", [])}
            for mode, rep in rows
        ],
    }
    if timings:
        payload["timings"] = timings
    return json.dumps(payload, indent=2, sort_keys=True)
