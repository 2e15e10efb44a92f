"""Command-line driver: mesh / solve / study / report.

Stages write caches keyed by the configuration hash so reruns skip finished
work; every run is reproducible from the config file and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, cache
from .config import RunConfig
from .dgform import BlockSpace, BrokenSpace, FineOperators
from .errors import (ConfigError, MissingPrerequisite, MsStokesError,
                     SingularSystem)
from .geometry import generate_perforated_mesh, write_native
from .mssolver import HybridSolution, solve_multiscale, solve_reference
from .offline import assemble_global_offline, reduce_any
from .vtkio import write_vtk

STAGES = ("reference", "snapshots", "offline", "multiscale", "errors", "all")


def build_parser():
    p = argparse.ArgumentParser(prog="msstokes",
                                description="Multiscale DG Stokes on perforated domains")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("mesh", "generate the mesh and write it out"),
                        ("solve", "run pipeline stages"),
                        ("study", "error table over basis counts and modes"),
                        ("report", "render a finished study directory")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="TOML configuration file")
        sp.add_argument("--out", help="output directory (default from config)")
        if name in ("solve", "study"):
            sp.add_argument("--gamma", type=float)
            sp.add_argument("--layers", type=int)
            sp.add_argument("--seed", type=int)
            sp.add_argument("--workers", type=int)
            sp.add_argument("--m-off", type=int, dest="m_off")
        if name == "solve":
            sp.add_argument("--stage", choices=STAGES, default="all")
    return p


def load_config(args):
    overrides = {}
    for key in ("gamma", "layers", "seed", "workers", "out"):
        val = getattr(args, key, None)
        if val is not None:
            overrides[key] = val
    if getattr(args, "m_off", None) is not None:
        overrides["m_off"] = [args.m_off]
    if args.config:
        return RunConfig.from_toml(args.config, overrides)
    return RunConfig(**overrides)


def _build_geometry(cfg):
    ps, shape, refinement = cfg.geometry()
    return generate_perforated_mesh(ps, cfg.H, refinement, shape)


def cmd_mesh(cfg, args):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    mesh, part = _build_geometry(cfg)
    write_native(out / "mesh.msh", mesh, part.block_of_tri)
    broken = BrokenSpace(mesh, part)
    write_vtk(out / "mesh.vtk", broken, title="mesh preview")
    print(f"mesh: {mesh.n_nodes} nodes, {mesh.n_triangles} triangles, "
          f"{part.n_blocks} blocks, {part.n_edges} coarse edges "
          f"({time.time() - t0:.1f}s) -> {out / 'mesh.msh'}")
    return 0


def _solution_from_cache(data, space):
    sol = HybridSolution(space, data["coeffs"], data["u"], data["p"],
                         data["p_hat"])
    return sol


def cmd_solve(cfg, args):
    stage = args.stage
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    cdir = cache.cache_dir(cfg.out)
    key = cfg.config_hash()
    mesh, part = _build_geometry(cfg)
    broken = BrokenSpace(mesh, part)
    problem = cfg.problem()
    ops = None

    def operators():
        nonlocal ops
        if ops is None:
            ops = FineOperators(broken, problem)
        return ops

    mesh_hash = mesh.content_hash()
    snap_key = cache.snapshot_key(mesh_hash, cfg.snapshot_mode, cfg.layers,
                                  cfg.pod_tol, cfg.seed,
                                  cfg.randomized_count or max(cfg.m_off) + 4)
    ref_path = cdir / f"reference_{mesh_hash}_{problem.label}_g{cfg.gamma:g}.npz"
    snap_path = cdir / f"{snap_key}.npz"
    off_path = cdir / f"offline_{snap_key}.npz"
    ms_path = cdir / f"multiscale_{key}_m{max(cfg.m_off)}.npz"

    def run_reference():
        t0 = time.time()
        ref = solve_reference(mesh, part, problem, cfg.gamma, broken, operators())
        cache.save_solution(ref_path, ref)
        print(f"reference: dims {ref.meta['dims']}, constraint residual "
              f"{ref.meta['constraint_max']:.2e} ({time.time() - t0:.1f}s)")
        return ref

    def run_snapshots():
        t0 = time.time()
        snaps = analysis.build_snapshots(
            mesh, part, cfg.snapshot_mode, cfg.layers, cfg.pod_tol, cfg.seed,
            max(cfg.m_off), cfg.randomized_count or None, cfg.workers)
        cache.save_snapshots(snap_path, snaps)
        dims = [s.dim for s in snaps]
        print(f"snapshots[{cfg.snapshot_mode}]: {len(snaps)} blocks, "
              f"{min(dims)}-{max(dims)} columns ({time.time() - t0:.1f}s)")
        return snaps

    def run_offline(snaps):
        t0 = time.time()
        arrays = {}
        L = min(max(cfg.m_off), min(s.dim for s in snaps))
        bases = [reduce_any(mesh, part, s, min(max(cfg.m_off), s.dim))
                 for s in snaps]
        for s in snaps:
            w, v = s.meta["pencil_eig"]
            arrays[f"b{s.block_id:05d}_w"] = w
            arrays[f"b{s.block_id:05d}_v"] = v
        np.savez_compressed(off_path, **arrays)
        print(f"offline: eigendecompositions for {len(snaps)} blocks, "
              f"L <= {L} ({time.time() - t0:.1f}s)")
        return bases

    def run_multiscale(bases):
        t0 = time.time()
        import warnings
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            space = assemble_global_offline(broken, bases)
        sol = solve_multiscale(space, problem, cfg.gamma, operators())
        cache.save_solution(ms_path, sol)
        write_vtk(out / "multiscale.vtk", broken, sol.u, sol.p,
                  title="multiscale solution")
        with open(out / "solve_report.json", "w") as f:
            json.dump({"dims": sol.meta["dims"], "gamma": cfg.gamma,
                       "constraint_max": sol.meta["constraint_max"],
                       "config_hash": key}, f, indent=2, sort_keys=True)
        print(f"multiscale: dim {space.dim}, constraint residual "
              f"{sol.meta['constraint_max']:.2e} ({time.time() - t0:.1f}s)")
        return sol, space

    if stage == "all":
        ref = run_reference()
        snaps = run_snapshots()
        bases = run_offline(snaps)
        sol, space = run_multiscale(bases)
        rep = analysis.compute_errors(sol, ref, operators=operators(),
                                      gamma=cfg.gamma)
        print(f"errors: m_off={rep.m_off} dof={rep.dof} e_L2={rep.e_u_l2:.1f}% "
              f"e_DG={rep.e_u_dg:.1f}% e_H1={rep.e_u_h1:.1f}% "
              f"e_p={rep.e_p_l2:.1f}% conservation={rep.conservation_max:.2e}")
        return 0
    if stage == "reference":
        run_reference()
        return 0
    if stage == "snapshots":
        run_snapshots()
        return 0
    if stage == "offline":
        snaps = cache.load_snapshots(snap_path, part.n_blocks)
        if snaps is None:
            raise MissingPrerequisite(f"snapshot cache missing: {snap_path}")
        run_offline(snaps)
        return 0
    if stage == "multiscale":
        snaps = cache.load_snapshots(snap_path, part.n_blocks)
        if snaps is None or not off_path.exists():
            raise MissingPrerequisite("snapshot/offline caches missing; "
                                      "run --stage snapshots and offline first")
        data = np.load(off_path)
        for s in snaps:
            s.meta["pencil_eig"] = (data[f"b{s.block_id:05d}_w"],
                                    data[f"b{s.block_id:05d}_v"])
        bases = [reduce_any(mesh, part, s, min(max(cfg.m_off), s.dim))
                 for s in snaps]
        run_multiscale(bases)
        return 0
    if stage == "errors":
        ref_data = cache.load_solution(ref_path)
        ms_data = cache.load_solution(ms_path)
        if ref_data is None or ms_data is None:
            raise MissingPrerequisite("reference/multiscale caches missing")
        ident = BlockSpace.identity(broken)
        ref = _solution_from_cache(ref_data, ident)
        sol = _solution_from_cache(ms_data, ident)
        rep = analysis.compute_errors(sol, ref, operators=operators(),
                                      gamma=cfg.gamma)
        print(f"errors: dof={rep.dof} e_L2={rep.e_u_l2:.1f}% "
              f"e_DG={rep.e_u_dg:.1f}% e_H1={rep.e_u_h1:.1f}% "
              f"e_p={rep.e_p_l2:.1f}% conservation={rep.conservation_max:.2e}")
        return 0
    raise ConfigError(f"unknown stage '{stage}'")


def cmd_study(cfg, args):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    mesh, part = _build_geometry(cfg)
    problem = cfg.problem()
    timings = {}
    t0 = time.time()
    rows, _ = analysis.run_study(
        mesh, part, problem, cfg.gamma, tuple(cfg.m_off), cfg.layers,
        cfg.pod_tol, cfg.seed, ("standard", "oversampled"),
        cfg.randomized_count or None, progress=lambda m: print(m))
    timings["total_s"] = round(time.time() - t0, 2)
    csv_text = analysis.study_csv(rows)
    (out / "study.csv").write_text(csv_text)
    manifest = analysis.study_manifest(rows, cfg.echo(), cfg.config_hash(),
                                       timings)
    (out / "study.json").write_text(manifest)
    print(f"study: {len(rows)} rows -> {out / 'study.csv'}")
    return 0


def cmd_report(cfg, args):
    out = Path(cfg.out)
    csv_path = out / "study.csv"
    json_path = out / "study.json"
    if not csv_path.exists() or not json_path.exists():
        raise MissingPrerequisite(f"no study outputs under {out}")
    manifest = json.loads(json_path.read_text())
    print(f"study {manifest['config_hash']} "
          f"(example={manifest['config']['example']}, "
          f"preset={manifest['config']['preset']})")
    print(f"{'mode':<14} {'M_off':>5} {'DOF':>6} {'e_L2':>6} {'e_DG':>6} "
          f"{'e_H1':>6} {'e_p':>6} {'cons':>9}")
    for row in manifest["rows"]:
        mode = "oversampling" if row["mode"].startswith("over") else "standard"
        print(f"{mode:<14} {row['m_off']:>5} {row['dof']:>6} "
              f"{row['e_u_l2']:>6.1f} {row['e_u_dg']:>6.1f} "
              f"{row['e_u_h1']:>6.1f} {row['e_p_l2']:>6.1f} "
              f"{row['conservation_max']:>9.1e}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        handler = {"mesh": cmd_mesh, "solve": cmd_solve,
                   "study": cmd_study, "report": cmd_report}[args.command]
        return handler(cfg, args)
    except MissingPrerequisite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SingularSystem as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except MsStokesError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
