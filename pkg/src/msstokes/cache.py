"""Binary stage caches keyed by the configuration hash.

Snapshot spaces and offline decompositions are stored as .npz archives named
by (mesh hash, mode, layers, pod_tol, seed); reference and multiscale
solutions by the full config hash. MSSTOKES_CACHE overrides the directory.
"""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .snapshots import SnapshotSpace


def cache_dir(out_dir):
    root = os.environ.get("MSSTOKES_CACHE")
    path = Path(root) if root else Path(out_dir) / "cache"
    path.mkdir(parents=True, exist_ok=True)
    return path


def snapshot_key(mesh_hash, mode, layers, pod_tol, seed, count=0):
    return f"snaps_{mesh_hash}_{mode}_l{layers}_tol{pod_tol:g}_s{seed}_c{count}"


def save_snapshots(path, snaps):
    arrays = {}
    for s in snaps:
        pre = f"b{s.block_id:05d}_"
        arrays[pre + "cols"] = s.columns
        arrays[pre + "nodes"] = s.node_ids
        arrays[pre + "tris"] = s.tris
        arrays[pre + "div"] = s.div_constants
        arrays[pre + "mode"] = np.array([s.mode, s.support])
    np.savez_compressed(path, **arrays)


def load_snapshots(path, n_blocks):
    if not Path(path).exists():
        return None
    data = np.load(path, allow_pickle=False)
    snaps = []
    try:
        for b in range(n_blocks):
            pre = f"b{b:05d}_"
            mode, support = (str(v) for v in data[pre + "mode"])
            snaps.append(SnapshotSpace(
                b, mode, support, data[pre + "tris"], data[pre + "nodes"],
                data[pre + "cols"], data[pre + "div"]))
    except KeyError:
        return None
    return snaps


def save_solution(path, sol):
    np.savez_compressed(path, u=sol.u, coeffs=sol.coeffs, p=sol.p,
                        p_hat=sol.p_hat,
                        meta=np.array(repr(sol.meta), dtype=object))


def load_solution(path):
    if not Path(path).exists():
        return None
    return np.load(path, allow_pickle=True)
