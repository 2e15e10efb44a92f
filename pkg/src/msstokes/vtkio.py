"""Legacy ASCII VTK export of broken velocity/pressure fields.

Points are duplicated per coarse block so the discontinuities across coarse
edges survive in the file; pressures and block ids are cell data.
"""

from __future__ import annotations

import numpy as np


def write_vtk(path, broken, u=None, p=None, title="msstokes field"):
    mesh = broken.mesh
    part = broken.partition
    points = []
    offsets = []
    for b, nodes in enumerate(broken.block_nodes):
        offsets.append(sum(len(n) for n in broken.block_nodes[:b]))
        points.append(mesh.nodes[nodes])
    points = np.concatenate(points)
    cells = np.empty((mesh.n_triangles, 3), np.int64)
    for b, tris in enumerate(part.block_tris):
        conn = mesh.triangles[tris]
        pos = np.searchsorted(broken.block_nodes[b], conn)
        cells[tris] = pos + offsets[b]
    lines = ["# vtk DataFile Version 3.0", title, "ASCII",
             "DATASET UNSTRUCTURED_GRID",
             f"POINTS {len(points)} double"]
    for x, y in points:
        lines.append(f"{x:.12g} {y:.12g} 0")
    lines.append(f"CELLS {len(cells)} {4 * len(cells)}")
    for a, b_, c in cells:
        lines.append(f"3 {a} {b_} {c}")
    lines.append(f"CELL_TYPES {len(cells)}")
    lines.extend(["5"] * len(cells))
    if u is not None:
        lines.append(f"POINT_DATA {len(points)}")
        lines.append("VECTORS velocity double")
        for b, nodes in enumerate(broken.block_nodes):
            vals = broken.block_values(u, b)
            for vx, vy in vals:
                lines.append(f"{vx:.12g} {vy:.12g} 0")
    lines.append(f"CELL_DATA {len(cells)}")
    if p is not None:
        lines.append("SCALARS pressure double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(f"{p[part.block_of_tri[t]]:.12g}" for t in range(mesh.n_triangles))
    lines.append("SCALARS coarse_block int 1")
    lines.append("LOOKUP_TABLE default")
    lines.extend(str(int(b)) for b in part.block_of_tri)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
