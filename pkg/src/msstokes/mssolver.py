"""Coarse and reference saddle-point solves with edge multipliers.

Both systems share the constraint structure: one mean-divergence row per
coarse element, one mean-normal-jump row per coarse edge, and a scalar
zero-mean gauge on the element pressures. The reference uses the full broken
space for velocity; the multiscale solve uses an offline BlockSpace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dgform import BlockSpace, BrokenSpace, FineOperators, assemble_system
from .errors import SingularSystem
from .femcore import sparse_saddle_solve


@dataclass
class HybridSolution:
    """Velocity (downscaled to the broken space), element and edge pressures."""

    space: BlockSpace
    coeffs: np.ndarray           # coarse velocity coefficients
    u: np.ndarray                # broken fine coefficients
    p: np.ndarray                # one value per coarse element
    p_hat: np.ndarray            # one value per coarse edge
    meta: dict = field(default_factory=dict)

    @property
    def broken(self):
        return self.space.broken


def solve_hybrid(system, space):
    """Solve an assembled HybridSystem; returns a HybridSolution."""
    rhs = np.concatenate([system.rhs_u, system.rhs_p, [0.0]])
    try:
        x = sparse_saddle_solve(system.A, system.B, rhs, gauge=system.gauge)
    except SingularSystem as exc:
        raise SingularSystem(
            f"hybrid solve ({system.n_u} velocity, {system.n_p}+{system.n_ph} "
            f"pressure dofs): {exc}") from exc
    n_u, n_p, n_ph = system.n_u, system.n_p, system.n_ph
    coeffs = x[:n_u]
    p = x[n_u:n_u + n_p]
    p_hat = x[n_u + n_p:n_u + n_p + n_ph]
    u = space.downscale(coeffs)
    part = space.broken.partition
    areas = part.block_areas()
    constraint_res = system.B @ coeffs - system.rhs_p
    meta = {
        "dims": (int(n_u), int(n_p), int(n_ph)),
        "gamma": system.gamma,
        "pressure_mean": float(areas @ p),
        "constraint_max": float(np.abs(constraint_res).max()),
        "gauge_multiplier": float(x[-1]),
    }
    return HybridSolution(space, coeffs, u, p, p_hat, meta)


def solve_multiscale(space, problem, gamma, operators=None):
    """Coarse solve in an offline BlockSpace."""
    ops = operators or FineOperators(space.broken, problem)
    system = assemble_system(space, problem, gamma, ops)
    sol = solve_hybrid(system, space)
    sol.meta["problem"] = problem.label
    return sol


def solve_reference(mesh, partition, problem, gamma, broken=None, operators=None):
    """Reference solve in the full broken space V_h^DG (same pressure spaces)."""
    broken = broken or BrokenSpace(mesh, partition)
    space = BlockSpace.identity(broken)
    ops = operators or FineOperators(broken, problem)
    system = assemble_system(space, problem, gamma, ops)
    sol = solve_hybrid(system, space)
    sol.meta["problem"] = problem.label
    return sol


def downscale(space, coeffs):
    """Fine broken coefficients of a coarse coefficient vector."""
    return space.downscale(np.asarray(coeffs, float))
