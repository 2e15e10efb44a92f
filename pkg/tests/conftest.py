"""Shared fixtures: small meshes, problems, and a manufactured solution."""

import numpy as np
import pytest

from msstokes.dgform import BrokenSpace, FineOperators, StokesProblem
from msstokes.geometry import PerforationSet, generate_perforated_mesh
from msstokes.mssolver import solve_reference


# two holes at half-triangle incenters of an H=1/4 grid
TEST_CIRCLES = ((0.4268, 0.3232, 0.045), (0.6768, 0.8232, 0.045))


@pytest.fixture(scope="session")
def unit_square():
    """Unperforated 4-block rectangular partition, refinement 8."""
    return generate_perforated_mesh(PerforationSet(()), 0.5, 8, "rectangular")


@pytest.fixture(scope="session")
def perforated():
    """Two-hole triangular partition at H=1/4, refinement 8."""
    return generate_perforated_mesh(PerforationSet(TEST_CIRCLES), 0.25, 8,
                                    "triangular")


@pytest.fixture(scope="session")
def perforated_setup(perforated):
    """(mesh, part, broken, ops, reference) for example 1 on the test mesh."""
    mesh, part = perforated
    broken = BrokenSpace(mesh, part)
    problem = StokesProblem.example1()
    ops = FineOperators(broken, problem)
    ref = solve_reference(mesh, part, problem, 4.0, broken, ops)
    return mesh, part, broken, ops, problem, ref


@pytest.fixture(scope="session")
def manufactured():
    """Zero-boundary stream-function Stokes solution and its body force."""
    import sympy as sym
    x, y = sym.symbols("x y")
    psi = (sym.sin(sym.pi * x) * sym.sin(sym.pi * y)) ** 2
    ux = sym.diff(psi, y)
    uy = -sym.diff(psi, x)
    pr = sym.sin(sym.pi * x) * sym.cos(sym.pi * y)
    fx = -sym.diff(ux, x, 2) - sym.diff(ux, y, 2) + sym.diff(pr, x)
    fy = -sym.diff(uy, x, 2) - sym.diff(uy, y, 2) + sym.diff(pr, y)
    fu = sym.lambdify((x, y), (ux, uy), "numpy")
    ff = sym.lambdify((x, y), (fx, fy), "numpy")

    def velocity(pts):
        vx, vy = fu(pts[:, 0], pts[:, 1])
        return np.column_stack([vx, vy])

    def force(pts):
        wx, wy = ff(pts[:, 0], pts[:, 1])
        return np.column_stack([wx, wy])

    return velocity, force
