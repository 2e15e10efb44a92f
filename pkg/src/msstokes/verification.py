"""Numeric verification of the analysis-side properties.

Coercivity of the DG form against the energy norm, the discrete inf-sup
constant of the constraint block, and the Galerkin-orthogonality residual of
solved systems. These are diagnostics used by the test suite; they are kept
out of the solver path.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg as sla


def coercivity_scan(broken, operators, gamma, n_samples=100, seed=0):
    """Min/max of a_DG(v,v) / ||v||_A^2 over seeded random coefficient vectors.

    Meaningful on all-Dirichlet configurations, where every coarse edge
    carries penalty terms and the energy norm matches the form's edge set.
    """
    a = operators.a_matrix(gamma)
    gram = operators.norm_matrix()
    rng = np.random.default_rng(seed)
    ratios = np.empty(n_samples)
    for k in range(n_samples):
        v = rng.standard_normal(broken.n_dofs)
        ratios[k] = (v @ (a @ v)) / (v @ (gram @ v))
    return float(ratios.min()), float(ratios.max())


def infsup_constant(space, operators):
    """Discrete inf-sup constant of b_DG over a coarse space.

    Computed as the square root of the smallest nonzero generalized
    eigenvalue of B A_N^{-1} B^T against the Q-norm mass, where A_N is the
    energy-norm Gram on the space. The simultaneous-constant pressure mode
    (element values and all edge values equal) spans the kernel and is
    deflated; the returned tuple is (beta, kernel_eigenvalue).
    """
    part = space.broken.partition
    A_n = space.restrict(operators.norm_matrix()).toarray()
    B = space.restrict_rows(operators.bdg)
    B = B.toarray() if hasattr(B, "toarray") else np.asarray(B)
    schur = B @ np.linalg.solve(A_n, B.T)
    schur = 0.5 * (schur + schur.T)
    areas = part.block_areas()
    lengths = part.edge_lengths()
    mq = np.concatenate([areas, part.mesh.h * lengths])
    w, v = sla.eigh(schur, np.diag(mq))
    # kernel direction: constant element pressure with constant edge pressure
    z = np.ones_like(mq)
    z /= np.sqrt(z @ (mq * z))
    align = np.abs(v.T @ (mq * z))
    k0 = int(np.argmax(align))
    lam = np.delete(w, k0)
    return float(np.sqrt(max(lam.min(), 0.0))), float(w[k0])


def galerkin_residuals(solution, reference, operators, gamma):
    """|a_DG(u_h - u_H, v) + b_DG(v, dp, dp_hat)| per offline basis vector.

    Both solutions must share the broken space, with the multiscale space
    contained in it. Returns residuals scaled by ||v||_A ||u_h||_A.
    """
    space = solution.space
    a = operators.a_matrix(gamma)
    gram = operators.norm_matrix()
    d = reference.u - solution.u
    dp = np.concatenate([reference.p - solution.p,
                         reference.p_hat - solution.p_hat])
    resid_fine = a @ d + operators.bdg.T @ dp
    resid = space.restrict_vec(resid_fine)
    ref_norm = np.sqrt(reference.u @ (gram @ reference.u))
    P = space.P
    col_norm2 = np.asarray((P.multiply(gram @ P)).sum(axis=0)).ravel() \
        if P is not None else np.asarray(gram.diagonal())
    return np.abs(resid) / (np.sqrt(np.maximum(col_norm2, 1e-300)) * ref_norm)
