"""Legendre dual of the transport action via the weighted graph operator.

The Onsager operator B(m) acts on cell fields by
(B f)(K) = sum_L theta(r_K, r_L) w_KL (f(K) - f(L)), so <f, B f> equals
twice the action.  The dual sup_f { <sigma, f> - action(m, f) } is attained
at the solution of B f = sigma and evaluates to <sigma, f>/2; off the range
of B the supremum is genuinely +inf.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from .functionals import _masses, _weights, mean_value, weights_cells
from .mesh import Mesh

BALANCE_TOL = 1e-10
RANGE_TOL = 1e-8
CG_TOL = 1e-12
MAX_ITER_FACTOR = 10


class ConjugateGradientError(RuntimeError):
    """CG failed to reach the requested residual within the iteration cap."""


@dataclass
class OnsagerOperator:
    """Sparse symmetric PSD operator with constants-per-component kernel."""

    matrix: sp.csr_matrix
    conductance: np.ndarray      # theta(r_K, r_L) w_KL per face
    face_cells: np.ndarray
    component: np.ndarray        # component label per cell (theta w > 0 graph)
    n_components: int

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def apply(self, f: np.ndarray) -> np.ndarray:
        return self.matrix @ f

    def quadratic_form(self, f) -> float:
        """<f, B f>; equals 2 * action(m, f)."""
        ff = np.asarray(f, dtype=float)
        return float(ff @ (self.matrix @ ff))


def assemble_onsager(mesh: Mesh | None, weights, m, pi,
                     kernel: str = "logarithmic") -> OnsagerOperator:
    """Build B(m) from face conductances theta(r_K, r_L) w_KL.

    The mesh argument is accepted for symmetry with the other assembly
    routines but only the cell count is needed, so None is allowed.
    """
    mm = _masses(m)
    pp = _masses(pi)
    w = _weights(weights)
    fc = weights_cells(weights)
    n = mesh.n_cells if mesh is not None else len(mm)
    r = mm / pp
    theta = (mean_value(kernel, r[fc[:, 0]], r[fc[:, 1]])
             if len(fc) else np.zeros(0))
    cond = theta * w
    k, l = fc[:, 0], fc[:, 1]
    rows = np.concatenate([k, l, k, l])
    cols = np.concatenate([k, l, l, k])
    data = np.concatenate([cond, cond, -cond, -cond])
    matrix = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    live = cond > 0.0
    adjacency = sp.coo_matrix((cond[live], (k[live], l[live])), shape=(n, n))
    n_comp, labels = csgraph.connected_components(adjacency, directed=False)
    return OnsagerOperator(matrix=matrix, conductance=cond, face_cells=fc,
                           component=labels, n_components=int(n_comp))


def _project_out_kernel(v: np.ndarray, labels: np.ndarray, n_comp: int) -> np.ndarray:
    """Subtract the per-component mean (the kernel of B is constants there)."""
    sums = np.bincount(labels, weights=v, minlength=n_comp)
    counts = np.bincount(labels, minlength=n_comp)
    return v - (sums / counts)[labels]


def dual_action(m, sigma, weights=None, pi=None, kernel: str = "logarithmic",
                operator: OnsagerOperator | None = None,
                mesh: Mesh | None = None,
                initial_guess: np.ndarray | None = None,
                return_solution: bool = False):
    """Evaluate the dual action at a balanced cell field sigma.

    Solves B(m) f = sigma by Jacobi-preconditioned conjugate gradients on the
    mean-zero subspace (relative residual CG_TOL, at most 10 n iterations,
    fixed iteration order) and returns <sigma, f>/2.  Returns math.inf when
    sigma is unbalanced or has a component outside range(B) with relative
    norm above RANGE_TOL.  With return_solution the pair (value, f) comes
    back, which lets sequential callers warm-start the next solve.
    """
    sig = np.asarray(sigma, dtype=float)
    if operator is None:
        if weights is None or pi is None:
            raise ValueError("pass weights and pi, or a prebuilt operator")
        operator = assemble_onsager(mesh, weights, m, pi, kernel)
    n = operator.n

    def pack(value, f=None):
        return (value, f) if return_solution else value

    if sig.shape != (n,):
        raise ValueError("sigma has the wrong shape")
    sig_norm1 = float(np.abs(sig).sum())
    if sig_norm1 == 0.0:
        return pack(0.0, np.zeros(n))
    total = float(sig.sum())
    if abs(total) > BALANCE_TOL * max(1.0, sig_norm1):
        warnings.warn(f"sigma is unbalanced (sum {total:.3e}); the supremum "
                      "over constants diverges", stacklevel=2)
        return pack(math.inf)
    labels, n_comp = operator.component, operator.n_components
    comp_sums = np.bincount(labels, weights=sig, minlength=n_comp)
    counts = np.bincount(labels, minlength=n_comp)
    if n_comp > 1:
        # zero-mass regions split the graph; sigma must balance on each piece
        off_range = float(np.sqrt(np.sum(comp_sums ** 2 / counts)))
        if off_range > RANGE_TOL * float(np.linalg.norm(sig)):
            return pack(math.inf)
    b = sig - (comp_sums / counts)[labels]  # exact range component
    f = _solve_cg(operator, b, initial_guess)
    return pack(0.5 * float(sig @ f), f)


def _solve_cg(operator: OnsagerOperator, b: np.ndarray,
              x0: np.ndarray | None) -> np.ndarray:
    matrix = operator.matrix
    labels, n_comp = operator.component, operator.n_components
    n = operator.n
    diag = np.asarray(matrix.diagonal())
    inv_diag = np.where(diag > 0.0, 1.0 / np.where(diag > 0.0, diag, 1.0), 0.0)
    x = (np.zeros(n) if x0 is None
         else _project_out_kernel(np.asarray(x0, dtype=float), labels, n_comp))
    b_norm = float(np.linalg.norm(b))
    if b_norm == 0.0:
        return np.zeros(n)
    r = b - matrix @ x
    z = _project_out_kernel(inv_diag * r, labels, n_comp)
    p = z.copy()
    rz = float(r @ z)
    max_iter = MAX_ITER_FACTOR * n
    for _ in range(max_iter):
        if float(np.linalg.norm(r)) <= CG_TOL * b_norm:
            return x
        ap = matrix @ p
        pap = float(p @ ap)
        if pap <= 0.0:
            break
        alpha = rz / pap
        x = x + alpha * p
        r = r - alpha * ap
        if float(np.linalg.norm(r)) <= CG_TOL * b_norm:
            return x
        z = _project_out_kernel(inv_diag * r, labels, n_comp)
        rz_next = float(r @ z)
        if rz <= 0.0:
            break
        p = z + (rz_next / rz) * p
        rz = rz_next
    residual = float(np.linalg.norm(b - matrix @ x)) / b_norm
    if residual <= CG_TOL * 10.0:
        return x
    raise ConjugateGradientError(
        f"no convergence in {max_iter} iterations, relative residual {residual:.3e}")
