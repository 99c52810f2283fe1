"""Discrete Fokker-Planck generator and time integration.

The generator acts on measures by (L m)(K) = sum_{L~K} w_KL (r_L - r_K)
with densities r = m/pi.  It conserves mass (zero column sums), fixes pi,
and is self-adjoint in the 1/pi-weighted inner product, which yields the
dense spectral oracle used for high-accuracy trajectories.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .reference import DiscreteMeasure
from .mesh import Mesh

EXACT_DENSE_LIMIT = 2000
AUTO_DENSE_LIMIT = 400
NEGATIVE_CLIP = 1e-12
SCHEMES = ("implicit_euler", "crank_nicolson", "exact_dense")


@dataclass
class Generator:
    """Sparse Fokker-Planck generator with its reference measure."""

    matrix: sp.csr_matrix
    pi: DiscreteMeasure
    _sym: tuple | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    def apply(self, m) -> np.ndarray:
        arr = np.asarray(getattr(m, "masses", m), dtype=float)
        return self.matrix @ arr

    def symmetric_eig(self):
        """Eigendecomposition of the pi-symmetrized generator (cached)."""
        if self._sym is None:
            if self.n > EXACT_DENSE_LIMIT:
                raise ValueError(f"dense spectral oracle limited to "
                                 f"{EXACT_DENSE_LIMIT} cells")
            sqrt_pi = np.sqrt(self.pi.masses)
            sym = self.matrix.toarray() * (sqrt_pi[None, :] / sqrt_pi[:, None])
            sym = 0.5 * (sym + sym.T)
            evals, evecs = np.linalg.eigh(sym)
            self._sym = (evals, evecs, sqrt_pi)
        return self._sym

    def spectral_gap(self) -> float:
        """Smallest positive decay rate (second eigenvalue of -L)."""
        evals, _, _ = self.symmetric_eig()
        rates = np.sort(-evals)
        return float(rates[1]) if self.n > 1 else 0.0


def assemble_generator(mesh: Mesh, weights, pi: DiscreteMeasure) -> Generator:
    if np.any(pi.masses <= 0.0):
        raise ValueError("reference measure must be positive")
    fc = np.asarray(weights.face_cells, dtype=np.int64)
    w = np.asarray(weights.w, dtype=float)
    n = mesh.n_cells
    k, l = fc[:, 0], fc[:, 1]
    inv_pi = 1.0 / pi.masses
    rows = np.concatenate([k, l, k, l])
    cols = np.concatenate([l, k, k, l])
    data = np.concatenate([w * inv_pi[l], w * inv_pi[k],
                           -w * inv_pi[k], -w * inv_pi[l]])
    matrix = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    return Generator(matrix=matrix, pi=pi)


def _clip_measure(values: np.ndarray) -> DiscreteMeasure:
    worst = float(values.min()) if len(values) else 0.0
    if worst < -NEGATIVE_CLIP:
        raise ValueError(f"negative mass {worst!r} beyond the clip threshold")
    clipped = np.maximum(values, 0.0)
    return DiscreteMeasure(clipped / clipped.sum())


def step_implicit_euler(m, dt: float, generator: Generator) -> DiscreteMeasure:
    """One backward Euler step: solve (I - dt L) m+ = m.

    The system matrix is an M-matrix for every dt > 0, so the step preserves
    positivity; the result is renormalized to exact unit mass.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    arr = np.asarray(getattr(m, "masses", m), dtype=float)
    system = sp.identity(generator.n, format="csc") - dt * generator.matrix
    out = spla.spsolve(system, arr)
    return _clip_measure(out)


def step_crank_nicolson(m, dt: float, generator: Generator) -> DiscreteMeasure:
    """One trapezoidal step; tiny negatives are clipped, larger ones raise."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    arr = np.asarray(getattr(m, "masses", m), dtype=float)
    half = 0.5 * dt * generator.matrix
    rhs = arr + half @ arr
    system = sp.identity(generator.n, format="csc") - half
    out = spla.spsolve(system, rhs)
    return _clip_measure(out)


@dataclass
class Trajectory:
    """Time grid with one measure per node and the scheme that produced it."""

    times: np.ndarray
    masses: np.ndarray           # (nodes, n_cells)
    scheme: str
    generator: Generator

    @property
    def n_nodes(self) -> int:
        return len(self.times)

    @property
    def dt(self) -> float:
        """Node spacing; the grid is uniform by construction."""
        return float(self.times[1] - self.times[0]) if self.n_nodes > 1 else 0.0

    def measure(self, i: int) -> DiscreteMeasure:
        return DiscreteMeasure(self.masses[i])

    def export_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("t,cell,mass\n")
            for i, t in enumerate(self.times):
                for k, mass in enumerate(self.masses[i]):
                    fh.write(f"{float(t)!r},{k},{float(mass)!r}\n")


def solve_trajectory(m0, T: float, steps: int, generator: Generator,
                     scheme: str = "auto") -> Trajectory:
    """Integrate the flow on the uniform grid t_i = i T / steps.

    'exact_dense' evaluates every node analytically from the symmetric
    eigendecomposition; 'auto' selects it up to AUTO_DENSE_LIMIT cells and
    implicit Euler beyond.
    """
    if T <= 0.0 or steps < 1:
        raise ValueError("need T > 0 and at least one step")
    if scheme == "auto":
        scheme = "exact_dense" if generator.n <= AUTO_DENSE_LIMIT else "implicit_euler"
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    m0 = m0 if isinstance(m0, DiscreteMeasure) else DiscreteMeasure(np.asarray(m0))
    times = np.linspace(0.0, T, steps + 1)
    masses = np.empty((steps + 1, generator.n))
    masses[0] = m0.masses
    if scheme == "exact_dense":
        evals, evecs, sqrt_pi = generator.symmetric_eig()
        coeff = evecs.T @ (m0.masses / sqrt_pi)
        for i, t in enumerate(times[1:], start=1):
            vals = sqrt_pi * (evecs @ (np.exp(evals * t) * coeff))
            masses[i] = _clip_measure(vals).masses
    else:
        stepper = (step_implicit_euler if scheme == "implicit_euler"
                   else step_crank_nicolson)
        dt = T / steps
        current = m0
        for i in range(1, steps + 1):
            current = stepper(current, dt, generator)
            masses[i] = current.masses
    return Trajectory(times=times, masses=masses, scheme=scheme,
                      generator=generator)


def time_derivative(trajectory: Trajectory, i: int) -> np.ndarray:
    """dm/dt at node i, evaluated through the generator (not differencing)."""
    if not 0 <= i < trajectory.n_nodes:
        raise IndexError("node index out of range")
    return trajectory.generator.apply(trajectory.masses[i])
