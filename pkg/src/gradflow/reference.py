"""Stationary measure discretisation, face weights, projections, embeddings.

The reference density is sigma = exp(-V)/Z with Z fixed by cell-wise
quadrature; the same Z backs the cell masses pi(K) and the pointwise site
values entering face weights, so the two stay consistent on one mesh.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import geometry
from .functionals import mean_value
from .mesh import Mesh

MASS_TOL = 1e-12
S_MEAN_KINDS = ("min", "max", "arithmetic", "geometric", "harmonic", "logarithmic")


@dataclass(frozen=True)
class Potential:
    """Driving potential V on the closed domain (continuous user code)."""

    name: str
    fn: Callable
    params: dict = field(default_factory=dict)

    def __call__(self, x):
        return self.fn(x)


def zero_potential() -> Potential:
    return Potential("zero", lambda x: 0.0)


def linear_potential(a=1.0) -> Potential:
    vec = np.atleast_1d(np.asarray(a, dtype=float))

    def fn(x):
        return float(vec @ np.atleast_1d(np.asarray(x, dtype=float)))

    return Potential("linear", fn, {"a": tuple(vec)})


def quadratic_potential(center=0.5) -> Potential:
    c = np.atleast_1d(np.asarray(center, dtype=float))

    def fn(x):
        d = np.atleast_1d(np.asarray(x, dtype=float)) - c
        return 0.5 * float(d @ d)

    return Potential("quadratic", fn, {"center": tuple(c)})


def double_well_potential(height=2.0, center=0.5, width=0.25) -> Potential:
    h, c, w = float(height), float(center), float(width)

    def fn(x):
        xa = np.atleast_1d(np.asarray(x, dtype=float))
        return float(np.sum(h * ((xa - c) ** 2 - w * w) ** 2 / w ** 4))

    return Potential("double-well", fn, {"height": h, "center": c, "width": w})


def potential_from_token(token: str, dim: int) -> Potential:
    """Parse CLI-style potential tokens such as 'zero' or 'linear:1.0,0.5'."""
    name, _, arg = token.partition(":")
    if name == "zero":
        return zero_potential()
    if name == "linear":
        if arg:
            vec = [float(v) for v in arg.split(",")]
        else:
            vec = [1.0] + [0.0] * (dim - 1)
        if len(vec) != dim:
            raise ValueError(f"linear potential needs {dim} coefficients")
        return linear_potential(vec)
    if name == "quadratic":
        c = [float(v) for v in arg.split(",")] if arg else [0.5] * dim
        if len(c) != dim:
            raise ValueError(f"quadratic potential needs a {dim}-d center")
        return quadratic_potential(c)
    if name in ("double-well", "double_well"):
        h = float(arg) if arg else 2.0
        return double_well_potential(height=h)
    raise ValueError(f"unknown potential {token!r}")


@dataclass(frozen=True)
class DiscreteMeasure:
    """Nonnegative mass per cell, summing to one."""

    masses: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.masses, dtype=float)
        if np.any(arr < 0.0):
            raise ValueError("masses must be nonnegative")
        total = float(arr.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {total!r}, expected 1")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "masses", arr)

    @staticmethod
    def normalized(values) -> "DiscreteMeasure":
        arr = np.asarray(values, dtype=float)
        neg = arr < 0.0
        if np.any(arr[neg] < -1e-12 * max(float(np.abs(arr).max()), 1e-300)):
            raise ValueError("negative mass beyond roundoff")
        arr = np.where(neg, 0.0, arr)
        total = float(arr.sum())
        if total <= 0.0:
            raise ValueError("cannot normalize a zero measure")
        return DiscreteMeasure(arr / total)

    def density(self, pi: "DiscreteMeasure") -> np.ndarray:
        return self.masses / pi.masses

    def __len__(self) -> int:
        return len(self.masses)


@dataclass(frozen=True)
class FaceWeights:
    """Per-face conductances w_KL = (|Γ|/d) S_KL with the chosen S mean."""

    w: np.ndarray
    S: np.ndarray
    sigma_sites: np.ndarray
    mean_kind: str
    face_cells: np.ndarray

    def __post_init__(self):
        for name in ("w", "S", "sigma_sites"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        fc = np.asarray(self.face_cells, dtype=np.int64)
        fc.setflags(write=False)
        object.__setattr__(self, "face_cells", fc)


# -- quadrature -----------------------------------------------------------------

_TRI_RULES = {
    1: (np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0])),
    2: (np.array([[2 / 3, 1 / 6, 1 / 6],
                  [1 / 6, 2 / 3, 1 / 6],
                  [1 / 6, 1 / 6, 2 / 3]]), np.full(3, 1 / 3)),
    3: (np.array([[1 / 3, 1 / 3, 1 / 3],
                  [0.797426985353087, 0.101286507323456, 0.101286507323456],
                  [0.101286507323456, 0.797426985353087, 0.101286507323456],
                  [0.101286507323456, 0.101286507323456, 0.797426985353087],
                  [0.059715871789770, 0.470142064105115, 0.470142064105115],
                  [0.470142064105115, 0.059715871789770, 0.470142064105115],
                  [0.470142064105115, 0.470142064105115, 0.059715871789770]]),
        np.array([0.225,
                  0.125939180544827, 0.125939180544827, 0.125939180544827,
                  0.132394152788506, 0.132394152788506, 0.132394152788506])),
}


def cell_quadrature(mesh: Mesh, k: int, order: int | None = None):
    """Quadrature nodes and weights for one cell (weights sum to |K|)."""
    if mesh.dim == 1:
        points = 5 if order is None else max(int(order), 1)
        gx, gw = np.polynomial.legendre.leggauss(points)
        lo, hi = mesh.cell_bounds[k]
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        return (mid + half * gx)[:, None], half * gw
    rule = _TRI_RULES[min(max(order or 1, 1), 3)]
    bary, bw = rule
    poly = mesh.cell_polygons[k]
    center = geometry.polygon_centroid(poly)
    nodes, weights = [], []
    m = len(poly)
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        tri = np.array([center, a, b])
        area = 0.5 * abs((a[0] - center[0]) * (b[1] - center[1])
                         - (b[0] - center[0]) * (a[1] - center[1]))
        if area == 0.0:
            continue
        nodes.append(bary @ tri)
        weights.append(area * bw)
    return np.vstack(nodes), np.concatenate(weights)


def cell_integrals(mesh: Mesh, g: Callable, order: int | None = None) -> np.ndarray:
    """Integral of g over each cell by the module quadrature."""
    out = np.empty(mesh.n_cells)
    for k in range(mesh.n_cells):
        nodes, weights = cell_quadrature(mesh, k, order)
        if mesh.dim == 1:
            vals = np.array([g(float(x[0])) for x in nodes], dtype=float)
        else:
            vals = np.array([g(x) for x in nodes], dtype=float)
        out[k] = float(weights @ vals)
    return out


# -- reference measure and weights ----------------------------------------------


def discretize_reference(mesh: Mesh, potential: Potential,
                         quad_order: int | None = None) -> DiscreteMeasure:
    """Cell masses of exp(-V) dx / Z, normalized exactly after quadrature."""
    vals = cell_integrals(mesh, lambda x: np.exp(-potential(x)), quad_order)
    return DiscreteMeasure.normalized(vals)


def reference_normalizer(mesh: Mesh, potential: Potential,
                         quad_order: int | None = None) -> float:
    """The constant Z = sum_K int_K exp(-V) shared by pi and face weights."""
    return float(cell_integrals(mesh, lambda x: np.exp(-potential(x)), quad_order).sum())


def face_weights(mesh: Mesh, potential: Potential,
                 mean_kind: str = "logarithmic",
                 quad_order: int | None = None) -> FaceWeights:
    """TPFA conductances from site values of the stationary density.

    S_KL is the chosen mean of sigma(x_K) and sigma(x_L); sigma uses the same
    normalizer Z as discretize_reference on this mesh.
    """
    if mean_kind not in S_MEAN_KINDS:
        raise ValueError(f"unknown mean kind {mean_kind!r}")
    z = reference_normalizer(mesh, potential, quad_order)
    if mesh.dim == 1:
        sigma = np.array([np.exp(-potential(float(x[0]))) for x in mesh.sites]) / z
    else:
        sigma = np.array([np.exp(-potential(x)) for x in mesh.sites]) / z
    fc = mesh.face_cells
    s = (mean_value(mean_kind, sigma[fc[:, 0]], sigma[fc[:, 1]])
         if len(fc) else np.zeros(0))
    w = mesh.transmissibilities() * s
    return FaceWeights(w=w, S=s, sigma_sites=sigma, mean_kind=mean_kind,
                       face_cells=fc)


# -- projection and embedding -----------------------------------------------------


def project_measure(mesh: Mesh, rho: Callable,
                    quad_order: int | None = None) -> DiscreteMeasure:
    """Cell masses of a probability density (renormalized to exact sum one)."""
    vals = cell_integrals(mesh, rho, quad_order)
    if np.any(vals < -1e-12):
        raise ValueError("density integrates negatively on a cell")
    total = float(vals.sum())
    if abs(total - 1.0) > 1e-8:
        raise ValueError(f"density has mass {total!r}, expected 1 to 1e-8")
    return DiscreteMeasure.normalized(vals)


@dataclass(frozen=True)
class PiecewiseConstant:
    """Piecewise-constant field on a mesh: one value per cell."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=float).copy()
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    def __call__(self, x):
        k = self.locate(x)
        return float(self.values[k])

    def locate(self, x) -> int:
        if self.mesh.dim == 1:
            xv = float(np.atleast_1d(x)[0])
            edges = self.mesh.cell_bounds
            order = np.argsort(edges[:, 0], kind="stable")
            idx = int(np.searchsorted(edges[order, 0], xv, side="right")) - 1
            idx = min(max(idx, 0), len(order) - 1)
            return int(order[idx])
        p = np.asarray(x, dtype=float)
        for k in range(self.mesh.n_cells):
            if geometry.point_in_convex(self.mesh.cell_polygons[k], p, tol=1e-12):
                return k
        raise ValueError("point lies outside the mesh")

    def integral(self) -> float:
        return float(self.values @ self.mesh.volumes)


def embed_measure(mesh: Mesh, m: DiscreteMeasure) -> PiecewiseConstant:
    """Density m(K)/|K| on each cell; preserves mass exactly."""
    return PiecewiseConstant(mesh, m.masses / mesh.volumes)


def project_function(mesh: Mesh, phi: Callable) -> np.ndarray:
    """Pointwise site evaluation (phi(x_K) per cell)."""
    if mesh.dim == 1:
        return np.array([phi(float(x[0])) for x in mesh.sites], dtype=float)
    return np.array([phi(x) for x in mesh.sites], dtype=float)


def embed_function(mesh: Mesh, f) -> PiecewiseConstant:
    """Piecewise-constant extension of a cell field."""
    return PiecewiseConstant(mesh, np.asarray(f, dtype=float))


# -- named densities and initial data ----------------------------------------------


def density_from_token(token: str, dim: int) -> Callable:
    """Named probability densities on the unit interval/square."""
    name, _, arg = token.partition(":")
    if name == "uniform":
        return lambda x: 1.0
    if name == "cosine":
        amp = float(arg) if arg else 0.5
        if not -1.0 < amp < 1.0:
            raise ValueError("cosine amplitude must lie in (-1, 1)")

        def rho(x):
            xa = np.atleast_1d(np.asarray(x, dtype=float))
            return float(np.prod(1.0 + amp * np.cos(np.pi * xa)))

        return rho
    if name == "linear":
        if dim != 1:
            raise ValueError("the linear density is one-dimensional")
        return lambda x: 2.0 * float(np.atleast_1d(x)[0])
    raise ValueError(f"unknown density {token!r}")


def write_measure_csv(path, m: DiscreteMeasure) -> None:
    """Serialize a discrete measure as (cell id, mass) rows."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("cell,mass\n")
        for k, mass in enumerate(m.masses):
            fh.write(f"{k},{float(mass)!r}\n")


def read_measure_csv(path) -> DiscreteMeasure:
    masses: dict[int, float] = {}
    with open(path, encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("cell"):
                continue
            cell, mass = line.split(",")
            masses[int(cell)] = float(mass)
    if sorted(masses) != list(range(len(masses))):
        raise ValueError("measure CSV must cover cells 0..n-1 exactly once")
    return DiscreteMeasure(np.array([masses[k] for k in range(len(masses))]))


def initial_measure_from_token(token: str, mesh: Mesh, pi: DiscreteMeasure,
                               quad_order: int | None = None) -> DiscreteMeasure:
    """Initial data: stationary | projected:NAME | blend:NAME:theta | file:PATH."""
    parts = token.split(":")
    if parts[0] == "file":
        m = read_measure_csv(":".join(parts[1:]))
        if len(m) != mesh.n_cells:
            raise ValueError("measure file does not match the mesh size")
        return m
    if parts[0] == "stationary":
        return pi
    if parts[0] == "projected":
        rho = density_from_token(":".join(parts[1:]) or "uniform", mesh.dim)
        return project_measure(mesh, rho, quad_order)
    if parts[0] == "blend":
        if len(parts) < 2:
            raise ValueError("blend needs a density name")
        theta = float(parts[2]) if len(parts) > 2 else 0.9
        if not 0.0 <= theta <= 1.0:
            raise ValueError("blend weight must lie in [0, 1]")
        rho = density_from_token(parts[1], mesh.dim)
        projected = project_measure(mesh, rho, quad_order)
        return DiscreteMeasure(theta * projected.masses + (1.0 - theta) * pi.masses)
    raise ValueError(f"unknown initial measure {token!r}")
