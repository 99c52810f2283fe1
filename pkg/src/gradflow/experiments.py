"""Convergence studies: energy limits, EDI audits, evolutionary convergence.

Continuum references are independent of the code paths under test: closed
forms where available (cosine heat solutions, 1D entropies and duals by
fine quadrature), Richardson-extrapolated fine-mesh solutions otherwise.
Studies are deterministic for fixed seeds and reproduce byte-identical CSV.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Box
from .mesh import (Mesh, build_cartesian_mesh, build_interval_mesh,
                   build_voronoi_mesh, Domain, cells_inside, isotropy_defect)
from .reference import (DiscreteMeasure, Potential, density_from_token,
                        discretize_reference, embed_measure, face_weights,
                        project_function, project_measure, zero_potential)
from .functionals import (action, dirichlet_energy, entropy, fisher,
                          continuous_dirichlet, _gauss_rule_1d)
from .dual_action import assemble_onsager, dual_action
from .dynamics import Generator, assemble_generator, solve_trajectory


def worker_count() -> int:
    """Parallelism cap from GRADFLOW_THREADS (default 1, deterministic)."""
    raw = os.environ.get("GRADFLOW_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_ordered(fn: Callable, items):
    workers = worker_count()
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- mesh families ---------------------------------------------------------------


@dataclass
class MeshFamily:
    """Named vanishing sequence of meshes (sizes strictly decreasing)."""

    name: str
    labels: list
    builders: list = field(repr=False)

    def build(self) -> list[Mesh]:
        meshes = [b() for b in self.builders]
        sizes = [m.size() for m in meshes]
        for a, b in zip(sizes, sizes[1:]):
            if not b < a:
                raise ValueError(f"family {self.name}: mesh sizes not "
                                 f"strictly decreasing ({a} -> {b})")
        return meshes


def uniform_interval_family(sizes=(16, 32, 64, 128, 256),
                            interval=(0.0, 1.0)) -> MeshFamily:
    return MeshFamily("uniform1d", list(sizes),
                      [lambda n=n: build_interval_mesh(n, interval=interval)
                       for n in sizes])


def cartesian_family(sizes=(4, 8, 16, 32), rect=(0.0, 0.0, 1.0, 1.0)) -> MeshFamily:
    return MeshFamily("cartesian", list(sizes),
                      [lambda n=n: build_cartesian_mesh(n, n, rect=rect)
                       for n in sizes])


def _jittered_sites(g: int, jitter: float, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, g])
    ii, jj = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
    base = np.column_stack([(ii.ravel() + 0.5) / g, (jj.ravel() + 0.5) / g])
    offsets = (rng.random((g * g, 2)) - 0.5) * (jitter / g)
    return base + offsets


def jittered_voronoi_family(sizes=(16, 36, 64, 144), jitter=0.35,
                            seed=42) -> MeshFamily:
    def builder(n):
        g = max(2, round(math.sqrt(n)))
        return build_voronoi_mesh(_jittered_sites(g, jitter, seed),
                                  Domain.rectangle(0.0, 0.0, 1.0, 1.0))

    return MeshFamily("voronoi", list(sizes),
                      [lambda n=n: builder(n) for n in sizes])


def _staggered_sites(nx: int, ny: int) -> np.ndarray:
    sites = np.empty((nx * ny, 2))
    for j in range(ny):
        shift = 0.25 if j % 2 else -0.25
        for i in range(nx):
            sites[j * nx + i] = [(i + 0.5 + shift) / nx, (j + 0.5) / ny]
    return sites


def flattened_voronoi_family(sizes=(16, 32, 64, 128),
                             aspect=4.0) -> MeshFamily:
    """Anisotropic staggered family: cells roughly `aspect` times wider than
    tall, with alternate rows offset by a quarter cell.  The second-moment
    isotropy defect of this pattern stays bounded away from zero."""

    def builder(n):
        nx = max(1, round(math.sqrt(n / aspect)))
        ny = max(2, round(n / nx))
        return build_voronoi_mesh(_staggered_sites(nx, ny),
                                  Domain.rectangle(0.0, 0.0, 1.0, 1.0))

    return MeshFamily("flattened", list(sizes),
                      [lambda n=n: builder(n) for n in sizes])


def family_from_token(token: str, seed: int = 42) -> MeshFamily:
    """Parse tokens such as 'uniform1d:16..256' or 'cartesian:4..32'."""
    name, _, tail = token.partition(":")
    sizes = _parse_sizes(tail) if tail else None
    if name == "uniform1d":
        return uniform_interval_family(sizes or (16, 32, 64, 128, 256))
    if name == "cartesian":
        return cartesian_family(sizes or (4, 8, 16, 32))
    if name == "voronoi":
        return jittered_voronoi_family(sizes or (16, 36, 64, 144), seed=seed)
    if name in ("flattened", "anisotropic"):
        return flattened_voronoi_family(sizes or (16, 32, 64, 128))
    raise ValueError(f"unknown family {token!r}")


def _parse_sizes(tail: str) -> tuple:
    if ".." in tail:
        lo, hi = tail.split("..")
        sizes = []
        n = int(lo)
        while n <= int(hi):
            sizes.append(n)
            n *= 2
        return tuple(sizes)
    return tuple(int(s) for s in tail.split(","))


# -- study results ---------------------------------------------------------------


@dataclass
class StudyRow:
    mesh_size: float
    value: float
    reference: float
    error: float
    order: float = math.nan
    extras: dict = field(default_factory=dict)


@dataclass
class StudyResult:
    name: str
    params: dict
    rows: list[StudyRow]

    def column(self, key: str) -> np.ndarray:
        if key in ("mesh_size", "value", "reference", "error", "order"):
            return np.array([getattr(r, key) for r in self.rows])
        return np.array([r.extras[key] for r in self.rows])

    def extra_keys(self) -> list[str]:
        keys: list[str] = []
        for row in self.rows:
            for k in row.extras:
                if k not in keys:
                    keys.append(k)
        return keys

    def to_csv(self, path) -> None:
        keys = self.extra_keys()
        header = ",".join(["mesh_size", "value", "reference", "error", "order"]
                          + keys)
        lines = [header]
        for r in self.rows:
            vals = [r.mesh_size, r.value, r.reference, r.error, r.order]
            vals += [r.extras.get(k, math.nan) for k in keys]
            lines.append(",".join(repr(float(v)) for v in vals))
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")

    def summary(self) -> dict:
        return {"study": self.name, "parameters": self.params,
                "rows": [{"mesh_size": r.mesh_size, "value": r.value,
                          "reference": r.reference, "error": r.error,
                          "order": r.order, **r.extras} for r in self.rows]}


def _attach_orders(rows: list[StudyRow]) -> None:
    for prev, row in zip(rows, rows[1:]):
        if prev.error > 0.0 and row.error > 0.0:
            row.order = math.log2(prev.error / row.error)


# -- continuum references ----------------------------------------------------------


def stationary_density(potential: Potential, domain: Domain,
                       resolution: int = 4096) -> Callable:
    """Continuum density exp(-V)/Z with Z from fine quadrature."""
    if domain.dim == 1:
        x, w = _gauss_rule_1d(float(domain.bounds[0]), float(domain.bounds[1]),
                              resolution)
        z = float(np.sum(w * np.array([math.exp(-potential(xi)) for xi in x])))
        return lambda p: math.exp(-potential(p)) / z
    verts = np.asarray(domain.vertices)
    x0, y0 = verts.min(axis=0)
    x1, y1 = verts.max(axis=0)
    n = 512
    xs = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
    ys = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
    cell = (x1 - x0) * (y1 - y0) / (n * n)
    z = cell * sum(math.exp(-potential(np.array([xv, yv])))
                   for yv in ys for xv in xs)
    return lambda p: math.exp(-potential(p)) / z


def continuum_entropy(mu: Callable, potential: Potential, domain: Domain,
                      resolution: int = 4096) -> float:
    """int mu log(mu/sigma) dx over a 1D domain."""
    sigma = stationary_density(potential, domain, resolution)
    x, w = _gauss_rule_1d(float(domain.bounds[0]), float(domain.bounds[1]),
                          resolution)
    total = 0.0
    for xi, wi in zip(x, w):
        rho = float(mu(xi))
        if rho > 0.0:
            total += wi * rho * math.log(rho / sigma(xi))
    return total


def continuum_fisher(mu: Callable, potential: Potential, domain: Domain,
                     resolution: int = 4096) -> float:
    """4 int |d/dx sqrt(mu/sigma)|^2 sigma dx (central differences)."""
    sigma = stationary_density(potential, domain, resolution)
    x, w = _gauss_rule_1d(float(domain.bounds[0]), float(domain.bounds[1]),
                          resolution)
    h = 1e-6
    total = 0.0
    for xi, wi in zip(x, w):
        left = math.sqrt(float(mu(xi - h)) / sigma(xi - h))
        right = math.sqrt(float(mu(xi + h)) / sigma(xi + h))
        total += wi * ((right - left) / (2 * h)) ** 2 * sigma(xi)
    return 4.0 * total


def continuum_dual(mu: Callable, eta: Callable, potential: Potential,
                   domain: Domain, resolution: int = 4096) -> float:
    """Dual action of the balanced source eta d(reference) against mu (1D).

    With E(x) = int_a^x (eta - mean) sigma ds, the dual is
    1/2 int E^2 / mu dx; the no-flux solution of the weighted Poisson
    problem is used in closed form.
    """
    sigma = stationary_density(potential, domain, resolution)
    a, b = float(domain.bounds[0]), float(domain.bounds[1])
    edges = np.linspace(a, b, resolution + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    dx = np.diff(edges)
    sig = np.array([sigma(xi) for xi in mids])
    et = np.array([float(eta(xi)) for xi in mids])
    mean = float(np.sum(et * sig * dx))  # sigma integrates to one
    flux = np.cumsum((et - mean) * sig * dx)
    e_mid = flux - 0.5 * (et - mean) * sig * dx  # midpoint values of E
    rho = np.array([float(mu(xi)) for xi in mids])
    return 0.5 * float(np.sum(e_mid ** 2 / rho * dx))


# -- 1D Wasserstein distance --------------------------------------------------------


@dataclass(frozen=True)
class Density1D:
    """Piecewise-constant probability density on [edges[0], edges[-1]]."""

    edges: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.edges, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if e.ndim != 1 or v.shape != (e.size - 1,):
            raise ValueError("edges and values shapes do not match")
        e.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "values", v)

    @staticmethod
    def from_mesh(mesh: Mesh, values) -> "Density1D":
        if mesh.dim != 1:
            raise ValueError("Density1D requires a one-dimensional mesh")
        order = np.argsort(mesh.cell_bounds[:, 0], kind="stable")
        edges = np.append(mesh.cell_bounds[order, 0],
                          mesh.cell_bounds[order[-1], 1])
        return Density1D(edges, np.asarray(values, dtype=float)[order])

    @staticmethod
    def from_function(rho: Callable, interval=(0.0, 1.0),
                      cells: int = 4096, points: int = 5) -> "Density1D":
        a, b = float(interval[0]), float(interval[1])
        edges = np.linspace(a, b, cells + 1)
        gx, gw = np.polynomial.legendre.leggauss(points)
        mids = 0.5 * (edges[:-1] + edges[1:])
        halves = 0.5 * np.diff(edges)
        vals = np.empty(cells)
        for i in range(cells):
            nodes = mids[i] + halves[i] * gx
            vals[i] = float(np.dot(gw, [rho(x) for x in nodes])) * 0.5
        return Density1D(edges, vals)

    def mass(self) -> float:
        return float(np.sum(self.values * np.diff(self.edges)))


def wasserstein_1d(p: Density1D, q: Density1D) -> float:
    """Quadratic Wasserstein distance of two piecewise-constant densities.

    Exact quantile integration: between consecutive breakpoints of either
    cumulative, both quantile functions are affine in the mass coordinate,
    so each piece integrates in closed form.
    """
    for dens in (p, q):
        if np.any(dens.values < -1e-12):
            raise ValueError("densities must be nonnegative")
        if abs(dens.mass() - 1.0) > 1e-10:
            raise ValueError(f"density mass {dens.mass()!r} is not 1 to 1e-10")

    def cumulative(dens: Density1D):
        masses = np.maximum(dens.values, 0.0) * np.diff(dens.edges)
        cum = np.concatenate([[0.0], np.cumsum(masses)])
        return cum / cum[-1]

    cp, cq = cumulative(p), cumulative(q)
    cuts = np.unique(np.concatenate([cp, cq]))
    lo, hi = cuts[:-1], cuts[1:]
    span = hi - lo
    keep = span > 0.0
    lo, hi, span = lo[keep], hi[keep], span[keep]
    mid = 0.5 * (lo + hi)

    def quantile_params(dens: Density1D, cum: np.ndarray):
        idx = np.clip(np.searchsorted(cum, mid, side="right") - 1, 0,
                      len(dens.values) - 1)
        mass = cum[idx + 1] - cum[idx]
        slope = np.diff(dens.edges)[idx] / mass
        intercept = dens.edges[idx] - cum[idx] * slope
        return intercept, slope

    ip, sp = quantile_params(p, cp)
    iq, sq = quantile_params(q, cq)
    alpha = ip - iq
    beta = sp - sq
    a = alpha + beta * lo
    b = alpha + beta * hi
    total = float(np.sum(span * (a * a + a * b + b * b) / 3.0))
    return math.sqrt(max(total, 0.0))


# -- gamma-limit studies -------------------------------------------------------------


def gamma_energy_study(family: MeshFamily, phi: Callable, potential: Potential,
                       m_rule: str = "stationary", mu: Callable | None = None,
                       kind: str = "logarithmic", grad: Callable | None = None,
                       quad_order: int | None = None) -> StudyResult:
    """Embedded Dirichlet energies of the projected test function vs the limit.

    m_rule 'stationary' uses m = pi (reference energy against the stationary
    density); 'projected' uses m = P_T mu for a supplied Lebesgue density mu.
    """
    if m_rule not in ("stationary", "projected"):
        raise ValueError("m_rule must be 'stationary' or 'projected'")
    if m_rule == "projected" and mu is None:
        raise ValueError("projected m_rule needs the density mu")
    meshes = family.build()
    domain = meshes[0].domain
    density = (stationary_density(potential, domain) if m_rule == "stationary"
               else mu)
    reference = continuous_dirichlet(phi, density, domain, grad=grad)

    def one(mesh: Mesh) -> StudyRow:
        pi = discretize_reference(mesh, potential, quad_order)
        m = pi if m_rule == "stationary" else project_measure(mesh, mu, quad_order)
        value = dirichlet_energy(mesh, project_function(mesh, phi), m, kind=kind)
        return StudyRow(mesh_size=mesh.size(), value=value, reference=reference,
                        error=abs(value - reference))

    rows = _map_ordered(one, meshes)
    _attach_orders(rows)
    return StudyResult("gamma_energy",
                       {"family": family.name, "m_rule": m_rule,
                        "potential": potential.name, "kind": kind}, rows)


def _boundary_layer_measure(domain: Domain, box: Box, width: float) -> float:
    """Measure of the width-neighbourhood of the box boundary inside Omega."""
    outer = box.expanded(width)
    inner = box.expanded(-width)
    if domain.dim == 1:
        a, b = float(domain.bounds[0]), float(domain.bounds[1])

        def clip_len(bx: Box) -> float:
            return max(0.0, min(b, float(bx.hi[0])) - max(a, float(bx.lo[0])))

        inner_len = clip_len(inner) if np.all(inner.hi > inner.lo) else 0.0
        return clip_len(outer) - inner_len
    from . import geometry

    def clip_area(bx: Box) -> float:
        if np.any(bx.hi <= bx.lo):
            return 0.0
        clipped = geometry.clip_convex(np.asarray(domain.vertices),
                                       bx.as_polygon())
        return max(geometry.polygon_area(clipped), 0.0) if len(clipped) >= 3 else 0.0

    return clip_area(outer) - clip_area(inner)


def gamma_affine_minimization_study(family: MeshFamily, z, xi, eps: float,
                                    kind: str = "logarithmic") -> StudyResult:
    """Localized energy of the projected affine field against eps^d |xi|^2.

    The affine field is discrete-harmonic away from the cube boundary (a
    flux-balance identity on complete neighbour rings); its cube-localized
    energy, in the face-sum normalization, converges to eps^d |xi|^2 with a
    discrepancy controlled by the measured boundary-layer volume.
    """
    meshes = family.build()
    domain = meshes[0].domain
    z_arr = np.atleast_1d(np.asarray(z, dtype=float))
    xi_arr = np.atleast_1d(np.asarray(xi, dtype=float))
    box = Box.from_center(z_arr, eps)
    margin = 1e-9 * max(domain.diameter, 1.0)
    corners = ([box.lo, box.hi] if domain.dim == 1 else
               list(box.as_polygon()))
    for corner in corners:
        probe = np.atleast_1d(corner)
        inside = (domain.bounds[0] + margin < probe[0] < domain.bounds[1] - margin
                  if domain.dim == 1 else
                  domain.contains(probe, tol=-margin))
        if not inside:
            raise ValueError("the cube must be compactly contained in the domain")
    reference = eps ** domain.dim * float(xi_arr @ xi_arr)

    def one(mesh: Mesh) -> StudyRow:
        pi = DiscreteMeasure(mesh.volumes / mesh.volumes.sum())
        f = (mesh.sites - z_arr[None, :]) @ xi_arr
        value = 2.0 * dirichlet_energy(mesh, f, pi, kind=kind, region=box)
        interior = np.flatnonzero(cells_inside(mesh, box))
        residual = 0.0
        adjacency = mesh.adjacency()
        trans = mesh.transmissibilities()
        for k in interior:
            acc = 0.0
            for face, nb in adjacency[int(k)]:
                acc += trans[face] * (f[nb] - f[int(k)])
            residual = max(residual, abs(acc))
        layer = _boundary_layer_measure(domain, box, 5.0 * mesh.size())
        return StudyRow(mesh_size=mesh.size(), value=value, reference=reference,
                        error=abs(value - reference),
                        extras={"harmonicity_residual": residual,
                                "boundary_layer": layer,
                                "interior_cells": float(len(interior))})

    rows = _map_ordered(one, meshes)
    _attach_orders(rows)
    return StudyResult("gamma_affine",
                       {"family": family.name, "z": tuple(z_arr),
                        "xi": tuple(xi_arr), "eps": eps}, rows)


# -- EDI audit -------------------------------------------------------------------------


def _simpson_weights(steps: int, dt: float) -> np.ndarray:
    if steps % 2 != 0:
        raise ValueError("Simpson quadrature needs an even number of steps")
    w = np.ones(steps + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (dt / 3.0)


@dataclass
class EdiAudit:
    """Entropy balance along an exact trajectory with Simpson time quadrature."""

    entropy_start: float
    entropy_end: float
    action_integral: float      # integral of the dual action at (m, dm/dt)
    fisher_integral: float      # integral of half the Fisher information
    residual: float
    times: np.ndarray
    dual_nodes: np.ndarray
    fisher_nodes: np.ndarray

    def summary(self) -> dict:
        return {"H0": self.entropy_start, "HT": self.entropy_end,
                "action_integral": self.action_integral,
                "fisher_integral": self.fisher_integral,
                "residual": self.residual, "nodes": len(self.times)}


def edi_audit(mesh: Mesh, potential: Potential, m0: DiscreteMeasure, T: float,
              steps: int, mean_kind: str = "logarithmic",
              quad_order: int | None = None) -> EdiAudit:
    """Audit the entropy balance H(m_T) + int (dual + half Fisher) = H(m_0).

    Needs the dense spectral oracle (at most 400 cells) and strictly positive
    initial masses; blend toward the stationary measure first otherwise.
    The residual along exact flows is pure quadrature error and shrinks at
    fourth order under node doubling.
    """
    if mesh.n_cells > 400:
        raise ValueError("edi_audit needs the dense oracle (<= 400 cells)")
    if np.any(np.asarray(getattr(m0, "masses", m0)) <= 0.0):
        raise ValueError("initial measure must be positive on every cell "
                         "(blend toward the stationary measure first)")
    pi = discretize_reference(mesh, potential, quad_order)
    weights = face_weights(mesh, potential, mean_kind, quad_order)
    generator = assemble_generator(mesh, weights, pi)
    trajectory = solve_trajectory(m0, T, steps, generator, scheme="exact_dense")
    dual_nodes = np.empty(steps + 1)
    fisher_nodes = np.empty(steps + 1)
    guess = None
    for i in range(steps + 1):
        m_i = trajectory.masses[i]
        sigma = generator.matrix @ m_i
        operator = assemble_onsager(mesh, weights, m_i, pi)
        value, guess = dual_action(m_i, sigma, weights, pi, operator=operator,
                                   initial_guess=guess, return_solution=True)
        dual_nodes[i] = value
        fisher_nodes[i] = 0.5 * fisher(m_i, weights, pi)
    w = _simpson_weights(steps, T / steps)
    action_integral = float(w @ dual_nodes)
    fisher_integral = float(w @ fisher_nodes)
    h0 = entropy(m0, pi)
    ht = entropy(trajectory.measure(steps), pi)
    residual = h0 - ht - (action_integral + fisher_integral)
    return EdiAudit(entropy_start=h0, entropy_end=ht,
                    action_integral=action_integral,
                    fisher_integral=fisher_integral, residual=residual,
                    times=trajectory.times, dual_nodes=dual_nodes,
                    fisher_nodes=fisher_nodes)


# -- evolutionary convergence -----------------------------------------------------------


def heat_cosine_density(t: float, amplitude: float = 0.5) -> Callable:
    """Closed-form heat solution 1 + a e^{-pi^2 t} cos(pi x) on [0, 1]."""
    damp = amplitude * math.exp(-math.pi ** 2 * t)
    return lambda x: 1.0 + damp * math.cos(math.pi * float(np.atleast_1d(x)[0]))


def _cosine_density_1d_exact(t: float, cells: int,
                             amplitude: float = 0.5) -> Density1D:
    """Exact cell averages of the cosine heat solution on a uniform grid."""
    edges = np.linspace(0.0, 1.0, cells + 1)
    damp = amplitude * math.exp(-math.pi ** 2 * t)
    sin = np.sin(math.pi * edges)
    avg = 1.0 + damp * (sin[1:] - sin[:-1]) / (math.pi * np.diff(edges))
    return Density1D(edges, avg)


def _is_cosine_token(rho0) -> tuple[bool, float]:
    if isinstance(rho0, str):
        name, _, arg = rho0.partition(":")
        if name == "cosine":
            return True, float(arg) if arg else 0.5
    return False, 0.0


def _richardson_reference_1d(potential: Potential, rho0: Callable, T: float,
                             t_nodes: int, n_fine: int,
                             mean_kind: str) -> list[Density1D]:
    """Fine-mesh trajectory densities, Richardson-extrapolated in space."""
    dens: dict[int, np.ndarray] = {}
    for n in (n_fine, n_fine // 2):
        mesh = build_interval_mesh(n)
        pi = discretize_reference(mesh, potential)
        weights = face_weights(mesh, potential, mean_kind)
        gen = assemble_generator(mesh, weights, pi)
        m0 = project_measure(mesh, rho0)
        traj = solve_trajectory(m0, T, t_nodes - 1, gen, scheme="exact_dense")
        dens[n] = traj.masses * n  # Lebesgue densities on the uniform grid
    fine, coarse = dens[n_fine], dens[n_fine // 2]
    averaged = 0.5 * (fine[:, 0::2] + fine[:, 1::2])
    extrap = (4.0 * averaged - coarse) / 3.0
    edges = np.linspace(0.0, 1.0, n_fine // 2 + 1)
    out = []
    for i in range(t_nodes):
        vals = np.maximum(extrap[i], 0.0)
        vals = vals / float(np.sum(vals * np.diff(edges)))
        out.append(Density1D(edges, vals))
    return out


def evolutionary_convergence_study(family: MeshFamily, potential: Potential,
                                   rho0, T: float, t_nodes: int = 17,
                                   mean_kind: str = "logarithmic",
                                   quad_order: int | None = None) -> StudyResult:
    """Solution error of the discrete flow against a continuum reference.

    d=1 rows report sup_t of the exact quadratic Wasserstein distance between
    the embedded discrete solution and the reference (spectral cosine solution
    when V = 0, Richardson fine-mesh solution otherwise) on a t_nodes grid,
    plus entropy excess and the two dissipation integrals.
    """
    meshes = family.build()
    domain = meshes[0].domain
    if domain.dim != 1:
        return _evolutionary_study_2d(family, potential, rho0, T, t_nodes,
                                      mean_kind, quad_order)
    is_cos, amp = _is_cosine_token(rho0)
    unit = (abs(float(domain.bounds[0])) <= 1e-15
            and abs(float(domain.bounds[1]) - 1.0) <= 1e-15)
    closed_form = is_cos and potential.name == "zero" and unit
    rho0_fn = (density_from_token(rho0, 1) if isinstance(rho0, str) else rho0)
    times = np.linspace(0.0, T, t_nodes)
    if closed_form:
        refs = [_cosine_density_1d_exact(t, 4096, amp) for t in times]
        entropy_refs = [continuum_entropy(heat_cosine_density(t, amp),
                                          potential, domain, 1024)
                        for t in times]
    else:
        n_fine = min(1024, 4 * max(int(n) for n in family.labels))
        refs = _richardson_reference_1d(potential, rho0_fn, T, t_nodes,
                                        n_fine, mean_kind)
        ref_mesh = build_interval_mesh(n_fine // 2)
        ref_pi = discretize_reference(ref_mesh, potential)
        entropy_refs = [entropy(DiscreteMeasure.normalized(
            r.values * np.diff(r.edges)), ref_pi) for r in refs]

    def one(mesh: Mesh) -> StudyRow:
        pi = discretize_reference(mesh, potential, quad_order)
        weights = face_weights(mesh, potential, mean_kind, quad_order)
        generator = assemble_generator(mesh, weights, pi)
        m0 = project_measure(mesh, rho0_fn, quad_order)
        traj = solve_trajectory(m0, T, t_nodes - 1, generator,
                                scheme="exact_dense")
        sup_w2 = 0.0
        entropy_excess = 0.0
        dual_nodes = np.empty(t_nodes)
        fisher_nodes = np.empty(t_nodes)
        guess = None
        for i in range(t_nodes):
            m_i = traj.masses[i]
            disc = Density1D.from_mesh(mesh, m_i / mesh.volumes)
            sup_w2 = max(sup_w2, wasserstein_1d(disc, refs[i]))
            entropy_excess = max(entropy_excess,
                                 entropy(traj.measure(i), pi) - entropy_refs[i])
            sigma = generator.matrix @ m_i
            operator = assemble_onsager(mesh, weights, m_i, pi)
            dual_nodes[i], guess = dual_action(m_i, sigma, weights, pi,
                                               operator=operator,
                                               initial_guess=guess,
                                               return_solution=True)
            fisher_nodes[i] = 0.5 * fisher(m_i, weights, pi)
        w = _simpson_weights(t_nodes - 1, T / (t_nodes - 1))
        return StudyRow(mesh_size=mesh.size(), value=sup_w2, reference=0.0,
                        error=sup_w2,
                        extras={"entropy_excess": entropy_excess,
                                "dual_integral": float(w @ dual_nodes),
                                "fisher_integral": float(w @ fisher_nodes)})

    rows = _map_ordered(one, meshes)
    _attach_orders(rows)
    return StudyResult("evolutionary",
                       {"family": family.name, "potential": potential.name,
                        "rho0": rho0 if isinstance(rho0, str) else "callable",
                        "T": T, "t_nodes": t_nodes}, rows)


def _evolutionary_study_2d(family: MeshFamily, potential: Potential, rho0,
                           T: float, t_nodes: int, mean_kind: str,
                           quad_order: int | None) -> StudyResult:
    """L1 density error against a 4x finer cartesian reference (d=2)."""
    sizes = [int(n) for n in family.labels]
    n_ref = 4 * max(sizes)
    for n in sizes:
        if n_ref % n != 0:
            raise ValueError("2d family sizes must divide the reference grid")
    rho0_fn = (density_from_token(rho0, 2) if isinstance(rho0, str) else rho0)
    ref_mesh = build_cartesian_mesh(n_ref, n_ref)
    ref_pi = discretize_reference(ref_mesh, potential, quad_order)
    ref_weights = face_weights(ref_mesh, potential, mean_kind, quad_order)
    ref_gen = assemble_generator(ref_mesh, ref_weights, ref_pi)
    ref_m0 = project_measure(ref_mesh, rho0_fn, quad_order)
    steps = 64 * (t_nodes - 1)
    ref_traj = solve_trajectory(ref_m0, T, steps, ref_gen,
                                scheme="implicit_euler")
    stride = steps // (t_nodes - 1)
    ref_dens = [ref_traj.masses[i * stride].reshape(n_ref, n_ref) * n_ref ** 2
                for i in range(t_nodes)]

    def one(mesh_and_n) -> StudyRow:
        mesh, n = mesh_and_n
        pi = discretize_reference(mesh, potential, quad_order)
        weights = face_weights(mesh, potential, mean_kind, quad_order)
        generator = assemble_generator(mesh, weights, pi)
        m0 = project_measure(mesh, rho0_fn, quad_order)
        traj = solve_trajectory(m0, T, t_nodes - 1, generator, scheme="auto")
        factor = n_ref // n
        cell_area = 1.0 / n_ref ** 2
        sup_l1 = 0.0
        for i in range(t_nodes):
            coarse = traj.masses[i].reshape(n, n) * n ** 2
            lifted = np.kron(coarse, np.ones((factor, factor)))
            sup_l1 = max(sup_l1,
                         float(np.abs(lifted - ref_dens[i]).sum()) * cell_area)
        return StudyRow(mesh_size=mesh.size(), value=sup_l1, reference=0.0,
                        error=sup_l1)

    rows = _map_ordered(one, list(zip(family.build(), sizes)))
    _attach_orders(rows)
    return StudyResult("evolutionary2d",
                       {"family": family.name, "potential": potential.name,
                        "T": T}, rows)


# -- liminf trend study ---------------------------------------------------------------


def lower_bound_trend_study(family: MeshFamily, mu: Callable, eta: Callable,
                            potential: Potential | None = None,
                            mean_kind: str = "logarithmic",
                            quad_order: int | None = None) -> StudyResult:
    """Entropy, Fisher and dual action of projected data against continuum values.

    Rows carry the signed entropy deficit in `error` (negative values witness
    the lower-semicontinuity side); Fisher and dual columns sit in extras.
    """
    potential = potential or zero_potential()
    meshes = family.build()
    domain = meshes[0].domain
    if domain.dim != 1:
        raise ValueError("the trend study runs on one-dimensional families")
    h_ref = continuum_entropy(mu, potential, domain)
    i_ref = continuum_fisher(mu, potential, domain)
    a_ref = continuum_dual(mu, eta, potential, domain)

    def one(mesh: Mesh) -> StudyRow:
        pi = discretize_reference(mesh, potential, quad_order)
        weights = face_weights(mesh, potential, mean_kind, quad_order)
        m = project_measure(mesh, mu, quad_order)
        h_val = entropy(m, pi)
        i_val = fisher(m, weights, pi)
        e = project_function(mesh, eta) * pi.masses
        e = e - pi.masses * float(e.sum())  # balance: subtract the pi-mean
        a_val = dual_action(m, e, weights, pi)
        return StudyRow(mesh_size=mesh.size(), value=h_val, reference=h_ref,
                        error=h_val - h_ref,
                        extras={"fisher_value": i_val, "fisher_ref": i_ref,
                                "fisher_deficit": i_val - i_ref,
                                "dual_value": a_val, "dual_ref": a_ref,
                                "dual_deficit": a_val - a_ref})

    rows = _map_ordered(one, meshes)
    return StudyResult("lower_bound_trend",
                       {"family": family.name, "potential": potential.name},
                       rows)


# -- isotropy contrast ------------------------------------------------------------------


def isotropy_study(family: MeshFamily,
                   potential: Potential | None = None) -> StudyResult:
    """Sup isotropy defect per family member (recorded, compared at sizes)."""
    potential = potential or zero_potential()

    def one(mesh: Mesh) -> StudyRow:
        pi = discretize_reference(mesh, potential)
        weights = face_weights(mesh, potential)
        defect = float(isotropy_defect(mesh, weights, pi).max())
        return StudyRow(mesh_size=mesh.size(), value=defect, reference=0.0,
                        error=defect)

    rows = _map_ordered(one, family.build())
    return StudyResult("isotropy", {"family": family.name}, rows)
