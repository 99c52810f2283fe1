"""Admissible finite-volume meshes on intervals and convex polygons.

A mesh is a finite partition of a convex domain into convex cells, each
carrying a site, such that the segment between neighbouring sites is
orthogonal to the shared face (the two-point flux consistency condition).
Meshes are immutable after construction: every array is frozen, so they can
be shared freely across concurrent readers.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry
from .geometry import Box

ORTHOGONALITY_TOL = 1e-9
VOLUME_RTOL = 1e-10
VERTEX_MERGE_TOL = 1e-12
FACE_DROP_FACTOR = 1e-12


class MeshError(ValueError):
    """Raised when construction input or a mesh invariant is invalid."""


def _frozen(arr, dtype=float) -> np.ndarray:
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Domain:
    """Bounded convex domain: an interval (d=1) or a ccw polygon (d=2)."""

    dim: int
    bounds: np.ndarray | None = None     # (2,) for d=1
    vertices: np.ndarray | None = None   # (k,2) ccw for d=2

    @staticmethod
    def interval(a: float, b: float) -> "Domain":
        if not b > a:
            raise MeshError(f"degenerate interval [{a}, {b}]")
        return Domain(1, bounds=_frozen([a, b]))

    @staticmethod
    def rectangle(x0: float, y0: float, x1: float, y1: float) -> "Domain":
        if not (x1 > x0 and y1 > y0):
            raise MeshError("degenerate rectangle")
        return Domain.polygon([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    @staticmethod
    def polygon(vertices) -> "Domain":
        verts = geometry.ensure_ccw(np.asarray(vertices, dtype=float))
        if len(verts) < 3 or geometry.polygon_area(verts) <= 0.0:
            raise MeshError("domain polygon must have positive area")
        return Domain(2, vertices=_frozen(verts))

    @property
    def volume(self) -> float:
        if self.dim == 1:
            return float(self.bounds[1] - self.bounds[0])
        return geometry.polygon_area(self.vertices)

    @property
    def diameter(self) -> float:
        if self.dim == 1:
            return self.volume
        return geometry.polygon_diameter(self.vertices)

    def contains(self, p, tol: float = 1e-9) -> bool:
        if self.dim == 1:
            x = float(np.atleast_1d(p)[0])
            return self.bounds[0] - tol <= x <= self.bounds[1] + tol
        return geometry.point_in_convex(self.vertices, np.asarray(p, dtype=float), tol)

    def inset(self, delta: float) -> "Domain | None":
        """Domain shrunk by delta (points at distance > delta from the boundary)."""
        if self.dim == 1:
            a, b = self.bounds[0] + delta, self.bounds[1] - delta
            return Domain.interval(a, b) if b > a else None
        verts = geometry.inset_convex(np.asarray(self.vertices), delta)
        if len(verts) < 3 or geometry.polygon_area(verts) <= 0.0:
            return None
        return Domain.polygon(verts)


class Mesh:
    """Finite-volume mesh: cells with sites and volumes, faces with TPFA data.

    Parameters
    ----------
    dim : 1 or 2
    domain : Domain
    sites : (n, dim) site coordinates, one per cell
    volumes : (n,) cell volumes
    cell_bounds : (n, 2) interval endpoints (d=1 only)
    cell_polygons : list of (k, 2) ccw vertex arrays (d=2 only)
    face_cells : (F, 2) int cell pairs, each unordered pair at most once
    face_areas : (F,) d-1 dimensional face measures
    face_dists : (F,) site distances |x_K - x_L|
    face_endpoints : optional (F, 2, 2) face segment endpoints (d=2)
    """

    def __init__(self, dim, domain, sites, volumes, cell_bounds=None,
                 cell_polygons=None, face_cells=None, face_areas=None,
                 face_dists=None, face_endpoints=None):
        self.dim = int(dim)
        self.domain = domain
        self.sites = _frozen(np.atleast_2d(np.asarray(sites, dtype=float)))
        self.volumes = _frozen(volumes)
        self.cell_bounds = _frozen(cell_bounds) if cell_bounds is not None else None
        self.cell_polygons = ([_frozen(p) for p in cell_polygons]
                              if cell_polygons is not None else None)
        n_faces = 0 if face_cells is None else len(face_cells)
        self.face_cells = _frozen(np.asarray(face_cells, dtype=np.int64).reshape(n_faces, 2),
                                  dtype=np.int64)
        self.face_areas = _frozen(np.asarray(face_areas, dtype=float).reshape(n_faces))
        self.face_dists = _frozen(np.asarray(face_dists, dtype=float).reshape(n_faces))
        self._face_endpoints = (_frozen(face_endpoints) if face_endpoints is not None
                                else None)
        self._adjacency: list[list[tuple[int, int]]] | None = None

    # -- basic queries ----------------------------------------------------

    @property
    def n_cells(self) -> int:
        return len(self.sites)

    @property
    def n_faces(self) -> int:
        return len(self.face_cells)

    def cell_diameters(self) -> np.ndarray:
        if self.dim == 1:
            return self.cell_bounds[:, 1] - self.cell_bounds[:, 0]
        return np.array([geometry.polygon_diameter(p) for p in self.cell_polygons])

    def size(self) -> float:
        """Mesh size: the largest cell diameter."""
        return float(self.cell_diameters().max())

    def face_tau(self) -> np.ndarray:
        """Unit directions (x_K - x_L)/|x_K - x_L| per face."""
        k, l = self.face_cells[:, 0], self.face_cells[:, 1]
        diff = self.sites[k] - self.sites[l]
        return diff / self.face_dists[:, None]

    def transmissibilities(self) -> np.ndarray:
        """TPFA geometric factors |Γ_KL| / d_KL per face."""
        return self.face_areas / self.face_dists

    def adjacency(self) -> list[list[tuple[int, int]]]:
        """Per cell: list of (face index, neighbour cell index)."""
        if self._adjacency is None:
            adj: list[list[tuple[int, int]]] = [[] for _ in range(self.n_cells)]
            for f, (k, l) in enumerate(self.face_cells):
                adj[int(k)].append((f, int(l)))
                adj[int(l)].append((f, int(k)))
            self._adjacency = adj
        return self._adjacency

    def face_endpoints(self) -> np.ndarray:
        """Face segment endpoints, (F, 2, 2); reconstructed if not stored (d=2)."""
        if self.dim != 2:
            raise MeshError("face endpoints are only defined for d=2")
        if self._face_endpoints is None:
            tol = 1e-9 * max(self.size(), 1e-30)
            ends = np.empty((self.n_faces, 2, 2))
            for f, (k, l) in enumerate(self.face_cells):
                seg = geometry.shared_edge(self.cell_polygons[int(k)],
                                           self.cell_polygons[int(l)], tol)
                if seg is None:
                    raise MeshError(f"cannot reconstruct face {f} between cells {k}, {l}")
                ends[f, 0], ends[f, 1] = seg
            self._face_endpoints = _frozen(ends)
        return self._face_endpoints

    def site_in_cell(self, k: int, tol: float = 1e-9) -> bool:
        if self.dim == 1:
            lo, hi = self.cell_bounds[k]
            return lo - tol <= self.sites[k, 0] <= hi + tol
        return geometry.point_in_convex(self.cell_polygons[k], self.sites[k], tol)

    # -- invariants ---------------------------------------------------------

    def validate(self) -> None:
        """Check the structural invariants; raise MeshError on violation."""
        vol = float(self.volumes.sum())
        if abs(vol - self.domain.volume) > VOLUME_RTOL * max(abs(self.domain.volume), 1e-300):
            raise MeshError(f"cell volumes sum to {vol!r}, domain volume is "
                            f"{self.domain.volume!r}")
        if np.any(self.volumes <= 0.0):
            raise MeshError("nonpositive cell volume")
        if self.n_faces:
            if np.any(self.face_dists <= 0.0):
                raise MeshError("coincident sites across a face")
            if np.any(self.face_areas <= 0.0):
                raise MeshError("nonpositive face area")
            pairs = {tuple(sorted(pair)) for pair in map(tuple, self.face_cells)}
            if len(pairs) != self.n_faces:
                raise MeshError("duplicate face pair")
        for k in range(self.n_cells):
            if not self.site_in_cell(k):
                raise MeshError(f"site of cell {k} lies outside its cell")
        if self.dim == 2 and self.n_faces:
            tau = self.face_tau()
            ends = self.face_endpoints()
            tangent = ends[:, 1] - ends[:, 0]
            tangent /= np.linalg.norm(tangent, axis=1)[:, None]
            dots = np.abs(np.einsum("fi,fi->f", tau, tangent))
            worst = int(np.argmax(dots))
            if dots[worst] > ORTHOGONALITY_TOL:
                raise MeshError(f"face {worst} violates orthogonality: |tau.t| = "
                                f"{dots[worst]:.3e}")

    # -- file format ----------------------------------------------------------

    def write(self, path) -> None:
        """Write the structured text format (decimal, round-trip exact)."""
        lines = ["gradflow-mesh 1", f"dim {self.dim}"]
        if self.dim == 1:
            a, b = (float(v) for v in self.domain.bounds)
            lines.append("domain 2")
            lines.append(f"{a!r} {b!r}")
        else:
            dv = self.domain.vertices
            lines.append(f"domain {len(dv)}")
            lines.extend(f"{float(x)!r} {float(y)!r}" for x, y in dv)
        lines.append(f"cells {self.n_cells}")
        for k in range(self.n_cells):
            site = " ".join(repr(float(c)) for c in self.sites[k])
            if self.dim == 1:
                lo, hi = (float(v) for v in self.cell_bounds[k])
                lines.append(f"{k} {site} {float(self.volumes[k])!r} {lo!r} {hi!r}")
            else:
                poly = self.cell_polygons[k]
                coords = " ".join(repr(float(c)) for v in poly for c in v)
                lines.append(f"{k} {site} {float(self.volumes[k])!r} {len(poly)} {coords}")
        lines.append(f"faces {self.n_faces}")
        for f in range(self.n_faces):
            k, l = self.face_cells[f]
            lines.append(f"{k} {l} {float(self.face_areas[f])!r} {float(self.face_dists[f])!r}")
        with open(path, "w", encoding="ascii") as fh:
            fh.write("\n".join(lines) + "\n")

    @staticmethod
    def read(path) -> "Mesh":
        with open(path, encoding="ascii") as fh:
            tokens = fh.read().split()
        pos = 0

        def take(n=1):
            nonlocal pos
            out = tokens[pos:pos + n]
            if len(out) != n:
                raise MeshError("truncated mesh file")
            pos += n
            return out

        magic, version = take(2)
        if magic != "gradflow-mesh" or version != "1":
            raise MeshError("not a gradflow mesh file")
        tag, dim = take(2)
        if tag != "dim" or dim not in ("1", "2"):
            raise MeshError("bad dim header")
        dim = int(dim)
        tag, ndv = take(2)
        if tag != "domain":
            raise MeshError("bad domain header")
        ndv = int(ndv)
        if dim == 1:
            a, b = (float(t) for t in take(2))
            domain = Domain.interval(a, b)
        else:
            verts = np.array([[float(x) for x in take(2)] for _ in range(ndv)])
            domain = Domain.polygon(verts)
        tag, nc = take(2)
        if tag != "cells":
            raise MeshError("bad cells header")
        nc = int(nc)
        sites = np.empty((nc, dim))
        volumes = np.empty(nc)
        bounds = np.empty((nc, 2)) if dim == 1 else None
        polys: list[np.ndarray] | None = [] if dim == 2 else None
        for i in range(nc):
            cid = int(take(1)[0])
            if cid != i:
                raise MeshError("cell ids must be consecutive")
            sites[i] = [float(t) for t in take(dim)]
            volumes[i] = float(take(1)[0])
            if dim == 1:
                bounds[i] = [float(t) for t in take(2)]
            else:
                nv = int(take(1)[0])
                polys.append(np.array([[float(x) for x in take(2)]
                                       for _ in range(nv)]))
        tag, nf = take(2)
        if tag != "faces":
            raise MeshError("bad faces header")
        nf = int(nf)
        fc = np.empty((nf, 2), dtype=np.int64)
        fa = np.empty(nf)
        fd = np.empty(nf)
        for f in range(nf):
            fc[f] = [int(t) for t in take(2)]
            fa[f] = float(take(1)[0])
            fd[f] = float(take(1)[0])
        mesh = Mesh(dim, domain, sites, volumes, cell_bounds=bounds,
                    cell_polygons=polys, face_cells=fc, face_areas=fa,
                    face_dists=fd)
        mesh.validate()
        return mesh


# -- constructors -------------------------------------------------------------


def build_interval_mesh(n: int, breakpoints=None, interval=(0.0, 1.0)) -> Mesh:
    """Partition [a, b] into n cells with sites at the cell midpoints.

    `breakpoints` may be a length n+1 increasing sequence or a callable
    index -> coordinate; by default the grid is uniform.
    """
    if n < 1:
        raise MeshError("n must be a positive integer")
    a, b = float(interval[0]), float(interval[1])
    if breakpoints is None:
        pts = np.linspace(a, b, n + 1)
    elif callable(breakpoints):
        pts = np.array([float(breakpoints(i)) for i in range(n + 1)])
    else:
        pts = np.asarray(breakpoints, dtype=float)
    if pts.shape != (n + 1,):
        raise MeshError(f"expected {n + 1} breakpoints, got {pts.shape}")
    for i in range(n):
        if not pts[i + 1] > pts[i]:
            raise MeshError(f"breakpoints not strictly increasing at index {i + 1}")
    if abs(pts[0] - a) > 1e-12 * max(1.0, abs(a)) or \
       abs(pts[-1] - b) > 1e-12 * max(1.0, abs(b)):
        raise MeshError("breakpoints do not span the requested interval")
    domain = Domain.interval(pts[0], pts[-1])
    sites = 0.5 * (pts[:-1] + pts[1:])
    volumes = np.diff(pts)
    bounds = np.column_stack([pts[:-1], pts[1:]])
    face_cells = np.column_stack([np.arange(n - 1), np.arange(1, n)])
    face_areas = np.ones(max(n - 1, 0))
    face_dists = sites[1:] - sites[:-1]
    mesh = Mesh(1, domain, sites[:, None], volumes, cell_bounds=bounds,
                face_cells=face_cells, face_areas=face_areas, face_dists=face_dists)
    mesh.validate()
    return mesh


def build_cartesian_mesh(nx: int, ny: int, rect=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """nx-by-ny tensor grid of rectangles with sites at the cell centers."""
    if nx < 1 or ny < 1:
        raise MeshError("nx, ny must be positive integers")
    x0, y0, x1, y1 = (float(v) for v in rect)
    if not (x1 > x0 and y1 > y0):
        raise MeshError("degenerate rectangle")
    domain = Domain.rectangle(x0, y0, x1, y1)
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    hx, hy = (x1 - x0) / nx, (y1 - y0) / ny

    def cell_id(i, j):
        return j * nx + i

    sites = np.empty((nx * ny, 2))
    polys: list[np.ndarray] = []
    for j in range(ny):
        for i in range(nx):
            sites[cell_id(i, j)] = [0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])]
            polys.append(np.array([[xs[i], ys[j]], [xs[i + 1], ys[j]],
                                   [xs[i + 1], ys[j + 1]], [xs[i], ys[j + 1]]]))
    volumes = np.full(nx * ny, hx * hy)
    fc, fa, fd, fe = [], [], [], []
    for j in range(ny):
        for i in range(nx):
            if i + 1 < nx:
                fc.append((cell_id(i, j), cell_id(i + 1, j)))
                fa.append(hy)
                fd.append(hx)
                fe.append([[xs[i + 1], ys[j]], [xs[i + 1], ys[j + 1]]])
            if j + 1 < ny:
                fc.append((cell_id(i, j), cell_id(i, j + 1)))
                fa.append(hx)
                fd.append(hy)
                fe.append([[xs[i], ys[j + 1]], [xs[i + 1], ys[j + 1]]])
    mesh = Mesh(2, domain, sites, volumes, cell_polygons=polys,
                face_cells=np.array(fc, dtype=np.int64).reshape(-1, 2),
                face_areas=fa, face_dists=fd,
                face_endpoints=np.array(fe).reshape(-1, 2, 2))
    mesh.validate()
    return mesh


def build_voronoi_mesh(sites, domain) -> Mesh:
    """Voronoi cells of the given sites, clipped to a convex domain.

    Orthogonality of site segments to faces holds by construction (faces lie
    on perpendicular bisectors).  Faces with measure below
    FACE_DROP_FACTOR * [T]^(d-1) are dropped.
    """
    pts = np.atleast_2d(np.asarray(sites, dtype=float))
    if pts.shape[0] == 1 and pts.shape[1] > 2:
        pts = pts.T
    n, dim = pts.shape
    if dim not in (1, 2):
        raise MeshError("only dimensions 1 and 2 are supported")
    if not isinstance(domain, Domain):
        domain = (Domain.interval(*np.ravel(domain)) if dim == 1
                  else Domain.polygon(domain))
    if domain.dim != dim:
        raise MeshError("site dimension does not match the domain")
    # pairwise-distinct sites
    for i in range(n):
        for j in range(i + 1, n):
            if np.linalg.norm(pts[i] - pts[j]) <= 1e-12 * max(domain.diameter, 1.0):
                raise MeshError(f"duplicate sites {i} and {j}")
    for i in range(n):
        if not domain.contains(pts[i], tol=1e-12 * max(domain.diameter, 1.0)):
            raise MeshError(f"site {i} lies outside the domain")

    if dim == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        xs = pts[order, 0]
        cuts = np.concatenate([[domain.bounds[0]], 0.5 * (xs[:-1] + xs[1:]),
                               [domain.bounds[1]]])
        bounds = np.empty((n, 2))
        bounds[order, 0] = cuts[:-1]
        bounds[order, 1] = cuts[1:]
        volumes = bounds[:, 1] - bounds[:, 0]
        fc = np.column_stack([order[:-1], order[1:]])
        fd = xs[1:] - xs[:-1]
        mesh = Mesh(1, domain, pts, volumes, cell_bounds=bounds,
                    face_cells=fc, face_areas=np.ones(max(n - 1, 0)), face_dists=fd)
        mesh.validate()
        return mesh

    merge_tol = VERTEX_MERGE_TOL * max(domain.diameter, 1.0)
    polys: list[np.ndarray] = []
    for i in range(n):
        poly = np.asarray(domain.vertices, dtype=float)
        for j in range(n):
            if j == i or len(poly) == 0:
                continue
            normal = pts[j] - pts[i]
            offset = 0.5 * float(normal @ (pts[i] + pts[j]))
            poly = geometry.clip_halfplane(poly, normal, offset, merge_tol)
        if len(poly) < 3 or geometry.polygon_area(poly) <= 0.0:
            raise MeshError(f"site {i} produced a degenerate Voronoi cell")
        polys.append(poly)

    volumes = np.array([geometry.polygon_area(p) for p in polys])
    mesh_size = max(geometry.polygon_diameter(p) for p in polys)
    drop = FACE_DROP_FACTOR * mesh_size
    section_tol = 1e-12 * max(domain.diameter, 1.0)
    fc, fa, fd, fe = [], [], [], []
    for i in range(n):
        for j in range(i + 1, n):
            gap = float(np.linalg.norm(pts[i] - pts[j]))
            if gap > 2.0 * mesh_size:
                continue
            normal = pts[j] - pts[i]
            offset = 0.5 * float(normal @ (pts[i] + pts[j]))
            seg = geometry.line_section(polys[i], normal, offset, section_tol)
            if seg is None:
                continue
            length = float(np.hypot(*(seg[1] - seg[0])))
            if length < drop:
                continue
            fc.append((i, j))
            fa.append(length)
            fd.append(gap)
            fe.append([seg[0], seg[1]])
    mesh = Mesh(2, domain, pts, volumes, cell_polygons=polys,
                face_cells=np.array(fc, dtype=np.int64).reshape(-1, 2),
                face_areas=fa, face_dists=fd,
                face_endpoints=np.array(fe, dtype=float).reshape(-1, 2, 2))
    mesh.validate()
    return mesh


# -- quality reports -----------------------------------------------------------


@dataclass(frozen=True)
class RegularityReport:
    zeta_inner: float
    zeta_area: float
    zeta: float
    mesh_size: float


def regularity_report(mesh: Mesh) -> RegularityReport:
    """Measured mesh-quality constants (reported, never asserted).

    zeta_inner is the worst ratio (inscribed ball radius at the site) / [T];
    zeta_area the worst face measure relative to [T]^(d-1); single-cell meshes
    report zeta_area = 1 by convention.
    """
    size = mesh.size()
    if mesh.dim == 1:
        lo = mesh.sites[:, 0] - mesh.cell_bounds[:, 0]
        hi = mesh.cell_bounds[:, 1] - mesh.sites[:, 0]
        inradii = np.maximum(np.minimum(lo, hi), 0.0)
    else:
        inradii = np.array([geometry.inradius_from(poly, site) for poly, site
                            in zip(mesh.cell_polygons, mesh.sites)])
    zeta_inner = float(inradii.min()) / size
    if mesh.n_faces:
        zeta_area = float(mesh.face_areas.min()) / size ** (mesh.dim - 1)
    else:
        zeta_area = 1.0
    zeta = min(zeta_inner, zeta_area, 1.0)
    return RegularityReport(zeta_inner, zeta_area, zeta, size)


def isotropy_defect(mesh: Mesh, weights, pi) -> np.ndarray:
    """Per-cell excess of the weighted second moment over the reference mass.

    For each cell the matrix M_K = 1/2 sum_L w_KL (x_K - x_L) (x_K - x_L)^T is
    compared against pi(K) I; the defect is max(lambda_max(M_K/pi(K) - I), 0).
    The mesh-level figure is the sup over cells.
    """
    w = np.asarray(getattr(weights, "w", weights), dtype=float)
    masses = np.asarray(getattr(pi, "masses", pi), dtype=float)
    if np.any(masses <= 0.0):
        raise ValueError("reference measure must be positive on every cell")
    d = mesh.dim
    moments = np.zeros((mesh.n_cells, d, d))
    k, l = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
    diff = mesh.sites[k] - mesh.sites[l]
    outer = 0.5 * w[:, None, None] * diff[:, :, None] * diff[:, None, :]
    np.add.at(moments, k, outer)
    np.add.at(moments, l, outer)
    defects = np.empty(mesh.n_cells)
    for c in range(mesh.n_cells):
        a = moments[c] / masses[c] - np.eye(d)
        lam = float(np.linalg.eigvalsh(a)[-1]) if d == 2 else float(a[0, 0])
        defects[c] = max(lam, 0.0)
    return defects


# -- region selection (shared by functionals and diagnostics) -------------------


def cell_box_overlap(mesh: Mesh, k: int, box: Box) -> float:
    """Measure of cell k intersected with an open axis-aligned box."""
    if mesh.dim == 1:
        lo, hi = mesh.cell_bounds[k]
        return max(0.0, min(hi, box.hi[0]) - max(lo, box.lo[0]))
    clipped = geometry.clip_convex(mesh.cell_polygons[k], box.as_polygon())
    if len(clipped) < 3:
        return 0.0
    return max(geometry.polygon_area(clipped), 0.0)


def cells_meeting(mesh: Mesh, region) -> np.ndarray:
    """Boolean mask of cells whose closure meets the open box `region`.

    For convex cells and an open box this is equivalent to a positive
    overlap measure, which is how it is evaluated.
    """
    if region is None:
        return np.ones(mesh.n_cells, dtype=bool)
    box = Box.coerce(region)
    tol = 1e-14
    mask = np.zeros(mesh.n_cells, dtype=bool)
    for k in range(mesh.n_cells):
        mask[k] = cell_box_overlap(mesh, k, box) > tol * float(mesh.volumes[k])
    return mask


def cells_inside(mesh: Mesh, region) -> np.ndarray:
    """Boolean mask of cells whose closure is contained in the open box."""
    box = Box.coerce(region)
    mask = np.zeros(mesh.n_cells, dtype=bool)
    for k in range(mesh.n_cells):
        if mesh.dim == 1:
            lo, hi = mesh.cell_bounds[k]
            pts = np.array([[lo], [hi]])
        else:
            pts = mesh.cell_polygons[k]
        mask[k] = bool(np.all(pts > box.lo) and np.all(pts < box.hi))
    return mask
