"""Planar geometry: neighborhoods, clipped Voronoi cells and their adjacency."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import DegenerateGeometryError, InvalidArgumentError


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle ``[xmin, xmax] x [ymin, ymax]``."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax > self.xmin and self.ymax > self.ymin):
            raise InvalidArgumentError(f"empty rectangle: {self}")

    @property
    def area(self) -> float:
        return (self.xmax - self.xmin) * (self.ymax - self.ymin)

    @property
    def diameter(self) -> float:
        return math.hypot(self.xmax - self.xmin, self.ymax - self.ymin)

    @property
    def corners(self) -> np.ndarray:
        return np.array(
            [
                [self.xmin, self.ymin],
                [self.xmax, self.ymin],
                [self.xmax, self.ymax],
                [self.xmin, self.ymax],
            ]
        )

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return (
            (pts[:, 0] >= self.xmin - tol)
            & (pts[:, 0] <= self.xmax + tol)
            & (pts[:, 1] >= self.ymin - tol)
            & (pts[:, 1] <= self.ymax + tol)
        )

    def distance(self, pts) -> np.ndarray:
        """Euclidean distance from each point to the rectangle (0 inside)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        dx = np.maximum(np.maximum(self.xmin - pts[:, 0], 0.0), pts[:, 0] - self.xmax)
        dy = np.maximum(np.maximum(self.ymin - pts[:, 1], 0.0), pts[:, 1] - self.ymax)
        return np.hypot(dx, dy)

    @classmethod
    def bounding(cls, pts) -> "Rect":
        pts = np.asarray(pts, dtype=float)
        xmin, ymin = pts.min(axis=0)
        xmax, ymax = pts.max(axis=0)
        # degenerate extents get a unit-width box so the area stays positive
        if xmax == xmin:
            xmin, xmax = xmin - 0.5, xmax + 0.5
        if ymax == ymin:
            ymin, ymax = ymin - 0.5, ymax + 0.5
        return cls(float(xmin), float(xmax), float(ymin), float(ymax))

    def to_list(self) -> list[float]:
        return [self.xmin, self.xmax, self.ymin, self.ymax]


@dataclass(frozen=True)
class SiteSet:
    """Distinct planar sites inside a rectangular domain."""

    sites: np.ndarray
    domain: Rect

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.sites, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise InvalidArgumentError(f"sites must have shape (n, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise InvalidArgumentError("sites contain non-finite coordinates")
        tol = 1e-12 * max(self.domain.diameter, 1.0)
        if not np.all(self.domain.contains(pts, tol)):
            raise InvalidArgumentError("some sites lie outside the domain")
        if len(np.unique(pts, axis=0)) != len(pts):
            raise InvalidArgumentError("duplicate sites")
        pts.setflags(write=False)
        object.__setattr__(self, "sites", pts)

    @classmethod
    def from_points(cls, pts, domain: Rect | None = None) -> "SiteSet":
        pts = np.asarray(pts, dtype=float)
        return cls(pts, domain if domain is not None else Rect.bounding(pts))

    def __len__(self) -> int:
        return len(self.sites)


@dataclass
class NeighborGraph:
    radius: float
    neighbors: list[np.ndarray]
    # unique pairs i < j and their distances, in a fixed order
    pairs: np.ndarray
    distances: np.ndarray
    active: np.ndarray = field(init=False)

    def __post_init__(self):
        sizes = np.array([len(nb) for nb in self.neighbors], dtype=int)
        self.active = np.flatnonzero(sizes > 0)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=int)


@dataclass
class VoronoiDiagram:
    generators: np.ndarray
    domain: Rect
    cells: list[np.ndarray]
    edges: np.ndarray  # (m, 2) int, i < j, sorted lexicographically
    delaunay_edges: np.ndarray

    @property
    def areas(self) -> np.ndarray:
        return np.array([polygon_area(c) for c in self.cells])


def recommended_radius(domain_area: float, n: int) -> float:
    """Radius giving about five neighbors per site under uniform sampling."""
    if not domain_area > 0 or n < 1:
        raise InvalidArgumentError("domain_area must be > 0 and n >= 1")
    return math.sqrt(5.0 * domain_area / (n * math.pi))


def build_neighbor_graph(sites: SiteSet | np.ndarray, r: float) -> NeighborGraph:
    """All neighbors of each site within distance ``r`` (inclusive)."""
    if not r > 0:
        raise InvalidArgumentError("radius must be positive")
    pts = sites.sites if isinstance(sites, SiteSet) else np.asarray(sites, dtype=float)
    if not isinstance(sites, SiteSet) and len(np.unique(pts, axis=0)) != len(pts):
        raise InvalidArgumentError("duplicate sites")
    n = len(pts)
    pairs = cKDTree(pts).query_pairs(r, output_type="ndarray")
    if len(pairs):
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order].astype(np.intp)
        dist = np.hypot(*(pts[pairs[:, 1]] - pts[pairs[:, 0]]).T)
        # the tree search is inclusive up to rounding; enforce the exact bound
        keep = dist <= r
        pairs, dist = pairs[keep], dist[keep]
    else:
        pairs = np.empty((0, 2), dtype=np.intp)
        dist = np.empty(0)
    both = np.concatenate([pairs, pairs[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    splits = np.searchsorted(both[:, 0], np.arange(1, n))
    neighbors = np.split(both[:, 1], splits)
    return NeighborGraph(float(r), neighbors, pairs, dist)


def voronoi_assign(seeds, query) -> int | np.ndarray:
    """Index of the nearest seed; ties go to the lowest index.

    ``query`` may be a single coordinate or an ``(m, 2)`` array.
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if seeds.size == 0:
        raise InvalidArgumentError("empty seed list")
    q = np.asarray(query, dtype=float)
    single = q.ndim == 1
    q = np.atleast_2d(q)
    dx = q[:, None, 0] - seeds[None, :, 0]
    dy = q[:, None, 1] - seeds[None, :, 1]
    lab = np.argmin(dx * dx + dy * dy, axis=1)
    return int(lab[0]) if single else lab


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _clip(verts, labels, point, normal, label, eps):
    """Keep the part of a convex polygon with ``(x - point) . normal <= 0``.

    ``labels[k]`` names the constraint that produced the edge from vertex k
    to vertex k+1; the new edge along the cutting line gets ``label``.
    """
    out_v, out_l = [], []
    m = len(verts)
    side = [(v[0] - point[0]) * normal[0] + (v[1] - point[1]) * normal[1] for v in verts]
    for k in range(m):
        p, q = verts[k], verts[(k + 1) % m]
        sp, sq = side[k], side[(k + 1) % m]
        p_in, q_in = sp <= eps, sq <= eps
        if p_in:
            out_v.append(p)
            out_l.append(labels[k])
            if not q_in:
                t = sp / (sp - sq)
                out_v.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
                out_l.append(label)
        elif q_in:
            t = sp / (sp - sq)
            out_v.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
            out_l.append(labels[k])
    return out_v, out_l


def _drop_short_edges(verts, labels, tol):
    changed = True
    while changed and len(verts) > 2:
        changed = False
        for k in range(len(verts)):
            a, b = verts[k], verts[(k + 1) % len(verts)]
            if math.hypot(a[0] - b[0], a[1] - b[1]) <= tol:
                del verts[k]
                del labels[k]
                changed = True
                break
    return verts, labels


def voronoi_tessellate(sites: SiteSet | np.ndarray, domain: Rect | None = None) -> VoronoiDiagram:
    """Voronoi cells clipped to the domain, plus the cell adjacency.

    Two cells are adjacent only when they share a boundary segment of
    positive length; cells that touch at a single vertex are not.
    """
    if isinstance(sites, SiteSet):
        pts, domain = sites.sites, sites.domain if domain is None else domain
    else:
        pts = np.asarray(sites, dtype=float)
        domain = domain or Rect.bounding(pts)
    n = len(pts)
    if n < 3:
        raise DegenerateGeometryError("need at least 3 sites")
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateGeometryError(f"sites are collinear or degenerate: {exc}") from None
    indptr, indices = tri.vertex_neighbor_vertices
    dl = [(i, int(j)) for i in range(n) for j in indices[indptr[i] : indptr[i + 1]] if i < j]
    delaunay_edges = np.array(sorted(dl), dtype=np.intp).reshape(-1, 2)

    scale = domain.diameter
    eps = 1e-13 * scale * scale
    len_tol = 1e-10 * scale
    corners = [tuple(c) for c in domain.corners]
    cells = []
    shared: dict[tuple[int, int], list[float]] = {}
    for i in range(n):
        verts, labels = list(corners), [-1, -2, -3, -4]
        si = pts[i]
        for j in indices[indptr[i] : indptr[i + 1]]:
            sj = pts[j]
            mid = (0.5 * (si[0] + sj[0]), 0.5 * (si[1] + sj[1]))
            verts, labels = _clip(verts, labels, mid, (sj[0] - si[0], sj[1] - si[1]), int(j), eps)
            if not verts:
                break
        verts, labels = _drop_short_edges(verts, labels, len_tol)
        poly = np.array(verts, dtype=float).reshape(-1, 2)
        cells.append(poly)
        for k, lab in enumerate(labels):
            if lab >= 0:
                a, b = verts[k], verts[(k + 1) % len(verts)]
                key = (min(i, lab), max(i, lab))
                shared.setdefault(key, []).append(math.hypot(a[0] - b[0], a[1] - b[1]))
    adj = sorted(k for k, lens in shared.items() if len(lens) >= 2 and min(lens) > len_tol)
    edges = np.array(adj, dtype=np.intp).reshape(-1, 2)
    return VoronoiDiagram(pts, domain, cells, edges, delaunay_edges)


def pairwise_distances(a, b=None) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = a if b is None else np.asarray(b, dtype=float)
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    return np.sqrt(dx * dx + dy * dy)
