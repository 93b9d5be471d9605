"""Local spatial-dependence indices and robust nugget estimation.

Each index is a distance-weighted average of square-root absolute
differences to neighbors, centered by the value expected from pure noise.
Under a local exponential model it tracks ``C2 * sigma^2 / alpha``, the
microergodic ratio scaled by a constant that depends only on the nugget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .data import SpatialDataset
from .errors import DegenerateLagError, InvalidArgumentError, NoNeighborsError
from .geometry import NeighborGraph, build_neighbor_graph, recommended_radius

GAMMA_3_4 = math.gamma(0.75)


@dataclass(frozen=True)
class IndexConstants:
    tau2: float
    c1: float
    c2: float
    c3: float


@dataclass
class LocalIndexField:
    xi: np.ndarray
    active: np.ndarray  # indices of the sites that carry an index
    sites: np.ndarray  # coordinates of the active sites
    n_neighbors: np.ndarray | None = None
    consts: IndexConstants | None = None
    graph: NeighborGraph | None = None

    @classmethod
    def from_arrays(cls, sites, xi) -> "LocalIndexField":
        """Wrap arbitrary per-site values, every site active."""
        sites = np.asarray(sites, dtype=float).reshape(-1, 2)
        xi = np.asarray(xi, dtype=float).reshape(-1)
        if len(sites) != len(xi):
            raise InvalidArgumentError(f"{len(xi)} values for {len(sites)} sites")
        return cls(xi, np.arange(len(xi)), sites)

    @property
    def n_active(self) -> int:
        return len(self.xi)

    def with_values(self, xi) -> "LocalIndexField":
        return LocalIndexField(np.asarray(xi, dtype=float), self.active, self.sites, self.n_neighbors, self.consts, self.graph)


@dataclass(frozen=True)
class LagClassEstimate:
    gamma_hat: float
    d_mean: float
    m: int
    bounds: tuple[float, float]


def index_constants(tau2: float) -> IndexConstants:
    """Centering and scaling constants for a given nugget.

    With ``tau2 == 0`` the scale constant diverges; ``c1`` is then 0 and the
    indices are only meaningful up to a positive factor, which every
    downstream use ignores.
    """
    if tau2 < 0 or not math.isfinite(tau2):
        raise InvalidArgumentError("tau2 must be a nonnegative finite number")
    root = 1.0 / math.sqrt(math.pi)
    if tau2 == 0:
        return IndexConstants(0.0, 0.0, math.inf, 0.0)
    c1 = math.sqrt(2.0) * root * GAMMA_3_4 * tau2**0.25
    c2 = 2.0**-1.5 * root * GAMMA_3_4 * tau2**-0.75
    c3 = 2.0 * (root - GAMMA_3_4**2 / math.pi) / c2
    return IndexConstants(float(tau2), c1, c2, c3)


def xi_from_pairs(z, pairs, dist, c1: float, n: int, literal_eq7: bool = False):
    """Raw indices for all ``n`` sites from a pair list (NaN where isolated)."""
    i, j = pairs[:, 0], pairs[:, 1]
    term = dist * (np.sqrt(np.abs(z[j] - z[i])) - c1)
    num = np.bincount(i, term, n) + np.bincount(j, term, n)
    w = dist * dist
    den = np.bincount(i, w, n) + np.bincount(j, w, n)
    with np.errstate(invalid="ignore", divide="ignore"):
        xi = num / den
        if literal_eq7:
            xi = xi / (np.bincount(i, minlength=n) + np.bincount(j, minlength=n))
    return xi


def local_indices(
    data: SpatialDataset,
    graph: NeighborGraph | None = None,
    consts: IndexConstants | None = None,
    *,
    literal_eq7: bool = False,
) -> LocalIndexField:
    """Index for every site with at least one neighbor.

    By default the weighted sum is divided by the total weight only.  Set
    ``literal_eq7`` to divide additionally by the neighbor count.

    If ``graph`` is omitted the recommended radius for the data's domain is
    used; if ``consts`` is omitted the dataset's nugget is used, estimated
    from the data when unknown.
    """
    if graph is None:
        graph = build_neighbor_graph(data.sites, recommended_radius(data.domain.area, data.n))
    if consts is None:
        tau2 = data.tau2 if data.tau2 is not None else estimate_nugget(data)
        consts = index_constants(tau2)
    if len(graph.active) == 0:
        raise NoNeighborsError(f"no site has a neighbor within radius {graph.radius:g}")
    xi = xi_from_pairs(data.z, graph.pairs, graph.distances, consts.c1, data.n, literal_eq7)
    act = graph.active
    return LocalIndexField(xi[act], act, data.xy[act], graph.sizes[act], consts, graph)


def robust_variogram(pairs, data: SpatialDataset) -> LagClassEstimate:
    """Cressie-Hawkins semivariogram estimate from one class of site pairs."""
    pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    m = len(pairs)
    if m == 0:
        raise InvalidArgumentError("empty pair list")
    dz = np.abs(data.z[pairs[:, 0]] - data.z[pairs[:, 1]])
    d = np.hypot(*(data.xy[pairs[:, 0]] - data.xy[pairs[:, 1]]).T)
    return _lag_estimate(dz, d)


def _lag_estimate(dz, d) -> LagClassEstimate:
    m = len(dz)
    gamma = np.mean(np.sqrt(dz)) ** 4 / (2.0 * (0.457 + 0.494 / m + 0.045 / m**2))
    return LagClassEstimate(float(gamma), float(np.mean(d)), m, (float(np.min(d)), float(np.max(d))))


def nugget_from_lags(g1: float, g2: float, d1: float, d2: float) -> float:
    """Intercept of the line through two lag estimates, slope and intercept kept >= 0."""
    if d2 == d1:
        raise DegenerateLagError("lag classes have equal mean distance")
    slope = max(0.0, (g2 - g1) / (d2 - d1))
    return max(0.0, g1 - d1 * slope)


@dataclass(frozen=True)
class LagClasses:
    """Pair indices and distances of the two shortest-lag classes."""

    pairs1: np.ndarray
    dist1: np.ndarray
    pairs2: np.ndarray
    dist2: np.ndarray


def lag_classes(xy, m_target: int = 250) -> LagClasses:
    """The ``m_target`` closest site pairs and the next ``m_target``; ties by pair order."""
    if m_target < 1:
        raise InvalidArgumentError("m_target must be positive")
    xy = np.asarray(xy, dtype=float)
    n = len(xy)
    npairs = n * (n - 1) // 2
    if npairs < 2 * m_target:
        raise InvalidArgumentError(f"{npairs} site pairs, need at least {2 * m_target}")
    d = pdist(xy)
    k = 2 * m_target
    sel = np.argpartition(d, k - 1)[:k] if k < npairs else np.arange(npairs)
    sel = sel[np.lexsort((sel, d[sel]))]
    iu, ju = np.triu_indices(n, 1)
    p1, p2 = sel[:m_target], sel[m_target:]
    return LagClasses(
        np.column_stack([iu[p1], ju[p1]]), d[p1], np.column_stack([iu[p2], ju[p2]]), d[p2]
    )


def nugget_lags(data: SpatialDataset, m_target: int = 250, classes: LagClasses | None = None):
    """Estimates for the ``m_target`` closest pairs and the next ``m_target``."""
    lc = classes or lag_classes(data.xy, m_target)
    z = data.z if isinstance(data, SpatialDataset) else np.asarray(data, dtype=float)
    out = []
    for pairs, d in ((lc.pairs1, lc.dist1), (lc.pairs2, lc.dist2)):
        out.append(_lag_estimate(np.abs(z[pairs[:, 0]] - z[pairs[:, 1]]), d))
    return out[0], out[1]


def estimate_nugget(data: SpatialDataset, m_target: int = 250, classes: LagClasses | None = None) -> float:
    """Nugget by constrained linear extrapolation of two short-lag estimates.

    ``data`` may also be a bare value vector when ``classes`` is given.
    """
    e1, e2 = nugget_lags(data, m_target, classes)
    return nugget_from_lags(e1.gamma_hat, e2.gamma_hat, e1.d_mean, e2.d_mean)
