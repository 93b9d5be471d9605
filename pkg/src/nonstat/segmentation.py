"""Voronoi-seed segmentation of local indices into stationary components.

A partition is induced by ``K`` seeds chosen among the active sites; each
site belongs to its nearest seed (ties to the lower seed position).  The
fit criterion is the independent-normal negative log-likelihood with a
separate mean and variance per subregion, ``sum_k n_k (log v_k + log(2 pi) + 1) / 2``
with ``v_k`` the ML variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConstraintViolationError, DegenerateClusterError, InvalidArgumentError
from .indices import LocalIndexField

MIN_COUNT = 3
MOVE_TOL = 1e-12
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SeedSet:
    indices: tuple[int, ...]  # positions among the active sites
    coords: np.ndarray

    @property
    def K(self) -> int:
        return len(self.indices)


@dataclass
class PartitionStats:
    labels: np.ndarray
    counts: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    objective: float


@dataclass
class SearchResult:
    seeds: SeedSet
    stats: PartitionStats
    trace: list[float] = field(default_factory=list)  # objective after init and after each accepted move
    cycles: int = 0


@dataclass
class BicResult:
    K_star: int
    bic: dict[int, float]
    objective: dict[int, float]
    results: dict[int, SearchResult]


class SegmentationContext:
    """Site geometry shared by every search over the same active sites.

    Monte-Carlo replicates keep the locations fixed, so the squared distance
    matrix is computed once here and reused.
    """

    def __init__(self, sites):
        self.sites = np.asarray(sites, dtype=float).reshape(-1, 2)
        d = self.sites[:, None, :] - self.sites[None, :, :]
        self.d2 = np.einsum("ijk,ijk->ij", d, d)

    def __len__(self) -> int:
        return len(self.sites)

    def assign(self, seeds) -> np.ndarray:
        return np.argmin(self.d2[np.asarray(seeds)], axis=0)


def _field_parts(xi):
    if isinstance(xi, LocalIndexField):
        return xi.sites, np.asarray(xi.xi, dtype=float)
    raise InvalidArgumentError("expected a LocalIndexField")


def region_stats(values, labels, K: int, min_count: int = MIN_COUNT, check: bool = True) -> PartitionStats:
    values = np.asarray(values, dtype=float)
    counts = np.bincount(labels, minlength=K)
    if check and np.any(counts < min_count):
        raise ConstraintViolationError(f"subregion sizes {counts.tolist()} below minimum {min_count}")
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.bincount(labels, values, K) / counts
        resid = values - means[labels]
        var = np.bincount(labels, resid * resid, K) / counts
    if check and np.any(var <= 0):
        raise DegenerateClusterError(f"zero variance in subregion(s) {np.flatnonzero(var <= 0).tolist()}")
    with np.errstate(divide="ignore"):
        f = float(np.sum(counts * (0.5 * np.log(var) + HALF_LOG_2PI + 0.5)))
    return PartitionStats(labels, counts, means, var, f)


def objective_fK(xi: LocalIndexField, seeds, *, min_count: int = MIN_COUNT, context: SegmentationContext | None = None) -> PartitionStats:
    """Per-subregion normal negative log-likelihood for the partition induced by ``seeds``.

    ``seeds`` is a :class:`SeedSet` or a sequence of active-site positions.
    """
    sites, values = _field_parts(xi)
    idx = np.asarray(seeds.indices if isinstance(seeds, SeedSet) else seeds, dtype=np.intp).reshape(-1)
    if len(idx) < 1 or len(set(idx.tolist())) != len(idx):
        raise InvalidArgumentError("seeds must be distinct and nonempty")
    if idx.min() < 0 or idx.max() >= len(values):
        raise InvalidArgumentError("seed index out of range")
    ctx = context or SegmentationContext(sites)
    labels = ctx.assign(idx)
    return region_stats(values, labels, len(idx), min_count)


def _seedset(sites, idx) -> SeedSet:
    idx = tuple(int(i) for i in idx)
    return SeedSet(idx, sites[list(idx)].copy())


def _best_replacement(ctx, u, u2, seeds, k, labels, min_count, cur_f, anywhere=False):
    """Best single-seed replacement for position ``k`` among sites of its subregion.

    With ``anywhere`` every site that is not another seed is a candidate.

    ``u`` and ``u2`` are the standardized values and their squares.  Returns
    (objective, site) for the best feasible candidate, ties to the lowest
    site index, or ``(inf, -1)`` when none is feasible.
    """
    K = len(seeds)
    others = [j for j in range(K) if j != k]
    if anywhere:
        cand = np.setdiff1d(np.arange(len(u)), [seeds[j] for j in others])
    else:
        cand = np.flatnonzero(labels == k)
    d2o = ctx.d2[[seeds[j] for j in others]]  # (K-1, n)
    pos = np.argmin(d2o, axis=0)
    dmin = d2o[pos, np.arange(d2o.shape[1])]
    olab = np.asarray(others)[pos]
    dc = ctx.d2[cand]  # (C, n)
    # site goes to k if strictly closer, or equally close and k has the lower position
    take = (dc < dmin) | ((dc == dmin) & (k < olab))
    A = take.astype(float)
    onehot = np.zeros((len(u), K))
    onehot[np.arange(len(u)), olab] = 1.0
    onehot[:, k] = 0.0
    base_n = onehot.sum(0)
    base_s = u @ onehot
    base_q = u2 @ onehot
    n_k = A.sum(1)
    s_k = A @ u
    q_k = A @ u2
    N = base_n - A @ onehot
    S = base_s - A @ (onehot * u[:, None])
    Q = base_q - A @ (onehot * u2[:, None])
    N[:, k], S[:, k], Q[:, k] = n_k, s_k, q_k
    with np.errstate(invalid="ignore", divide="ignore"):
        V = Q / N - (S / N) ** 2
        ok = np.all(N >= min_count, axis=1) & np.all(V > 1e-13, axis=1)
        f = np.where(ok, np.sum(N * (0.5 * np.log(np.where(ok[:, None], V, 1.0)) + HALF_LOG_2PI + 0.5), axis=1), np.inf)
    if not np.any(np.isfinite(f)):
        return math.inf, -1
    b = int(np.argmin(f))  # candidates are sorted, so ties go to the lowest site
    return float(f[b]), int(cand[b])


def greedy_seed_search(
    xi: LocalIndexField,
    K: int,
    *,
    init=None,
    min_count: int = MIN_COUNT,
    context: SegmentationContext | None = None,
    max_cycles: int = 1000,
) -> SearchResult:
    """Cyclic best single-seed replacement from a deterministic start.

    Each pass visits the seeds in order and moves seed ``k`` to the site of
    its current subregion that minimizes the objective, re-tessellating after
    every accepted move.  A move is accepted only if it lowers the objective
    by more than ``MOVE_TOL``.  Stops after a pass with no accepted move.
    """
    sites, values = _field_parts(xi)
    n = len(values)
    if K < 2:
        raise InvalidArgumentError("K must be >= 2 for the seed search")
    if n < K * min_count:
        raise InvalidArgumentError(f"{n} active sites cannot form {K} subregions of {min_count}")
    ctx = context or SegmentationContext(sites)
    if init is None:
        init = deterministic_kmeans_init(xi, K)
    seeds = list(init.indices if isinstance(init, SeedSet) else init)
    # standardize for the vectorized moment updates; f shifts by n*log(sd)
    sd = float(np.std(values))
    if sd == 0:
        raise DegenerateClusterError("all index values are equal")
    u = (values - values.mean()) / sd
    u2 = u * u
    shift = n * math.log(sd)

    labels = ctx.assign(seeds)
    cur = region_stats(u, labels, K, min_count, check=False)
    cur_f = cur.objective if np.all(cur.counts >= min_count) and np.all(cur.variances > 1e-13) else math.inf
    if not math.isfinite(cur_f):
        # infeasible start: let one seed move anywhere to reach a feasible partition
        for k in range(K):
            f_new, site = _best_replacement(ctx, u, u2, seeds, k, labels, min_count, cur_f, anywhere=True)
            if math.isfinite(f_new):
                seeds[k] = site
                labels = ctx.assign(seeds)
                cur_f = f_new
                break
    trace = [cur_f + shift]
    cycles = 0
    while cycles < max_cycles:
        cycles += 1
        moved = False
        for k in range(K):
            f_new, site = _best_replacement(ctx, u, u2, seeds, k, labels, min_count, cur_f)
            if site >= 0 and site != seeds[k] and f_new < cur_f - MOVE_TOL:
                seeds[k] = site
                labels = ctx.assign(seeds)
                cur_f = f_new
                trace.append(cur_f + shift)
                moved = True
        if not moved:
            break
    if not math.isfinite(cur_f):
        raise ConstraintViolationError(f"no feasible partition with K={K} and at least {min_count} sites per subregion")
    stats = region_stats(values, labels, K, min_count)
    return SearchResult(_seedset(sites, seeds), stats, trace, cycles)


def _standardize(cols: np.ndarray) -> np.ndarray:
    sd = cols.std(axis=0)
    sd[sd == 0] = 1.0
    return (cols - cols.mean(axis=0)) / sd


def deterministic_kmeans_init(xi: LocalIndexField, K: int, *, max_iter: int = 100) -> SeedSet:
    """Density-peak seeding followed by Lloyd iterations, snapped to sites.

    Features are the standardized ``(x, y, xi)``.  The first center is the
    site of highest Gaussian kernel density (Scott bandwidth); each further
    center maximizes density times distance to the centers already chosen.
    Lloyd iterations run to a fixed labeling, and every final center is
    replaced by the nearest unused site in the plane.
    """
    sites, values = _field_parts(xi)
    n = len(values)
    if K < 1 or K > n:
        raise InvalidArgumentError(f"K must be in [1, {n}]")
    feat = _standardize(np.column_stack([sites, values]))
    d = feat[:, None, :] - feat[None, :, :]
    fd2 = np.einsum("ijk,ijk->ij", d, d)
    h = n ** (-1.0 / (feat.shape[1] + 4))
    dens = np.exp(-0.5 * fd2 / (h * h)).sum(axis=1)
    chosen = [int(np.argmax(dens))]
    if K == 1:
        return _seedset(sites, chosen)
    near = fd2[chosen[0]].copy()
    for _ in range(1, K):
        score = dens * np.sqrt(near)
        score[chosen] = -1.0
        nxt = int(np.argmax(score))
        chosen.append(nxt)
        near = np.minimum(near, fd2[nxt])
    centers = feat[chosen].copy()
    labels = None
    for _ in range(max_iter):
        cd = feat[:, None, :] - centers[None, :, :]
        new = np.argmin(np.einsum("ijk,ijk->ij", cd, cd), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for k in range(K):
            members = labels == k
            if members.any():
                centers[k] = feat[members].mean(axis=0)
    # back to the plane, then to the nearest unused site
    mu = sites.mean(axis=0)
    sd = sites.std(axis=0)
    sd[sd == 0] = 1.0
    planar = centers[:, :2] * sd + mu
    used: list[int] = []
    for c in planar:
        order = np.argsort(np.sum((sites - c) ** 2, axis=1), kind="stable")
        used.append(int(next(i for i in order if i not in used)))
    return _seedset(sites, used)


def bic_value(f: float, K: int, n_active: int) -> float:
    return f + 4.0 * K * math.log(n_active)


def select_K_by_bic(
    xi: LocalIndexField,
    K_max: int = 4,
    *,
    min_count: int = MIN_COUNT,
    context: SegmentationContext | None = None,
) -> BicResult:
    """Fit K = 1..K_max and pick the K with the smallest ``f_K + 4 K log n*``."""
    if K_max < 1:
        raise InvalidArgumentError("K_max must be >= 1")
    sites, values = _field_parts(xi)
    n = len(values)
    ctx = context or SegmentationContext(sites)
    results: dict[int, SearchResult] = {}
    init1 = deterministic_kmeans_init(xi, 1)
    st1 = region_stats(values, np.zeros(n, dtype=np.intp), 1, min_count)
    results[1] = SearchResult(init1, st1, [st1.objective], 0)
    for K in range(2, K_max + 1):
        results[K] = greedy_seed_search(xi, K, min_count=min_count, context=ctx)
    obj = {K: r.stats.objective for K, r in results.items()}
    bic = {K: bic_value(f, K, n) for K, f in obj.items()}
    K_star = min(bic, key=lambda K: (bic[K], K))
    return BicResult(K_star, bic, obj, results)
