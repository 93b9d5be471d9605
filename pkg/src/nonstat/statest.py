"""Monte-Carlo calibrated test of second-order stationarity.

The observed statistic is a two-sample t statistic between the two
subregions found by the K=2 seed search on the local indices.  Its null
distribution is obtained by refitting nothing: a stationary Matern model
with nugget is fitted once by profile maximum likelihood, fields are drawn
from it at the observed sites, and the whole index-segmentation pipeline
is rerun on each draw.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, eigh
from scipy.optimize import minimize, minimize_scalar
from scipy.spatial.distance import pdist, squareform
from scipy.special import kv

from .covariance import Matern, build_cov_matrix, cholesky_jitter, matern_cov
from .data import SpatialDataset
from .errors import ConvergenceError, InvalidArgumentError, NumericalError, UndefinedStatisticError
from .geometry import build_neighbor_graph, recommended_radius
from .indices import LagClasses, LocalIndexField, estimate_nugget, index_constants, lag_classes, xi_from_pairs
from .segmentation import PartitionStats, SearchResult, SegmentationContext, greedy_seed_search

log = logging.getLogger(__name__)

NU_BOUNDS = (0.05, 5.0)
ALPHA_BOUNDS_REL = (1e-3, 10.0)  # multiples of the domain diameter
LOG2PI = math.log(2.0 * math.pi)


def t_statistic(partition) -> float:
    """Two-sample t statistic between the subregions of a K=2 partition.

    Accepts :class:`PartitionStats`, a :class:`SearchResult`, or a pair of
    value arrays.  Variances are the ML (divide-by-n) estimates.
    """
    if isinstance(partition, SearchResult):
        partition = partition.stats
    if isinstance(partition, PartitionStats):
        if len(partition.counts) != 2:
            raise InvalidArgumentError("t statistic needs exactly two subregions")
        n1, n2 = partition.counts
        m1, m2 = partition.means
        v1, v2 = partition.variances
    else:
        g1, g2 = (np.asarray(g, dtype=float) for g in partition)
        n1, n2 = len(g1), len(g2)
        if min(n1, n2) < 2:
            raise InvalidArgumentError("each group needs at least two values")
        m1, m2 = g1.mean(), g2.mean()
        v1, v2 = g1.var(), g2.var()
    if min(n1, n2) < 2:
        raise InvalidArgumentError("each group needs at least two values")
    den = v1 / (n1 - 1) + v2 / (n2 - 1)
    diff = abs(m1 - m2)
    if den <= 0:
        if diff == 0:
            raise UndefinedStatisticError("both groups are constant with equal means")
        raise UndefinedStatisticError("both groups are constant with different means (infinite statistic)")
    return float(diff / math.sqrt(den))


def mc_pvalue(T: float, null) -> float:
    """Fraction of null statistics strictly above ``T``, over ``M + 1``."""
    null = np.asarray(null, dtype=float)
    if null.size == 0:
        raise InvalidArgumentError("empty null sample")
    return float(np.count_nonzero(null > T)) / (null.size + 1)


# ---------------------------------------------------------------- ML fitting


@dataclass
class MaternFit:
    alpha: float
    nu: float
    sigma2: float
    tau2: float
    mean: float
    nll: float  # full Gaussian negative log-likelihood at the optimum
    nll_start: float  # best value over the start grid
    diagnostics: dict = field(default_factory=dict)

    @property
    def theta(self) -> tuple[float, float]:
        return self.alpha, self.nu

    def model(self) -> Matern:
        return Matern(self.sigma2, self.alpha, self.nu)

    def to_dict(self) -> dict:
        return {"family": "matern", "sigma2": self.sigma2, "alpha": self.alpha, "nu": self.nu,
                "tau2": self.tau2, "mean": self.mean, "nll": self.nll}


class ProfileLikelihood:
    """Negative log-likelihood of ``(alpha, nu)`` with the variance (and mean) profiled out.

    With ``tau2 == 0`` the variance has the closed form ``r' R^-1 r / n``.
    Otherwise the nugget is held fixed and the variance is profiled
    numerically in the eigenbasis of the correlation matrix.
    """

    def __init__(self, data: SpatialDataset, tau2: float = 0.0, mean: str = "constant"):
        if data.n < 10:
            raise InvalidArgumentError("ML fit needs at least 10 sites")
        if tau2 < 0:
            raise InvalidArgumentError("tau2 must be nonnegative")
        if mean not in ("constant", "zero"):
            raise InvalidArgumentError("mean must be 'constant' or 'zero'")
        self.z = np.asarray(data.z, dtype=float)
        self.n = len(self.z)
        self.tau2 = float(tau2)
        self.mean_mode = mean
        self.h = pdist(data.xy)
        self.diam = data.domain.diameter
        self.nfev = 0

    def correlation(self, alpha: float, nu: float) -> np.ndarray:
        if nu == 0.5:
            c = np.exp(-self.h / alpha)
        else:
            # compiled K_nu here; matern_cov's own Bessel routine agrees to ~1e-13
            t = math.sqrt(2.0 * nu) * self.h / alpha
            with np.errstate(under="ignore", divide="ignore"):
                c = np.exp((1.0 - nu) * math.log(2.0) - math.lgamma(nu) + nu * np.log(t) + np.log(kv(nu, t)))
        r = squareform(c)
        np.fill_diagonal(r, 1.0)
        return r

    def evaluate(self, alpha: float, nu: float) -> tuple[float, float, float]:
        """(nll, sigma2_hat, mean_hat) at ``(alpha, nu)``."""
        self.nfev += 1
        R = self.correlation(alpha, nu)
        z, n = self.z, self.n
        if self.tau2 == 0:
            L, _ = cholesky_jitter(R)
            c = (L, True)
            if self.mean_mode == "constant":
                one = np.ones(n)
                ri1 = cho_solve(c, one)
                mu = float(ri1 @ z / (ri1 @ one))
            else:
                mu = 0.0
            r = z - mu
            q = float(r @ cho_solve(c, r))
            s2 = q / n
            if not s2 > 0:
                raise NumericalError("zero residual quadratic form")
            logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
            nll = 0.5 * logdet + 0.5 * n * (math.log(s2) + 1.0 + LOG2PI)
            return nll, s2, mu
        lam, Q = eigh(R)
        lam = np.maximum(lam, 0.0)
        w = Q.T @ z
        a = Q.T @ np.ones(n) if self.mean_mode == "constant" else None

        def f(logs):
            d = math.exp(logs) * lam + self.tau2
            if a is not None:
                mu = float(np.sum(a * w / d) / np.sum(a * a / d))
                res = w - mu * a
            else:
                mu, res = 0.0, w
            return 0.5 * float(np.sum(np.log(d)) + np.sum(res * res / d)) + 0.5 * n * LOG2PI, mu

        scale = max(float(np.var(z)), self.tau2, 1e-300)
        lo, hi = math.log(scale) - 25.0, math.log(scale) + 10.0
        opt = minimize_scalar(lambda t: f(t)[0], bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
        nll, mu = f(opt.x)
        return nll, math.exp(opt.x), mu

    def bounds(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return (
            (math.log(ALPHA_BOUNDS_REL[0] * self.diam), math.log(ALPHA_BOUNDS_REL[1] * self.diam)),
            (math.log(NU_BOUNDS[0]), math.log(NU_BOUNDS[1])),
        )

    def objective(self, p) -> float:
        try:
            return self.evaluate(math.exp(p[0]), math.exp(p[1]))[0]
        except NumericalError:
            return math.inf


def _simplex(x0, step: float) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    return np.array([x0, x0 + [step, 0.0], x0 + [0.0, step]])


def start_grid(diam: float) -> list[tuple[float, float]]:
    """3 x 3 grid at the interior quartiles of the log-parameter box."""
    (a0, a1), (v0, v1) = (
        (math.log(ALPHA_BOUNDS_REL[0] * diam), math.log(ALPHA_BOUNDS_REL[1] * diam)),
        (math.log(NU_BOUNDS[0]), math.log(NU_BOUNDS[1])),
    )
    qa = [a0 + (a1 - a0) * q for q in (0.25, 0.5, 0.75)]
    qv = [v0 + (v1 - v0) * q for q in (0.25, 0.5, 0.75)]
    return [(x, y) for x in qa for y in qv]


def fit_matern_ml(
    data: SpatialDataset,
    tau2: float = 0.0,
    *,
    mean: str = "constant",
    starts=None,
    xatol: float = 1e-4,
    fatol: float = 1e-8,
    coarse: tuple[float, float] = (5e-2, 1e-3),
    maxiter: int = 400,
) -> MaternFit:
    """Profile-ML fit of a stationary Matern model with the nugget held fixed.

    Nelder-Mead on ``(log alpha, log nu)`` within the parameter box from
    every point of ``starts`` (default: a 3 x 3 grid).  Each start runs to
    the ``coarse`` (xatol, fatol) tolerances; the best of them is then
    refined to ``xatol``/``fatol``.
    """
    lik = ProfileLikelihood(data, tau2, mean)
    bounds = lik.bounds()
    starts = start_grid(lik.diam) if starts is None else [tuple(map(math.log, s)) for s in starts]
    runs = []
    best_start = math.inf
    for x0 in starts:
        f0 = lik.objective(x0)
        best_start = min(best_start, f0)
        if not math.isfinite(f0):
            continue
        res = minimize(
            lik.objective, np.asarray(x0), method="Nelder-Mead", bounds=bounds,
            options={"xatol": coarse[0], "fatol": coarse[1], "maxiter": maxiter,
                     "initial_simplex": _simplex(x0, 0.5)},
        )
        runs.append(res)
    if not runs:
        raise NumericalError("likelihood could not be evaluated at any start")
    best = min(runs, key=lambda r: (r.fun, tuple(r.x)))
    best = minimize(
        lik.objective, best.x, method="Nelder-Mead", bounds=bounds,
        options={"xatol": xatol, "fatol": fatol, "maxiter": maxiter, "initial_simplex": _simplex(best.x, 0.05)},
    )
    diag = {"nfev": lik.nfev, "starts": len(starts), "success": bool(best.success), "message": str(best.message),
            "x": best.x.tolist()}
    if not best.success and not math.isfinite(best.fun):
        raise ConvergenceError("Nelder-Mead failed from every start", diag)
    alpha, nu = math.exp(best.x[0]), math.exp(best.x[1])
    nll, s2, mu = lik.evaluate(alpha, nu)
    if not best.success:
        log.warning("ML fit stopped early: %s", best.message)
    return MaternFit(alpha, nu, s2, float(tau2), mu, nll, best_start, diag)


def fit_exponential_ml(data: SpatialDataset, tau2: float = 0.0, *, mean: str = "constant") -> MaternFit:
    """Profile-ML fit with the smoothness fixed at 1/2 (bounded search over log alpha)."""
    lik = ProfileLikelihood(data, tau2, mean)
    (a0, a1), _ = lik.bounds()
    grid = np.linspace(a0, a1, 9)
    vals = [lik.objective((g, math.log(0.5))) for g in grid]
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    opt = minimize_scalar(lambda t: lik.objective((t, math.log(0.5))), bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-6})
    x = opt.x if opt.fun <= vals[i] else grid[i]
    alpha = math.exp(x)
    nll, s2, mu = lik.evaluate(alpha, 0.5)
    return MaternFit(alpha, 0.5, s2, float(tau2), mu, nll, float(min(vals)), {"nfev": lik.nfev})


# ------------------------------------------------------------- the pipeline


class Pipeline:
    """Index, segmentation and statistic computation for fixed site locations.

    ``tau2=None`` estimates the nugget from each value vector; a number
    fixes it.  Everything that depends only on the locations is built once.
    """

    def __init__(self, data: SpatialDataset, tau2: float | None = None, m_target: int = 250, radius: float | None = None):
        self.data = data
        self.tau2 = tau2
        self.m_target = m_target
        r = recommended_radius(data.domain.area, data.n) if radius is None else radius
        self.graph = build_neighbor_graph(data.sites, r)
        if len(self.graph.active) == 0:
            from .errors import NoNeighborsError

            raise NoNeighborsError(f"no site has a neighbor within radius {r:g}")
        self.active = self.graph.active
        self.sites = data.xy[self.active]
        self.context = SegmentationContext(self.sites)
        self.classes: LagClasses | None = lag_classes(data.xy, m_target) if tau2 is None else None

    def nugget(self, z) -> float:
        if self.tau2 is not None:
            return self.tau2
        return estimate_nugget(np.asarray(z, dtype=float), self.m_target, self.classes)

    def indices(self, z) -> LocalIndexField:
        z = np.asarray(z, dtype=float)
        consts = index_constants(self.nugget(z))
        g = self.graph
        xi = xi_from_pairs(z, g.pairs, g.distances, consts.c1, len(z))[self.active]
        return LocalIndexField(xi, self.active, self.sites, g.sizes[self.active], consts, g)

    def run(self, z) -> tuple[float, SearchResult, LocalIndexField]:
        xi = self.indices(z)
        res = greedy_seed_search(xi, 2, context=self.context)
        return t_statistic(res.stats), res, xi


def _replicate_statistics(pipe: Pipeline, chol: np.ndarray, mean: float, seqs) -> list[float]:
    out = []
    for m, seq in seqs:
        rng = np.random.default_rng(seq)
        z = mean + chol @ rng.standard_normal(chol.shape[0])
        try:
            out.append(pipe.run(z)[0])
        except Exception as exc:
            raise type(exc)(f"null replicate {m}: {exc}") from exc
    return out


def null_field_factor(data: SpatialDataset, fit: MaternFit) -> np.ndarray:
    cov = build_cov_matrix(data.sites, fit.model(), fit.tau2)
    return cholesky_jitter(cov)[0]


def mc_null_distribution(
    data: SpatialDataset,
    fit: MaternFit,
    M: int,
    seed: int,
    *,
    pipeline: Pipeline | None = None,
    n_jobs: int = 1,
) -> np.ndarray:
    """Statistics of ``M`` fields drawn from the fitted stationary model at the observed sites.

    Replicate ``m`` draws from its own substream of ``SeedSequence(seed)``,
    so the output does not depend on ``n_jobs``.
    """
    if M < 1:
        raise InvalidArgumentError("M must be >= 1")
    pipe = pipeline or Pipeline(data)
    chol = null_field_factor(data, fit)
    seqs = list(enumerate(np.random.SeedSequence(seed).spawn(M)))
    if n_jobs == 1 or M < 2:
        return np.asarray(_replicate_statistics(pipe, chol, fit.mean, seqs))
    chunks = [seqs[i::n_jobs] for i in range(n_jobs)]
    out = np.empty(M)
    with ProcessPoolExecutor(max_workers=n_jobs) as ex:
        futs = [ex.submit(_replicate_statistics, pipe, chol, fit.mean, c) for c in chunks if c]
        for c, fut in zip([c for c in chunks if c], futs):
            out[[m for m, _ in c]] = fut.result()
    return out


@dataclass
class TestReport:
    T: float
    null: np.ndarray
    p_value: float
    M: int
    level: float
    fit: MaternFit
    partition: SearchResult
    xi: LocalIndexField
    tau2: float
    tau2_estimated: bool
    seed: int

    __test__ = False  # not a pytest class

    @property
    def reject(self) -> bool:
        return self.p_value < self.level

    @property
    def decision(self) -> str:
        return "nonstationary" if self.reject else "stationary"

    def to_dict(self) -> dict:
        st = self.partition.stats
        return {
            "T": self.T,
            "p_value": self.p_value,
            "M": self.M,
            "level": self.level,
            "decision": self.decision,
            "seed": self.seed,
            "tau2": self.tau2,
            "tau2_estimated": self.tau2_estimated,
            "n_active": int(self.xi.n_active),
            "fit": self.fit.to_dict(),
            "subregions": [
                {"seed_site": int(self.xi.active[s]), "seed": self.partition.seeds.coords[k].tolist(),
                 "n": int(st.counts[k]), "mean": float(st.means[k]), "variance": float(st.variances[k])}
                for k, s in enumerate(self.partition.seeds.indices)
            ],
            "null": self.null.tolist(),
        }


def stationarity_test(
    data: SpatialDataset,
    M: int = 99,
    seed: int = 0,
    *,
    tau2: float | None = None,
    level: float = 0.05,
    m_target: int = 250,
    n_jobs: int = 1,
    fit_kwargs: dict | None = None,
) -> TestReport:
    """End-to-end test; ``tau2`` defaults to the dataset's nugget, else it is estimated."""
    if M < 1:
        raise InvalidArgumentError("M must be >= 1")
    if not 0 < level < 1:
        raise InvalidArgumentError("level must be in (0, 1)")
    if tau2 is None:
        tau2 = data.tau2
    estimated = tau2 is None
    pipe = Pipeline(data, tau2, m_target)
    T, part, xi = pipe.run(data.z)
    t2 = xi.consts.tau2
    fit = fit_matern_ml(data, t2, **(fit_kwargs or {}))
    null = mc_null_distribution(data, fit, M, seed, pipeline=pipe, n_jobs=n_jobs)
    p = mc_pvalue(T, null)
    log.info("T=%.4f p=%.4f (M=%d, tau2=%.4g%s)", T, p, M, t2, " estimated" if estimated else "")
    return TestReport(T, null, p, M, level, fit, part, xi, t2, estimated, seed)
