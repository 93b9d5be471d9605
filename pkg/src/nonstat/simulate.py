"""Sampling designs and Gaussian field scenarios used in the simulation studies."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .covariance import Blended, BlockIndependent, Exponential, Matern, NonstatMatern, cholesky_jitter
from .data import SpatialDataset
from .errors import InvalidArgumentError
from .geometry import Rect, SiteSet

TEST_DOMAIN = Rect(-2.5, 2.5, -2.5, 2.5)
UNIT_DOMAIN = Rect(0.0, 1.0, 0.0, 1.0)
# lower-left, lower-right, upper-left, upper-right
FOUR_BLOCK_ALPHAS = (1.0, 1.0 / 3.0, 0.5, 2.0 / 3.0)
MAX_SIM_SITES = 5000

COVARIANCES = ("stationary", "nonstat", "four_block", "blended")
DESIGNS = ("uniform", "clustered")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def four_blocks(domain: Rect) -> tuple[Rect, ...]:
    xm = 0.5 * (domain.xmin + domain.xmax)
    ym = 0.5 * (domain.ymin + domain.ymax)
    return (
        Rect(domain.xmin, xm, domain.ymin, ym),
        Rect(xm, domain.xmax, domain.ymin, ym),
        Rect(domain.xmin, xm, ym, domain.ymax),
        Rect(xm, domain.xmax, ym, domain.ymax),
    )


@dataclass(frozen=True)
class Scenario:
    """One simulation setting: domain, design, covariance family and noise."""

    covariance: str = "stationary"
    n: int = 100
    design: str = "uniform"
    domain: Rect | None = None
    tau2: float = 0.0
    seed: int = 0
    # stationary Matern
    sigma2: float = 1.0
    nu: float = 0.5
    alpha: float = 1.0
    # smoothly nonstationary
    lam: float = 20.0
    # four blocks
    block_alphas: tuple = FOUR_BLOCK_ALPHAS
    # blended two-region
    alpha1: float = 0.1
    alpha2: float = 0.5
    a: float = 0.01
    region2: Rect = field(default_factory=lambda: Rect(0.5, 1.0, 0.0, 1.0))

    def __post_init__(self):
        if self.covariance not in COVARIANCES:
            raise InvalidArgumentError(f"covariance must be one of {COVARIANCES}")
        if self.design not in DESIGNS:
            raise InvalidArgumentError(f"design must be one of {DESIGNS}")
        if self.n < 1:
            raise InvalidArgumentError("n must be >= 1")
        if self.tau2 < 0:
            raise InvalidArgumentError("tau2 must be nonnegative")
        if self.domain is None:
            dom = UNIT_DOMAIN if self.covariance == "blended" else TEST_DOMAIN
            object.__setattr__(self, "domain", dom)
        object.__setattr__(self, "block_alphas", tuple(float(a) for a in self.block_alphas))
        self.model()  # validates family parameters

    def model(self):
        if self.covariance == "stationary":
            if self.nu == 0.5:
                return Exponential(self.sigma2, self.alpha)
            return Matern(self.sigma2, self.alpha, self.nu)
        if self.covariance == "nonstat":
            return NonstatMatern(self.lam)
        if self.covariance == "four_block":
            if len(self.block_alphas) != 4:
                raise InvalidArgumentError("four_block needs four alphas")
            return BlockIndependent(
                four_blocks(self.domain), tuple(Exponential(self.sigma2, a) for a in self.block_alphas)
            )
        return Blended(self.alpha1, self.alpha2, self.a, self.region2, self.domain)

    def true_labels(self, sites) -> np.ndarray | None:
        """True region membership (blocks or the two blended regions), else None."""
        m = self.model()
        if isinstance(m, (Blended, BlockIndependent)):
            return m.labels(sites.sites if isinstance(sites, SiteSet) else sites)
        return None

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_list() if isinstance(v, Rect) else list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        d.pop("schema", None)
        for key in ("domain", "region2"):
            if d.get(key) is not None:
                d[key] = Rect(*d[key])
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise InvalidArgumentError(f"unknown scenario field(s): {sorted(unknown)}")
        return cls(**d)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, seed=seed)

    def simulate(self, rng=None, known_nugget: bool = False) -> SpatialDataset:
        """Draw sites and values; ``rng`` defaults to one seeded by ``self.seed``.

        The dataset leaves the nugget unknown (to be estimated downstream)
        unless ``known_nugget`` is set.
        """
        rng = _rng(self.seed if rng is None else rng)
        sites = sample_locations(self.design, self.n, self.domain, rng)
        z = simulate_field(self, sites, rng)
        return SpatialDataset(sites, z, self.tau2 if known_nugget else None)


def sample_locations(design: str, n: int, domain: Rect, seed=None) -> SiteSet:
    """Uniform sites, or an equal mixture of two Gaussian clumps truncated to the domain.

    The clumps sit at the domain center offset by a quarter of the width and
    height along the diagonal, with standard deviation ``sqrt(area) / 8``.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    rng = _rng(seed)
    lo = np.array([domain.xmin, domain.ymin])
    span = np.array([domain.xmax - domain.xmin, domain.ymax - domain.ymin])
    if design == "uniform":
        pts = lo + span * rng.random((n, 2))
    elif design == "clustered":
        center = lo + 0.5 * span
        offs = 0.25 * span
        sd = math.sqrt(domain.area) / 8.0
        pts = np.empty((0, 2))
        while len(pts) < n:
            k = 2 * (n - len(pts)) + 8
            which = rng.random(k) < 0.5
            mu = np.where(which[:, None], center - offs, center + offs)
            cand = mu + sd * rng.standard_normal((k, 2))
            pts = np.vstack([pts, cand[domain.contains(cand)]])
        pts = pts[:n]
    else:
        raise InvalidArgumentError(f"unknown design {design!r}")
    return SiteSet(pts, domain)


def simulate_field(scenario: Scenario, sites: SiteSet, seed=None) -> np.ndarray:
    """One draw of ``z = y + e`` at the sites, with ``y`` from the scenario covariance."""
    n = len(sites)
    if n > MAX_SIM_SITES:
        raise InvalidArgumentError(f"dense simulation is capped at {MAX_SIM_SITES} sites")
    rng = _rng(seed)
    chol, _ = cholesky_jitter(scenario.model().matrix(sites.sites))
    y = chol @ rng.standard_normal(n)
    if scenario.tau2 > 0:
        y = y + math.sqrt(scenario.tau2) * rng.standard_normal(n)
    return y
