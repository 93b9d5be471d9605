"""Covariance kernels, covariance models and matrix assembly.

Every model exposes ``cross(a, b)`` returning ``cov(y(a_i), y(b_j))`` for
two coordinate arrays; the nugget is never part of a model and is added
by :func:`build_cov_matrix`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import ClassVar

import numpy as np
from scipy.linalg import cho_factor
from scipy.special import expit

from .errors import DomainError, InvalidArgumentError, NumericalError
from .geometry import Rect, SiteSet, pairwise_distances
from .special import bessel_k

__all__ = [
    "bessel_k",
    "matern_cov",
    "exp_semivariogram",
    "nonstat_matern_cov",
    "bivariate_exp_cov",
    "blended_weights",
    "blended_cov",
    "Exponential",
    "Matern",
    "NonstatMatern",
    "BivariateExponential",
    "Blended",
    "BlockIndependent",
    "model_from_dict",
    "build_cov_matrix",
    "cholesky_jitter",
]


def _check_pos(**kw):
    for name, v in kw.items():
        if not (np.isfinite(v) and v > 0):
            raise InvalidArgumentError(f"{name} must be positive, got {v}")


def matern_cov(h, sigma2: float = 1.0, alpha: float = 1.0, nu: float = 0.5):
    """Isotropic Matern covariance at distance(s) ``h``."""
    _check_pos(sigma2=sigma2, alpha=alpha, nu=nu)
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise InvalidArgumentError("distance must be nonnegative")
    if nu == 0.5:
        out = sigma2 * np.exp(-h / alpha)
    else:
        out = np.full(h.shape, float(sigma2))
        pos = h > 0
        if pos.any():
            t = math.sqrt(2.0 * nu) * h[pos] / alpha
            with np.errstate(divide="ignore", under="ignore"):
                logk = np.log(bessel_k(nu, t))
            lognorm = (1.0 - nu) * math.log(2.0) - math.lgamma(nu)
            with np.errstate(under="ignore"):
                out[pos] = sigma2 * np.exp(lognorm + nu * np.log(t) + logk)
    return float(out) if out.ndim == 0 else out


def exp_semivariogram(h, sigma2: float, alpha: float):
    """Exponential semivariogram ``sigma2 * (1 - exp(-h / alpha))``."""
    _check_pos(sigma2=sigma2, alpha=alpha)
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise InvalidArgumentError("distance must be nonnegative")
    out = sigma2 * -np.expm1(-h / alpha)
    return float(out) if out.ndim == 0 else out


def _nonstat_kernel_matrices(pts: np.ndarray, lam: float) -> np.ndarray:
    """Per-site 2x2 matrices ``A diag(1, 1/2) A'`` of the smoothly varying kernel."""
    arg = pts[:, 0] / lam + 0.75
    if np.any(arg <= 0):
        bad = int(np.flatnonzero(arg <= 0)[0])
        raise DomainError(f"log argument s_x/lambda + 3/4 <= 0 at site {bad} {pts[bad].tolist()}")
    ell = np.log(arg)
    r = (pts[:, 0] ** 2 + pts[:, 1] ** 2) / lam**2
    n = len(pts)
    a = np.empty((n, 2, 2))
    a[:, 0, 0] = ell
    a[:, 0, 1] = -r
    a[:, 1, 0] = r
    a[:, 1, 1] = ell
    sig = a @ np.diag([1.0, 0.5]) @ np.transpose(a, (0, 2, 1))
    det = sig[:, 0, 0] * sig[:, 1, 1] - sig[:, 0, 1] * sig[:, 1, 0]
    if np.any(~(det > 0) | ~(sig[:, 0, 0] > 0)):
        bad = int(np.flatnonzero(~(det > 0) | ~(sig[:, 0, 0] > 0))[0])
        raise DomainError(f"kernel matrix not positive definite at site {bad} {pts[bad].tolist()}")
    return sig


def _nonstat_cross(a: np.ndarray, b: np.ndarray, lam: float) -> np.ndarray:
    sa = _nonstat_kernel_matrices(a, lam)
    sb = _nonstat_kernel_matrices(b, lam)
    det_a = np.linalg.det(sa)
    det_b = np.linalg.det(sb)
    s = sa[:, None] + sb[None, :]  # (na, nb, 2, 2)
    det_s = s[..., 0, 0] * s[..., 1, 1] - s[..., 0, 1] * s[..., 1, 0]
    dx = a[:, None, 0] - b[None, :, 0]
    dy = a[:, None, 1] - b[None, :, 1]
    # u' S^{-1} u for the 2x2 sum S, written out
    quad = (s[..., 1, 1] * dx * dx - (s[..., 0, 1] + s[..., 1, 0]) * dx * dy + s[..., 0, 0] * dy * dy) / det_s
    q = 2.0 * quad
    pref = det_a[:, None] ** 0.25 * det_b[None, :] ** 0.25 / np.sqrt(det_s / 4.0)
    return pref * np.exp(-np.sqrt(np.maximum(q, 0.0)))


def nonstat_matern_cov(s1, s2, lam: float) -> float:
    """Smoothly nonstationary covariance with spatially varying kernel matrix."""
    _check_pos(lam=lam)
    a = np.atleast_2d(np.asarray(s1, dtype=float))
    b = np.atleast_2d(np.asarray(s2, dtype=float))
    return float(_nonstat_cross(a, b, lam)[0, 0])


def bivariate_exp_cov(k: int, k2: int, h, alpha1: float, alpha2: float):
    """Cross-covariance of components ``k`` and ``k2`` (1 or 2) of the bivariate field."""
    _check_pos(alpha1=alpha1, alpha2=alpha2)
    if k not in (1, 2) or k2 not in (1, 2):
        raise InvalidArgumentError("component index must be 1 or 2")
    a = (alpha1, alpha2)
    ak, ak2 = a[k - 1], a[k2 - 1]
    ss = ak * ak + ak2 * ak2
    pref = math.sqrt(2.0 * ak * ak2 / ss)
    rate = math.sqrt(ss) / (math.sqrt(2.0) * ak * ak2)
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise InvalidArgumentError("distance must be nonnegative")
    out = pref * np.exp(-rate * h)
    return float(out) if out.ndim == 0 else out


def _region_distances(pts: np.ndarray, region2: Rect, domain: Rect) -> tuple[np.ndarray, np.ndarray]:
    """Distances from each point to D1 = domain minus region2, and to region2."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    d2 = region2.distance(pts)
    inside = d2 == 0
    d1 = np.zeros(len(pts))
    if inside.any():
        p = pts[inside]
        cand = []
        # only sides of region2 that are interior to the domain border D1
        if region2.xmin > domain.xmin:
            cand.append(p[:, 0] - region2.xmin)
        if region2.xmax < domain.xmax:
            cand.append(region2.xmax - p[:, 0])
        if region2.ymin > domain.ymin:
            cand.append(p[:, 1] - region2.ymin)
        if region2.ymax < domain.ymax:
            cand.append(region2.ymax - p[:, 1])
        if not cand:
            raise InvalidArgumentError("region2 covers the whole domain")
        d1[inside] = np.min(cand, axis=0)
    return d1, d2


def blended_weights(d1, d2, a: float):
    """Weights ``(w1, w2)`` from distances to the two regions; ``w1 + w2 == 1``."""
    _check_pos(a=a)
    d1 = np.asarray(d1, dtype=float)
    d2 = np.asarray(d2, dtype=float)
    w1 = expit((d2 - d1) / a)
    return w1, 1.0 - w1


def blended_cov(s1, s2, alpha1: float, alpha2: float, a: float, region2: Rect, domain: Rect) -> float:
    """Covariance of the two-region blended process at a pair of sites."""
    m = Blended(alpha1, alpha2, a, region2, domain)
    return float(m.cross(np.atleast_2d(s1), np.atleast_2d(s2))[0, 0])


# ---------------------------------------------------------------- models


@dataclass(frozen=True)
class _Model:
    family: ClassVar[str] = ""

    def cross(self, a, b) -> np.ndarray:
        raise NotImplementedError

    def matrix(self, pts) -> np.ndarray:
        pts = pts.sites if isinstance(pts, SiteSet) else np.asarray(pts, dtype=float)
        return self.cross(pts, pts)

    def variance(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.array([self.cross(p[None], p[None])[0, 0] for p in pts])

    def to_dict(self) -> dict:
        d = {"family": self.family}
        for f in fields(self):
            v = getattr(self, f.name)
            d[f.name] = v.to_list() if isinstance(v, Rect) else v
        return d


@dataclass(frozen=True)
class Exponential(_Model):
    family: ClassVar[str] = "exponential"
    sigma2: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        _check_pos(sigma2=self.sigma2, alpha=self.alpha)

    def kernel(self, h):
        return self.sigma2 * np.exp(-np.asarray(h, dtype=float) / self.alpha)

    def cross(self, a, b):
        return self.kernel(pairwise_distances(a, b))

    def variance(self, pts):
        return np.full(len(np.atleast_2d(pts)), self.sigma2)


@dataclass(frozen=True)
class Matern(_Model):
    family: ClassVar[str] = "matern"
    sigma2: float = 1.0
    alpha: float = 1.0
    nu: float = 0.5

    def __post_init__(self):
        _check_pos(sigma2=self.sigma2, alpha=self.alpha, nu=self.nu)

    def kernel(self, h):
        return matern_cov(h, self.sigma2, self.alpha, self.nu)

    def cross(self, a, b):
        return np.asarray(self.kernel(pairwise_distances(a, b)))

    def matrix(self, pts):
        pts = pts.sites if isinstance(pts, SiteSet) else np.asarray(pts, dtype=float)
        n = len(pts)
        iu = np.triu_indices(n, 1)
        h = np.hypot(pts[iu[0], 0] - pts[iu[1], 0], pts[iu[0], 1] - pts[iu[1], 1])
        out = np.empty((n, n))
        vals = self.kernel(h)
        out[iu] = vals
        out.T[iu] = vals
        np.fill_diagonal(out, self.sigma2)
        return out

    def variance(self, pts):
        return np.full(len(np.atleast_2d(pts)), self.sigma2)


@dataclass(frozen=True)
class NonstatMatern(_Model):
    """Unit-variance covariance whose kernel matrix varies smoothly with ``s_x``."""

    family: ClassVar[str] = "nonstat_matern"
    lam: float = 20.0

    def __post_init__(self):
        _check_pos(lam=self.lam)

    def cross(self, a, b):
        return _nonstat_cross(np.atleast_2d(a), np.atleast_2d(b), self.lam)

    def variance(self, pts):
        _nonstat_kernel_matrices(np.atleast_2d(pts), self.lam)
        return np.ones(len(np.atleast_2d(pts)))


@dataclass(frozen=True)
class BivariateExponential(_Model):
    """Covariance between component ``k`` at one site and ``k2`` at another."""

    family: ClassVar[str] = "bivariate_exponential"
    k: int = 1
    k2: int = 1
    alpha1: float = 0.1
    alpha2: float = 0.5

    def __post_init__(self):
        bivariate_exp_cov(self.k, self.k2, 0.0, self.alpha1, self.alpha2)

    def cross(self, a, b):
        return bivariate_exp_cov(self.k, self.k2, pairwise_distances(a, b), self.alpha1, self.alpha2)


@dataclass(frozen=True)
class Blended(_Model):
    """Two latent fields mixed by distance-based weights around region2."""

    family: ClassVar[str] = "blended"
    alpha1: float = 0.1
    alpha2: float = 0.5
    a: float = 0.01
    region2: Rect = field(default_factory=lambda: Rect(0.5, 1.0, 0.0, 1.0))
    domain: Rect = field(default_factory=lambda: Rect(0.0, 1.0, 0.0, 1.0))

    def __post_init__(self):
        _check_pos(alpha1=self.alpha1, alpha2=self.alpha2, a=self.a)
        r, d = self.region2, self.domain
        if r.xmin < d.xmin or r.xmax > d.xmax or r.ymin < d.ymin or r.ymax > d.ymax:
            raise InvalidArgumentError("region2 must lie inside the domain")

    def weights(self, pts) -> tuple[np.ndarray, np.ndarray]:
        d1, d2 = _region_distances(pts, self.region2, self.domain)
        return blended_weights(d1, d2, self.a)

    def labels(self, pts) -> np.ndarray:
        """True region of each point: 0 for D1, 1 for region2."""
        return (self.region2.distance(np.atleast_2d(pts)) == 0).astype(int)

    def cross(self, a, b):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        h = pairwise_distances(a, b)
        wa1, wa2 = self.weights(a)
        wb1, wb2 = self.weights(b)
        c11 = bivariate_exp_cov(1, 1, h, self.alpha1, self.alpha2)
        c12 = bivariate_exp_cov(1, 2, h, self.alpha1, self.alpha2)
        c22 = bivariate_exp_cov(2, 2, h, self.alpha1, self.alpha2)
        return (
            np.outer(wa1, wb1) * c11
            + (np.outer(wa1, wb2) + np.outer(wa2, wb1)) * c12
            + np.outer(wa2, wb2) * c22
        )


@dataclass(frozen=True)
class BlockIndependent(_Model):
    """Mutually independent stationary fields on rectangular blocks."""

    family: ClassVar[str] = "block_independent"
    blocks: tuple = ()
    models: tuple = ()

    def __post_init__(self):
        if len(self.blocks) == 0 or len(self.blocks) != len(self.models):
            raise InvalidArgumentError("need one model per block")

    def labels(self, pts) -> np.ndarray:
        """Block index per point; a point on a shared edge goes to the later block."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        lab = np.full(len(pts), -1)
        for k, blk in enumerate(self.blocks):
            lab[blk.contains(pts)] = k
        if np.any(lab < 0):
            raise DomainError("point outside every block")
        return lab

    def cross(self, a, b):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        la, lb = self.labels(a), self.labels(b)
        out = np.zeros((len(a), len(b)))
        for k, m in enumerate(self.models):
            ia, ib = np.flatnonzero(la == k), np.flatnonzero(lb == k)
            if len(ia) and len(ib):
                out[np.ix_(ia, ib)] = m.cross(a[ia], b[ib])
        return out

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "blocks": [b.to_list() for b in self.blocks],
            "models": [m.to_dict() for m in self.models],
        }


_FAMILIES = {
    cls.family: cls
    for cls in (Exponential, Matern, NonstatMatern, BivariateExponential, Blended, BlockIndependent)
}


def model_from_dict(d: dict) -> _Model:
    """Inverse of ``to_dict``; the ``family`` tag selects the class."""
    d = dict(d)
    fam = d.pop("family", None)
    if fam not in _FAMILIES:
        raise InvalidArgumentError(f"unknown covariance family {fam!r}")
    if fam == "block_independent":
        return BlockIndependent(
            tuple(Rect(*b) for b in d["blocks"]), tuple(model_from_dict(m) for m in d["models"])
        )
    for key in ("region2", "domain"):
        if key in d:
            d[key] = Rect(*d[key])
    try:
        return _FAMILIES[fam](**d)
    except TypeError as exc:
        raise InvalidArgumentError(f"bad parameters for {fam}: {exc}") from None


# ---------------------------------------------------------------- matrices

JITTER_STEPS = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8)


def build_cov_matrix(sites, model: _Model, tau2: float = 0.0) -> np.ndarray:
    """Covariance of the noisy observations: model covariance plus ``tau2`` on the diagonal."""
    if tau2 < 0:
        raise InvalidArgumentError("tau2 must be nonnegative")
    pts = sites.sites if isinstance(sites, SiteSet) else np.atleast_2d(np.asarray(sites, dtype=float))
    cov = model.matrix(pts)
    cov = 0.5 * (cov + cov.T)
    if tau2:
        cov[np.diag_indices_from(cov)] += tau2
    return cov


def cholesky_jitter(cov: np.ndarray) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor, adding ``eps * mean(diag)`` only if needed.

    Returns the factor and the relative jitter used (0.0 when none).
    """
    scale = float(np.mean(np.diag(cov)))
    for eps in (0.0,) + JITTER_STEPS:
        a = cov if eps == 0.0 else cov + eps * scale * np.eye(len(cov))
        try:
            c, _ = cho_factor(a, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        return np.tril(c), eps
    w = np.linalg.eigvalsh(cov)
    raise NumericalError(
        f"Cholesky failed after jitter {JITTER_STEPS[-1]:g}; "
        f"eigenvalue range [{w[0]:.3e}, {w[-1]:.3e}], condition ~{abs(w[-1] / w[0]) if w[0] else np.inf:.3e}"
    )
