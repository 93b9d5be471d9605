"""Ordinary kriging, piecewise-stationary kriging and predictive scores.

Predictions target the noise-free field ``y(s0)``: the data covariance
carries the nugget on its diagonal, the cross-covariance does not.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve
from scipy.special import ndtr

from .covariance import build_cov_matrix, cholesky_jitter
from .data import SpatialDataset
from .errors import InvalidArgumentError, NumericalError
from .geometry import voronoi_assign

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@dataclass
class Prediction:
    mean: np.ndarray
    variance: np.ndarray
    region: np.ndarray | None = None

    @property
    def sd(self) -> np.ndarray:
        return np.sqrt(self.variance)


class KrigingSystem:
    """Factorized ordinary-kriging system for one training set and model."""

    def __init__(self, sites, z, model, tau2: float = 0.0):
        self.sites = np.asarray(sites.sites if hasattr(sites, "sites") else sites, dtype=float).reshape(-1, 2)
        self.z = np.asarray(z, dtype=float).reshape(-1)
        if len(self.z) != len(self.sites) or len(self.z) == 0:
            raise InvalidArgumentError("need one value per training site")
        if tau2 < 0:
            raise InvalidArgumentError("tau2 must be nonnegative")
        self.model = model
        self.tau2 = float(tau2)
        cov = build_cov_matrix(self.sites, model, tau2)
        self.chol, self.jitter = cholesky_jitter(cov)
        self._c = (self.chol, True)
        one = np.ones(len(self.z))
        self.si1 = cho_solve(self._c, one)
        self.q1 = float(one @ self.si1)
        if not self.q1 > 0 or not math.isfinite(self.q1):
            raise NumericalError("1' Sigma^-1 1 is not positive")

    @classmethod
    def from_dataset(cls, data: SpatialDataset, model, tau2: float | None = None) -> "KrigingSystem":
        return cls(data.xy, data.z, model, (data.tau2 or 0.0) if tau2 is None else tau2)

    def weights(self, s0) -> np.ndarray:
        """Ordinary-kriging weights, one column per prediction point."""
        q = np.atleast_2d(np.asarray(s0, dtype=float))
        c = self.model.cross(self.sites, q)
        sic = cho_solve(self._c, c)
        return sic + np.outer(self.si1, (1.0 - self.si1 @ c) / self.q1)

    def predict(self, s0) -> Prediction:
        q = np.atleast_2d(np.asarray(s0, dtype=float))
        c = self.model.cross(self.sites, q)
        sic = cho_solve(self._c, c)
        gap = 1.0 - self.si1 @ c
        lam = sic + np.outer(self.si1, gap / self.q1)
        mean = lam.T @ self.z
        var = self.model.variance(q) - np.einsum("ij,ij->j", c, sic) + gap * gap / self.q1
        return Prediction(mean, np.maximum(var, 0.0))


def ordinary_krige(system: KrigingSystem, s0) -> Prediction:
    """Kriging mean and variance at one point or an ``(m, 2)`` array of points."""
    return system.predict(s0)


class PiecewiseKriger:
    """Kriging within Voronoi subregions, each with its own data and model.

    ``seeds`` are the subregion generators; ``fits`` one fitted model per
    subregion (anything with ``model()`` and ``tau2``).  Prediction at a
    point uses only the subregion that contains it.
    """

    def __init__(self, data: SpatialDataset, seeds, fits, min_train: int = 10):
        self.seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
        if len(fits) != len(self.seeds):
            raise InvalidArgumentError("one fit per subregion required")
        labels = voronoi_assign(self.seeds, data.xy)
        counts = np.bincount(labels, minlength=len(self.seeds))
        if np.any(counts < min_train):
            raise InvalidArgumentError(f"subregion training sizes {counts.tolist()} below {min_train}")
        self.systems = [
            KrigingSystem(data.xy[labels == k], data.z[labels == k], f.model(), f.tau2) for k, f in enumerate(fits)
        ]
        self.fits = list(fits)

    def predict(self, s0) -> Prediction:
        q = np.atleast_2d(np.asarray(s0, dtype=float))
        reg = voronoi_assign(self.seeds, q)
        mean = np.empty(len(q))
        var = np.empty(len(q))
        for k, sys_k in enumerate(self.systems):
            sel = reg == k
            if sel.any():
                p = sys_k.predict(q[sel])
                mean[sel], var[sel] = p.mean, p.variance
        return Prediction(mean, var, reg)

    def nugget(self, s0) -> np.ndarray:
        reg = voronoi_assign(self.seeds, np.atleast_2d(np.asarray(s0, dtype=float)))
        return np.array([self.fits[k].tau2 for k in np.atleast_1d(reg)])


def piecewise_krige(data: SpatialDataset, seeds, fits=None, *, tau2: float | None = None, min_train: int = 10) -> PiecewiseKriger:
    """Fit (if ``fits`` is None) an exponential model per subregion and return the predictor."""
    from .statest import fit_exponential_ml

    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    if fits is None:
        t2 = (data.tau2 or 0.0) if tau2 is None else tau2
        labels = voronoi_assign(seeds, data.xy)
        counts = np.bincount(labels, minlength=len(seeds))
        if np.any(counts < min_train):
            raise InvalidArgumentError(f"subregion training sizes {counts.tolist()} below {min_train}")
        fits = [fit_exponential_ml(data.subset(np.flatnonzero(labels == k)), t2) for k in range(len(seeds))]
    return PiecewiseKriger(data, seeds, fits, min_train)


def rmspe(predictions, truths) -> float:
    p = np.asarray(predictions, dtype=float).reshape(-1)
    t = np.asarray(truths, dtype=float).reshape(-1)
    if len(p) != len(t):
        raise InvalidArgumentError(f"{len(p)} predictions for {len(t)} truths")
    if len(p) == 0:
        raise InvalidArgumentError("empty input")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def gaussian_crps(mean, sd, z):
    """Continuous ranked probability score of ``N(mean, sd^2)`` at ``z``."""
    mean, sd, z = (np.asarray(v, dtype=float) for v in (mean, sd, z))
    if np.any(~(sd > 0)):
        raise InvalidArgumentError("sd must be positive")
    w = (z - mean) / sd
    pdf = np.exp(-0.5 * w * w) / math.sqrt(2.0 * math.pi)
    out = sd * (w * (2.0 * ndtr(w) - 1.0) + 2.0 * pdf - INV_SQRT_PI)
    return float(out) if out.ndim == 0 else out


def score_predictions(pred: Prediction, truths, tau2) -> dict:
    """RMSPE and mean CRPS against observed values; the CRPS spread adds the nugget."""
    sd = np.sqrt(pred.variance + np.asarray(tau2, dtype=float))
    return {"rmspe": rmspe(pred.mean, truths), "crps": float(np.mean(gaussian_crps(pred.mean, sd, truths)))}
