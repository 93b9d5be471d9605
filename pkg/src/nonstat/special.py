"""Modified Bessel function of the second kind for real order.

Small arguments (x < 2) use Temme's series, larger ones Steed's continued
fraction; both produce K_mu and K_{mu+1} for |mu| <= 1/2, and forward
recurrence lifts them to the requested order.  Vectorized over ``x``.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceError, InvalidArgumentError

_EPS = 1e-16
_MAXIT = 10000
_XMIN = 2.0

# Taylor coefficients of 1/Gamma(1+x) = sum_k c[k] x^k
_RGAMMA_COEF = (
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
)


def _temme_gammas(mu: float) -> tuple[float, float, float, float]:
    """Return gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu) for |mu| <= 1/2."""
    if abs(mu) < 0.05:
        c = _RGAMMA_COEF
        m2 = mu * mu
        gam1 = -(c[1] + m2 * (c[3] + m2 * (c[5] + m2 * c[7])))
        gam2 = c[0] + m2 * (c[2] + m2 * (c[4] + m2 * (c[6] + m2 * c[8])))
    else:
        gp = 1.0 / math.gamma(1.0 + mu)
        gm = 1.0 / math.gamma(1.0 - mu)
        gam1 = (gm - gp) / (2.0 * mu)
        gam2 = 0.5 * (gm + gp)
    return gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1


def _k_small(mu: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x2 = 0.5 * x
    pimu = math.pi * mu
    fact = 1.0 if abs(pimu) < _EPS else pimu / math.sin(pimu)
    d = -np.log(x2)
    e = mu * d
    small_e = np.abs(e) < _EPS
    fact2 = np.where(small_e, 1.0, np.sinh(e) / np.where(small_e, 1.0, e))
    gam1, gam2, gampl, gammi = _temme_gammas(mu)
    ff = fact * (gam1 * np.cosh(e) + gam2 * fact2 * d)
    total = ff.copy()
    ee = np.exp(e)
    p = 0.5 * ee / gampl
    q = 0.5 / (ee * gammi)
    dd = x2 * x2
    mu2 = mu * mu
    total1 = p.copy()
    # iterate only over unconverged entries; idx maps them back
    idx = np.arange(x.size)
    c = np.ones_like(x)
    for i in range(1, _MAXIT):
        ff = (i * ff + p + q) / (i * i - mu2)
        c = c * dd / i
        p = p / (i - mu)
        q = q / (i + mu)
        delta = c * ff
        total[idx] += delta
        total1[idx] += c * (p - i * ff)
        keep = np.abs(delta) >= np.abs(total[idx]) * _EPS
        if not keep.all():
            if not keep.any():
                break
            idx, ff, c, p, q, dd = idx[keep], ff[keep], c[keep], p[keep], q[keep], dd[keep]
    else:
        raise ConvergenceError("Bessel K series did not converge", {"order": mu})
    return total, total1 * (2.0 / x)


def _k_large(mu: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    b = 2.0 * (1.0 + x)
    d = 1.0 / b
    h = d.copy()
    delh = d.copy()
    a1 = 0.25 - mu * mu
    a = -a1
    q1 = np.zeros_like(x)
    q2 = np.ones_like(x)
    q = np.full_like(x, a1)
    c = np.full_like(x, a1)
    s = 1.0 + q * delh
    idx = np.arange(x.size)
    for i in range(2, _MAXIT):
        a -= 2 * (i - 1)
        c = -a * c / i
        qnew = (q1 - b * q2) / a
        q1, q2 = q2, qnew
        q = q + c * qnew
        b = b + 2.0
        d = 1.0 / (b + a * d)
        delh = (b * d - 1.0) * delh
        h[idx] += delh
        dels = q * delh
        s[idx] += dels
        keep = np.abs(dels / s[idx]) >= _EPS
        if not keep.all():
            if not keep.any():
                break
            idx, c, q1, q2, q, b, d, delh = (
                idx[keep], c[keep], q1[keep], q2[keep], q[keep], b[keep], d[keep], delh[keep]
            )
    else:
        raise ConvergenceError("Bessel K continued fraction did not converge", {"order": mu})
    h = a1 * h
    kmu = np.sqrt(math.pi / (2.0 * x)) * np.exp(-x) / s
    k1 = kmu * (mu + x + 0.5 - h) / x
    return kmu, k1


def bessel_k(nu: float, x):
    """K_nu(x) for real ``nu`` and positive ``x`` (scalar or array)."""
    xa = np.asarray(x, dtype=float)
    if np.any(~(xa > 0)):
        raise InvalidArgumentError("bessel_k requires x > 0")
    nu = abs(float(nu))
    nl = int(nu + 0.5)
    mu = nu - nl
    flat = xa.reshape(-1)
    kmu = np.empty_like(flat)
    k1 = np.empty_like(flat)
    lo = flat < _XMIN
    if lo.any():
        kmu[lo], k1[lo] = _k_small(mu, flat[lo])
    if (~lo).any():
        with np.errstate(under="ignore"):
            kmu[~lo], k1[~lo] = _k_large(mu, flat[~lo])
    two_over_x = 2.0 / flat
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, nl + 1):
            kmu, k1 = k1, (mu + i) * two_over_x * k1 + kmu
    out = kmu.reshape(xa.shape)
    return float(out) if out.ndim == 0 else out
