import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from nonstat.data import SpatialDataset
from nonstat.errors import DegenerateLagError, InvalidArgumentError, NoNeighborsError
from nonstat.geometry import Rect, SiteSet, build_neighbor_graph
from nonstat.indices import (
    estimate_nugget,
    index_constants,
    lag_classes,
    local_indices,
    nugget_from_lags,
    nugget_lags,
    robust_variogram,
)
from nonstat.simulate import Scenario

G34 = 1.2254167024651776  # reference value of Gamma(3/4)


def uniform_data(n, seed, z=None, domain=Rect(0, 1, 0, 1)):
    rng = np.random.default_rng(seed)
    xy = np.column_stack([rng.uniform(domain.xmin, domain.xmax, n), rng.uniform(domain.ymin, domain.ymax, n)])
    if z is None:
        z = rng.standard_normal(n)
    return SpatialDataset(SiteSet(xy, domain), z)


def test_constants_unit_nugget():
    c = index_constants(1.0)
    assert c.c1 == pytest.approx(math.sqrt(2 / math.pi) * G34, rel=1e-12)
    assert c.c2 == pytest.approx(2**-1.5 / math.sqrt(math.pi) * G34, rel=1e-12)
    # quoted decimals 0.977755 and 0.244439 agree with the formula to about 1.5e-5
    assert c.c1 == pytest.approx(0.977755, abs=2e-5)
    assert c.c2 == pytest.approx(0.244439, abs=2e-5)
    assert c.c1 / c.c2 == pytest.approx(4.0, rel=1e-14)
    assert c.c3 == pytest.approx(2 * (1 / math.sqrt(math.pi) - G34**2 / math.pi) / c.c2, rel=1e-12)


def test_constants_scaling():
    a, b = index_constants(1.0), index_constants(16.0)
    assert b.c1 == pytest.approx(2 * a.c1, rel=1e-14)
    assert b.c2 == pytest.approx(a.c2 / 8, rel=1e-14)


@settings(max_examples=200)
@given(st.floats(1e-8, 1e8))
def test_constants_identity(t2):
    c = index_constants(t2)
    assert c.c1 == pytest.approx(4 * t2 * c.c2, rel=1e-12)
    assert c.c1 > 0 and c.c2 > 0 and c.c3 > 0


def test_constants_zero_and_negative():
    c = index_constants(0.0)
    assert c.c1 == 0.0 and math.isinf(c.c2)
    with pytest.raises(InvalidArgumentError):
        index_constants(-0.1)


def test_constant_field():
    data = uniform_data(200, 1, z=np.full(200, 3.0))
    c = index_constants(0.7)
    f = local_indices(data, consts=c)
    g = f.graph
    for k, i in enumerate(f.active):
        d = np.linalg.norm(data.xy[g.neighbors[i]] - data.xy[i], axis=1)
        assert f.xi[k] == pytest.approx(-c.c1 * d.sum() / (d * d).sum(), rel=1e-12)


def test_single_pair_hand_value():
    data = SpatialDataset(SiteSet(np.array([[0.0, 0.0], [1.0, 0.0]]), Rect(0, 1, 0, 1)), [0.0, 1.0])
    g = build_neighbor_graph(data.sites, 1.5)
    c = index_constants(1.0)
    f = local_indices(data, g, c)
    assert f.xi.tolist() == pytest.approx([1 - c.c1] * 2, rel=1e-12)
    assert f.xi.tolist() == pytest.approx([0.022245] * 2, abs=2e-5)


def test_literal_normalization_divides_by_count():
    data = uniform_data(150, 2)
    c = index_constants(0.5)
    a = local_indices(data, consts=c)
    b = local_indices(data, a.graph, c, literal_eq7=True)
    np.testing.assert_allclose(b.xi, a.xi / a.n_neighbors, rtol=1e-14)


def test_brute_force_index():
    data = uniform_data(80, 3)
    c = index_constants(0.3)
    f = local_indices(data, consts=c)
    for k, i in enumerate(f.active):
        num = den = 0.0
        for j in f.graph.neighbors[i]:
            d = math.dist(data.xy[i], data.xy[j])
            w = d * d
            num += w * (math.sqrt(abs(data.z[j] - data.z[i])) - c.c1) / d
            den += w
        assert f.xi[k] == pytest.approx(num / den, rel=1e-12)


def test_no_neighbors():
    data = SpatialDataset(SiteSet(np.array([[0.0, 0.0], [1.0, 1.0]]), Rect(0, 1, 0, 1)), [0.0, 1.0])
    with pytest.raises(NoNeighborsError):
        local_indices(data, build_neighbor_graph(data.sites, 0.1), index_constants(1.0))


def test_pure_noise_mean_zero():
    rng = np.random.default_rng(5)
    data = uniform_data(2000, 5, z=rng.standard_normal(2000))
    f = local_indices(data, consts=index_constants(1.0))
    se = f.xi.std(ddof=1) / math.sqrt(f.n_active)
    assert abs(f.xi.mean()) <= 3 * se


def test_robust_variogram_examples():
    n = 501
    data = SpatialDataset(SiteSet(np.column_stack([np.arange(n) / n, np.zeros(n)]), Rect(0, 1, 0, 1)),
                          np.arange(n, dtype=float))
    pairs = np.column_stack([np.arange(250), np.arange(1, 251)])
    e = robust_variogram(pairs, data)
    assert e.gamma_hat == pytest.approx(1 / (2 * (0.457 + 0.494 / 250 + 0.045 / 250**2)), rel=1e-12)
    assert e.gamma_hat == pytest.approx(1.089379, abs=1e-6)
    assert e.m == 250 and e.d_mean == pytest.approx(1 / n)
    flat = data.with_values(np.zeros(n))
    assert robust_variogram(pairs, flat).gamma_hat == 0.0
    scaled = data.with_values(3.0 * data.z)
    assert robust_variogram(pairs, scaled).gamma_hat == pytest.approx(9 * e.gamma_hat, rel=1e-12)
    with pytest.raises(InvalidArgumentError):
        robust_variogram(np.empty((0, 2)), data)


def test_nugget_from_lags_examples():
    assert nugget_from_lags(1.3, 1.3, 0.1, 0.2) == 1.3
    assert nugget_from_lags(1.0, 2.0, 1.0, 2.0) == 0.0
    assert nugget_from_lags(2.0, 3.0, 1.0, 3.0) == pytest.approx(1.5)
    # negative slope is clamped to zero
    assert nugget_from_lags(2.0, 1.0, 1.0, 2.0) == 2.0
    with pytest.raises(DegenerateLagError):
        nugget_from_lags(1.0, 2.0, 1.0, 1.0)


def test_lag_classes_are_distance_quantiles():
    data = uniform_data(60, 6)
    lc = lag_classes(data.xy, 100)
    d = np.sort(np.linalg.norm(data.xy[:, None] - data.xy[None], axis=2)[np.triu_indices(60, 1)])
    np.testing.assert_allclose(np.sort(lc.dist1), d[:100])
    np.testing.assert_allclose(np.sort(lc.dist2), d[100:200])
    e1, e2 = nugget_lags(data, 100)
    assert e1.m == e2.m == 100
    assert e1.d_mean < e2.d_mean


def test_nugget_too_few_pairs():
    with pytest.raises(InvalidArgumentError):
        estimate_nugget(uniform_data(20, 0), 250)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-100, 100))
def test_translation_invariance(seed, shift):
    data = uniform_data(120, seed)
    moved = data.with_values(data.z + shift)
    c = index_constants(0.4)
    np.testing.assert_allclose(local_indices(moved, consts=c).xi, local_indices(data, consts=c).xi, atol=1e-9)
    a, b = nugget_lags(data, 100), nugget_lags(moved, 100)
    assert b[0].gamma_hat == pytest.approx(a[0].gamma_hat, rel=1e-9)
    assert estimate_nugget(moved, 100) == pytest.approx(estimate_nugget(data, 100), rel=1e-9, abs=1e-12)


def test_nugget_pure_noise():
    est = []
    for seed in range(20):
        data = uniform_data(2000, 100 + seed, z=np.random.default_rng(seed).normal(0, math.sqrt(0.5), 2000))
        est.append(estimate_nugget(data, 250))
    assert np.mean(est) == pytest.approx(0.5, rel=0.2)


def test_mean_index_increases_with_sill():
    means = {s2: [] for s2 in (0.5, 1.0, 2.0)}
    for seed in range(20):
        for s2 in means:
            d = Scenario(n=2000, alpha=1.0, sigma2=s2, tau2=0.1, seed=seed).simulate(known_nugget=True)
            means[s2].append(local_indices(d).xi.mean())
    avg = [np.mean(means[s2]) for s2 in (0.5, 1.0, 2.0)]
    assert avg[0] < avg[1] < avg[2]
    # rank check per replicate too
    ranks = [stats.rankdata([means[s2][r] for s2 in (0.5, 1.0, 2.0)]).tolist() for r in range(20)]
    assert sum(rk == [1.0, 2.0, 3.0] for rk in ranks) >= 15


def _mean_index_ratio(sigma2, alpha, tau2, n, seeds):
    vals = []
    for seed in seeds:
        d = Scenario(n=n, alpha=alpha, sigma2=sigma2, tau2=tau2, seed=seed).simulate(known_nugget=True)
        vals.append(local_indices(d, consts=index_constants(tau2)).xi.mean())
    return np.mean(vals) / (index_constants(tau2).c2 * sigma2 / alpha)


def test_mean_index_consistency_stated_setting():
    # stated setting: sigma2=1, alpha=0.2, tau2=0.01, n=5000 (the first-order expansion is
    # not accurate here because sigma2*h/alpha is large compared with tau2)
    assert 0.75 <= _mean_index_ratio(1.0, 0.2, 0.01, 5000, [0]) <= 1.25


def test_mean_index_consistency_small_lag_regime():
    # same statistic where sigma2*h/alpha << tau2, so the expansion holds
    assert 0.75 <= _mean_index_ratio(1.0, 0.5, 1.0, 5000, range(10)) <= 1.25
