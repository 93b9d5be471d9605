import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonstat.errors import ConstraintViolationError, DegenerateClusterError, InvalidArgumentError
from nonstat.indices import LocalIndexField
from nonstat.metrics import rand_index
from nonstat.segmentation import (
    MIN_COUNT,
    bic_value,
    deterministic_kmeans_init,
    greedy_seed_search,
    objective_fK,
    region_stats,
    select_K_by_bic,
)

HALF_LOG_2PI = 0.9189385332046727


def field(sites, xi):
    return LocalIndexField.from_arrays(sites, xi)


def two_clusters(n_each=30, seed=0, gap=10.0, means=(0.0, 10.0)):
    rng = np.random.default_rng(seed)
    a = rng.normal((0, 0), 0.3, (n_each, 2))
    b = rng.normal((gap, 0), 0.3, (n_each, 2))
    xi = np.concatenate([rng.normal(means[0], 1, n_each), rng.normal(means[1], 1, n_each)])
    return np.vstack([a, b]), xi, np.repeat([0, 1], n_each)


def normal_nll(values):
    """Sum of -log N(v; mean, var) with ML mean and variance, written out."""
    v = np.asarray(values, dtype=float)
    mu = v.mean()
    var = np.mean((v - mu) ** 2)
    return sum(0.5 * math.log(var) + HALF_LOG_2PI + (x - mu) ** 2 / (2 * var) for x in v)


def test_f1_hand_value():
    st_ = region_stats(np.array([0.0, 2.0]), np.zeros(2, dtype=int), 1, min_count=1)
    assert st_.objective == pytest.approx(2 * (0 + 0.9189385 + 0.5), abs=1e-6)
    assert st_.objective == pytest.approx(2.837877, abs=1e-6)


def test_f1_standardized():
    v = np.random.default_rng(1).standard_normal(50)
    v = (v - v.mean()) / v.std()
    st_ = region_stats(v, np.zeros(50, dtype=int), 1)
    assert st_.objective == pytest.approx(50 * (HALF_LOG_2PI + 0.5), rel=1e-12)


def test_objective_matches_written_out_likelihood():
    rng = np.random.default_rng(2)
    sites = rng.uniform(0, 1, (40, 2))
    xi = rng.standard_normal(40)
    f = field(sites, xi)
    st_ = objective_fK(f, [3, 17, 25])
    want = sum(normal_nll(xi[st_.labels == k]) for k in range(3))
    assert st_.objective == pytest.approx(want, rel=1e-12)
    assert st_.counts.sum() == 40
    # labels follow nearest-seed assignment
    d = np.linalg.norm(sites[:, None] - sites[[3, 17, 25]][None], axis=2)
    assert st_.labels.tolist() == np.argmin(d, axis=1).tolist()


def test_objective_location_invariant():
    rng = np.random.default_rng(3)
    sites = rng.uniform(0, 1, (30, 2))
    xi = rng.standard_normal(30)
    a = objective_fK(field(sites, xi), [0, 5]).objective
    b = objective_fK(field(sites, xi + 123.0), [0, 5]).objective
    assert a == pytest.approx(b, rel=1e-10)


def test_objective_errors():
    sites = np.array([[0.0, 0], [1, 0], [2, 0], [3, 0], [10, 0], [11, 0]])
    with pytest.raises(ConstraintViolationError):
        objective_fK(field(sites, np.arange(6.0)), [0, 5], min_count=4)
    sites3 = np.array([[0.0, 0], [1, 0], [2, 0], [10, 0], [11, 0], [12, 0]])
    with pytest.raises(DegenerateClusterError):
        objective_fK(field(sites3, np.array([1.0, 1, 1, 5, 6, 7])), [0, 5])
    with pytest.raises(InvalidArgumentError):
        objective_fK(field(sites, np.arange(6.0)), [1, 1])


def test_separated_clusters_recovered():
    sites, xi, truth = two_clusters()
    res = greedy_seed_search(field(sites, xi), 2)
    assert rand_index(truth, res.stats.labels) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_f2_not_above_f1(seed):
    rng = np.random.default_rng(seed)
    sites = rng.uniform(0, 1, (200, 2))
    xi = rng.standard_normal(200)
    f1 = region_stats(xi, np.zeros(200, dtype=int), 1).objective
    assert greedy_seed_search(field(sites, xi), 2).stats.objective <= f1


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_trace_monotone(seed, K):
    rng = np.random.default_rng(seed)
    sites = rng.uniform(0, 1, (80, 2))
    xi = rng.standard_normal(80) + 2.0 * (sites[:, 0] > 0.5)
    res = greedy_seed_search(field(sites, xi), K)
    assert all(b <= a for a, b in zip(res.trace, res.trace[1:]))
    assert res.trace[-1] == pytest.approx(res.stats.objective)
    assert res.cycles >= 1
    assert len(set(res.seeds.indices)) == K
    assert np.all(np.bincount(res.stats.labels, minlength=K) >= MIN_COUNT)


def test_infeasible_K():
    rng = np.random.default_rng(0)
    f = field(rng.uniform(0, 1, (8, 2)), rng.standard_normal(8))
    with pytest.raises(InvalidArgumentError):
        greedy_seed_search(f, 3)


def _exhaustive_f2(f):
    best = math.inf
    for pair in itertools.combinations(range(f.n_active), 2):
        try:
            best = min(best, objective_fK(f, pair).objective)
        except (ConstraintViolationError, DegenerateClusterError):
            continue
    return best


def test_small_instance_optimality():
    hits = 0
    total = 0
    rng = np.random.default_rng(2024)
    while total < 100:
        n = int(rng.integers(8, 13))
        sites = rng.uniform(0, 1, (n, 2))
        xi = rng.standard_normal(n) + 1.5 * (sites[:, 0] > rng.uniform(0.3, 0.7))
        f = field(sites, xi)
        exh = _exhaustive_f2(f)
        if not math.isfinite(exh):
            continue
        total += 1
        got = greedy_seed_search(f, 2).stats.objective
        assert exh <= got + 1e-12
        hits += got <= exh + 1e-9
    assert hits >= 80


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.01, 100), st.floats(-100, 100))
def test_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    sites = rng.uniform(0, 1, (60, 2))
    xi = rng.standard_normal(60) + 2.0 * (sites[:, 1] > 0.5)
    r1 = greedy_seed_search(field(sites, xi), 2)
    r2 = greedy_seed_search(field(sites, a * xi + b), 2)
    assert r1.seeds.indices == r2.seeds.indices
    assert r2.stats.objective == pytest.approx(r1.stats.objective + 60 * math.log(a), rel=1e-9, abs=1e-9)


def test_kmeans_init_K1_is_density_peak():
    rng = np.random.default_rng(4)
    dense = rng.normal((0.2, 0.2), 0.02, (40, 2))
    sparse_ = rng.uniform(0, 1, (20, 2))
    sites = np.vstack([dense, sparse_])
    xi = np.zeros(60) + rng.normal(0, 0.01, 60)
    s = deterministic_kmeans_init(field(sites, xi), 1)
    assert s.K == 1
    assert np.linalg.norm(s.coords[0] - (0.2, 0.2)) < 0.05


def test_kmeans_init_two_clusters():
    sites, xi, truth = two_clusters(seed=5)
    s = deterministic_kmeans_init(field(sites, xi), 2)
    assert sorted(truth[list(s.indices)].tolist()) == [0, 1]


def test_kmeans_init_deterministic():
    rng = np.random.default_rng(6)
    f = field(rng.uniform(0, 1, (100, 2)), rng.standard_normal(100))
    a = deterministic_kmeans_init(f, 3)
    b = deterministic_kmeans_init(f, 3)
    assert a.indices == b.indices
    assert np.array_equal(a.coords, b.coords)
    assert len(set(a.indices)) == 3


def test_kmeans_init_too_many():
    f = field(np.random.default_rng(0).uniform(0, 1, (3, 2)), [0.0, 1.0, 2.0])
    with pytest.raises(InvalidArgumentError):
        deterministic_kmeans_init(f, 4)


def test_bic_value():
    assert bic_value(10.0, 1, 100) == pytest.approx(10 + 4 * math.log(100))
    assert bic_value(10.0, 1, 100) == pytest.approx(28.42068, abs=1e-5)


def test_bic_flat_objective_picks_one():
    rng = np.random.default_rng(7)
    sites = rng.uniform(0, 1, (300, 2))
    xi = rng.standard_normal(300)
    res = select_K_by_bic(field(sites, xi), 4)
    assert res.K_star == 1
    assert set(res.bic) == {1, 2, 3, 4}
    for K, v in res.bic.items():
        assert v == pytest.approx(res.objective[K] + 4 * K * math.log(300))


def test_bic_two_regions_picks_two():
    sites, xi, _ = two_clusters(n_each=60, seed=8, means=(0.0, 6.0))
    res = select_K_by_bic(field(sites, xi), 4)
    assert res.K_star == 2
    assert min(res.bic, key=res.bic.get) == 2
