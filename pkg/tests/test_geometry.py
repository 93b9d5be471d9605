import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.spatial import Delaunay

from nonstat.errors import DegenerateGeometryError, InvalidArgumentError
from nonstat.geometry import (
    Rect,
    SiteSet,
    build_neighbor_graph,
    pairwise_distances,
    polygon_area,
    recommended_radius,
    voronoi_assign,
    voronoi_tessellate,
)

UNIT = Rect(0.0, 1.0, 0.0, 1.0)


@pytest.mark.parametrize("area,n,want", [(1.0, 500, 0.056419), (math.pi, 5, 1.0), (4.0, 100, 0.252313)])
def test_recommended_radius(area, n, want):
    assert recommended_radius(area, n) == pytest.approx(want, abs=1e-5)


@pytest.mark.parametrize("area,n", [(0.0, 10), (-1.0, 10), (1.0, 0)])
def test_recommended_radius_rejects(area, n):
    with pytest.raises(InvalidArgumentError):
        recommended_radius(area, n)


def test_neighbors_collinear():
    g = build_neighbor_graph(np.array([[0.0, 0], [1, 0], [2, 0]]), 1.5)
    assert [nb.tolist() for nb in g.neighbors] == [[1], [0, 2], [1]]
    assert g.active.tolist() == [0, 1, 2]


def test_neighbors_isolated():
    g = build_neighbor_graph(np.array([[0.0, 0], [3, 0]]), 1.0)
    assert len(g.active) == 0


def test_neighbors_duplicate_sites():
    with pytest.raises(InvalidArgumentError):
        build_neighbor_graph(np.array([[0.0, 0], [0, 0], [1, 1]]), 1.0)


def test_neighbors_mean_size_near_five():
    rng = np.random.default_rng(1)
    means = []
    for _ in range(20):
        pts = rng.uniform(0, 1, (100, 2))
        g = build_neighbor_graph(pts, recommended_radius(1.0, 100))
        means.append(g.sizes.mean())
    assert 3 <= np.mean(means) <= 7


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.5))
def test_neighbor_symmetry_and_radius(seed, r):
    pts = np.random.default_rng(seed).uniform(0, 1, (40, 2))
    g = build_neighbor_graph(pts, r)
    d = pairwise_distances(pts)
    for i, nb in enumerate(g.neighbors):
        assert i not in nb
        assert set(nb.tolist()) == set(np.flatnonzero((d[i] <= r) & (np.arange(40) != i)).tolist())
        for j in nb:
            assert i in g.neighbors[j]


def test_voronoi_corners():
    pts = np.array([[0.0, 0], [1, 0], [0, 1], [1, 1]])
    vor = voronoi_tessellate(SiteSet(pts, UNIT))
    np.testing.assert_allclose(vor.areas, 0.25, atol=1e-12)
    assert sorted(map(tuple, vor.edges.tolist())) == [(0, 1), (0, 2), (1, 3), (2, 3)]


def test_voronoi_interior_grid():
    pts = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])
    vor = voronoi_tessellate(SiteSet(pts, UNIT))
    np.testing.assert_allclose(vor.areas, 0.25, atol=1e-12)


def test_voronoi_collinear():
    pts = np.array([[0.1, 0.5], [0.5, 0.5], [0.9, 0.5]])
    with pytest.raises(DegenerateGeometryError):
        voronoi_tessellate(SiteSet(pts, UNIT))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 60))
def test_voronoi_tiles_domain(seed, n):
    rng = np.random.default_rng(seed)
    dom = Rect(-2.0, 3.0, 1.0, 2.5)
    pts = np.column_stack([rng.uniform(dom.xmin, dom.xmax, n), rng.uniform(dom.ymin, dom.ymax, n)])
    vor = voronoi_tessellate(SiteSet(pts, dom))
    assert vor.areas.sum() == pytest.approx(dom.area, rel=1e-9)
    # adjacency is symmetric by construction (i < j) and lies inside the Delaunay edges
    tri = Delaunay(pts)
    dl = set()
    for s in tri.simplices:
        for a in range(3):
            i, j = sorted((int(s[a]), int(s[(a + 1) % 3])))
            dl.add((i, j))
    assert set(map(tuple, vor.edges.tolist())) <= dl


def test_voronoi_cells_contain_nearest_points():
    rng = np.random.default_rng(3)
    pts = rng.uniform(0, 1, (30, 2))
    vor = voronoi_tessellate(SiteSet(pts, UNIT))
    for k, cell in enumerate(vor.cells):
        centroid = cell.mean(axis=0)
        assert voronoi_assign(pts, centroid) == k


def test_voronoi_random_50_area():
    pts = np.random.default_rng(50).uniform(0, 1, (50, 2))
    vor = voronoi_tessellate(SiteSet(pts, UNIT))
    assert abs(vor.areas.sum() - 1.0) <= 1e-9


def test_assign_examples():
    assert voronoi_assign([(0, 0), (1, 0)], (0.2, 0)) == 0
    assert voronoi_assign([(0, 0), (1, 0)], (0.5, 0)) == 0
    assert voronoi_assign([(0, 0), (1, 0), (0, 1)], (0.9, 0.9)) == 1
    with pytest.raises(InvalidArgumentError):
        voronoi_assign(np.empty((0, 2)), (0, 0))


def test_assign_matches_brute_force():
    rng = np.random.default_rng(7)
    seeds = rng.uniform(0, 1, (12, 2))
    q = rng.uniform(0, 1, (1000, 2))
    brute = [min(range(12), key=lambda k: (np.sum((p - seeds[k]) ** 2), k)) for p in q]
    assert voronoi_assign(seeds, q).tolist() == brute


def test_polygon_area_square():
    assert polygon_area(np.array([[0.0, 0], [2, 0], [2, 1], [0, 1]])) == pytest.approx(2.0)


def test_siteset_validation():
    with pytest.raises(InvalidArgumentError):
        SiteSet(np.array([[0.5, 0.5], [0.5, 0.5]]), UNIT)
    with pytest.raises(InvalidArgumentError):
        SiteSet(np.array([[1.5, 0.5]]), UNIT)


def test_bounding_domain():
    s = SiteSet.from_points(np.array([[0.0, 1], [2, 5], [1, 3]]))
    assert s.domain.to_list() == [0.0, 2.0, 1.0, 5.0]


def test_uniform_quadrant_counts_chi2():
    from nonstat.simulate import sample_locations

    s = sample_locations("uniform", 1000, UNIT, seed=11).sites
    q = (s[:, 0] > 0.5).astype(int) * 2 + (s[:, 1] > 0.5)
    counts = np.bincount(q, minlength=4)
    assert stats.chisquare(counts).pvalue > 0.01
