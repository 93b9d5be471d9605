import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nonstat.errors import InvalidArgumentError
from nonstat.metrics import rand_index, replicate_study, table_markdown, write_raw_json, write_table_csv
from nonstat.simulate import Scenario


def rand_brute(a, b):
    agree = 0
    pairs = list(itertools.combinations(range(len(a)), 2))
    for i, j in pairs:
        agree += (a[i] == a[j]) == (b[i] == b[j])
    return agree / len(pairs)


def test_rand_examples():
    assert rand_index([1, 1, 2, 2], [1, 1, 2, 2]) == 1.0
    assert rand_index([1, 1, 2], [1, 2, 3]) == pytest.approx(2 / 3)
    with pytest.raises(InvalidArgumentError):
        rand_index([1, 2], [1, 2, 3])
    with pytest.raises(InvalidArgumentError):
        rand_index([1], [1])


@settings(max_examples=200)
@given(st.integers(2, 30).flatmap(lambda n: st.tuples(
    st.lists(st.integers(0, 4), min_size=n, max_size=n), st.lists(st.integers(0, 4), min_size=n, max_size=n))))
def test_rand_matches_brute_force(ab):
    a, b = ab
    assert rand_index(a, b) == rand_brute(a, b)


@settings(max_examples=50)
@given(st.lists(st.integers(0, 3), min_size=2, max_size=40), st.permutations([7, 11, 13, 17]))
def test_rand_label_permutation_invariant(a, relabel):
    b = np.random.default_rng(len(a)).integers(0, 3, len(a))
    mapped = [relabel[x] for x in a]
    assert rand_index(mapped, b) == rand_index(a, b)
    assert rand_index(a, b) == rand_index(b, a)


def _segment_cell(R, seed=0):
    sc = Scenario(covariance="blended", n=200, alpha2=0.5)
    return replicate_study([{"name": "b", "task": "segment", "K": 2, "scenario": sc}], R, seed)


def test_single_replicate_rates():
    sc = Scenario(n=80)
    (res,) = replicate_study([{"name": "s", "task": "select_K", "K_max": 2, "scenario": sc}], 1, 0)
    assert res.estimate in (0.0, 1.0)
    assert res.metric == "correct_K"
    (res,) = replicate_study([{"name": "t", "task": "test", "M": 4, "scenario": sc}], 1, 0)
    assert res.estimate in (0.0, 1.0)


def test_study_deterministic_and_scheduling_invariant():
    a = _segment_cell(3)[0]
    b = _segment_cell(3)[0]
    assert a.values == b.values
    assert all(0 <= v <= 1 for v in a.values)
    sc = Scenario(n=80)
    cell = [{"name": "t", "task": "pvalue", "M": 5, "scenario": sc}]
    s = replicate_study(cell, 2, 1, n_jobs=1)[0].values
    p = replicate_study(cell, 2, 1, n_jobs=2)[0].values
    assert s == p


def test_study_errors():
    sc = Scenario(n=80)
    with pytest.raises(InvalidArgumentError):
        replicate_study([{"task": "segment", "scenario": sc}], 0)
    with pytest.raises(InvalidArgumentError):
        replicate_study([{"task": "nope", "scenario": sc}], 1)
    with pytest.raises(InvalidArgumentError, match="cell 'x'"):
        replicate_study([{"name": "x", "task": "segment", "K": 2, "scenario": sc}], 1)


def test_table_emitters(tmp_path):
    res = _segment_cell(2)
    write_table_csv(tmp_path / "t.csv", res)
    write_raw_json(tmp_path / "r.json", res)
    text = (tmp_path / "t.csv").read_text().splitlines()
    assert text[0].split(",")[0] == "cell" and len(text) == 2
    assert text[1].startswith("b,200,blended")
    raw = json.loads((tmp_path / "r.json").read_text())
    assert raw[0]["values"] == res[0].values and raw[0]["metric"] == "rand"
    md = table_markdown(res).splitlines()
    assert md[2].startswith("| b | 200 | blended | uniform | rand | 2 |")
