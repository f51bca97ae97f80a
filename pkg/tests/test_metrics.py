import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from forni.metrics import aggregate, e_fo, e_fo_field

X, Y, Z = [1.0, 0, 0], [0, 1.0, 0], [0, 0, 1.0]


def oracle(est, tru):
    """Plain-Python evaluation of the two directed mean-min angle errors."""
    def ang(a, b):
        na = math.sqrt(sum(t * t for t in a))
        nb = math.sqrt(sum(t * t for t in b))
        c = abs(sum(p * q for p, q in zip(a, b))) / (na * nb)
        return math.degrees(math.acos(min(1.0, c)))

    if not est and not tru:
        return 0.0
    if not est or not tru:
        return 90.0
    forward = sum(min(ang(w, u) for u in tru) for w in est) / len(est)
    backward = sum(min(ang(u, w) for w in est) for u in tru) / len(tru)
    return max(forward, backward)


def random_set(rng, max_size=3, min_size=1):
    n = rng.integers(min_size, max_size + 1)
    return [list(v) for v in rng.standard_normal((n, 3))]


def test_analytic_examples():
    assert abs(e_fo([X], [X]) - 0.0) < 1e-9
    assert abs(e_fo([X], [X, Y]) - 45.0) < 1e-9
    assert abs(e_fo([[-1.0, 0, 0]], [X]) - 0.0) < 1e-9
    assert abs(e_fo([[1 / np.sqrt(2), 1 / np.sqrt(2), 0]], [X]) - 45.0) < 1e-9


def test_degenerate_sets():
    assert e_fo([], []) == 0.0
    assert e_fo([], [X]) == 90.0
    assert e_fo(np.zeros((0, 3)), [X, Y]) == 90.0
    assert e_fo([X], []) == 90.0


def test_matches_oracle_on_random_pairs():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        a, b = random_set(rng, min_size=0), random_set(rng, min_size=0)
        assert abs(e_fo(a, b) - oracle(a, b)) < 1e-9


def test_unnormalized_input_is_accepted():
    assert abs(e_fo([[5.0, 0, 0]], [[0.3, 0.3, 0]]) - 45.0) < 1e-9


def test_field_version():
    out = e_fo_field([[X], [X], []], [[X], [Y], []])
    np.testing.assert_allclose(out, [0, 90, 0], atol=1e-9)
    with pytest.raises(ValueError):
        e_fo_field([[X]], [])


vec = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(
    lambda v: sum(t * t for t in v) > 1e-3)
sets = st.lists(vec, min_size=1, max_size=3)


@given(sets, sets)
def test_symmetry_and_bounds(a, b):
    e = e_fo(a, b)
    assert abs(e - e_fo(b, a)) < 1e-12
    assert 0.0 <= e <= 90.0


@given(sets, sets, st.randoms())
def test_permutation_invariance(a, b, r):
    a2, b2 = list(a), list(b)
    r.shuffle(a2)
    r.shuffle(b2)
    assert abs(e_fo(a, b) - e_fo(a2, b2)) < 1e-9


@given(sets, st.lists(st.booleans(), min_size=3, max_size=3))
def test_zero_for_same_direction_set(a, flips):
    flipped = [[-t for t in v] if f else v for v, f in zip(a, flips)]
    assert e_fo(a, flipped[::-1]) < 1e-5


def test_positive_for_distinct_sets():
    rng = np.random.default_rng(4)
    for _ in range(200):
        a, b = random_set(rng), random_set(rng)
        if e_fo(a, b) == 0.0:
            # only possible if the sets coincide as axes
            A = np.array(a) / np.linalg.norm(a, axis=1)[:, None]
            B = np.array(b) / np.linalg.norm(b, axis=1)[:, None]
            assert np.all(np.abs(A @ B.T).max(axis=1) > 1 - 1e-12)
    assert e_fo([X, Y], [X, Z]) > 0


def test_aggregate_examples():
    r = aggregate(np.full(12, 10.0))
    assert r.overall.mean == 10.0 and r.overall.std == 0.0 and r.overall.count == 12
    r = aggregate([0.0, 90.0])
    assert r.overall.mean == 45.0 and r.overall.std == 45.0
    assert r.metadata["std"] == "population"


def test_aggregate_regions_and_empty_region_warning():
    errs = np.array([1.0, 3.0, 10.0, 20.0])
    labels = np.array([1, 1, 2, 2])
    with pytest.warns(UserWarning, match="three-way"):
        r = aggregate(errs, labels, {1: "noncrossing", 2: "two-way", 3: "three-way"})
    assert set(r.regions) == {"noncrossing", "two-way"}
    assert r.regions["two-way"].mean == 15.0 and r.regions["two-way"].std == 5.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        r = aggregate(errs, labels)
    assert set(r.regions) == {"1", "2"}


def test_aggregates_recomputable_from_errors():
    rng = np.random.default_rng(2)
    errs = rng.uniform(0, 90, 50)
    labels = rng.integers(1, 4, 50)
    r = aggregate(errs, labels)
    for name, s in r.regions.items():
        sel = errs[labels == int(name)]
        assert abs(s.mean - sel.mean()) < 1e-12
        assert abs(s.std - np.sqrt(np.mean((sel - sel.mean()) ** 2))) < 1e-12
        assert s.count == len(sel)


def test_aggregate_input_errors():
    with pytest.raises(ValueError):
        aggregate([])
    with pytest.raises(ValueError):
        aggregate([1.0, 2.0], [1])


def test_report_formats(tmp_path):
    r = aggregate([0.0, 90.0, 30.0], [1, 1, 2], {1: "a", 2: "b"}, unmatched=1)
    text = r.to_csv(tmp_path / "r.csv")
    assert text.splitlines() == [
        "label,count,mean_deg,std_deg",
        "all,3,40.000000,37.416574",
        "a,2,45.000000,45.000000",
        "b,1,30.000000,0.000000",
    ]
    assert (tmp_path / "r.csv").read_text() == text
    d = json.loads(r.to_json(tmp_path / "r.json"))
    assert d["unmatched"] == 1 and d["regions"]["a"]["count"] == 2
    assert json.loads((tmp_path / "r.json").read_text()) == d


def test_oracle_self_check():
    # the oracle agrees with hand-computed values on a three-vs-two case
    est = [X, Y, Z]
    tru = [X, Y]
    assert abs(oracle(est, tru) - 30.0) < 1e-12
