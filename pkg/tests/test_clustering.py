import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from sldsed import clustering
from sldsed.clustering import ClusterResult
from sldsed.errors import InvalidArgument


def pcc_oracle(a, b):
    n = len(a)
    ma, mb = sum(a) / n, sum(b) / n
    cov = sum((x - ma) * (y - mb) for x, y in zip(a, b))
    va = sum((x - ma) ** 2 for x in a) ** 0.5
    vb = sum((y - mb) ** 2 for y in b) ** 0.5
    return cov / (va * vb)


def test_pearson_examples():
    f = np.array([1.0, 2.0, 3.0, 7.0])
    assert clustering.pearson_distance(f, f) == pytest.approx(0.0, abs=1e-12)
    assert clustering.pearson_distance(f, -f + 5.0) == pytest.approx(2.0, abs=1e-12)
    d = clustering.pearson_distance([1, 2, 3], [1, 2, 4])
    assert d == pytest.approx(1 - pcc_oracle([1, 2, 3], [1, 2, 4]), abs=1e-12)
    assert d == pytest.approx(0.01802, abs=1e-5)


def test_pearson_zero_variance_is_one():
    assert clustering.pearson_distance([2, 2, 2], [1, 5, 3]) == 1.0
    with pytest.raises(InvalidArgument):
        clustering.pearson_distance([1.0], [2.0])


vec = arrays(np.float64, 6, elements=st.floats(-100, 100, allow_nan=False))


@given(vec, vec, st.floats(0.01, 100), st.floats(-50, 50))
def test_pearson_properties(f, g, a, b):
    d = clustering.pearson_distance(f, g)
    assert 0.0 <= d <= 2.0
    assert d == pytest.approx(clustering.pearson_distance(g, f), abs=1e-9)
    if np.ptp(f) > 1e-3:
        assert clustering.pearson_distance(f, f) == pytest.approx(0.0, abs=1e-9)
    if np.ptp(f) > 1e-3 and np.ptp(g) > 1e-3:
        assert clustering.pearson_distance(a * f + b, g) == pytest.approx(d, abs=1e-7)


def blobs(rng, n=40, d=8, sep=10.0):
    centre = rng.standard_normal(d)
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    a = centre + rng.standard_normal((n, d))
    b = centre + sep * direction + rng.standard_normal((n // 2, d))
    frames = np.vstack([a, b])
    truth = np.r_[np.zeros(n, int), np.ones(n // 2, int)]
    perm = rng.permutation(len(frames))
    return frames[perm], truth[perm]


def agreement(assign, truth):
    same = np.mean(assign == truth)
    return max(same, 1 - same)


@pytest.mark.parametrize("seed", range(5))
def test_euclidean_separates_blobs(seed):
    frames, truth = blobs(np.random.default_rng(seed))
    res = clustering.kmeans2(frames, "euclidean")
    assert agreement(res.assignment, truth) == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_pearson_separates_pattern_groups(seed):
    rng = np.random.default_rng(seed)
    p1, p2 = rng.standard_normal(16), rng.standard_normal(16)
    frames = np.vstack([s * p1 + o + 0.1 * rng.standard_normal(16) for s, o in rng.uniform(0.5, 3, (30, 2))]
                       + [s * p2 + o + 0.1 * rng.standard_normal(16) for s, o in rng.uniform(0.5, 3, (20, 2))])
    truth = np.r_[np.zeros(30, int), np.ones(20, int)]
    assert agreement(clustering.kmeans2(frames, "pearson").assignment, truth) == 1.0


def test_two_frames_each_own_cluster():
    res = clustering.kmeans2(np.array([[0.0, 1.0, 2.0], [5.0, 1.0, -3.0]]), "euclidean")
    assert sorted(res.assignment.tolist()) == [0, 1]
    res = clustering.kmeans2(np.array([[0.0, 1.0, 2.0], [5.0, 1.0, -3.0]]), "pearson")
    assert sorted(res.assignment.tolist()) == [0, 1]


def test_identical_frames_still_two_clusters():
    res = clustering.kmeans2(np.ones((6, 4)), "euclidean", seed=3)
    assert set(res.assignment.tolist()) == {0, 1}


def test_duplicated_frames_keep_partition():
    frames, _ = blobs(np.random.default_rng(7))
    single = clustering.kmeans2(frames, "euclidean").assignment
    double = clustering.kmeans2(np.vstack([frames, frames]), "euclidean").assignment
    n = len(frames)
    assert np.array_equal(double[:n], double[n:])
    assert agreement(double[:n], single) == 1.0


def test_kmeans_errors():
    with pytest.raises(InvalidArgument):
        clustering.kmeans2(np.ones((1, 3)))
    with pytest.raises(InvalidArgument):
        clustering.kmeans2(np.ones((4, 3)), "cosine")


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["euclidean", "pearson"]))
def test_objective_non_increasing(seed, kind):
    rng = np.random.default_rng(seed)
    frames = rng.standard_normal((int(rng.integers(3, 60)), 5)) * rng.uniform(0.1, 5, 5)
    obj = clustering.kmeans2(frames, kind).objective
    assert all(b <= a + 1e-9 * max(1.0, abs(a)) for a, b in zip(obj, obj[1:]))


def test_background_is_compact_cluster():
    rng = np.random.default_rng(0)
    frames = np.vstack([np.tile([1.0, 2.0, 3.0], (10, 1)), rng.standard_normal((5, 3)) * 4])
    res = ClusterResult(np.r_[np.zeros(10, int), np.ones(5, int)], np.zeros((2, 3)), "euclidean")
    assert clustering.select_background(frames, res).background_id == 0


def test_background_by_radius():
    ring = lambda r: np.array([[r, 0], [-r, 0], [0, r], [0, -r]], float)
    frames = np.vstack([ring(2.0) + 10, ring(1.0)])
    res = ClusterResult(np.r_[np.ones(4, int), np.zeros(4, int)], np.zeros((2, 2)), "euclidean")
    assert clustering.select_background(frames, res).background_id == 0


def test_background_tie_goes_to_larger_cluster():
    frames = np.vstack([np.zeros((3, 2)), np.ones((5, 2))])
    res = ClusterResult(np.r_[np.zeros(3, int), np.ones(5, int)], np.zeros((2, 2)), "euclidean")
    assert clustering.select_background(frames, res).background_id == 1


@given(st.integers(0, 1000))
def test_select_background_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    frames = rng.standard_normal((20, 4)) * rng.uniform(0.5, 2, (20, 1))
    assign = np.r_[np.zeros(8, int), np.ones(12, int)]
    perm = rng.permutation(20)
    a = clustering.select_background(frames, ClusterResult(assign, None, "euclidean")).background_id
    b = clustering.select_background(frames[perm], ClusterResult(assign[perm], None, "euclidean")).background_id
    assert a == b


def test_activity_frames_complement():
    res = ClusterResult(np.array([0, 1, 1, 0, 1]), None, "pearson", background_id=1)
    mask = clustering.activity_frames(res)
    assert mask.tolist() == [True, False, False, True, False]
    bg = np.asarray(res.assignment) == res.background_id
    assert np.all(mask ^ bg)
    res_all_bg = ClusterResult(np.zeros(4, int), None, "pearson", background_id=0)
    assert not clustering.activity_frames(res_all_bg).any()
    with pytest.raises(InvalidArgument):
        clustering.activity_frames(ClusterResult(np.zeros(3, int), None, "pearson"))


def test_cluster_result_json():
    res = ClusterResult(np.array([0, 1]), None, "pearson", background_id=1)
    assert res.to_json() == {"assignment": [0, 1], "background_id": 1, "distance": "pearson"}
