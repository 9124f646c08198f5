import numpy as np
import pytest

from dopplertrack.core import PointHeadOutput
from dopplertrack.embedding import (
    ClusterInferParams,
    IdAllocator,
    assoc_prob,
    associate_volumes,
    cluster_volume,
)


def test_assoc_prob_zero_distance_1d():
    assert assoc_prob(np.array([0.3]), np.array([1.0]), np.array([0.3])) == pytest.approx(
        1.0 / np.sqrt(2 * np.pi), abs=1e-12
    )


def test_assoc_prob_2d_example():
    p = assoc_prob(np.array([0.0, 0.0]), np.array([1.0, 1.0]), np.array([1.0, 1.0]))
    assert p == pytest.approx(np.exp(-1.0) / (2 * np.pi), abs=1e-12)


def test_assoc_prob_1d_wide_var():
    p = assoc_prob(np.array([0.0]), np.array([4.0]), np.array([2.0]))
    assert p == pytest.approx(np.exp(-0.5) / (2 * np.sqrt(2 * np.pi)), abs=1e-12)


def test_assoc_prob_peak_identity():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        d = int(rng.integers(1, 9))
        e = rng.normal(size=d)
        var = rng.uniform(0.1, 4.0, d)
        peak = assoc_prob(e, var, e)
        expect = (2 * np.pi) ** (-d / 2) * np.prod(var) ** (-0.5)
        assert peak == pytest.approx(expect, rel=1e-12)


def test_assoc_prob_symmetry_and_decay():
    rng = np.random.default_rng(1)
    e_i = rng.normal(size=4)
    var = rng.uniform(0.5, 2.0, 4)
    e_j = rng.normal(size=4)
    assert assoc_prob(e_i, var, e_j) == pytest.approx(assoc_prob(e_j, var, e_i))
    closer = e_i + 0.1 * (e_j - e_i)
    assert assoc_prob(e_i, var, closer) > assoc_prob(e_i, var, e_j)


def test_assoc_prob_rejects_bad_variance():
    with pytest.raises(ValueError):
        assoc_prob(np.zeros(2), np.array([1.0, 0.0]), np.zeros(2))


def head_of(embeddings, variances, objectness):
    return PointHeadOutput(
        np.asarray(embeddings, dtype=float),
        np.asarray(variances, dtype=float),
        np.asarray(objectness, dtype=float),
    )


def test_cluster_volume_identical_embeddings_one_instance():
    n = 30
    head = head_of(np.ones((n, 2)), np.ones((n, 2)), np.linspace(0.1, 0.9, n))
    params = ClusterInferParams(p_threshold=0.1, min_instance_points=1)
    out = cluster_volume(head, params)
    assert (out == 1).all()


def test_cluster_volume_two_blobs():
    rng = np.random.default_rng(2)
    a = rng.normal(0.0, 0.05, size=(25, 2))
    b = rng.normal(0.0, 0.05, size=(25, 2)) + 10.0
    head = head_of(np.vstack([a, b]), np.ones((50, 2)), rng.uniform(0.2, 0.9, 50))
    out = cluster_volume(head, ClusterInferParams(p_threshold=0.05, min_instance_points=1))
    assert len(set(out[:25])) == 1 and len(set(out[25:])) == 1
    assert out[0] != out[25]


def test_cluster_volume_hand_trace():
    # Five points on a line; objectness picks the peel order. Center 0
    # (objectness 0.9) absorbs 1; then center 2 (0.8) absorbs 3; then 4.
    e = np.array([[0.0], [0.1], [5.0], [5.1], [50.0]])
    var = np.full((5, 1), 0.01)
    obj = np.array([0.9, 0.1, 0.8, 0.1, 0.2])
    peak = assoc_prob(np.array([0.0]), np.array([0.01]), np.array([0.0]))
    thresh = peak * np.exp(-0.5 * 0.1**2 / 0.01) * 0.999  # just below the 0.1-distance prob
    out = cluster_volume(
        head_of(e, var, obj), ClusterInferParams(p_threshold=float(thresh), min_instance_points=1)
    )
    assert out[0] == out[1] == 1
    assert out[2] == out[3] == 2
    assert out[4] == 3


def test_cluster_volume_ties_lowest_index():
    e = np.array([[0.0], [10.0]])
    head = head_of(e, np.ones((2, 1)), np.array([0.5, 0.5]))
    out = cluster_volume(head, ClusterInferParams(p_threshold=10.0, min_instance_points=1))
    # both peel rounds are singletons; the first anchor must be index 0
    assert out[0] == 1 and out[1] == 2


def test_cluster_volume_min_size_filter():
    e = np.vstack([np.zeros((25, 1)), np.full((5, 1), 10.0)])
    head = head_of(e, np.ones((30, 1)), np.linspace(0.9, 0.1, 30))
    out = cluster_volume(head, ClusterInferParams(p_threshold=0.05, min_instance_points=20))
    assert (out[:25] != 0).all()
    assert (out[25:] == 0).all()  # 5-point instance dissolved


def test_cluster_volume_fragmentation_guard():
    rng = np.random.default_rng(3)
    e = rng.normal(size=(40, 2)) * 100  # all far apart: every peel is a singleton
    head = head_of(e, np.full((40, 2), 1e-4), rng.uniform(0.1, 0.9, 40))
    with pytest.raises(RuntimeError, match="fragmented clustering"):
        cluster_volume(head, ClusterInferParams(p_threshold=0.4, max_instances=10))


def test_cluster_volume_assigns_every_point_once():
    rng = np.random.default_rng(4)
    e = rng.normal(size=(60, 3))
    head = head_of(e, np.ones((60, 3)), rng.uniform(0, 1, 60))
    out = cluster_volume(head, ClusterInferParams(p_threshold=0.01, min_instance_points=1))
    assert out.shape == (60,)
    assert (out > 0).all()


def test_associate_volumes_identical():
    prev = {pid: 1 if pid < 10 else 2 for pid in range(20)}
    cur = {pid: 5 if pid < 10 else 6 for pid in range(20)}
    alloc = IdAllocator(start=100)
    mapping = associate_volumes(prev, cur, 0.8, alloc)
    assert mapping == {5: 1, 6: 2}


def test_associate_volumes_disjoint():
    prev = {pid: 1 for pid in range(10)}
    cur = {pid: 3 for pid in range(20, 30)}
    alloc = IdAllocator(start=50)
    mapping = associate_volumes(prev, cur, 0.8, alloc)
    assert mapping == {3: 50}


def test_associate_volumes_greedy_conflict():
    # cur instance 1 overlaps prev 1 at 0.9; cur 2 overlaps prev 1 at 0.85
    # (conflict) and prev 2 at overlap below threshold; cur 3 overlaps
    # nothing. Greedy keeps the 0.9 pair, cur 2 and 3 get fresh ids.
    prev = {}
    cur = {}
    for pid in range(9):  # cur 1 vs prev 1: 9/10 = 0.9
        prev[pid] = 1
        cur[pid] = 1
    prev[9] = 1
    cur[9] = 2
    # cur 2: 17 more points overlapping prev 1... build explicitly instead:
    prev = {**{p: 1 for p in range(10)}}
    cur = {**{p: 1 for p in range(9)}, 9: 2}
    # give cur 2 extra points overlapping nothing to dilute
    for p in range(100, 104):
        cur[p] = 2
    for p in range(200, 210):
        cur[p] = 3
    alloc = IdAllocator(start=70)
    mapping = associate_volumes(prev, cur, 0.5, alloc)
    # overlaps: cur1&prev1 = 9 / (9 + 10 - 9) = 0.9; cur2&prev1 = 1/14 < 0.5
    assert mapping[1] == 1
    assert mapping[2] == 70 and mapping[3] == 71


def test_associate_volumes_no_duplicate_ids():
    prev = {p: 1 + (p % 3) for p in range(30)}
    cur = {p: 1 + (p % 3) for p in range(30)}
    mapping = associate_volumes(prev, cur, 0.8, IdAllocator(start=9))
    assert len(set(mapping.values())) == len(mapping)
