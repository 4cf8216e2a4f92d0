import math

import numpy as np
import pytest

from wscoreset.evaluation import brute_force_opt, clustering_cost
from wscoreset.metric import Dataset
from wscoreset.oracle import OracleEnv
from wscoreset.weak import plugin_exact_clustering, weak_kz_clustering


def two_tight_clusters(seed=0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, size=(50, 2)) / math.sqrt(2)
    return Dataset(points=np.vstack([a, a + [100.0, 0.0]]))


def test_k_distinct_points_cost_zero():
    ds = Dataset(points=[[0.0], [5.0], [5.0], [0.0], [9.0]])
    env = OracleEnv(ds, corruption_prob=0.0)
    wc = weak_kz_clustering(env, 3, seed=0)
    assert sorted(ds.points[wc.centers, 0].tolist()) == [0.0, 5.0, 9.0]
    assert wc.est_cost == 0.0


def test_one_center_per_cluster_without_corruption():
    ds = two_tight_clusters()
    opt, _ = brute_force_opt(ds, 2)
    wc = weak_kz_clustering(OracleEnv(ds, corruption_prob=0.0), 2, seed=1)
    assert sorted((wc.centers >= 50).tolist()) == [False, True]
    assert wc.est_cost <= 10 * opt


def test_corrupted_cost_within_fifty_opt():
    ds = two_tight_clusters()
    opt, _ = brute_force_opt(ds, 2)
    good = sum(weak_kz_clustering(OracleEnv(ds, seed=s), 2, seed=s).est_cost <= 50 * opt for s in range(10))
    assert good >= 9


def test_assignment_consistency(blobs60):
    env = OracleEnv(blobs60, seed=4)
    wc = weak_kz_clustering(env, 3, seed=4)
    assert wc.k == 3 and len(set(wc.centers.tolist())) == 3
    assert set(wc.assignment().values()) <= set(wc.centers.tolist())
    assert wc.labels.min() >= 0 and wc.labels.max() < 3
    for i, c in enumerate(wc.centers.tolist()):
        assert c in wc.members(i)


def test_subset_clustering_only_touches_subset(blobs60):
    env = OracleEnv(blobs60, seed=2)
    sub = np.arange(0, 60, 2)
    wc = weak_kz_clustering(env, 2, subset=sub, seed=2)
    assert set(wc.indices.tolist()) == set(sub.tolist())
    assert set(wc.centers.tolist()) <= set(sub.tolist())


def test_query_budget_shape():
    for n in (200, 800):
        ds = Dataset(points=np.random.default_rng(n).normal(size=(n, 2)))
        env = OracleEnv(ds, seed=1)
        weak_kz_clustering(env, 3, seed=1)
        lg = math.log2(n)
        assert env.ledger.strong_point_count <= 2 * 3 * lg ** 2
        assert env.ledger.weak_count <= 2 * n * 3 * lg ** 2


def test_estimated_cost_not_below_optimum():
    for s in range(5):
        ds = Dataset(points=np.random.default_rng(s).normal(size=(14, 2)))
        opt, _ = brute_force_opt(ds, 2)
        wc = weak_kz_clustering(OracleEnv(ds, seed=s), 2, seed=s)
        assert wc.est_cost >= opt - 1e-9


def test_k_means_variant(blobs60):
    wc = weak_kz_clustering(OracleEnv(blobs60, seed=0), 2, z=2, seed=0)
    assert wc.z == 2.0
    assert wc.est_cost > 0


@pytest.mark.parametrize("k", [0, -1, 61])
def test_bad_k(blobs60, k):
    with pytest.raises(ValueError):
        weak_kz_clustering(OracleEnv(blobs60), k)


def test_plugin_trivial_cases():
    ds = Dataset(points=[[0.0], [1.0], [2.0]])
    one = plugin_exact_clustering(ds, 1)
    assert one.centers.tolist() == [1] and one.est_cost == 2.0
    assert plugin_exact_clustering(ds, 3).est_cost == 0.0


def test_plugin_within_five_opt():
    worst = 0.0
    for s in range(50):
        ds = Dataset(points=np.random.default_rng(100 + s).normal(size=(12, 2)))
        opt, _ = brute_force_opt(ds, 3)
        pc = plugin_exact_clustering(ds, 3, seed=s)
        assert pc.est_cost == pytest.approx(clustering_cost(ds, pc.centers))
        worst = max(worst, pc.est_cost / opt)
    assert worst <= 5.0
