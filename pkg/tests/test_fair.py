import dataclasses
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wscoreset.evaluation import constrained_cost, verify_coreset
from wscoreset.experiment import gaussian_blobs, planted_rings
from wscoreset.fair import (FairParams, _allocation, build_assignment_preserving_coreset, build_fair_coreset,
                            collect_batches, intersection_classes, sample_batches)
from wscoreset.metric import Dataset
from wscoreset.oracle import OracleEnv
from wscoreset.weak import weak_kz_clustering


def test_full_preset_formulas():
    fp = FairParams.paper(1024, 2, 0.5, C0=5)
    assert fp.s_r == 1000 * 5 * 100
    assert fp.heavy_fraction == pytest.approx(4 / 50)
    assert fp.m == math.ceil(30 * 2 * 100 * math.log2(1024 / 0.5) / 0.25)
    assert fp.max_iters == 1000
    assert fp.strata_factor is None


def test_desk_preset_values():
    fp = FairParams.desk(2000, 4, 0.5)
    assert (fp.s_r, fp.heavy_fraction, fp.m, fp.max_iters) == (10, 0.4, 192, 40)
    assert fp.F == 4.0
    assert FairParams.from_preset("desk", 2000, 4, 0.5) == fp
    with pytest.raises(ValueError):
        FairParams.from_preset("tiny", 10, 1, 0.5)


@pytest.mark.parametrize("kw", [{"s_r": 0}, {"m": 0}, {"heavy_fraction": 0.0}, {"heavy_fraction": 1.5}])
def test_params_validation(kw):
    base = dict(epsilon=0.5, C0=2.0, preset="desk", s_r=10, heavy_fraction=0.4, m=10, max_iters=5, c_m=1.0)
    base.update(kw)
    with pytest.raises(ValueError):
        FairParams(**base)


def test_batch_of_500_with_100_draws_weighs_5_each():
    ds = Dataset(points=np.arange(500.0)[:, None])
    env = OracleEnv(ds, seed=0)
    fp = dataclasses.replace(FairParams.desk(500, 1, 0.5), m=100)
    batches = [("peel-batch(0,0)", np.arange(500), 1.0)]
    cs = sample_batches(env, batches, fp, np.random.default_rng(0))
    # merged repeats: weight = multiplicity * 5
    assert np.allclose(cs.weights % 5.0, 0.0)
    assert math.isclose(cs.total_weight, 500.0)
    assert cs.size <= 100


def test_allocation_follows_scores_and_sums_to_target():
    assert _allocation([1.0, 3.0], 7, None) == [7, 7]
    assert _allocation([1.0, 3.0], 7, 100) == [26, 74]
    assert sum(_allocation([5.0, 1.0, 0.5, 2.0], 7, 50)) == 50
    assert _allocation([0.0, 0.0, 0.0], 7, 10) == [4, 3, 3]
    # every batch keeps at least one draw so its weight is represented
    assert _allocation([1e-9, 1.0], 7, 10)[0] == 1


def test_zero_diameter_cluster_has_no_error():
    ds = Dataset(points=np.full((80, 2), 3.0))
    env = OracleEnv(ds, seed=1)
    wc = weak_kz_clustering(env, 1, seed=1)
    fp = FairParams.desk(80, 1, 0.5)
    cs, _, _ = build_assignment_preserving_coreset(env, wc, fp, seed=1)
    assert math.isclose(cs.total_weight, 80.0)
    rep = verify_coreset(ds, cs, 2, eps_target=0.0, mode=("sampled", 30), constraint_mode=("gamma-grid", 10))
    assert rep["max_rel_dev"] == 0.0


def _planted(seed):
    ds, _ = planted_rings([20, 20, 19], centers=2, seed=seed)
    return ds


def test_planted_instance_keeps_constrained_costs():
    passed = 0
    for seed in range(10):
        ds = _planted(seed)
        assert ds.n == 120
        env = OracleEnv(ds, seed=seed)
        wc = weak_kz_clustering(env, 2, seed=seed)
        cs, _, _ = build_assignment_preserving_coreset(env, wc, FairParams.desk(ds.n, 2, 0.5), seed=seed)
        rng = np.random.default_rng(seed + 500)
        worst = 0.0
        for _ in range(50):
            C = rng.choice(ds.n, size=2, replace=False)
            for g in rng.integers(0, ds.n + 1, size=20).tolist():
                gam = np.array([ds.n - g, g], dtype=float)
                full = constrained_cost(ds, C, gam).cost
                core = constrained_cost(ds, C, gam * cs.total_weight / ds.n, indices=cs.indices,
                                        weights=cs.weights).cost
                worst = max(worst, abs(full - core) / full)
        passed += worst <= 0.3
    assert passed >= 9


def test_single_group_matches_one_assignment_preserving_run():
    ds = gaussian_blobs([40, 40], seed=3, group_spec={"g": 1})
    fp = FairParams.desk(ds.n, 2, 0.5)
    env_a = OracleEnv(ds, seed=9)
    wc = weak_kz_clustering(env_a, 2, z=1, subset=np.arange(ds.n), seed=4)
    a, _, _ = build_assignment_preserving_coreset(env_a, wc, fp, seed=4)
    b, _, _ = build_fair_coreset(OracleEnv(ds, seed=9), 2, fp, seed=4)
    assert np.array_equal(a.indices, b.indices)
    assert np.array_equal(a.weights, b.weights)


def test_group_weights_are_exact_70_50():
    pts = np.random.default_rng(0).normal(size=(120, 2))
    ds = Dataset(points=pts, groups={"g": np.array([0] * 70 + [1] * 50)})
    cs, _, _ = build_fair_coreset(OracleEnv(ds, seed=0), 2, FairParams.desk(120, 2, 0.5), seed=0)
    assert cs.weights[cs.groups["g"] == 0].sum() == pytest.approx(70.0, abs=1e-9)
    assert cs.weights[cs.groups["g"] == 1].sum() == pytest.approx(50.0, abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 3))
def test_union_preserves_every_group_weight(seed, k):
    ds = gaussian_blobs([50, 30], seed=seed, group_spec={"a": 3, "b": 2})
    cs, _, _ = build_fair_coreset(OracleEnv(ds, seed=seed), k, FairParams.desk(ds.n, k, 0.5), seed=seed,
                                  target_size=40)
    assert math.isclose(cs.total_weight, ds.n, abs_tol=1e-9)
    for a in ("a", "b"):
        for g in range(len(ds.group_names[a])):
            assert cs.weights[cs.groups[a] == g].sum() == pytest.approx((ds.groups[a] == g).sum(), abs=1e-9)


def test_strong_queries_scale_with_group_count():
    over = 0
    for seed in range(10):
        ds = gaussian_blobs([300, 300], seed=seed, group_spec={"g": 2})
        fp = FairParams.desk(ds.n, 2, 0.5)
        single = Dataset(points=ds.points)
        env1 = OracleEnv(single, seed=seed)
        wc = weak_kz_clustering(env1, 2, seed=seed)
        build_assignment_preserving_coreset(env1, wc, fp, seed=seed)
        _, led, _ = build_fair_coreset(OracleEnv(ds, seed=seed), 2, fp, seed=seed)
        over += led.strong_point_count > 2 * env1.ledger.strong_point_count * 1.25
    assert over == 0


def test_trace_picks_smallest_heavy_ring_and_partitions_each_cluster():
    ds = gaussian_blobs([150, 150], seed=2)
    env = OracleEnv(ds, seed=2)
    wc = weak_kz_clustering(env, 2, seed=2)
    fp = FairParams.desk(ds.n, 2, 0.5)
    batches, trace = collect_batches(env, wc, fp, seed=2)
    for rec in trace.records:
        if rec.get("ring_counts") is None:
            continue
        counts = np.array(rec["ring_counts"])
        heavy = np.nonzero(counts >= fp.heavy_fraction * fp.s_r)[0]
        assert rec["j_star"] == (heavy.min() if heavy.size else int(np.argmax(counts)))
    for i in range(wc.k):
        removed = [x for r in trace.for_center(i) for x in r["removed"]]
        assert len(removed) == len(set(removed))
        assert sorted(removed) == sorted(wc.members(i).tolist())
    allpts = np.concatenate([b[1] for b in batches])
    assert np.array_equal(np.sort(allpts), np.arange(ds.n))


def test_fair_rejects_z_other_than_one_and_needs_attributes(grouped60, blobs60):
    fp = FairParams.desk(60, 2, 0.5)
    with pytest.raises(ValueError):
        build_fair_coreset(OracleEnv(grouped60, seed=0), 2, fp, z=2)
    with pytest.raises(ValueError):
        build_fair_coreset(OracleEnv(blobs60, seed=0), 2, fp)


def test_empty_group_warns():
    ds = Dataset(points=np.random.default_rng(0).normal(size=(40, 2)), groups={"g": np.zeros(40, dtype=int)},
                 group_names={"g": ["a", "b"]})
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        cs, _, _ = build_fair_coreset(OracleEnv(ds, seed=0), 2, FairParams.desk(40, 2, 0.5), seed=0)
    assert any("empty" in str(w.message) for w in caught)
    assert math.isclose(cs.total_weight, 40.0)


def test_intersection_classes_cover_points(grouped60):
    cls = intersection_classes(grouped60, ["g"])
    assert sorted(np.concatenate(list(cls.values())).tolist()) == list(range(60))
    assert list(intersection_classes(grouped60, []).keys()) == [()]


def test_fair_build_is_deterministic(grouped60):
    fp = FairParams.desk(60, 2, 0.5)
    a, _, _ = build_fair_coreset(OracleEnv(grouped60, seed=5), 2, fp, seed=5, target_size=30)
    b, _, _ = build_fair_coreset(OracleEnv(grouped60, seed=5), 2, fp, seed=5, target_size=30)
    assert a.to_json() == b.to_json()


def test_strata_split_is_a_partition():
    from wscoreset.fair import _strata
    T = np.arange(10)
    est = np.array([0.1, 0.5, 1.0, 1.5, 2.5, 3.9, 4.1, 7.0, 9.0, 30.0])
    parts = _strata("b(0,0", T, est, 1.0, np.ones(10), 2.0)
    assert sorted(np.concatenate([p[1] for p in parts]).tolist()) == list(range(10))
    shells = [int(p[0].split(".")[-1].rstrip(")")) for p in parts]
    assert shells == sorted(shells)
    assert math.isclose(sum(p[2] for p in parts), float((est + 1.0).sum()))
    assert _strata("b(0,0", T, est, 1.0, np.ones(10), None)[0][0] == "b(0,0)"
