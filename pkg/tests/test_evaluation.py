import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wscoreset.coreset import WeightedCoreset
from wscoreset.evaluation import (AssignmentConstraint, CapExceededError, FairnessBounds, InfeasibleError,
                                  brute_force_opt, clustering_cost, constrained_cost, fair_cost,
                                  relative_deviation, verify_coreset)
from wscoreset.experiment import gaussian_blobs
from wscoreset.metric import Dataset
from wscoreset.oracle import OracleEnv
from wscoreset.weak import weak_kz_clustering


def _line(*xs, groups=None):
    return Dataset(points=np.asarray(xs, dtype=float)[:, None], groups=groups or {})


# plain cost -------------------------------------------------------------------

def test_path_median_costs():
    ds = _line(0, 1, 2)
    assert clustering_cost(ds, [1], 1) == 2.0
    assert clustering_cost(ds, [1], 2) == 2.0


def test_zero_diameter_coreset_matches_full_cost():
    ds = Dataset(points=np.vstack([np.zeros((10, 2)), [[5.0, 5.0]]]))
    core = dict(indices=np.array([0, 10]), weights=np.array([10.0, 1.0]))
    for C in ([0], [10], [0, 10]):
        assert clustering_cost(ds, C, 1, **core) == clustering_cost(ds, C, 1)


def test_empty_centers_rejected():
    with pytest.raises(ValueError):
        clustering_cost(_line(0, 1), [])


# constrained cost ---------------------------------------------------------------

@pytest.fixture
def two_by_two():
    # points a=0, b=10; centers c1=1, c2=9 (indices 2 and 3)
    return _line(0, 10, 1, 9)


def test_assignment_problem_diagonal(two_by_two):
    rep = constrained_cost(two_by_two, [2, 3], AssignmentConstraint((1, 1)), indices=[0, 1], weights=[1.0, 1.0])
    assert rep.cost == 2.0
    assert sorted(rep.sigma) == [(0, 2, 1.0), (1, 3, 1.0)]


def test_forced_assignment(two_by_two):
    rep = constrained_cost(two_by_two, [2, 3], (2, 0), indices=[0, 1], weights=[1.0, 1.0])
    assert rep.cost == 10.0


def test_imbalanced_totals_raise(two_by_two):
    with pytest.raises(ValueError, match="imbalance|total"):
        constrained_cost(two_by_two, [2, 3], (2, 2), indices=[0, 1], weights=[1.0, 1.0])
    with pytest.raises(ValueError):
        AssignmentConstraint((-1.0, 2.0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 4))
def test_nearest_marginals_recover_plain_cost(seed, k):
    rng = np.random.default_rng(seed)
    ds = Dataset(points=rng.normal(size=(15, 2)))
    C = rng.choice(15, size=k, replace=False)
    d = np.linalg.norm(ds.points[:, None] - ds.points[C][None], axis=2)
    gam = np.bincount(d.argmin(axis=1), minlength=k).astype(float)
    assert constrained_cost(ds, C, gam).cost == pytest.approx(clustering_cost(ds, C), rel=1e-9)


def _enumerate_integral(cost, gam):
    n, k = cost.shape
    best = math.inf
    for assign in itertools.product(range(k), repeat=n):
        if np.array_equal(np.bincount(assign, minlength=k), gam):
            best = min(best, float(cost[np.arange(n), assign].sum()))
    return best


def test_transportation_matches_enumeration_on_small_instances():
    rng = np.random.default_rng(2024)
    for _ in range(120):
        n = int(rng.integers(1, 9))
        k = int(rng.integers(1, 4))
        z = float(rng.choice([1, 2]))
        ds = Dataset(points=rng.normal(size=(n + k, 2)))
        C = np.arange(n, n + k)
        gam = np.bincount(rng.integers(0, k, size=n), minlength=k)
        rep = constrained_cost(ds, C, gam.astype(float), z, indices=np.arange(n), weights=np.ones(n))
        cost = np.linalg.norm(ds.points[:n, None] - ds.points[C][None], axis=2) ** z
        assert rep.cost == pytest.approx(_enumerate_integral(cost, gam), abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4))
def test_sigma_conservation(seed, k):
    rng = np.random.default_rng(seed)
    ds = Dataset(points=rng.normal(size=(12, 2)), weights=rng.uniform(0.5, 3, 12))
    C = rng.choice(12, size=k, replace=False)
    gam = rng.dirichlet(np.ones(k)) * ds.weights.sum()
    rep = constrained_cost(ds, C, gam)
    per_point = np.zeros(12)
    per_center = dict.fromkeys(C.tolist(), 0.0)
    for x, c, mass in rep.sigma:
        assert mass >= 0
        per_point[x] += mass
        per_center[c] += mass
    assert np.allclose(per_point, ds.weights, atol=1e-9)
    assert np.allclose([per_center[c] for c in C.tolist()], gam, atol=1e-9)


# fair cost ----------------------------------------------------------------------

def test_vacuous_bounds_equal_plain_cost_on_random_instances():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(5, 40))
        k = int(rng.integers(1, 5))
        ds = Dataset(points=rng.normal(size=(n, 3)), groups={"a": rng.integers(0, 3, n), "b": rng.integers(0, 2, n)})
        C = rng.choice(n, size=min(k, n), replace=False)
        z = float(rng.choice([1, 2]))
        got = fair_cost(ds, C, FairnessBounds.vacuous(ds), z).cost
        assert abs(got - clustering_cost(ds, C, z)) <= 1e-9 * max(1.0, got)


def test_balanced_square_by_hand():
    # bottom row is group 0, top row group 1; centers at (0,0) and (0,1)
    pts = np.array([[0, 0], [1, 0], [0, 1], [1, 1]], dtype=float)
    ds = Dataset(points=pts, groups={"g": np.array([0, 0, 1, 1])})
    b = FairnessBounds({"g": [0.5, 0.5]}, {"g": [0.5, 0.5]})
    rep = fair_cost(ds, [0, 2], b)
    # best: (0,0)+(1,1) at the first center, (1,0)+(0,1) at the second
    assert rep.cost == pytest.approx(2 * math.sqrt(2), abs=1e-9)
    assert clustering_cost(ds, [0, 2]) == 2.0
    mass = {}
    for x, c, m in rep.sigma:
        mass[(c, int(ds.groups["g"][x]))] = mass.get((c, int(ds.groups["g"][x])), 0.0) + m
    for c in (0, 2):
        assert mass.get((c, 0), 0.0) == pytest.approx(mass.get((c, 1), 0.0), abs=1e-9)


def test_infeasible_bounds_carry_a_certificate():
    ds = Dataset(points=np.arange(10.0)[:, None], groups={"g": np.array([1] + [0] * 9)})
    b = FairnessBounds({"g": [0.0, 0.9]}, {"g": [1.0, 0.95]})
    with pytest.raises(InfeasibleError, match="share"):
        fair_cost(ds, [0], b)
    with pytest.raises(InfeasibleError, match="lower bounds"):
        fair_cost(ds, [0], FairnessBounds({"g": [0.6, 0.6]}, {"g": [1.0, 1.0]}))
    with pytest.raises(ValueError):
        FairnessBounds({"g": [0.5]}, {"g": [0.4]})


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_fair_cost_dominates_plain_and_grows_when_tightened(seed):
    rng = np.random.default_rng(seed)
    ds = Dataset(points=rng.normal(size=(20, 2)), groups={"g": rng.integers(0, 2, 20)})
    if len(np.unique(ds.groups["g"])) < 2:
        return
    C = rng.choice(20, size=3, replace=False)
    share = np.bincount(ds.groups["g"], minlength=2) / 20
    prev = clustering_cost(ds, C)
    for t in np.linspace(0, 1, 5):
        b = FairnessBounds({"g": (share * t * 0.99).tolist()}, {"g": (1 - (1 - share) * t * 0.99).tolist()})
        cur = fair_cost(ds, C, b).cost
        assert cur >= prev - 1e-9
        prev = cur


# brute force and verification ------------------------------------------------------

def test_brute_force_examples():
    ds = _line(0, 1, 10)
    cost, centers = brute_force_opt(ds, 2)
    assert cost == 1.0 and 2 in centers.tolist()
    assert brute_force_opt(ds, 3)[0] == 0.0
    with pytest.raises(CapExceededError):
        brute_force_opt(Dataset(points=np.zeros((100, 1))), 5, cap=1000)


def test_weak_estimate_is_never_below_the_optimum():
    for seed in range(5):
        ds = gaussian_blobs([12, 12], seed=seed)
        wc = weak_kz_clustering(OracleEnv(ds, seed=seed), 2, seed=seed)
        assert wc.est_cost >= brute_force_opt(ds, 2)[0] - 1e-9


def test_identity_coreset_has_zero_deviation(blobs60):
    ident = WeightedCoreset(np.arange(60), np.ones(60), ["all"] * 60)
    assert verify_coreset(blobs60, ident, 2)["max_rel_dev"] == 0.0
    assert verify_coreset(blobs60, ident, 3, mode=("sampled", 50))["max_rel_dev"] == 0.0
    rep = verify_coreset(blobs60, ident, 2, mode=("sampled", 20), constraint_mode=("gamma-grid", 5))
    assert rep["max_rel_dev"] == pytest.approx(0.0, abs=1e-12)
    rep = verify_coreset(blobs60, ident, 3, mode=("sampled", 3), constraint_mode=("gamma-grid", 20))
    assert rep["max_rel_dev"] == pytest.approx(0.0, abs=1e-12)


def test_missing_outlier_cluster_is_witnessed():
    ds = gaussian_blobs([60, 30], separation=100.0, seed=1)
    core = WeightedCoreset(np.arange(60), np.full(60, 1.5), ["main"] * 60)
    rep = verify_coreset(ds, core, 2, eps_target=0.25)
    assert rep["max_rel_dev"] > 0.5 and not rep["pass"]
    top = rep["witnesses"][0]
    # the worst center set serves only the kept cluster, so the coreset misses the far mass
    assert all(c < 60 for c in top["centers"])
    assert top["coreset_cost"] < 0.5 * top["full_cost"]


def test_exhaustive_cap_and_relative_deviation_edges(blobs60):
    ident = WeightedCoreset(np.arange(60), np.ones(60), ["all"] * 60)
    with pytest.raises(CapExceededError):
        verify_coreset(blobs60, ident, 4, cap=1000)
    assert relative_deviation(0.0, 0.0) == 0.0
    assert relative_deviation(0.0, 1.0) == math.inf
    assert relative_deviation(2.0, 1.0) == 0.5
