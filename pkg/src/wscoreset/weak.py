"""Constant-factor (k,z)-clustering from weak answers plus a few strong point queries."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import metric
from .metric import Dataset
from .oracle import OracleEnv, estimate_distances_to_set


@dataclass(frozen=True, eq=False)
class WeakClustering:
    """Centers plus a per-point assignment.

    ``indices`` lists the clustered points (the whole dataset unless a subset
    was requested) and ``labels[t]`` is the position in ``centers`` that
    ``indices[t]`` is assigned to.
    """

    centers: np.ndarray
    indices: np.ndarray
    labels: np.ndarray
    est_cost: float
    beta: float
    z: float = 1.0

    @property
    def k(self) -> int:
        return int(self.centers.size)

    def members(self, i: int) -> np.ndarray:
        return self.indices[self.labels == i]

    def assignment(self) -> dict:
        return dict(zip(self.indices.tolist(), self.centers[self.labels].tolist()))


def _check_k(m, k):
    if k <= 0:
        raise ValueError("k must be positive")
    if m < k:
        raise ValueError(f"cannot pick {k} centers from {m} points")


def _rng(seed, tag):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, tag]))


def _anchor_groups(D, size):
    """For every known point, itself plus its ``size - 1`` nearest known points."""
    size = min(size, D.shape[0])
    order = np.argsort(D, axis=1, kind="stable")[:, :size]
    return order


def _robust_known_distance(env, pts, K, D, groups):
    """Estimated distance from each of ``pts`` to each anchor group (columns follow ``K``)."""
    W = env.weak_answers(pts[:, None], K[None, :])
    out = np.empty((pts.size, K.size))
    step = max(1, int(2e6 // max(1, pts.size * groups.shape[1])))
    for s in range(0, K.size, step):
        g = groups[s:s + step]                                  # (B, a)
        ecc = D[g[:, :, None], g[:, None, :]].max(axis=2)       # (B, a)
        w = W[:, g]                                             # (m, B, a)
        mid = g.shape[1] // 2
        via_ecc = np.partition(w + ecc[None], mid, axis=2)[:, :, mid]
        via_diam = np.partition(w, mid, axis=2)[:, :, mid] + ecc.max(axis=1)[None]
        out[:, s:s + step] = np.maximum(np.minimum(via_ecc, via_diam), 0.0)
    return out


def _kmedian_on_candidates(D, weights, k, z, rng, max_swaps=200):
    """Weighted k-median++ seeding followed by single-swap local search."""
    n = D.shape[0]
    Dz = D ** z
    first = int(rng.choice(n, p=weights / weights.sum()))
    chosen = [first]
    closest = Dz[:, first].copy()
    while len(chosen) < k:
        mass = weights * closest
        mass[chosen] = 0.0
        if mass.sum() <= 0:
            rest = np.setdiff1d(np.arange(n), chosen)
            chosen.append(int(rng.choice(rest)))
        else:
            chosen.append(int(rng.choice(n, p=mass / mass.sum())))
        closest = np.minimum(closest, Dz[:, chosen[-1]])

    def cost(sel):
        return float((weights * Dz[:, sel].min(axis=1)).sum())

    best = cost(chosen)
    for _ in range(max_swaps):
        improved = False
        for pos in range(k):
            for cand in range(n):
                if cand in chosen:
                    continue
                trial = chosen.copy()
                trial[pos] = cand
                c = cost(trial)
                if c < best * (1 - 1e-12) - 1e-15:
                    chosen, best, improved = trial, c, True
        if not improved:
            break
    return np.array(chosen, dtype=np.int64), best


def weak_kz_clustering(env: OracleEnv, k: int, z: float = 1, rounds: Optional[int] = None,
                       subset=None, seed: Optional[int] = None, sample_factor: float = 2.0,
                       anchor_size: int = 7, facility_cap: float = 1.0, beta: float = 2.0) -> WeakClustering:
    """Meyerson-style clustering driven by robust weak estimates.

    A uniform sample is strong-queried to seed the known set. Each pass then
    streams the points in random order and opens a facility at ``x`` with
    probability ``min(1, delta^z / f)``, where ``delta`` is the robust
    estimate of the distance from ``x`` to the known set and ``f`` is tuned so
    that about ``k`` facilities open per pass. Opened facilities are
    strong-queried and join the known set. A weighted k-median over the known
    set picks the final centers, and every point is assigned by the robust
    estimator against a small anchor group around each center.
    """
    pts = np.arange(env.n) if subset is None else np.unique(np.asarray(subset, dtype=np.int64))
    m = pts.size
    _check_k(m, k)
    rng = _rng(env.seed if seed is None else seed, 0x57EA)
    L = max(1, math.ceil(math.log2(max(m, 2))))
    rounds = L if rounds is None else int(rounds)
    w_all = env.ds.weights[pts]

    with env.phase("weak-clustering"):
        n_sample = min(m, max(4 * k, math.ceil(sample_factor * k * L)))
        known = [int(v) for v in rng.choice(pts, size=n_sample, replace=False)]
        env.strong_point_query(known)
        cap = max(1, math.ceil(facility_cap * k * L))
        known_set = set(known)
        for _ in range(rounds if n_sample < m else 0):
            K = np.array(known, dtype=np.int64)
            D = env.exact_block(K, K)
            groups = _anchor_groups(D, anchor_size)
            delta = _robust_known_distance(env, pts, K, D, groups).min(axis=1)
            delta[np.isin(pts, K)] = 0.0
            total = float((w_all * delta ** z).sum())
            if total <= 0:
                break
            f = total / k
            order = rng.permutation(m)
            u = rng.random(m)
            opened = 0
            for t in order.tolist():
                x = int(pts[t])
                if x in known_set or u[t] >= min(1.0, w_all[t] * delta[t] ** z / f):
                    continue
                env.strong_point_query(x)
                known.append(x)
                known_set.add(x)
                opened += 1
                # anchors of the new facility: itself and its nearest known points
                K = np.array(known, dtype=np.int64)
                dx = env.exact_block([x], K)[0]
                grp = K[np.argsort(dx, kind="stable")[:anchor_size]]
                delta = np.minimum(delta, estimate_distances_to_set(env, pts, grp, floor=1))
                if opened >= cap:
                    break

        K = np.array(known, dtype=np.int64)
        D = env.exact_block(K, K)
        groups = _anchor_groups(D, anchor_size)
        est = _robust_known_distance(env, pts, K, D, groups)
        pos_in_pts = np.searchsorted(pts, K)
        est[pos_in_pts, np.arange(K.size)] = 0.0
        nearest = est.argmin(axis=1)
        nearest[pos_in_pts] = np.arange(K.size)
        cand_w = np.bincount(nearest, weights=w_all, minlength=K.size)
        cand_w = np.maximum(cand_w, 1e-12 * max(1.0, w_all.sum()))
        if np.unique(K).size <= k:
            chosen = np.arange(K.size)[:k]
        else:
            chosen, _ = _kmedian_on_candidates(D, cand_w, k, z, rng)
        centers = K[chosen]

        # assignment via anchor groups around each final center
        Dc = D[chosen]
        est_c = np.empty((m, k))
        radius = np.empty(k)
        for i in range(k):
            grp = K[np.argsort(Dc[i], kind="stable")[:anchor_size]]
            radius[i] = float(env.exact_block(grp, grp).max()) if grp.size > 1 else 0.0
            est_c[:, i] = estimate_distances_to_set(env, pts, grp, floor=1)
        labels = est_c.argmin(axis=1)
        d_est = est_c[np.arange(m), labels]
        weak = env.weak_answers(pts, centers[labels])
        consistent = (weak <= d_est) & (weak >= d_est - 2 * radius[labels])
        per_point = np.where(consistent, weak, d_est)
        is_known = env.strong_mask[pts]
        if is_known.any():
            # strong-known points go to their exactly nearest center
            exact = env.exact_block(pts[is_known], centers)
            labels[is_known] = exact.argmin(axis=1)
            per_point[is_known] = exact.min(axis=1)
        for i, c in enumerate(centers.tolist()):
            labels[pts == c] = i
            per_point[pts == c] = 0.0
        est_cost = float((w_all * per_point ** z).sum())
    return WeakClustering(centers=centers, indices=pts, labels=labels.astype(np.int64),
                          est_cost=est_cost, beta=float(beta), z=float(z))


def plugin_exact_clustering(ds: Dataset, k: int, z: float = 1, seed: int = 0,
                            cfg=None) -> WeakClustering:
    """Oracle-free k-median++ seeding plus one medoid refinement on true distances."""
    n = ds.n
    _check_k(n, k)
    cfg = cfg if cfg is not None else metric.default_config(ds)
    rng = _rng(seed, 0x9106)
    idx = np.arange(n)
    w = ds.weights
    first = int(rng.choice(n, p=w / w.sum()))
    centers = [first]
    closest = metric.distance_block(ds, cfg, idx, [first])[:, 0] ** z
    while len(centers) < k:
        mass = w * closest
        mass[centers] = 0.0
        if mass.sum() <= 0:
            nxt = int(rng.choice(np.setdiff1d(idx, centers)))
        else:
            nxt = int(rng.choice(n, p=mass / mass.sum()))
        centers.append(nxt)
        closest = np.minimum(closest, metric.distance_block(ds, cfg, idx, [nxt])[:, 0] ** z)
    centers = np.array(centers, dtype=np.int64)
    labels = metric.distance_block(ds, cfg, idx, centers).argmin(axis=1)
    labels[centers] = np.arange(k)
    # one medoid step per cluster
    refined = centers.copy()
    for i in range(k):
        mem = idx[labels == i]
        if mem.size > 1:
            within = (metric.distance_block(ds, cfg, mem, mem) ** z) @ w[mem]
            cand = int(mem[np.argmin(within)])
            if cand not in refined[np.arange(k) != i]:
                refined[i] = cand
    D = metric.distance_block(ds, cfg, idx, refined)
    labels = D.argmin(axis=1)
    labels[refined] = np.arange(k)
    cost = float((w * D[idx, labels] ** z).sum())
    return WeakClustering(centers=refined, indices=idx, labels=labels.astype(np.int64),
                          est_cost=cost, beta=1.0, z=float(z))
